"""IPv4 <-> two-sentence encoding via 16-bit SHA-256 prefix matches."""
from __future__ import annotations

import hashlib
import ipaddress
import random
from dataclasses import dataclass, field

from .errors import DomainError, ParseError

FIRST, SECOND = "first", "second"


@dataclass(frozen=True)
class IpPart:
    value: int
    position: str

    def __post_init__(self):
        if not 0 <= self.value <= 0xFFFF:
            raise DomainError("IP part must be a 16-bit value")
        if self.position not in (FIRST, SECOND):
            raise DomainError("position must be 'first' or 'second'")

    def __str__(self):
        return f"{self.value:04x}"


@dataclass(frozen=True)
class CommandPayload:
    address: ipaddress.IPv4Address

    @classmethod
    def parse(cls, text) -> "CommandPayload":
        if isinstance(text, CommandPayload):
            return text
        try:
            return cls(ipaddress.IPv4Address(text))
        except (ipaddress.AddressValueError, ValueError) as exc:
            raise ParseError(f"malformed IPv4 address {text!r}") from exc

    @property
    def octets(self):
        return tuple(self.address.packed)

    def __str__(self):
        return str(self.address)


def split_ip(addr) -> tuple[IpPart, IpPart]:
    o = CommandPayload.parse(addr).octets
    return IpPart((o[0] << 8) | o[1], FIRST), IpPart((o[2] << 8) | o[3], SECOND)


def join_parts(first, second) -> CommandPayload:
    a = first.value if isinstance(first, IpPart) else int(first)
    b = second.value if isinstance(second, IpPart) else int(second)
    return CommandPayload(ipaddress.IPv4Address((a << 16) | b))


def digest_prefix(s: str) -> int:
    """First two bytes of SHA-256(UTF-8 s), big-endian."""
    d = hashlib.sha256(s.encode("utf-8")).digest()
    return (d[0] << 8) | d[1]


@dataclass
class CollisionResult:
    parts: tuple[IpPart, IpPart]
    matches: tuple[list[str], list[str]] = field(default_factory=lambda: ([], []))
    chosen: tuple[str | None, str | None] = (None, None)
    attempts: int = 0  # candidates hashed

    @property
    def success(self) -> bool:
        return self.chosen[0] is not None and self.chosen[1] is not None

    @property
    def tweets(self) -> list[str]:
        if not self.success:
            raise DomainError("collision did not succeed")
        return [self.chosen[0], self.chosen[1]]


def dedupe(candidates):
    return list(dict.fromkeys(candidates))


def prefix_buckets(candidates, targets=None) -> dict[int, list[str]]:
    """Map digest prefix -> candidates, restricted to ``targets`` when given."""
    buckets: dict[int, list[str]] = {}
    sha = hashlib.sha256
    for s in candidates:
        d = sha(s.encode("utf-8")).digest()
        p = (d[0] << 8) | d[1]
        if targets is None or p in targets:
            buckets.setdefault(p, []).append(s)
    return buckets


def collide(candidates, parts, rng=None) -> CollisionResult:
    """Scan deduplicated candidates once and pick one random match per part.

    Matches are sorted before the pick so the outcome depends only on the
    candidate set and ``rng``.
    """
    candidates = dedupe(candidates)
    if not candidates:
        raise DomainError("candidate list is empty")
    rng = rng if rng is not None else random.Random(0)
    first, second = parts
    buckets = prefix_buckets(candidates, {first.value, second.value})
    m1 = sorted(buckets.get(first.value, []))
    m2 = sorted(buckets.get(second.value, []))
    result = CollisionResult((first, second), (m1, m2), attempts=len(candidates))
    if m1 and m2:
        result.chosen = (rng.choice(m1), rng.choice(m2))
    return result


def embed(address, candidates, rng=None) -> CollisionResult:
    return collide(candidates, split_ip(address), rng)


def decode(tweets) -> CommandPayload:
    """Concatenate the digest prefixes of two tweets, in posting order."""
    tweets = list(tweets)
    if len(tweets) != 2:
        raise DomainError(f"need exactly 2 tweets to decode, got {len(tweets)}")
    return join_parts(digest_prefix(tweets[0]), digest_prefix(tweets[1]))


def hit_probability(n_candidates: int, bits: int = 16) -> float:
    """Chance that ``n`` distinct uniform digests include one given prefix."""
    return 1.0 - (1.0 - 2.0 ** -bits) ** n_candidates


def both_parts_probability(n_candidates: int) -> float:
    return hit_probability(n_candidates) ** 2
