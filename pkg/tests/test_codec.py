import random
import struct

import pytest
from hypothesis import given, settings, strategies as st

from covertsim import codec
from covertsim.errors import DomainError, ParseError


# -- independent SHA-256 (FIPS 180-4), used only as an oracle ------------------

_K = [
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
]
_H0 = [0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19]
_M = 0xFFFFFFFF


def _rotr(x, n):
    return ((x >> n) | (x << (32 - n))) & _M


def sha256_oracle(data: bytes) -> bytes:
    msg = data + b"\x80" + b"\0" * ((55 - len(data)) % 64) + struct.pack(">Q", 8 * len(data))
    h = list(_H0)
    for off in range(0, len(msg), 64):
        w = list(struct.unpack(">16I", msg[off:off + 64]))
        for t in range(16, 64):
            s0 = _rotr(w[t - 15], 7) ^ _rotr(w[t - 15], 18) ^ (w[t - 15] >> 3)
            s1 = _rotr(w[t - 2], 17) ^ _rotr(w[t - 2], 19) ^ (w[t - 2] >> 10)
            w.append((w[t - 16] + s0 + w[t - 7] + s1) & _M)
        a, b, c, d, e, f, g, hh = h
        for t in range(64):
            t1 = (hh + (_rotr(e, 6) ^ _rotr(e, 11) ^ _rotr(e, 25)) + ((e & f) ^ (~e & g)) + _K[t] + w[t]) & _M
            t2 = ((_rotr(a, 2) ^ _rotr(a, 13) ^ _rotr(a, 22)) + ((a & b) ^ (a & c) ^ (b & c))) & _M
            a, b, c, d, e, f, g, hh = (t1 + t2) & _M, a, b, c, (d + t1) & _M, e, f, g
        h = [(x + y) & _M for x, y in zip(h, (a, b, c, d, e, f, g, hh))]
    return struct.pack(">8I", *h)


def test_oracle_known_vectors():
    assert sha256_oracle(b"").hex().startswith("e3b0c44298fc1c14")
    assert sha256_oracle(b"abc").hex().startswith("ba7816bf8f01cfea")


def test_digest_prefix_examples():
    assert codec.digest_prefix("") == 0xE3B0
    assert codec.digest_prefix("abc") == 0xBA78
    assert codec.digest_prefix("abc") == codec.digest_prefix("abc")


def test_digest_prefix_matches_oracle_on_random_strings():
    rng = random.Random(2024)
    alphabet = "abcdefghijklmnopqrstuvwxyz ABCDEFGHIJKLMNOPQRSTUVWXYZ.!?0123456789éü中🙂"
    for _ in range(1000):
        s = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 130)))
        d = sha256_oracle(s.encode("utf-8"))
        assert codec.digest_prefix(s) == (d[0] << 8) | d[1]


# -- splitting ---------------------------------------------------------------

@pytest.mark.parametrize("ip,first,second", [
    ("192.168.1.1", 0xC0A8, 0x0101), ("0.0.0.0", 0, 0), ("255.255.255.255", 0xFFFF, 0xFFFF)])
def test_split_ip(ip, first, second):
    a, b = codec.split_ip(ip)
    assert (a.value, a.position, b.value, b.position) == (first, "first", second, "second")


@given(st.integers(0, 2**32 - 1))
def test_split_join_round_trip(n):
    ip = f"{n >> 24}.{(n >> 16) & 255}.{(n >> 8) & 255}.{n & 255}"
    assert str(codec.join_parts(*codec.split_ip(ip))) == ip


@pytest.mark.parametrize("bad", ["256.0.0.1", "1.2.3", "a.b.c.d", "", "1.2.3.4.5"])
def test_malformed_address(bad):
    with pytest.raises(ParseError):
        codec.split_ip(bad)


def test_ip_part_validation():
    with pytest.raises(DomainError):
        codec.IpPart(70000, "first")
    with pytest.raises(DomainError):
        codec.IpPart(1, "third")


# -- collision and decoding ----------------------------------------------------

def test_empty_string_lands_in_first_bucket():
    parts = (codec.IpPart(0xE3B0, "first"), codec.IpPart(0x0001, "second"))
    res = codec.collide(["", "x", "y"], parts, random.Random(0))
    assert "" in res.matches[0]
    assert not res.success and res.chosen == (None, None)
    with pytest.raises(DomainError):
        res.tweets


def test_collide_buckets_hold_only_matches():
    cands = [f"candidate {i}" for i in range(20_000)]
    parts = codec.split_ip("10.0.0.1")
    res = codec.collide(cands + cands[:100], parts, random.Random(1))
    assert res.attempts == 20_000
    for bucket, part in zip(res.matches, parts):
        assert all(codec.digest_prefix(s) == part.value for s in bucket)
        assert bucket == sorted(bucket)


def test_collide_rejects_empty_candidates():
    with pytest.raises(DomainError):
        codec.collide([], codec.split_ip("1.2.3.4"))


def test_collide_independent_of_candidate_order():
    cands = [f"s{i}" for i in range(300_000)]
    parts = codec.split_ip("10.0.0.1")
    a = codec.collide(cands, parts, random.Random(5))
    b = codec.collide(list(reversed(cands)), parts, random.Random(5))
    assert a.success and a.chosen == b.chosen
    assert str(codec.decode(a.tweets)) == "10.0.0.1"


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 1000))
def test_successful_collisions_round_trip(n, seed):
    ip = f"{n >> 24}.{(n >> 16) & 255}.{(n >> 8) & 255}.{n & 255}"
    parts = codec.split_ip(ip)
    rng = random.Random(seed)
    # plant one hit per part among random filler so every example succeeds
    filler = [f"{seed}-{i}" for i in range(2000)]
    planted = []
    for part in parts:
        k = 0
        while codec.digest_prefix(f"plant {part.value} {k}") != part.value:
            k += 1
        planted.append(f"plant {part.value} {k}")
    res = codec.collide(filler + planted, parts, rng)
    assert res.success
    assert str(codec.decode(res.tweets)) == ip


def test_decode_examples():
    assert str(codec.decode(["", ""])) == "227.176.227.176"
    with pytest.raises(DomainError):
        codec.decode(["only one"])
    with pytest.raises(DomainError):
        codec.decode(["a", "b", "c"])


@given(st.text(max_size=40), st.text(max_size=40))
def test_reversed_order_swaps_octets(t1, t2):
    fwd = codec.decode([t1, t2]).octets
    rev = codec.decode([t2, t1]).octets
    assert rev == fwd[2:] + fwd[:2]
    if fwd[:2] != fwd[2:]:
        assert rev != fwd


# -- hit probability ------------------------------------------------------------

@pytest.mark.parametrize("n,want", [(65_536, 0.632), (200_000, 0.9527)])
def test_hit_probability(n, want):
    assert codec.hit_probability(n) == pytest.approx(want, abs=5e-4)


def test_both_parts_model_brackets_reported_rate():
    assert codec.both_parts_probability(200_000) == pytest.approx(0.908, abs=1e-3)
    assert codec.both_parts_probability(330_000) == pytest.approx(0.987, abs=1e-3)


def test_per_part_hit_rate_at_65536_candidates():
    """200 seeded trials; each trial is one 65,536-candidate batch and one random part."""
    trials = 200
    hits = 0
    for t in range(trials):
        rng = random.Random(f"per-part/{t}")
        cands = [f"{t}:{i}" for i in range(65_536)]
        target = rng.randrange(1 << 16)
        present = codec.prefix_buckets(cands, {target})
        hits += target in present
    assert abs(hits / trials - codec.hit_probability(65_536)) <= 0.03
