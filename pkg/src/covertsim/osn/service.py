"""In-process social network state: accounts, tweets, trends, avatars and the sim clock."""
from __future__ import annotations

import hashlib
import re
import threading
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .. import avatars
from ..errors import AuthError, DomainError, ForbiddenError, NotFoundError, RequestError
from .traffic import TextGenerator, TrafficModel

TREND_INTERVAL = 5
TREND_WINDOW = 24 * 60
TREND_LIMIT = 50
VOLUME_GATE = 10_000
MAX_PAGE = 100

_AVATAR_PATH = re.compile(r"^(?P<account>[^/_]+)_(?P<suffix>normal|bigger|200x200|400x400|\d+)(?:\.jpg)?$")
_SUFFIX_TO_SIZE = {v: k for k, v in avatars.SIZE_SUFFIX.items()}


class RateLimitError(RequestError):
    pass


@dataclass
class Tweet:
    id: int
    author: str
    text: str
    created_at: int
    lang: str = "en"
    is_retweet: bool = False
    retweet_of: int | None = None


@dataclass(frozen=True)
class Trend:
    topic: str
    area: str
    volume: int

    @property
    def reported_volume(self):
        return self.volume if self.volume > VOLUME_GATE else None


@dataclass
class Account:
    id: str
    handle: str
    token: str
    master: avatars.AvatarImage | None = None
    avatar_version: int = 0
    _variants: dict = field(default_factory=dict, repr=False)


def avatar_path(account_id: str, size: int = 48) -> str:
    return f"/avatars/{account_id}_{avatars.SIZE_SUFFIX[size]}.jpg"


def parse_avatar_path(name: str):
    """``u00001_400x400.jpg`` -> ``("u00001", 400)``."""
    m = _AVATAR_PATH.match(name.rsplit("/", 1)[-1])
    if not m:
        raise NotFoundError(f"no avatar at {name!r}")
    suffix = m.group("suffix")
    size = int(suffix) if suffix.isdigit() else _SUFFIX_TO_SIZE[suffix]
    return m.group("account"), size


def _volume_bucket(minute):
    # bucket b covers minutes (5b-5, 5b]
    return -(-minute // TREND_INTERVAL)


class OSNService:
    """Single-writer social network. Every public method holds one lock, so
    ``advance_clock`` is exclusive with all other operations."""

    def __init__(self, areas: dict[str, TrafficModel] | None = None, seed: int = 0,
                 quality: int = avatars.DEFAULT_QUALITY, rate_limit: int | None = None):
        self.seed = seed
        self.quality = quality
        self.rate_limit = rate_limit
        self.areas = dict(areas or {})
        self.now = 0
        self.trend_recomputations = 0
        self._lock = threading.RLock()
        self._tweets: list[Tweet | None] = []
        self._lower: list[str] = []
        self._accounts: dict[str, Account] = {}
        self._tokens: dict[str, str] = {}
        self._trends: dict[str, list[Trend]] = {a: [] for a in self.areas}
        self._trend_epoch: dict[str, int | None] = {a: None for a in self.areas}
        # area -> topic -> bucket -> count
        self._volume = {a: defaultdict(lambda: defaultdict(int)) for a in self.areas}
        # arrival counts and tweet content use separate streams so counts are
        # reproducible from the seed alone
        self._count_rngs = {a: np.random.default_rng(self.arrival_seed(a)) for a in self.areas}
        self._rngs = {a: np.random.default_rng(self.arrival_seed(a) + [1]) for a in self.areas}
        self._texts = {a: TextGenerator(m, self._rngs[a]) for a, m in self.areas.items()}
        self._recent_by_topic = {a: defaultdict(list) for a in self.areas}
        self._requests = defaultdict(int)
        for area, model in sorted(self.areas.items()):
            for k in range(model.n_authors):
                aid = f"{area}u{k:05d}"
                self._accounts[aid] = Account(aid, f"user_{area}_{k}", self._make_token(aid))
                self._tokens[self._accounts[aid].token] = aid

    def arrival_seed(self, area):
        """Seed sequence of the per-minute arrival-count stream for ``area``."""
        return [self.seed, sorted(self.areas).index(area), self.areas[area].seed, 0]

    # -- accounts ------------------------------------------------------------

    def _make_token(self, account_id):
        return hashlib.sha256(f"{self.seed}:{account_id}:token".encode()).hexdigest()[:32]

    def create_account(self, handle: str, avatar: avatars.AvatarImage | None = None) -> Account:
        with self._lock:
            aid = f"a{len(self._accounts):06d}"
            acc = Account(aid, handle, self._make_token(aid))
            self._accounts[aid] = acc
            self._tokens[acc.token] = aid
            if avatar is not None:
                self._install_avatar(acc, avatar)
            return acc

    def _auth(self, token) -> Account:
        aid = self._tokens.get(token)
        if aid is None:
            raise AuthError("invalid or missing token")
        self._count_request(token)
        return self._accounts[aid]

    def _count_request(self, token):
        if self.rate_limit is None or token is None:
            return
        key = (token, self.now)
        self._requests[key] += 1
        if self._requests[key] > self.rate_limit:
            raise RateLimitError("rate limit exceeded")

    def account(self, account_id) -> Account:
        acc = self._accounts.get(account_id)
        if acc is None:
            raise NotFoundError(f"unknown account {account_id}")
        return acc

    def _install_avatar(self, acc: Account, image: avatars.AvatarImage):
        if image.size != avatars.MASTER_SIZE:
            image = avatars.resize(image, avatars.MASTER_SIZE)
        acc.master = avatars.AvatarImage(image.pixels, acc.id, image.lossy)
        acc.avatar_version += 1
        acc._variants = {}

    def set_avatar(self, token, image) -> Account:
        """Replace the caller's avatar with an image (or encoded image bytes)."""
        with self._lock:
            acc = self._auth(token)
            if isinstance(image, (bytes, bytearray)):
                try:
                    image = avatars.AvatarImage(avatars.decode_image(bytes(image)))
                except Exception as exc:
                    raise RequestError(f"undecodable avatar image: {exc}") from exc
            self._install_avatar(acc, image)
            return acc

    def get_avatar(self, account_id, size) -> bytes:
        """JPEG bytes of a size variant; stable until the avatar changes."""
        with self._lock:
            try:
                size = int(size)
            except (TypeError, ValueError):
                raise NotFoundError(f"unknown avatar size {size!r}") from None
            if size not in avatars.AVATAR_SIZES:
                raise NotFoundError(f"unknown avatar size {size}")
            acc = self.account(account_id)
            if acc.master is None:
                # background users get a procedural avatar on first request
                rng = np.random.default_rng([self.seed, 99, int(hashlib.sha256(acc.id.encode()).hexdigest()[:8], 16)])
                self._install_avatar(acc, avatars.make_identity(acc.id, rng, quality=self.quality).master)
            blob = acc._variants.get(size)
            if blob is None:
                blob = avatars.encode_jpeg(avatars.resize(acc.master, size).pixels, self.quality)
                acc._variants[size] = blob
            return blob

    # -- tweets --------------------------------------------------------------

    def _append(self, author, text, is_retweet=False, retweet_of=None, area=None, topic=None) -> Tweet:
        tw = Tweet(len(self._tweets) + 1, author, text, self.now, "en", is_retweet, retweet_of)
        self._tweets.append(tw)
        self._lower.append(text.lower())
        if topic is not None:
            self._volume[area][topic][_volume_bucket(self.now)] += 1
            self._recent_by_topic[area][topic].append(tw.id)
        else:
            low = text.lower()
            for a, model in self.areas.items():
                for t in model.topics:
                    if t.name.lower() in low:
                        self._volume[a][t.name][_volume_bucket(self.now)] += 1
        return tw

    def post_tweet(self, token, text: str, is_retweet=False, retweet_of=None) -> Tweet:
        with self._lock:
            acc = self._auth(token)
            if not isinstance(text, str) or not text:
                raise RequestError("tweet text must be a non-empty string")
            return self._append(acc.id, text, is_retweet, retweet_of)

    def delete_tweet(self, token, tweet_id: int):
        with self._lock:
            acc = self._auth(token)
            tw = self.get_tweet(tweet_id)
            if tw.author != acc.id:
                raise ForbiddenError("cannot delete another account's tweet")
            self._tweets[tweet_id - 1] = None
            self._lower[tweet_id - 1] = ""

    def get_tweet(self, tweet_id: int) -> Tweet:
        with self._lock:
            if not isinstance(tweet_id, int) or not 1 <= tweet_id <= len(self._tweets) or self._tweets[tweet_id - 1] is None:
                raise NotFoundError(f"no tweet {tweet_id}")
            return self._tweets[tweet_id - 1]

    def search(self, query: str, lang: str | None = "en", count: int = MAX_PAGE, cursor=None, token=None):
        """Newest-first case-insensitive substring search.

        Returns ``(tweets, next_cursor)``; the cursor is the id below which the
        next page starts, or ``None`` when exhausted.
        """
        with self._lock:
            if token is not None:
                self._auth(token)
            if not query:
                raise RequestError("empty query")
            try:
                count = int(count)
            except (TypeError, ValueError):
                raise RequestError("count must be an integer") from None
            if not 1 <= count <= MAX_PAGE:
                raise RequestError(f"count must be in [1, {MAX_PAGE}]")
            if cursor is None or cursor == "":
                start = len(self._tweets)
            else:
                try:
                    start = int(cursor) - 1
                except (TypeError, ValueError):
                    raise RequestError(f"malformed cursor {cursor!r}") from None
                if not 0 <= start <= len(self._tweets):
                    raise RequestError(f"cursor {cursor!r} out of range")
            q = query.lower()
            out = []
            i = start - 1
            while i >= 0 and len(out) < count:
                if q in self._lower[i]:
                    tw = self._tweets[i]
                    if tw is not None and (lang is None or tw.lang == lang):
                        out.append(tw)
                i -= 1
            more = len(out) == count and any(q in self._lower[j] for j in range(i, -1, -1))
            next_cursor = str(out[-1].id) if more else None
            return out, next_cursor

    # -- trends and clock ----------------------------------------------------

    def get_trends(self, area) -> list[Trend]:
        with self._lock:
            area = str(area)
            if area not in self._trends:
                raise NotFoundError(f"unknown area {area}")
            return list(self._trends[area])

    def trend_epoch(self, area):
        return self._trend_epoch[str(area)]

    def _recompute_trends(self):
        t = self.now
        lo = _volume_bucket(t) - TREND_WINDOW // TREND_INTERVAL
        for area, model in self.areas.items():
            vols = []
            for topic in model.topics:
                buckets = self._volume[area].get(topic.name, {})
                v = sum(c for b, c in buckets.items() if b > lo)
                if model.prior_history:
                    v += int(round(topic.rate * max(0, TREND_WINDOW - t)))
                if v > 0:
                    vols.append(Trend(topic.name, area, v))
            vols.sort(key=lambda tr: (-tr.volume, tr.topic))
            self._trends[area] = vols[:TREND_LIMIT]
            self._trend_epoch[area] = t
        self.trend_recomputations += 1

    def _arrivals(self, area, model: TrafficModel):
        rng = self._rngs[area]
        gen = self._texts[area]
        counts = self._count_rngs[area].poisson([t.rate for t in model.topics])
        for topic, k in zip(model.topics, counts):
            for _ in range(int(k)):
                author = f"{area}u{rng.integers(model.n_authors):05d}"
                recent = self._recent_by_topic[area][topic.name]
                if recent and rng.random() < model.retweet_prob:
                    orig = self._tweets[recent[rng.integers(max(0, len(recent) - 50), len(recent))] - 1]
                    if orig is not None:
                        handle = self._accounts[orig.author].handle
                        self._append(author, f"RT @{handle}: {orig.text}", True, orig.id, area, topic.name)
                        continue
                self._append(author, gen.text(topic.name), area=area, topic=topic.name)

    def advance_clock(self, minutes: int):
        """Inject Poisson arrivals minute by minute; refresh trends at multiples of 5."""
        if minutes < 0:
            raise DomainError("cannot move the clock backwards")
        with self._lock:
            for _ in range(int(minutes)):
                self.now += 1
                for area, model in sorted(self.areas.items()):
                    self._arrivals(area, model)
                if self.now % TREND_INTERVAL == 0:
                    self._recompute_trends()

    # -- introspection -------------------------------------------------------

    def tweet_count(self) -> int:
        return sum(t is not None for t in self._tweets)

    def state_digest(self) -> str:
        """Hash of tweets, trends and clock; equal seeds and advances give equal digests."""
        h = hashlib.sha256()
        with self._lock:
            h.update(str(self.now).encode())
            for tw in self._tweets:
                h.update(repr(tw).encode() if tw else b"-")
            for area in sorted(self._trends):
                h.update(repr(self._trends[area]).encode())
        return h.hexdigest()
