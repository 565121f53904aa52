"""Protocol actors: botmaster, bots and the replaying adversary.

Every actor talks to the social network through a client (``HTTPClient`` or
``LocalClient``) and shares nothing else with the others.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import random
from dataclasses import dataclass, field

import numpy as np

from . import codec, tweetgen
from .avatars import AvatarImage, decode_image
from .errors import (CollisionFailure, DomainError, NoRendezvousError, ProtocolError)
from .osn.client import large_avatar_url
from .osn.service import VOLUME_GATE
from .siamese import Extractor, FeatureVector, VectorStore, pairwise_distances

log = logging.getLogger(__name__)

LAST_ABOVE_GATE = "last-above-10k"
SCAN_BIN_WIDTH = 0.001


@dataclass(frozen=True)
class RendezvousRule:
    area: str = "1"
    rule: str = LAST_ABOVE_GATE
    cadence: int = 60
    wait: int = 5
    budget: int = 1000

    def __post_init__(self):
        if self.rule != LAST_ABOVE_GATE:
            raise DomainError(f"unknown selection rule {self.rule!r}")
        if self.wait < 0:
            raise DomainError("wait must be non-negative")
        if self.budget < 1:
            raise DomainError("crawl budget must be at least 1")
        if self.cadence < 1 or self.cadence % 5:
            raise DomainError("cadence must be a positive multiple of 5 minutes")

    @property
    def post_offset(self) -> int:
        """Minutes after selection at which the botmaster posts."""
        return self.wait // 2


def _trend_fields(t):
    if isinstance(t, dict):
        return t["name"], t.get("tweet_volume")
    return t.topic, t.reported_volume


def select_trend(trends, rule: RendezvousRule | None = None):
    """Last trend (in listed order) whose volume is reported; if none, the busiest."""
    trends = list(trends)
    if not trends:
        raise NoRendezvousError("no trends to select from")
    for t in reversed(trends):
        vol = _trend_fields(t)[1]
        if vol is not None and vol > VOLUME_GATE:
            return t
    if all(hasattr(t, "volume") for t in trends):
        best = max(trends, key=lambda t: t.volume)
    else:
        # wire trends without volumes are listed busiest first
        best = trends[0]
    log.warning("no trend above %d; falling back to %r", VOLUME_GATE, _trend_fields(best)[0])
    return best


def topic_of(trend) -> str:
    return _trend_fields(trend)[0]


def crawl(client, topic, budget, count=100, stop=None):
    """Newest-first search pages until ``budget`` tweets; ``stop(page)`` ends early."""
    out, cursor = [], None
    while len(out) < budget:
        page = client.search(topic, count=min(count, budget - len(out)), cursor=cursor)
        out.extend(page["statuses"])
        if stop is not None and stop(page["statuses"]):
            break
        cursor = page["next_cursor"]
        if cursor is None:
            break
    return out


# -- botmaster ---------------------------------------------------------------

@dataclass
class PublishReport:
    command: str
    topic: str | None = None
    trends_as_of: int | None = None
    account: str | None = None
    crawled: int = 0
    cleaned: int = 0
    augmented: int = 0
    candidates: int = 0
    attempts: int = 0
    success: bool = False
    tweet_ids: list = field(default_factory=list)
    texts: list = field(default_factory=list)
    posted_at: int | None = None
    reason: str = ""


@dataclass
class PreparedAccount:
    """A one-shot botmaster identity: account, token and the avatar installed on it."""
    index: int
    account: str
    token: str
    avatar: AvatarImage
    used: bool = False


class Botmaster:
    def __init__(self, client, rule: RendezvousRule, avatars, aug: tweetgen.AugmentConfig | None = None,
                 lexicon=None, seed=0, handle_prefix="bm"):
        self.client = client
        self.rule = rule
        self.avatars = list(avatars)
        self.aug = aug or tweetgen.AugmentConfig()
        self.lexicon = lexicon or tweetgen.default_lexicon()
        self.seed = seed
        self.handle_prefix = handle_prefix
        self.accounts: list[PreparedAccount] = []
        self.reports: list[PublishReport] = []

    def current_account(self) -> PreparedAccount:
        """The installed, unused account, creating the next one when needed."""
        if self.accounts and not self.accounts[-1].used:
            return self.accounts[-1]
        k = len(self.accounts)
        if k >= len(self.avatars):
            raise DomainError("no unused prepared avatars left")
        info = self.client.create_account(f"{self.handle_prefix}{k}")
        self.client.with_token(info["token"]).set_avatar(self.avatars[k])
        acc = PreparedAccount(k, info["id"], info["token"], self.avatars[k])
        self.accounts.append(acc)
        return acc

    def select(self):
        snap = self.client.trends(self.rule.area)
        return select_trend(snap["trends"], self.rule), snap["as_of"]

    def augmented(self, crawled, seed_offset=0):
        cleaned = tweetgen.clean(crawled)
        cfg = tweetgen.AugmentConfig(self.aug.alpha, self.aug.num_aug, self.aug.seed + seed_offset)
        return cleaned, tweetgen.augment_all(cleaned, cfg, self.lexicon)

    @staticmethod
    def candidates(topic, augmented, suffixes=tweetgen.VARIANT_SUFFIXES):
        """Variants of the augmented sentences that still contain the topic."""
        key = topic.lower()
        return [s for s in tweetgen.expand_variants(augmented, suffixes) if key in s.lower()]

    def publish(self, command, topic=None, as_of=None, attempt_seed=0) -> PublishReport:
        """Select (unless ``topic`` is given), build candidates, collide and post both parts."""
        payload = codec.CommandPayload.parse(command)
        report = PublishReport(str(payload))
        if topic is None:
            trend, as_of = self.select()
            topic = topic_of(trend)
        report.topic, report.trends_as_of = topic, as_of
        acc = self.current_account()
        report.account = acc.account
        crawled = crawl(self.client, topic, self.rule.budget)
        report.crawled = len(crawled)
        cleaned, augmented = self.augmented(crawled, attempt_seed * 7919)
        report.cleaned, report.augmented = len(cleaned), len(augmented)
        rng = random.Random(f"{self.seed}/{payload}/{attempt_seed}")
        result = None
        for attempt, suffixes in enumerate((tweetgen.VARIANT_SUFFIXES,
                                            tweetgen.VARIANT_SUFFIXES + tweetgen.RETRY_SUFFIXES)):
            cands = self.candidates(topic, augmented, suffixes)
            report.candidates = len(cands)
            report.attempts = attempt + 1
            if not cands:
                report.reason = "no candidates"
                break
            result = codec.embed(payload, cands, rng)
            if result.success:
                break
        if result is None or not result.success:
            report.reason = report.reason or "no collision after retry"
            self.reports.append(report)
            log.info("publish of %s failed on %r: %s", payload, topic, report.reason)
            return report
        poster = self.client.with_token(acc.token)
        for text in result.tweets:
            tw = poster.post_tweet(text)
            report.tweet_ids.append(tw["id"])
            report.texts.append(text)
            report.posted_at = tw["created_at"]
        acc.used = True
        report.success = True
        self.reports.append(report)
        return report

    def cleanup(self, report: PublishReport):
        """Delete the command tweets once the cycle is over."""
        acc = next(a for a in self.accounts if a.account == report.account)
        poster = self.client.with_token(acc.token)
        for tid in report.tweet_ids:
            poster.delete_tweet(tid)


def publish_or_raise(botmaster: Botmaster, command, **kw) -> PublishReport:
    report = botmaster.publish(command, **kw)
    if not report.success:
        raise CollisionFailure(f"{report.command} on {report.topic!r}: {report.reason}")
    return report


# -- bots --------------------------------------------------------------------

@dataclass
class Delivery:
    bot: str
    topic: str
    trends_as_of: int | None
    vector_id: str
    account: str
    distance: float
    command: str
    depth: int
    tweet_ids: tuple


class Bot:
    """A bot's private state: vectors, rule, model and received commands."""

    def __init__(self, name, client, rule: RendezvousRule, vectors, extractor: Extractor, threshold: float):
        self.name = name
        self.client = client
        self.rule = rule
        self.store = vectors if isinstance(vectors, VectorStore) else VectorStore(vectors)
        self.extractor = extractor
        self.threshold = float(threshold)
        self.commands: list[Delivery] = []
        self.errors: list[str] = []
        self.selected = None
        self._embeddings: dict[str, np.ndarray] = {}
        self.avatars_fetched = 0

    def select(self):
        snap = self.client.trends(self.rule.area)
        trend = select_trend(snap["trends"], self.rule)
        self.selected = (topic_of(trend), snap["as_of"])
        return self.selected

    def _embed_authors(self, tweets):
        urls = {}
        for tw in tweets:
            urls.setdefault(tw["user"]["id"], large_avatar_url(tw["user"]["profile_image_url"]))
        keys, todo = {}, []
        for author, url in urls.items():
            blob = self.client.avatar(url)
            self.avatars_fetched += 1
            key = hashlib.sha256(blob).hexdigest()
            keys[author] = key
            if key not in self._embeddings:
                todo.append((key, AvatarImage(decode_image(blob), author, lossy=True)))
        if todo:
            emb = self.extractor.extract_many([img for _, img in todo])
            for (key, _), e in zip(todo, emb):
                self._embeddings[key] = e
        return {a: self._embeddings[k] for a, k in keys.items()}

    def retrieve(self, topic=None):
        """Crawl the selected topic, find the botmaster by avatar, decode its command."""
        if topic is None:
            if self.selected is None:
                self.select()
            topic, as_of = self.selected
        else:
            as_of = self.selected[1] if self.selected else None
        if not self.store.unconsumed():
            return None
        seen: list[dict] = []
        found = {}

        def own_tweets():
            return sum(tw["user"]["id"] == found["author"] for tw in seen)

        def scan(page):
            seen.extend(page)
            if found:
                # later pages only complete the matched author's tweets
                return own_tweets() >= 2
            emb = self._embed_authors(page)
            for pos, tw in enumerate(page, len(seen) - len(page)):
                hit = self.store.match(emb[tw["user"]["id"]], self.threshold, consume=False)
                if hit is not None:
                    found.update(author=tw["user"]["id"], vector=hit[0], distance=hit[1], depth=pos + 1)
                    return own_tweets() >= 2
            return False

        crawl(self.client, topic, self.rule.budget, stop=scan)
        if not found:
            return None
        mine = sorted((tw for tw in seen if tw["user"]["id"] == found["author"]), key=lambda t: t["id"])
        mine = [tw for tw in mine if not tw["is_retweet"]][-2:]
        if len(mine) != 2:
            msg = f"{self.name}: expected 2 command tweets from {found['author']}, found {len(mine)}"
            self.errors.append(msg)
            log.warning(msg)
            raise ProtocolError(msg)
        payload = codec.decode([tw["text"] for tw in mine])
        self.store.consume(found["vector"])
        self.commands.append(Delivery(self.name, topic, as_of, found["vector"], found["author"],
                                      found["distance"], str(payload), found["depth"],
                                      tuple(tw["id"] for tw in mine)))
        return payload


def bot_cycle(bot: Bot, advance=True):
    """Select, wait ``rule.wait`` minutes on the shared clock, then retrieve.

    Returns the decoded payload or ``None``; protocol errors leave the vector
    unconsumed and yield ``None``.
    """
    topic, _ = bot.select()
    if advance and bot.rule.wait:
        bot.client.advance(bot.rule.wait)
    try:
        return bot.retrieve(topic)
    except ProtocolError:
        return None


# -- adversary ---------------------------------------------------------------

@dataclass
class ReplayOutcome:
    bot: str
    accepted: bool
    command: str | None
    note: str = ""


@dataclass
class ReplayReport:
    fake_command: str
    topic: str | None
    published: bool
    outcomes: list

    @property
    def acceptances(self) -> int:
        return sum(o.accepted for o in self.outcomes)

    @property
    def rejections(self) -> int:
        return len(self.outcomes) - self.acceptances


def adversary_replay(saved_avatar, fake_command, client, bots, rule: RendezvousRule,
                     aug=None, lexicon=None, seed=0) -> ReplayReport:
    """Adopt a previously used avatar, publish ``fake_command`` and let every bot run a cycle.

    ``saved_avatar`` is the image (or the served JPEG bytes) the adversary
    captured; uploading it makes the service re-encode it once more.
    """
    if isinstance(saved_avatar, (bytes, bytearray)):
        saved_avatar = AvatarImage(decode_image(bytes(saved_avatar)), "replay", lossy=True)
    adversary = Botmaster(client, rule, [saved_avatar], aug, lexicon, seed=seed, handle_prefix="adv")
    trend, as_of = adversary.select()
    for bot in bots:
        bot.select()
    if rule.post_offset:
        client.advance(rule.post_offset)
    report = adversary.publish(fake_command, topic_of(trend), as_of)
    if rule.wait - rule.post_offset:
        client.advance(rule.wait - rule.post_offset)
    fake = str(codec.CommandPayload.parse(fake_command))
    outcomes = []
    for bot in bots:
        try:
            got = bot.retrieve()
        except ProtocolError as exc:
            outcomes.append(ReplayOutcome(bot.name, False, None, str(exc)))
            continue
        accepted = got is not None and str(got) == fake
        outcomes.append(ReplayOutcome(bot.name, accepted, None if got is None else str(got),
                                      "authentication required" if accepted else ""))
    if report.success:
        adversary.cleanup(report)
    return ReplayReport(fake, topic_of(trend), report.success, outcomes)


# -- scans and statistics ----------------------------------------------------

@dataclass
class ScanReport:
    n_pairs: int
    threshold: float
    below: int
    below_half: int
    min_distance: float
    max_distance: float
    hist_counts: np.ndarray
    bin_width: float = SCAN_BIN_WIDTH

    @property
    def below_fraction(self) -> float:
        return self.below / self.n_pairs if self.n_pairs else 0.0

    @property
    def below_half_fraction(self) -> float:
        return self.below_half / self.n_pairs if self.n_pairs else 0.0

    def histogram_rows(self):
        return [(round(i * self.bin_width, 6), int(c)) for i, c in enumerate(self.hist_counts) if c]


def _scan_image(item):
    if isinstance(item, AvatarImage):
        return item
    return item.variants[400] if 400 in item.variants else item.master


def collision_scan(corpus, extractor: Extractor, threshold: float, embeddings=None) -> ScanReport:
    """Distances between every pair of distinct identities' 400x400 avatars."""
    if embeddings is None:
        items = list(corpus)
        if len(items) < 2:
            raise DomainError("collision scan needs at least two identities")
        embeddings = extractor.extract_many([_scan_image(it) for it in items])
    emb = np.asarray(embeddings)
    n = len(emb)
    if n < 2:
        raise DomainError("collision scan needs at least two identities")
    iu = np.triu_indices(n, 1)
    d = pairwise_distances(emb)[iu]
    nbins = int(np.floor(d.max() / SCAN_BIN_WIDTH)) + 1
    counts = np.bincount(np.floor(d / SCAN_BIN_WIDTH).astype(np.int64), minlength=nbins)
    return ScanReport(int(d.size), float(threshold), int((d < threshold).sum()), int((d < threshold / 2).sum()),
                      float(d.min()), float(d.max()), counts)


@dataclass
class VectorStats:
    n_vectors: int
    n_values: int
    min: float
    max: float
    mean: float
    std: float
    sorted_values: np.ndarray
    hist_edges: np.ndarray
    hist_counts: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["section", "key", "value"])
        for k in ("n_vectors", "n_values", "min", "max", "mean", "std"):
            w.writerow(["summary", k, getattr(self, k)])
        for i, v in enumerate(self.sorted_values):
            w.writerow(["sorted", i, f"{v:.9g}"])
        for lo, c in zip(self.hist_edges[:-1], self.hist_counts):
            w.writerow(["histogram", f"{lo:.6g}", int(c)])
        return buf.getvalue()


def vector_stats(vectors, bins=50) -> VectorStats:
    vals = [v.values if isinstance(v, FeatureVector) else np.asarray(v) for v in vectors]
    if not vals:
        raise DomainError("need at least one vector")
    flat = np.concatenate([np.asarray(v, dtype=np.float64).reshape(-1) for v in vals])
    lo, hi = float(flat.min()), float(flat.max())
    counts, edges = np.histogram(flat, bins=bins, range=(lo, hi) if hi > lo else (lo - 0.5, hi + 0.5))
    return VectorStats(len(vals), int(flat.size), lo, hi, float(flat.mean()), float(flat.std()),
                       np.sort(flat), edges, counts)
