"""Seeded background traffic: Poisson tweet arrivals on a pool of topics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError

TOPIC_POOL = (
    "Bitcoin", "Wimbledon", "Eurovision", "Oscars", "Grammys", "Budget2024", "Heatwave", "Blackout",
    "Springboks", "Ramadan", "Netflix", "Playstation", "Marathon", "Tesla", "Elections", "Inflation",
    "Bafana", "Cricket", "Formula1", "Superbowl", "Halloween", "Coachella", "Minecraft", "Fortnite",
    "Olympics", "Earthquake", "Hurricane", "Pride", "Vaccines", "Loadshedding", "Avengers", "Beyonce",
    "Drake", "Taylor Swift", "Champions Final", "Black Friday", "World Cup", "Met Gala", "Fashion Week",
    "Transfer Deadline", "Derby Day", "Premier Soccer", "Jazz Festival", "Book Awards", "Solar Eclipse",
    "Climate Summit", "Tech Expo", "Rugby Sevens", "Comic Con", "Film Festival", "Starship",
    "Mondays", "Payday", "Kaizer Chiefs", "Orlando Pirates", "Durban July", "Heritage Day",
    "Youth Day", "Freedom Day", "Cape Town",
)

_NOUNS = ("game team fan player coach goal win news update show movie song album singer concert party day "
          "night morning week time people city country government leader election law court police health "
          "doctor school teacher student book story idea problem question answer result change price market "
          "company deal shop food dinner drink coffee weather rain storm sun world place road trip holiday "
          "picture video phone server network app error fix nap break power fire water dog cat bird love joy "
          "fear hope help risk chance plan rumor crowd season star champion record award history future end "
          "start level noise voice message group ticket fun joke secret truth fight light speed crowd stadium "
          "club league final score fashion dress art science study test data report bank profit growth crisis "
          "event meeting speech interview mood shock").split()
_VERBS = ("go take make see watch say think know want need like get give use find try start stop keep help play "
          "win lose beat run walk talk ask answer buy sell show change grow fix leave stay wait call send post "
          "read write learn eat drink sleep laugh cry shout fight save hope feel look choose decide agree argue "
          "announce celebrate cancel delay join open close move bring build support oppose vote claim deny "
          "report miss follow lead trust enjoy remember forget improve reduce").split()
_ADJS = ("good great nice bad awful big huge small short long new old young happy sad angry tired fast slow hot "
         "cold easy hard important beautiful smart funny strange rich strong weak busy quiet loud full empty "
         "true sure ready free safe dangerous amazing crazy famous main whole special normal official public "
         "local global late early final next nervous proud lucky brave kind honest sweet wrong right boring "
         "exciting serious hungry major best worst").split()
_ADVS = "very really quickly slowly now soon today often always never maybe again finally almost totally suddenly".split()
_OPENERS = ("Honestly", "Wow", "So", "Okay", "Breaking", "Listen", "Well", "Guys", "Yo", "Imagine", "Look")
_TEMPLATES = (
    "the {adj} {noun} will {verb} the {noun} {adv}",
    "i {adv} {verb} this {adj} {noun}",
    "why does every {noun} {verb} the {adj} {noun}",
    "my {noun} and my {noun} {verb} {adv}",
    "nobody can {verb} a {adj} {noun} like that",
    "we need to {verb} the {noun} before the {noun} ends",
    "this {noun} is {adv} {adj} and the {noun} knows it",
    "can someone {verb} the {adj} {noun} for me",
    "what a {adj} {noun} to {verb} on a {adj} {noun}",
    "they {verb} the {noun} and then {verb} the {noun}",
    "still {adj} about the {noun} from last {noun}",
    "every {noun} should {verb} at least one {adj} {noun}",
)
_EMOJI = ("\U0001F602", "\U0001F525", "\U0001F60D", "\U0001F64F", "❤️", "\U0001F44F", "\U0001F62D")


@dataclass(frozen=True)
class TopicSpec:
    name: str
    rate: float  # tweets per sim-minute

    def __post_init__(self):
        if self.rate < 0:
            raise DomainError("arrival rate must be non-negative")


@dataclass
class TrafficModel:
    """Per-area background traffic.

    ``prior_history`` assumes each topic also ran at its rate before the
    simulation started, so trailing-24h volumes are meaningful from minute 0.
    """

    topics: list[TopicSpec] = field(default_factory=list)
    n_authors: int = 500
    seed: int = 0
    retweet_prob: float = 0.08
    short_prob: float = 0.05
    url_prob: float = 0.15
    emoji_prob: float = 0.2
    prior_history: bool = True

    @classmethod
    def default(cls, seed=0, n_topics=40, total_rate=120.0, **kw) -> "TrafficModel":
        """Zipf-like popularity over ``n_topics`` topics drawn from the built-in pool."""
        if n_topics > len(TOPIC_POOL):
            raise DomainError(f"at most {len(TOPIC_POOL)} topics available")
        rng = np.random.default_rng([seed, 7])
        names = rng.choice(len(TOPIC_POOL), size=n_topics, replace=False)
        weights = 1.0 / np.arange(1, n_topics + 1) ** 0.9
        weights *= rng.uniform(0.8, 1.25, size=n_topics)
        rates = total_rate * weights / weights.sum()
        topics = [TopicSpec(TOPIC_POOL[i], float(round(r, 3))) for i, r in zip(names, rates)]
        return cls(topics=topics, seed=seed, **kw)

    @classmethod
    def from_dict(cls, d) -> "TrafficModel":
        d = dict(d)
        if "topics" in d:
            d["topics"] = [TopicSpec(t["name"], float(t["rate"])) for t in d["topics"]]
            return cls(**d)
        return cls.default(**d)

    def to_dict(self):
        d = dict(self.__dict__)
        d["topics"] = [{"name": t.name, "rate": t.rate} for t in self.topics]
        return d


class TextGenerator:
    """Template tweets mentioning a topic, with some noise the cleaner must remove."""

    def __init__(self, model: TrafficModel, rng: np.random.Generator):
        self.model = model
        self.rng = rng

    def _clause(self):
        r = self.rng
        tpl = _TEMPLATES[r.integers(len(_TEMPLATES))]
        return tpl.format_map(_Filler(r))

    def text(self, topic: str) -> str:
        r = self.rng
        if r.random() < self.model.short_prob:
            words = [topic, _VERBS[r.integers(len(_VERBS))], _ADVS[r.integers(len(_ADVS))]]
            return " ".join(words)
        parts = [self._clause() for _ in range(r.integers(2, 4))]
        mention = f"#{topic.replace(' ', '')}" if (r.random() < 0.2 and " " not in topic) else topic
        pos = r.integers(len(parts) + 1)
        parts.insert(pos, mention)
        if r.random() < 0.5:
            parts.insert(0, _OPENERS[r.integers(len(_OPENERS))] + ",")
        text = " ".join(parts)
        text = text[0].upper() + text[1:]
        text += (".", "!", "?", "")[r.integers(4)]
        if r.random() < self.model.emoji_prob:
            text += " " + _EMOJI[r.integers(len(_EMOJI))]
        if r.random() < self.model.url_prob:
            text += f" https://t.example/{r.integers(1 << 30):x}"
        return text


class _Filler(dict):
    def __init__(self, rng):
        super().__init__()
        self.rng = rng

    def __missing__(self, key):
        pool = {"noun": _NOUNS, "verb": _VERBS, "adj": _ADJS, "adv": _ADVS}[key]
        return pool[self.rng.integers(len(pool))]
