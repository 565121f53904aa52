"""Tweet cleaning, easy data augmentation (EDA) and case/punctuation variants.

Tokenisation is whitespace splitting; trailing ``.``, ``!`` and ``?`` stay
attached to the word they follow and are preserved when that word is
replaced.
"""
from __future__ import annotations

import random
import re
import unicodedata
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import DomainError

MIN_WORDS = 10
VARIANT_SUFFIXES = (".", "..", "...", "!", "!!", "!!!")
RETRY_SUFFIXES = ("?", "??", "???")
OPERATIONS = ("sr", "ri", "rs", "rd")

# stopword list used by the reference EDA implementation
STOPWORDS = frozenset("""
i me my myself we our ours ourselves you your yours yourself yourselves he him his himself she
her hers herself it its itself they them their theirs themselves what which who whom this that
these those am is are was were be been being have has had having do does did doing a an the and
but if or because as until while of at by for with about against between into through during
before after above below to from up down in out on off over under again further then once here
there when where why how all any both each few more most other some such no nor not only own
same so than too very s t can will just don should now
""".split())

_URL = re.compile(r"(https?://\S+|www\.\S+)", re.IGNORECASE)
_KEEP_PUNCT = frozenset(".!?")
_TRAILING = re.compile(r"^(.*?)([.!?]*)$", re.DOTALL)


@dataclass(frozen=True)
class CleanTweet:
    text: str
    original_id: object = None

    @property
    def words(self):
        return self.text.split()


class SynonymLexicon:
    def __init__(self, synonyms: dict, stopwords=STOPWORDS):
        self.stopwords = frozenset(w.lower() for w in stopwords)
        self.synonyms = {}
        for word, syns in synonyms.items():
            word = word.lower()
            cleaned = tuple(sorted({s.lower() for s in syns} - {word}))
            if cleaned and word not in self.stopwords:
                self.synonyms[word] = cleaned

    def __len__(self):
        return len(self.synonyms)

    def __contains__(self, word):
        return word.lower() in self.synonyms

    def get(self, word):
        return self.synonyms.get(word.lower(), ())

    @classmethod
    def load(cls, path=None, stopwords=STOPWORDS):
        """Read ``word<TAB>syn1,syn2,...`` lines; defaults to the bundled table."""
        if path is None:
            text = resources.files("covertsim").joinpath("data/lexicon.tsv").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        table = {}
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            word, _, syns = line.partition("\t")
            table[word.strip()] = [s.strip() for s in syns.split(",") if s.strip()]
        return cls(table, stopwords)


_default_lexicon = None


def default_lexicon() -> SynonymLexicon:
    global _default_lexicon
    if _default_lexicon is None:
        _default_lexicon = SynonymLexicon.load()
    return _default_lexicon


# -- cleaning ----------------------------------------------------------------

def _strip(text: str) -> str:
    text = _URL.sub(" ", text)
    out = []
    for ch in text:
        cat = unicodedata.category(ch)
        if ch in _KEEP_PUNCT:
            out.append(ch)
        elif cat[0] == "P" or cat in ("So", "Sk", "Sm", "Sc", "Cs", "Co", "Cn", "Mn", "Cf") or ch in "#@":
            # punctuation, emoji, modifiers, variation selectors, joiners
            out.append(" " if cat[0] == "P" and ch not in "'’" else "")
        elif ch.isspace():
            out.append(" ")
        else:
            out.append(ch)
    return " ".join("".join(out).split())


def _field(raw, name, default=None):
    if isinstance(raw, dict):
        return raw.get(name, default)
    if isinstance(raw, str):
        return {"text": raw}.get(name, default)
    return getattr(raw, name, default)


def clean(raw_tweets) -> list[CleanTweet]:
    """Length filter, drop retweets, strip links/emoji/punctuation, re-check length, dedupe.

    Accepts strings, dicts or objects with ``text``, ``id`` and ``is_retweet``.
    """
    seen = set()
    out = []
    for raw in raw_tweets:
        text = _field(raw, "text", "") or ""
        if len(text.split()) < MIN_WORDS:
            continue
        if _field(raw, "is_retweet", False):
            continue
        text = _strip(text)
        if len(text.split()) < MIN_WORDS or text in seen:
            continue
        seen.add(text)
        out.append(CleanTweet(text, _field(raw, "id")))
    return out


# -- EDA operations ----------------------------------------------------------

def _split_token(tok):
    core, punct = _TRAILING.match(tok).groups()
    return core, punct


def _match_case(template, word):
    if template[:1].isupper() and template[1:].islower():
        return word[:1].upper() + word[1:]
    if template.isupper() and len(template) > 1:
        return word.upper()
    return word


def synonym_replacement(sentence, n, lexicon, rng) -> str:
    words = sentence.split()
    if n <= 0 or not words:
        return sentence
    cores = [_split_token(w)[0].lower() for w in words]
    candidates = sorted({c for c in cores if c and c not in lexicon.stopwords and c in lexicon})
    rng.shuffle(candidates)
    replaced = 0
    for cand in candidates:
        syn = rng.choice(lexicon.get(cand))
        for k, core in enumerate(cores):
            if core == cand:
                orig, punct = _split_token(words[k])
                words[k] = _match_case(orig, syn) + punct
        replaced += 1
        if replaced >= n:
            break
    return " ".join(words)


def random_insertion(sentence, n, lexicon, rng) -> str:
    words = sentence.split()
    if n <= 0 or not words:
        return sentence
    for _ in range(n):
        for _attempt in range(10):
            core = _split_token(rng.choice(words))[0].lower()
            syns = lexicon.get(core) if core not in lexicon.stopwords else ()
            if syns:
                words.insert(rng.randint(0, len(words)), rng.choice(syns))
                break
    return " ".join(words)


def random_swap(sentence, n, rng) -> str:
    words = sentence.split()
    if n <= 0 or len(words) < 2:
        return sentence
    for _ in range(n):
        i = rng.randrange(len(words))
        j = i
        for _attempt in range(3):
            j = rng.randrange(len(words))
            if j != i:
                break
        words[i], words[j] = words[j], words[i]
    return " ".join(words)


def random_deletion(sentence, p, rng) -> str:
    if not 0 <= p <= 1:
        raise DomainError("deletion probability must be in [0, 1]")
    words = sentence.split()
    if p == 0 or len(words) <= 1:
        return sentence
    kept = [w for w in words if rng.random() >= p]
    if not kept:
        kept = [rng.choice(words)]
    return " ".join(kept)


@dataclass(frozen=True)
class AugmentConfig:
    alpha: float = 0.1
    num_aug: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise DomainError("alpha must be in [0, 1]")
        if self.num_aug < 1:
            raise DomainError("num_aug must be positive")


def tweet_rng(seed, index) -> random.Random:
    """Per-tweet stream so serial and parallel runs agree."""
    return random.Random(f"{seed}/{index}")


def augment(tweet, cfg: AugmentConfig, lexicon=None, index=0) -> list[str]:
    """``cfg.num_aug`` sentences, each from one uniformly chosen EDA operation."""
    lexicon = lexicon or default_lexicon()
    text = tweet.text if isinstance(tweet, CleanTweet) else str(tweet)
    rng = tweet_rng(cfg.seed, index)
    n = max(1, round(cfg.alpha * len(text.split())))
    out = []
    for _ in range(cfg.num_aug):
        op = rng.choice(OPERATIONS)
        if op == "sr":
            out.append(synonym_replacement(text, n, lexicon, rng))
        elif op == "ri":
            out.append(random_insertion(text, n, lexicon, rng))
        elif op == "rs":
            out.append(random_swap(text, n, rng))
        else:
            out.append(random_deletion(text, cfg.alpha, rng))
    return out


def augment_all(tweets, cfg: AugmentConfig, lexicon=None) -> list[str]:
    lexicon = lexicon or default_lexicon()
    out = []
    for i, t in enumerate(tweets):
        out.extend(augment(t, cfg, lexicon, index=i))
    return out


def expand_variants(sentences, suffixes=VARIANT_SUFFIXES) -> list[str]:
    """Each sentence, then its upper-cased form with every suffix appended."""
    out = []
    for s in sentences:
        out.append(s)
        upper = s.upper()
        out.extend(upper + p for p in suffixes)
    return out


def keyword_retention(sentences, topic) -> float:
    if not topic:
        raise DomainError("topic must be non-empty")
    sentences = list(sentences)
    if not sentences:
        return 0.0
    key = topic.lower()
    return sum(key in s.lower() for s in sentences) / len(sentences)
