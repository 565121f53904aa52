"""Siamese training, distance threshold calibration and avatar matching."""
from __future__ import annotations

import itertools
import logging
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .avatars import AVATAR_SIZES, AvatarImage, to_input_tensor
from .errors import CapacityError, CorpusError, DomainError, FormatError, NumericError

log = logging.getLogger(__name__)

SAME, DIFFERENT = 0, 1


@dataclass
class FeatureVector:
    id: str
    values: np.ndarray
    consumed: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32).reshape(-1)
        if self.values.shape != (nn.EMBEDDING_SIZE,):
            raise DomainError(f"feature vector must have {nn.EMBEDDING_SIZE} values")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("feature vector contains non-finite values")


@dataclass(frozen=True)
class AvatarPair:
    left: AvatarImage
    right: AvatarImage
    label: int


def _values(v):
    return v.values if isinstance(v, FeatureVector) else np.asarray(v, dtype=np.float64).reshape(-1)


def distance(a, b) -> float:
    """Euclidean distance between two feature vectors (or plain arrays)."""
    va, vb = _values(a), _values(b)
    if va.shape != vb.shape:
        raise DomainError(f"length mismatch: {va.shape[0]} vs {vb.shape[0]}")
    diff = va.astype(np.float64) - vb.astype(np.float64)
    return float(np.sqrt(np.dot(diff, diff)))


def pairwise_distances(a, b=None):
    """All-pairs Euclidean distances between rows of ``a`` and ``b`` (float64)."""
    a = np.asarray(a, dtype=np.float64)
    b = a if b is None else np.asarray(b, dtype=np.float64)
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2 * a @ b.T
    return np.sqrt(np.maximum(sq, 0))


class Extractor:
    """A model bound to its layer spec and input size."""

    def __init__(self, model: nn.ModelWeights, spec=None, input_size=nn.DEFAULT_INPUT_SIZE):
        self.model = model
        self.spec = spec if spec is not None else nn.default_spec()
        self.input_size = input_size

    def tensor(self, img: AvatarImage):
        return to_input_tensor(img, self.input_size)

    def extract(self, img: AvatarImage) -> np.ndarray:
        return nn.forward(self.model, self.spec, self.tensor(img))

    def extract_many(self, images, batch_size=64) -> np.ndarray:
        out = []
        for i in range(0, len(images), batch_size):
            x = np.stack([self.tensor(im) for im in images[i:i + batch_size]])
            out.append(nn.forward_batch(self.model, self.spec, x))
        if not out:
            return np.zeros((0, nn.EMBEDDING_SIZE), dtype=np.float32)
        return np.concatenate(out)

    def vectors_for(self, identities, prefix="") -> list[FeatureVector]:
        """Feature vectors of identity masters, as a botmaster would prepare them."""
        emb = self.extract_many([ident.master for ident in identities])
        return [FeatureVector(prefix + ident.id, e) for ident, e in zip(identities, emb)]


# -- pairs -------------------------------------------------------------------

def build_pairs(corpus, ratio=(1, 2), seed=0) -> list[AvatarPair]:
    """Label-0 pairs are (200, 400) variants of one identity, label-1 pairs are
    400x400 variants of two distinct identities, ``ratio`` = (same, different)."""
    same_units, diff_units = ratio
    if same_units < 1 or diff_units < 0:
        raise DomainError("ratio must be (positive, non-negative)")
    n = len(corpus)
    if n < 2:
        raise CapacityError("need at least two identities to form different pairs")
    for ident in corpus:
        if 200 not in ident.variants or 400 not in ident.variants:
            raise CapacityError(f"{ident.id}: needs 200 and 400 size variants")
    n_same = n
    n_diff = n * diff_units // same_units
    if n_diff > n * (n - 1) // 2:
        raise CapacityError(f"{n} identities cannot supply {n_diff} distinct different pairs")
    rng = np.random.default_rng(seed)
    pairs = [AvatarPair(ident.variants[200], ident.variants[400], SAME) for ident in corpus]
    seen = set()
    while len(seen) < n_diff:
        i, j = rng.choice(n, size=2, replace=False)
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        seen.add(key)
        pairs.append(AvatarPair(corpus[i].variants[400], corpus[j].variants[400], DIFFERENT))
    order = rng.permutation(len(pairs))
    return [pairs[k] for k in order]


class _TensorCache:
    def __init__(self, size):
        self.size = size
        self._cache = {}

    def __call__(self, img):
        key = id(img)
        hit = self._cache.get(key)
        if hit is None or hit[0] is not img:
            hit = (img, to_input_tensor(img, self.size))
            self._cache[key] = hit
        return hit[1]

    def batch(self, images):
        return np.stack([self(im) for im in images])


def pair_distances(extractor: Extractor, pairs, cache=None, batch_size=64) -> np.ndarray:
    cache = cache or _TensorCache(extractor.input_size)
    out = []
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i:i + batch_size]
        left = nn.forward_batch(extractor.model, extractor.spec, cache.batch([p.left for p in chunk]))
        right = nn.forward_batch(extractor.model, extractor.spec, cache.batch([p.right for p in chunk]))
        out.append(np.sqrt(((left.astype(np.float64) - right) ** 2).sum(1)))
    return np.concatenate(out) if out else np.zeros(0)


# -- calibration -------------------------------------------------------------

@dataclass
class CalibrationReport:
    threshold: float
    max_same_distance: float
    min_diff_distance: float
    false_match_count: int
    miss_count: int
    n_same: int = 0
    n_diff: int = 0

    @property
    def miss_rate(self) -> float:
        return self.miss_count / self.n_same if self.n_same else 0.0

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in self.__dict__.items())

    @classmethod
    def from_text(cls, text: str) -> "CalibrationReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        try:
            return cls(
                threshold=float(kv["threshold"]),
                max_same_distance=float(kv["max_same_distance"]),
                min_diff_distance=float(kv["min_diff_distance"]),
                false_match_count=int(kv["false_match_count"]),
                miss_count=int(kv["miss_count"]),
                n_same=int(kv.get("n_same", 0)),
                n_diff=int(kv.get("n_diff", 0)),
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad calibration report: {exc}") from exc


def calibrate(distances, labels) -> CalibrationReport:
    """Pick the decision threshold from labelled distances.

    Separable case: midpoint between the largest same-pair distance and the
    smallest different-pair distance. Overlap: the smallest different-pair
    distance, with overlapping same pairs counted as misses. Either way no
    different pair falls below the threshold.
    """
    d = np.asarray(distances, dtype=np.float64)
    y = np.asarray(labels)
    same, diff = d[y == SAME], d[y == DIFFERENT]
    if len(same) == 0 or len(diff) == 0:
        raise DomainError("calibration needs both same and different pairs")
    min_diff = float(diff.min())
    below = same[same <= min_diff]
    if len(below) == len(same):
        threshold = (float(below.max()) + min_diff) / 2
    else:
        threshold = min_diff
    if threshold <= 0:
        raise DomainError("different pairs at distance 0; no positive threshold exists")
    return CalibrationReport(
        threshold=threshold,
        max_same_distance=float(same.max()),
        min_diff_distance=min_diff,
        false_match_count=int((diff < threshold).sum()),
        miss_count=int((same >= threshold).sum()),
        n_same=len(same),
        n_diff=len(diff),
    )


def calibrate_threshold(extractor: Extractor, pairs, cache=None) -> CalibrationReport:
    return calibrate(pair_distances(extractor, pairs, cache), [p.label for p in pairs])


def accuracy(distances, labels, threshold) -> float:
    d = np.asarray(distances)
    pred = np.where(d < threshold, SAME, DIFFERENT)
    return float((pred == np.asarray(labels)).mean()) if len(d) else 0.0


# -- training ----------------------------------------------------------------

@dataclass
class TrainingReport:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_accuracy: list[float] = field(default_factory=list)
    initial_accuracy: float = 0.0
    calibration: CalibrationReport | None = None
    test_accuracy: float = 0.0
    n_train: int = 0
    n_test: int = 0
    config: dict = field(default_factory=dict)


def split_pairs(pairs, train_fraction=0.75):
    cut = int(round(len(pairs) * train_fraction))
    return pairs[:cut], pairs[cut:]


def train(corpus, cfg: nn.TrainingConfig, input_size=nn.FAST_INPUT_SIZE, spec=None,
          ratio=(1, 2), pairs=None, model=None):
    """Train the Siamese network on pairs built from ``corpus``.

    Pairs are split 75/25; after each epoch the threshold is calibrated on the
    training pairs and accuracy is measured on the held-out ones.
    Returns ``(model, TrainingReport)``.
    """
    spec = spec if spec is not None else nn.default_spec()
    if pairs is None:
        pairs = build_pairs(corpus, ratio, seed=cfg.seed)
    train_pairs, test_pairs = split_pairs(pairs)
    if not train_pairs or not test_pairs:
        raise CapacityError("not enough pairs for a 75/25 split")
    if model is None:
        model = nn.init_weights(spec, input_size, seed=cfg.seed)
    cache = _TensorCache(input_size)
    rng = np.random.default_rng([cfg.seed, 1])
    report = TrainingReport(n_train=len(train_pairs), n_test=len(test_pairs), config=dict(cfg.__dict__, input_size=input_size))

    def evaluate():
        ext = Extractor(model, spec, input_size)
        cal = calibrate_threshold(ext, train_pairs, cache)
        acc = accuracy(pair_distances(ext, test_pairs, cache), [p.label for p in test_pairs], cal.threshold)
        return cal, acc

    report.calibration, report.initial_accuracy = evaluate()
    report.test_accuracy = report.initial_accuracy
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_pairs))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_pairs[k] for k in order[start:start + cfg.batch_size]]
            left = cache.batch([p.left for p in batch])
            right = cache.batch([p.right for p in batch])
            y = np.array([p.label for p in batch])
            try:
                model, loss = nn.train_step(model, spec, (left, right), y, cfg)
            except NumericError as exc:
                raise NumericError(f"training diverged in epoch {epoch}: {exc}", layer=exc.layer, epoch=epoch) from exc
            total += loss * len(batch)
        mean_loss = total / len(train_pairs)
        if not math.isfinite(mean_loss):
            raise NumericError(f"non-finite loss in epoch {epoch}", epoch=epoch)
        report.calibration, report.test_accuracy = evaluate()
        report.epoch_loss.append(mean_loss)
        report.epoch_accuracy.append(report.test_accuracy)
        log.info("epoch %d loss %.5f test accuracy %.4f threshold %.4g", epoch, mean_loss,
                 report.test_accuracy, report.calibration.threshold)
    return model, report


# -- matching ----------------------------------------------------------------

class VectorStore:
    """Feature vectors held by a bot. Consumption is atomic with the match decision."""

    def __init__(self, vectors=()):
        self.vectors = list(vectors)
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.vectors)

    def unconsumed(self):
        return [v for v in self.vectors if not v.consumed]

    def nearest(self, embedding):
        live = self.unconsumed()
        if not live:
            return None
        dists = pairwise_distances(np.asarray(embedding)[None], np.stack([v.values for v in live]))[0]
        k = int(np.argmin(dists))
        return live[k], float(dists[k])

    def match(self, embedding, threshold, consume=True):
        """Closest live vector within ``threshold``, as ``(id, distance)``; consumed if requested."""
        if threshold <= 0:
            raise DomainError("threshold must be positive")
        if not self.vectors:
            raise DomainError("no feature vectors to match against")
        with self._lock:
            hit = self.nearest(embedding)
            if hit is None or hit[1] >= threshold:
                return None
            if consume:
                hit[0].consumed = True
            return hit[0].id, hit[1]

    def consume(self, vector_id):
        with self._lock:
            for v in self.vectors:
                if v.id == vector_id:
                    if v.consumed:
                        raise DomainError(f"vector {vector_id} already consumed")
                    v.consumed = True
                    return
        raise DomainError(f"unknown vector {vector_id}")

    def save(self, path):
        save_vectors(path, self.vectors)

    @classmethod
    def load(cls, path):
        return cls(load_vectors(path))


def match(avatar: AvatarImage, vectors, extractor: Extractor, threshold, consume=True):
    """Extract ``avatar`` and look it up among ``vectors`` (a list or a :class:`VectorStore`)."""
    store = vectors if isinstance(vectors, VectorStore) else VectorStore(vectors)
    if not len(store):
        raise DomainError("no feature vectors to match against")
    return store.match(extractor.extract(avatar), threshold, consume=consume)


def save_vectors(path, vectors):
    lines = []
    for v in vectors:
        if "\t" in v.id or "\n" in v.id:
            raise DomainError("vector ids may not contain tabs or newlines")
        values = " ".join(f"{x:.9g}" for x in v.values.tolist())
        lines.append(f"{v.id}\t{int(v.consumed)}\t{values}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_vectors(path) -> list[FeatureVector]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[1] not in ("0", "1"):
            raise FormatError(f"line {lineno}: expected id<TAB>0|1<TAB>values")
        try:
            values = np.array([float(x) for x in parts[2].split()], dtype=np.float32)
            out.append(FeatureVector(parts[0], values, consumed=parts[1] == "1"))
        except (ValueError, DomainError) as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
    return out


# -- size experiment ---------------------------------------------------------

SIZE_COMBINATIONS = list(itertools.combinations(sorted(AVATAR_SIZES, reverse=True), 2))


def size_distance_experiment(corpus, repetitions=14, input_size=nn.FAST_INPUT_SIZE, spec=None, seed=0):
    """Mean same-identity distance for each of the 6 size combinations, averaged
    over ``repetitions`` randomly initialised networks.

    Returns rows ``{"sizes": (a, b), "mean": float, "per_run": [...]}`` sorted
    by mean distance.
    """
    spec = spec if spec is not None else nn.default_spec()
    for ident in corpus:
        missing = [s for s in AVATAR_SIZES if s not in ident.variants]
        if missing:
            raise CorpusError(f"{ident.id}: missing size variants {missing}")
    per_run = {combo: [] for combo in SIZE_COMBINATIONS}
    for r in range(repetitions):
        ext = Extractor(nn.init_weights(spec, input_size, seed=seed * 1000 + r), spec, input_size)
        emb = {s: ext.extract_many([ident.variants[s] for ident in corpus]) for s in AVATAR_SIZES}
        for a, b in SIZE_COMBINATIONS:
            d = np.sqrt(((emb[a].astype(np.float64) - emb[b]) ** 2).sum(1))
            per_run[(a, b)].append(float(d.mean()))
    rows = [{"sizes": combo, "mean": float(np.mean(v)), "per_run": v} for combo, v in per_run.items()]
    for row in rows:
        if not math.isfinite(row["mean"]):
            raise NumericError(f"non-finite mean distance for sizes {row['sizes']}")
    return sorted(rows, key=lambda row: row["mean"])
