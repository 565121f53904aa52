import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from covertsim import avatars, nn, siamese
from covertsim.errors import CapacityError, DomainError, FormatError
from covertsim.siamese import CalibrationReport, FeatureVector, VectorStore

vec = st.lists(st.floats(-100, 100), min_size=128, max_size=128).map(np.array)


def unit(k):
    v = np.zeros(128)
    v[k] = 1
    return v


# -- pairs -------------------------------------------------------------------

def test_build_pairs_counts_and_labels():
    corpus = avatars.generate_corpus(avatars.CorpusSpec(100, seed=1))
    pairs = siamese.build_pairs(corpus, (1, 2), seed=3)
    labels = [p.label for p in pairs]
    assert labels.count(siamese.SAME) == 100 and labels.count(siamese.DIFFERENT) == 200
    for p in pairs:
        if p.label == siamese.SAME:
            assert p.left.source_id == p.right.source_id and {p.left.size, p.right.size} == {200, 400}
        else:
            assert p.left.source_id != p.right.source_id and p.left.size == p.right.size == 400
    diff = {frozenset((p.left.source_id, p.right.source_id)) for p in pairs if p.label}
    assert len(diff) == 200
    again = siamese.build_pairs(corpus, (1, 2), seed=3)
    assert [(p.left.source_id, p.right.source_id) for p in pairs] == \
        [(p.left.source_id, p.right.source_id) for p in again]


def test_build_pairs_capacity(small_corpus):
    with pytest.raises(CapacityError):
        siamese.build_pairs(small_corpus[:1])
    with pytest.raises(CapacityError):
        siamese.build_pairs(small_corpus[:3], (1, 5))  # 15 wanted, 3 distinct exist


# -- distances ---------------------------------------------------------------

def test_distance_examples():
    assert siamese.distance(unit(0), unit(1)) == pytest.approx(math.sqrt(2))
    assert siamese.distance(unit(3), unit(3)) == 0
    with pytest.raises(DomainError):
        siamese.distance(np.zeros(3), np.zeros(4))


@given(vec, vec)
def test_distance_matches_scalar_loop(a, b):
    want = math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))
    assert siamese.distance(a, b) == pytest.approx(want, rel=1e-9, abs=1e-9)


@given(vec, vec, vec)
def test_distance_is_a_metric(a, b, c):
    d = siamese.distance
    assert d(a, a) == 0
    assert d(a, b) == d(b, a) >= 0
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-9


def test_pairwise_matches_distance():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(5, 128)), rng.normal(size=(4, 128))
    got = siamese.pairwise_distances(a, b)
    for i in range(5):
        for j in range(4):
            assert got[i, j] == pytest.approx(siamese.distance(a[i], b[j]), rel=1e-9)


def test_feature_vector_validation():
    with pytest.raises(DomainError):
        FeatureVector("x", np.zeros(127))
    with pytest.raises(DomainError):
        FeatureVector("x", np.full(128, np.nan))


# -- calibration ---------------------------------------------------------------

def test_calibrate_separable_midpoint():
    rep = siamese.calibrate([0.01, 0.005, 0.03, 0.04], [0, 0, 1, 1])
    assert rep.threshold == pytest.approx(0.02)
    assert rep.false_match_count == rep.miss_count == 0
    assert (rep.max_same_distance, rep.min_diff_distance) == (0.01, 0.03)


def test_calibrate_overlap_prefers_no_false_match():
    rep = siamese.calibrate([0.02, 0.06, 0.05, 0.09], [0, 0, 1, 1])
    assert rep.threshold == 0.05
    assert rep.false_match_count == 0 and rep.miss_count == 1
    assert rep.miss_rate == 0.5


@given(st.lists(st.tuples(st.floats(0.001, 10), st.integers(0, 1)), min_size=2))
def test_calibration_never_admits_a_different_pair(rows):
    d, y = zip(*rows)
    if len(set(y)) < 2:
        with pytest.raises(DomainError):
            siamese.calibrate(d, y)
        return
    rep = siamese.calibrate(d, y)
    assert rep.false_match_count == 0
    assert rep.miss_count == sum(1 for di, yi in rows if yi == 0 and di >= rep.threshold)


def test_calibrate_rejects_zero_distance_difference():
    with pytest.raises(DomainError):
        siamese.calibrate([0.0, 0.0], [0, 1])


def test_accuracy():
    assert siamese.accuracy([0.1, 0.5, 0.2], [0, 1, 1], 0.3) == pytest.approx(2 / 3)
    assert siamese.accuracy([], [], 0.3) == 0.0


def test_report_text_round_trip():
    rep = CalibrationReport(0.0155, 0.0018, 0.029, 0, 1, 50, 100)
    assert CalibrationReport.from_text(rep.to_text()) == rep
    with pytest.raises(FormatError):
        CalibrationReport.from_text("threshold=abc\n")


# -- training ----------------------------------------------------------------

def test_zero_epoch_training_reports_initial_state(small_corpus):
    model, rep = siamese.train(small_corpus, nn.TrainingConfig(epochs=0), input_size=64)
    assert rep.epoch_loss == [] and rep.test_accuracy == rep.initial_accuracy
    assert rep.calibration.false_match_count == 0
    assert rep.n_train + rep.n_test == 18


def test_training_is_deterministic(small_corpus):
    cfg = nn.TrainingConfig(epochs=1, seed=2)
    m1, r1 = siamese.train(small_corpus, cfg, input_size=64)
    m2, r2 = siamese.train(small_corpus, cfg, input_size=64)
    assert r1.epoch_loss == r2.epoch_loss and r1.calibration == r2.calibration
    for a, b in zip(m1.tensors(), m2.tensors()):
        assert np.array_equal(a, b)
    assert np.isfinite(r1.epoch_loss[0])


def test_training_reduces_loss():
    corpus = avatars.generate_corpus(avatars.CorpusSpec(16, seed=11))
    _, rep = siamese.train(corpus, nn.TrainingConfig(epochs=3, seed=0), input_size=64)
    assert rep.epoch_loss[-1] < rep.epoch_loss[0]


# -- matching ------------------------------------------------------------------

def test_self_match_and_consumption(small_corpus):
    ext = siamese.Extractor(nn.init_weights(nn.default_spec(), 64, seed=0), input_size=64)
    vectors = ext.vectors_for(small_corpus)
    store = VectorStore(vectors)
    target = small_corpus[2].master
    hit = siamese.match(target, store, ext, 1e-3)
    assert hit[0] == small_corpus[2].id and hit[1] < 1e-6
    assert store.vectors[2].consumed
    again = siamese.match(target, store, ext, 1e-3)
    assert again is None or again[0] != small_corpus[2].id


def test_match_without_consume_and_errors():
    store = VectorStore([FeatureVector("a", unit(0)), FeatureVector("b", unit(1))])
    assert store.match(unit(0), 0.1, consume=False) == ("a", 0.0)
    assert not store.vectors[0].consumed
    assert store.match(unit(5), 0.1) is None
    store.consume("a")
    with pytest.raises(DomainError):
        store.consume("a")
    with pytest.raises(DomainError):
        store.consume("zzz")
    with pytest.raises(DomainError):
        VectorStore().match(unit(0), 0.1)
    with pytest.raises(DomainError):
        store.match(unit(0), 0)


def test_all_consumed_returns_none():
    store = VectorStore([FeatureVector("a", unit(0))])
    store.consume("a")
    assert store.match(unit(0), 1.0) is None


def test_vector_file_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    vs = [FeatureVector(f"v{k}", rng.normal(size=128), consumed=k == 1) for k in range(3)]
    path = tmp_path / "vectors.tsv"
    siamese.save_vectors(path, vs)
    back = siamese.load_vectors(path)
    assert [v.id for v in back] == ["v0", "v1", "v2"]
    assert [v.consumed for v in back] == [False, True, False]
    for a, b in zip(vs, back):
        assert np.array_equal(a.values, b.values)
    path.write_text("v0\t2\t1 2 3\n")
    with pytest.raises(FormatError):
        siamese.load_vectors(path)


def test_size_distance_experiment(small_corpus):
    rows = siamese.size_distance_experiment(small_corpus[:3], repetitions=2, input_size=32)
    assert len(rows) == 6
    assert {r["sizes"] for r in rows} == set(siamese.SIZE_COMBINATIONS)
    means = [r["mean"] for r in rows]
    assert means == sorted(means) and all(len(r["per_run"]) == 2 for r in rows)


# -- trained-model invariants ----------------------------------------------------

def test_trained_identities_self_match_after_reencode(desk):
    for ident in desk.corpus:
        served = avatars.lossy_reencode(avatars.resize(ident.master, 400), 85)
        d = siamese.distance(desk.extractor.extract(ident.master), desk.extractor.extract(served))
        assert d < desk.threshold, ident.id


def test_unrelated_avatars_match_nothing(desk):
    vectors = desk.extractor.vectors_for(desk.corpus[:50])
    strangers = avatars.generate_corpus(avatars.CorpusSpec(20, seed=77, prefix="x"))
    emb = desk.extractor.extract_many([s.variants[400] for s in strangers])
    assert siamese.pairwise_distances(emb, np.stack([v.values for v in vectors])).min() >= desk.threshold
    for s in strangers[:5]:
        assert siamese.match(s.variants[400], vectors, desk.extractor, desk.threshold) is None
