import numpy as np
import pytest

from covertsim import avatars
from covertsim.avatars import AvatarImage, CorpusSpec
from covertsim.errors import CorpusError, DomainError


def constant(side, rgb):
    return AvatarImage(np.full((side, side, 3), rgb, np.uint8))


def test_corpus_is_deterministic():
    a = avatars.generate_corpus(CorpusSpec(10, seed=7))
    b = avatars.generate_corpus(CorpusSpec(10, seed=7))
    for x, y in zip(a, b):
        assert x.master == y.master and x.jpeg == y.jpeg


def test_corpus_identities_differ(small_corpus):
    masters = [ident.master.pixels for ident in small_corpus]
    assert not np.array_equal(masters[0], masters[1])


def test_every_identity_has_all_variants(small_corpus):
    for ident in small_corpus:
        assert ident.master.size == 400 and not ident.master.lossy
        for s in avatars.AVATAR_SIZES:
            img = ident.variants[s]
            assert img.size == s and img.lossy and img.source_id == ident.id
            assert not avatars.is_flat(img.pixels)


def test_flat_detector():
    assert avatars.is_flat(constant(50, (10, 20, 30)).pixels)
    px = np.random.default_rng(0).integers(0, 256, (50, 50, 3), dtype=np.uint8)
    assert not avatars.is_flat(px)
    # 45% near the modal colour (off by one level) is still flat
    px[:, :18] = (100, 100, 100)
    px[:, 18:23] = (101, 99, 100)
    assert avatars.is_flat(px)


def test_forced_flat_image_is_regenerated(monkeypatch):
    calls = []
    real = avatars.procedural_avatar

    def fake(rng, side=400):
        calls.append(1)
        if len(calls) == 1:
            return np.full((side, side, 3), 7, np.uint8)
        return real(rng, side)

    monkeypatch.setattr(avatars, "procedural_avatar", fake)
    ident = avatars.make_identity("x", np.random.default_rng(0))
    assert len(calls) == 2 and not avatars.is_flat(ident.master.pixels)
    calls.clear()
    flat = avatars.make_identity("y", np.random.default_rng(0), reject_flat=False)
    assert avatars.is_flat(flat.master.pixels)


def test_resize_identity_and_constant(small_corpus):
    m = small_corpus[0].master
    assert np.array_equal(avatars.resize(m, 400).pixels, m.pixels)
    out = avatars.resize(constant(400, (12, 200, 99)), 128)
    assert out.size == 128 and (out.pixels == (12, 200, 99)).all()
    with pytest.raises(DomainError):
        avatars.resize(m, 0)


def test_resize_chain_difference_is_bounded(small_corpus):
    m = small_corpus[0].master
    direct = avatars.resize(m, 100).pixels.astype(int)
    chained = avatars.resize(avatars.resize(m, 200), 100).pixels.astype(int)
    assert np.abs(direct - chained).mean() < 8


def test_lossy_reencode(small_corpus):
    m = small_corpus[0].master
    hi = avatars.lossy_reencode(m, 100)
    assert hi.lossy and hi.size == m.size
    assert np.abs(hi.pixels.astype(int) - m.pixels).max() <= 3
    for q in (1, 10, 50, 85):
        assert avatars.lossy_reencode(avatars.resize(m, 73), q).size == 73
    for q in (0, 101):
        with pytest.raises(DomainError):
            avatars.lossy_reencode(m, q)


def test_repeated_low_quality_converges(small_corpus):
    m = small_corpus[1].master
    once = avatars.lossy_reencode(m, 10)
    twice = avatars.lossy_reencode(once, 10)
    first = np.abs(once.pixels.astype(int) - m.pixels).mean()
    second = np.abs(twice.pixels.astype(int) - once.pixels).mean()
    assert second < first


def scalar_tensor(img, size):
    """Loop oracle: half-pixel bilinear (rows then columns), round, scale, channels first."""
    px = img.pixels
    n = px.shape[0]

    def coord(i):
        s = min(max((i + 0.5) * (n / size) - 0.5, 0.0), n - 1)
        lo = int(s // 1)
        return lo, min(lo + 1, n - 1), s - lo

    out = np.zeros((3, size, size))
    for y in range(size):
        y0, y1, fy = coord(y)
        for x in range(size):
            x0, x1, fx = coord(x)
            for c in range(3):
                top = float(px[y0, x0, c]) * (1 - fy) + float(px[y1, x0, c]) * fy
                bot = float(px[y0, x1, c]) * (1 - fy) + float(px[y1, x1, c]) * fy
                v = top * (1 - fx) + bot * fx
                out[c, y, x] = min(max(round(v), 0), 255) / 255.0
    return out


def test_input_tensor_matches_scalar_oracle():
    rng = np.random.default_rng(5)
    img = AvatarImage(rng.integers(0, 256, (48, 48, 3), dtype=np.uint8))
    got = avatars.to_input_tensor(img, 32)
    assert got.shape == (3, 32, 32)
    np.testing.assert_allclose(got, scalar_tensor(img, 32), atol=1e-6)


def test_input_tensor_extremes():
    assert not avatars.to_input_tensor(constant(400, 0), 128).any()
    assert (avatars.to_input_tensor(constant(400, 255), 128) == 1).all()


def test_avatar_image_validation():
    with pytest.raises(DomainError):
        AvatarImage(np.zeros((4, 5, 3), np.uint8))
    with pytest.raises(DomainError):
        AvatarImage(np.zeros((4, 4, 4), np.uint8))
    with pytest.raises(DomainError):
        AvatarImage(np.zeros((4, 4, 3), np.float32))
    with pytest.raises(DomainError):
        CorpusSpec(0)


def test_corpus_disk_round_trip(tmp_path, small_corpus):
    avatars.save_corpus(small_corpus[:2], tmp_path)
    assert sorted(p.name for p in (tmp_path / small_corpus[0].id).iterdir()) == \
        ["200.jpg", "400.jpg", "48.jpg", "73.jpg", "master.png"]
    back = avatars.load_corpus(tmp_path)
    for a, b in zip(small_corpus, back):
        assert np.array_equal(a.master.pixels, b.master.pixels)
        for s in avatars.AVATAR_SIZES:
            assert np.array_equal(a.variants[s].pixels, b.variants[s].pixels)
    (tmp_path / small_corpus[0].id / "73.jpg").unlink()
    with pytest.raises(CorpusError):
        avatars.load_corpus(tmp_path)
