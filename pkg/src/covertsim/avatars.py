"""Synthetic avatar corpus, bilinear resizing, JPEG re-encoding and tensor conversion."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CorpusError, DomainError

AVATAR_SIZES = (48, 73, 200, 400)
MASTER_SIZE = 400
DEFAULT_QUALITY = 85
FLAT_FRACTION = 0.40
SIZE_SUFFIX = {48: "normal", 73: "bigger", 200: "200x200", 400: "400x400"}


@dataclass(frozen=True, eq=False)
class AvatarImage:
    pixels: np.ndarray  # (side, side, 3) uint8
    source_id: str = ""
    lossy: bool = False

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise DomainError(f"avatar must be (side, side, 3), got {px.shape}")
        if px.shape[0] != px.shape[1]:
            raise DomainError("avatar must be square")
        if px.dtype != np.uint8:
            raise DomainError("avatar pixels must be uint8")
        px.flags.writeable = False

    @property
    def size(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, AvatarImage):
            return NotImplemented
        return (self.source_id == other.source_id and self.lossy == other.lossy
                and np.array_equal(self.pixels, other.pixels))


# -- resampling --------------------------------------------------------------

def _bilinear(arr, out_h, out_w):
    """Half-pixel-centred bilinear resampling of a float (H, W, C) array, edges clamped."""
    in_h, in_w = arr.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return arr.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(in_h, out_h)
    x0, x1, fx = axis(in_w, out_w)
    fy = fy.astype(arr.dtype)[:, None, None]
    fx = fx.astype(arr.dtype)[None, :, None]
    # separable: interpolate rows first, then columns
    rows = arr[y0] * (1 - fy) + arr[y1] * fy
    return rows[:, x0] * (1 - fx) + rows[:, x1] * fx


def resize(img: AvatarImage, side: int) -> AvatarImage:
    if side <= 0:
        raise DomainError("target side must be positive")
    if side == img.size:
        return AvatarImage(img.pixels.copy(), img.source_id, img.lossy)
    out = _bilinear(img.pixels.astype(np.float64), side, side)
    return AvatarImage(np.clip(np.rint(out), 0, 255).astype(np.uint8), img.source_id, img.lossy)


# -- encoding ----------------------------------------------------------------

def encode_jpeg(pixels, quality=DEFAULT_QUALITY) -> bytes:
    buf = io.BytesIO()
    # RGB planes without YCbCr conversion, no chroma subsampling: q=100 is near-lossless
    Image.fromarray(np.asarray(pixels), "RGB").save(
        buf, format="JPEG", quality=int(quality), subsampling=0, keep_rgb=True)
    return buf.getvalue()


def encode_png(pixels) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(pixels), "RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_image(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def lossy_reencode(img: AvatarImage, quality: int = DEFAULT_QUALITY) -> AvatarImage:
    if not 1 <= quality <= 100:
        raise DomainError("JPEG quality must be in [1, 100]")
    return AvatarImage(decode_image(encode_jpeg(img.pixels, quality)), img.source_id, True)


def to_input_tensor(img: AvatarImage, size: int = 128, dtype=np.float32) -> np.ndarray:
    """Resize to ``size``, scale to [0, 1] and move channels first."""
    px = resize(img, size).pixels
    return (px.astype(dtype) / dtype(255.0)).transpose(2, 0, 1).copy()


def to_input_batch(images, size=128, dtype=np.float32) -> np.ndarray:
    return np.stack([to_input_tensor(im, size, dtype) for im in images]) if images else np.zeros((0, 3, size, size), dtype)


# -- procedural corpus -------------------------------------------------------

def is_flat(pixels, fraction=FLAT_FRACTION) -> bool:
    """True when >= ``fraction`` of pixels lie within one level of the modal colour."""
    px = np.asarray(pixels).reshape(-1, 3).astype(np.int32)
    packed = (px[:, 0] << 16) | (px[:, 1] << 8) | px[:, 2]
    values, counts = np.unique(packed, return_counts=True)
    mode = values[np.argmax(counts)]
    modal = np.array([(mode >> 16) & 255, (mode >> 8) & 255, mode & 255])
    near = np.all(np.abs(px - modal) <= 1, axis=1)
    return near.mean() >= fraction


def _value_noise(rng, side, octaves=(2, 4, 8, 16)):
    out = np.zeros((side, side, 3), dtype=np.float32)
    amp, total = 1.0, 0.0
    for cells in octaves:
        grid = rng.random((cells + 1, cells + 1, 3), dtype=np.float32)
        out += amp * _bilinear(grid, side, side)
        total += amp
        amp *= 0.55
    return out / total


def _gradient_field(rng, side):
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float32) / (side - 1)
    c0, c1 = rng.random(3, dtype=np.float32), rng.random(3, dtype=np.float32)
    if rng.random() < 0.5:
        theta = rng.uniform(0, 2 * np.pi)
        t = (xx - 0.5) * np.cos(theta) + (yy - 0.5) * np.sin(theta) + 0.5
    else:
        cy, cx = rng.random(2)
        t = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2) / np.sqrt(2)
    t = np.clip(t, 0, 1)[..., None]
    return c0 * (1 - t) + c1 * t


def _shapes(rng, canvas):
    side = canvas.shape[0]
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float32) / side
    for _ in range(rng.integers(3, 9)):
        color = rng.random(3, dtype=np.float32)
        alpha = rng.uniform(0.35, 0.85)
        cy, cx = rng.random(2)
        ry, rx = rng.uniform(0.05, 0.3, size=2)
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        canvas[mask] = canvas[mask] * (1 - alpha) + color * alpha
    return canvas


def procedural_avatar(rng, side=MASTER_SIZE) -> np.ndarray:
    """Noise + gradient + shapes texture as a (side, side, 3) uint8 array."""
    noise = _value_noise(rng, side)
    grad = _gradient_field(rng, side)
    mix = rng.uniform(0.3, 0.7)
    canvas = (mix * noise + (1 - mix) * grad).astype(np.float32)
    # stretch contrast per channel so textures stay colourful
    lo = canvas.min(axis=(0, 1))
    hi = canvas.max(axis=(0, 1))
    canvas = (canvas - lo) / np.maximum(hi - lo, 1e-6)
    canvas = _shapes(rng, canvas)
    return np.clip(np.rint(canvas * 255), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class CorpusSpec:
    n_identities: int
    seed: int = 0
    reject_flat: bool = True
    quality: int = DEFAULT_QUALITY
    prefix: str = "id"

    def __post_init__(self):
        if self.n_identities < 1:
            raise DomainError("identity count must be >= 1")


@dataclass
class Identity:
    id: str
    master: AvatarImage
    variants: dict[int, AvatarImage] = field(default_factory=dict)
    jpeg: dict[int, bytes] = field(default_factory=dict)  # encoded form of each variant


def derive_variants(master: AvatarImage, quality=DEFAULT_QUALITY):
    """Platform size variants: resize from the master, then JPEG encode.

    Returns ``(images, encoded_bytes)`` keyed by size.
    """
    images, blobs = {}, {}
    for s in AVATAR_SIZES:
        data = encode_jpeg(resize(master, s).pixels, quality)
        blobs[s] = data
        images[s] = AvatarImage(decode_image(data), master.source_id, lossy=True)
    return images, blobs


def make_identity(identity_id, rng, reject_flat=True, quality=DEFAULT_QUALITY, max_tries=50) -> Identity:
    for _ in range(max_tries):
        px = procedural_avatar(rng)
        if not (reject_flat and is_flat(px)):
            break
    else:
        raise CorpusError("could not generate a non-flat avatar")
    master = AvatarImage(px, identity_id, lossy=False)
    return Identity(identity_id, master, *derive_variants(master, quality))


def generate_corpus(spec: CorpusSpec) -> list[Identity]:
    """Deterministic corpus; identity ``i`` uses its own stream ``(seed, i)``."""
    corpus = []
    for i in range(spec.n_identities):
        rng = np.random.default_rng([spec.seed, i])
        corpus.append(make_identity(f"{spec.prefix}{i:05d}", rng, spec.reject_flat, spec.quality))
    return corpus


def save_corpus(corpus, out_dir):
    """Write ``<out>/<identity>/master.png`` and ``<size>.jpg`` for every variant."""
    out_dir = Path(out_dir)
    for ident in corpus:
        d = out_dir / ident.id
        d.mkdir(parents=True, exist_ok=True)
        (d / "master.png").write_bytes(encode_png(ident.master.pixels))
        for size, data in ident.jpeg.items():
            (d / f"{size}.jpg").write_bytes(data)


def load_corpus(in_dir, sizes=AVATAR_SIZES) -> list[Identity]:
    in_dir = Path(in_dir)
    corpus = []
    for d in sorted(p for p in in_dir.iterdir() if p.is_dir()):
        master_path = d / "master.png"
        if not master_path.exists():
            raise CorpusError(f"{d.name}: missing master.png")
        master = AvatarImage(decode_image(master_path.read_bytes()), d.name)
        variants, blobs = {}, {}
        for s in sizes:
            p = d / f"{s}.jpg"
            if not p.exists():
                raise CorpusError(f"{d.name}: missing size variant {s}")
            blobs[s] = p.read_bytes()
            variants[s] = AvatarImage(decode_image(blobs[s]), d.name, lossy=True)
        corpus.append(Identity(d.name, master, variants, blobs))
    return corpus
