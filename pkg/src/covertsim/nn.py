"""Small numpy convolutional network with hand-written backpropagation.

Tensors are plain ``numpy.ndarray`` objects in NCHW layout. The network is
described by a list of :class:`LayerSpec` and its parameters live in an
immutable :class:`ModelWeights`; every update returns a new model.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DomainError, FormatError, NumericError

WEIGHTS_MAGIC = b"DC2W"
WEIGHTS_VERSION = 1
EMBEDDING_SIZE = 128
DEFAULT_INPUT_SIZE = 128
FAST_INPUT_SIZE = 64


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "fc" | "activation"
    kernel: tuple[int, int, int] | None = None  # (h, w, out_channels)
    stride: int = 1
    units: int | None = None
    activation: str = "none"

    def __post_init__(self):
        if self.kind == "conv":
            if self.kernel is None or len(self.kernel) != 3 or min(self.kernel) <= 0:
                raise ConfigurationError(f"conv kernel must be 3 positive ints, got {self.kernel}")
            if self.stride < 1:
                raise ConfigurationError("conv stride must be >= 1")
        elif self.kind == "fc":
            if self.units is None or self.units <= 0:
                raise ConfigurationError("fc layer needs a positive unit count")
        elif self.kind == "activation":
            if self.activation not in ("tanh", "relu", "none"):
                raise ConfigurationError(f"unknown activation {self.activation!r}")
        else:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv", "fc")


def conv(kh, kw, out, stride=1):
    return LayerSpec("conv", kernel=(kh, kw, out), stride=stride)


def fc(units):
    return LayerSpec("fc", units=units)


def act(name):
    return LayerSpec("activation", activation=name)


def default_spec() -> list[LayerSpec]:
    """Four tanh conv layers followed by three fully connected layers (ReLU between)."""
    return [
        conv(5, 5, 6), act("tanh"),
        conv(5, 5, 16), act("tanh"),
        conv(5, 5, 32, stride=2), act("tanh"),
        conv(5, 5, 64, stride=2), act("tanh"),
        fc(512), act("relu"),
        fc(256), act("relu"),
        fc(EMBEDDING_SIZE),
    ]


def layer_shapes(spec, input_shape):
    """Return the activation shape after every layer, starting with ``input_shape``.

    ``input_shape`` excludes the batch axis, e.g. ``(3, 128, 128)``.
    """
    shapes = [tuple(input_shape)]
    cur = tuple(input_shape)
    for i, layer in enumerate(spec):
        if layer.kind == "conv":
            if len(cur) != 3:
                raise ConfigurationError(f"layer {i}: conv after flattening is not composable")
            c, h, w = cur
            kh, kw, out = layer.kernel
            if h < kh or w < kw:
                raise ConfigurationError(f"layer {i}: input {h}x{w} smaller than kernel {kh}x{kw}")
            cur = (out, (h - kh) // layer.stride + 1, (w - kw) // layer.stride + 1)
        elif layer.kind == "fc":
            cur = (layer.units,)
        shapes.append(cur)
    return shapes


@dataclass(eq=False)
class ModelWeights:
    """Per-layer ``(weight, bias)`` arrays for the parametrised layers of a spec.

    Conv weights are ``(out, in, kh, kw)``; fully connected weights are
    ``(in, out)``. Arrays are marked read-only so a model can be shared between
    threads.
    """

    params: list[tuple[np.ndarray, np.ndarray]]
    seed: int = 0
    version: int = WEIGHTS_VERSION
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for w, b in self.params:
            w.flags.writeable = False
            b.flags.writeable = False

    def __eq__(self, other):
        if not isinstance(other, ModelWeights):
            return NotImplemented
        if (self.seed, self.version, len(self.params)) != (other.seed, other.version, len(other.params)):
            return False
        for (w1, b1), (w2, b2) in zip(self.params, other.params):
            for a, c in ((w1, w2), (b1, b2)):
                if a.shape != c.shape or a.dtype != c.dtype or a.tobytes() != c.tobytes():
                    return False
        return True

    @property
    def dtype(self):
        return self.params[0][0].dtype if self.params else np.dtype(np.float32)

    @property
    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in self.params)

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights([(w.astype(dtype), b.astype(dtype)) for w, b in self.params], self.seed, self.version)

    def tensors(self):
        for w, b in self.params:
            yield w
            yield b


def init_weights(spec, input_size=DEFAULT_INPUT_SIZE, seed=0, dtype=np.float32, zero=False) -> ModelWeights:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation for weights and biases."""
    shapes = layer_shapes(spec, (3, input_size, input_size))
    rng = np.random.default_rng(seed)
    params = []
    for i, layer in enumerate(spec):
        if not layer.has_params:
            continue
        cur = shapes[i]
        if layer.kind == "conv":
            kh, kw, out = layer.kernel
            wshape = (out, cur[0], kh, kw)
            fan_in = cur[0] * kh * kw
        else:
            fan_in = int(np.prod(cur))
            out = layer.units
            wshape = (fan_in, out)
        if zero:
            w = np.zeros(wshape, dtype=dtype)
            b = np.zeros(out, dtype=dtype)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=wshape).astype(dtype)
            b = rng.uniform(-bound, bound, size=out).astype(dtype)
        params.append((w, b))
    return ModelWeights(params, seed=seed)


# -- layer kernels -----------------------------------------------------------

def _windows(x, kh, kw, stride):
    # (N, C, Ho, Wo, kh, kw) view
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def conv_forward(x, w, b, stride):
    win = _windows(x, w.shape[2], w.shape[3], stride)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, O)
    out += b
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv_backward(x, w, stride, grad):
    """Gradients of a valid convolution w.r.t. input, weight and bias."""
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = grad.shape[2], grad.shape[3]
    win = _windows(x, kh, kw, stride)
    dw = np.tensordot(grad, win, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, kh, kw)
    db = grad.sum(axis=(0, 2, 3))
    dx = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(grad, w[:, :, i, j], axes=([1], [0]))  # (N, Ho, Wo, C)
            dx[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += contrib.transpose(0, 3, 1, 2)
    return dx, dw.astype(w.dtype, copy=False), db.astype(w.dtype, copy=False)


def _activate(name, x):
    if name == "tanh":
        return np.tanh(x)
    if name == "relu":
        return np.maximum(x, 0)
    return x


def _activate_grad(name, out, grad):
    if name == "tanh":
        return grad * (1 - out * out)
    if name == "relu":
        return grad * (out > 0)
    return grad


def _check_finite(a, layer):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite activation at layer {layer}", layer=layer)


def forward_batch(model: ModelWeights, spec, x, keep_cache=False):
    """Run a batch ``(N, 3, S, S)`` through the network.

    Returns the ``(N, 128)`` output, plus the list of layer inputs when
    ``keep_cache`` is set (needed by :func:`backward`).
    """
    x = np.asarray(x, dtype=model.dtype)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ConfigurationError(f"expected a (N, 3, S, S) batch, got shape {x.shape}")
    cache = []
    p = 0
    for i, layer in enumerate(spec):
        if keep_cache:
            cache.append(x)
        if layer.kind == "conv":
            w, b = model.params[p]
            p += 1
            if x.ndim != 4 or w.shape[1] != x.shape[1] or x.shape[2] < w.shape[2] or x.shape[3] < w.shape[3]:
                raise ConfigurationError(f"layer {i}: conv weight {w.shape} does not fit input {x.shape}")
            x = conv_forward(x, w, b, layer.stride)
        elif layer.kind == "fc":
            w, b = model.params[p]
            p += 1
            x = x.reshape(x.shape[0], -1)
            if x.shape[1] != w.shape[0]:
                raise ConfigurationError(
                    f"layer {i}: fc expects {w.shape[0]} inputs, got {x.shape[1]} (input size mismatch?)")
            x = x @ w + b
        else:
            x = _activate(layer.activation, x)
        _check_finite(x, i)
    if x.ndim != 2:
        raise ConfigurationError("network does not end in a fully connected layer")
    return (x, cache) if keep_cache else x


def forward(model: ModelWeights, spec, image):
    """Feature vector of a single ``(3, S, S)`` image."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3 or image.shape[1] != image.shape[2]:
        raise ConfigurationError(f"expected a (3, S, S) image, got {image.shape}")
    out = forward_batch(model, spec, image[None])[0]
    if out.shape != (EMBEDDING_SIZE,):
        raise ConfigurationError(f"network produced {out.shape[0]} outputs, expected {EMBEDDING_SIZE}")
    return out


def backward(model: ModelWeights, spec, cache, outputs, grad_out):
    """Backpropagate ``grad_out`` (dLoss/doutput). Returns per-layer ``(dW, db)``."""
    grads = [None] * len(model.params)
    p = len(model.params)
    g = grad_out
    # activation outputs are the next layer's input, or the final output
    layer_out = cache[1:] + [outputs]
    for i in range(len(spec) - 1, -1, -1):
        layer = spec[i]
        x = cache[i]
        if layer.kind == "activation":
            g = _activate_grad(layer.activation, layer_out[i], g)
        elif layer.kind == "fc":
            p -= 1
            w, _ = model.params[p]
            xf = x.reshape(x.shape[0], -1)
            grads[p] = (xf.T @ g, g.sum(axis=0))
            g = (g @ w.T).reshape(x.shape)
        else:
            p -= 1
            w, _ = model.params[p]
            g, dw, db = conv_backward(x, w, layer.stride, g)
            grads[p] = (dw, db)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient at layer {i}", layer=i)
    return grads


# -- loss and training -------------------------------------------------------

def contrastive_loss(d, y, m):
    """(1-y)/2 * d^2 + y/2 * max(0, m-d)^2; y=0 means "same", y=1 "different"."""
    if m <= 0:
        raise DomainError("margin must be positive")
    if d < 0:
        raise DomainError("distance must be non-negative")
    if y not in (0, 1):
        raise DomainError("label must be 0 or 1")
    if y == 0:
        return 0.5 * d * d
    return 0.5 * max(0.0, m - d) ** 2


def contrastive_grad(g1, g2, y, m):
    """Mean batch contrastive loss and its gradients w.r.t. both embeddings."""
    diff = g1 - g2
    d = np.sqrt(np.sum(diff * diff, axis=1))
    y = np.asarray(y, dtype=g1.dtype)
    hinge = np.maximum(0, m - d)
    losses = (1 - y) * 0.5 * d * d + y * 0.5 * hinge * hinge
    n = len(d)
    safe = np.where(d > 0, d, 1)
    coef = (1 - y) - y * np.where(d > 0, hinge / safe, 0)
    dg1 = coef[:, None] * diff / n
    return float(losses.mean()), dg1, -dg1


@dataclass(frozen=True)
class TrainingConfig:
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise DomainError("margin must be positive")
        if self.learning_rate <= 0:
            raise DomainError("learning rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise DomainError("epochs must be >= 0 and batch size >= 1")


def loss_and_grads(model, spec, left, right, y, margin):
    """Contrastive loss of a pair batch and parameter gradients (shared weights)."""
    n = left.shape[0]
    both = np.concatenate([np.asarray(left, model.dtype), np.asarray(right, model.dtype)])
    out, cache = forward_batch(model, spec, both, keep_cache=True)
    loss, dg1, dg2 = contrastive_grad(out[:n], out[n:], y, margin)
    grads = backward(model, spec, cache, out, np.concatenate([dg1, dg2]).astype(model.dtype))
    return loss, grads


def sgd_update(model, grads, lr):
    params = []
    for (w, b), (dw, db) in zip(model.params, grads):
        params.append(((w - lr * dw).astype(w.dtype), (b - lr * db).astype(b.dtype)))
    return ModelWeights(params, seed=model.seed, version=model.version)


def train_step(model, spec, pair, y, cfg: TrainingConfig):
    """One SGD step on a pair (or a batch of pairs). Returns (new model, pre-update loss)."""
    left, right = pair
    left, right = np.asarray(left), np.asarray(right)
    if left.ndim == 3:
        left, right, y = left[None], right[None], [y]
    loss, grads = loss_and_grads(model, spec, left, right, np.asarray(y), cfg.margin)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    return sgd_update(model, grads, cfg.learning_rate), loss


# -- weight file -------------------------------------------------------------

def save_weights(model: ModelWeights, path):
    """Little-endian: magic, u32 version, u32 tensor count, tensors, i64 seed."""
    tensors = list(model.tensors())
    chunks = [WEIGHTS_MAGIC, struct.pack("<II", model.version, len(tensors))]
    for t in tensors:
        chunks.append(struct.pack("<I", t.ndim))
        chunks.append(struct.pack(f"<{t.ndim}I", *t.shape))
        chunks.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    chunks.append(struct.pack("<q", model.seed))
    Path(path).write_bytes(b"".join(chunks))


def load_weights(path) -> ModelWeights:
    data = Path(path).read_bytes()
    if data[:4] != WEIGHTS_MAGIC:
        raise FormatError("bad magic bytes in weight file")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError("truncated weight file")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported weight format version {version}")
    if count % 2:
        raise FormatError("tensor count must be even (weight, bias per layer)")
    tensors = []
    for _ in range(count):
        (rank,) = struct.unpack("<I", take(4))
        if rank == 0 or rank > 8:
            raise FormatError(f"implausible tensor rank {rank}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims))
        tensors.append(np.frombuffer(take(4 * size), dtype="<f4").astype(np.float32).reshape(dims))
    (seed,) = struct.unpack("<q", take(8))
    if pos != len(data):
        raise FormatError("trailing bytes in weight file")
    params = [(tensors[i], tensors[i + 1]) for i in range(0, count, 2)]
    return ModelWeights(params, seed=seed, version=version)
