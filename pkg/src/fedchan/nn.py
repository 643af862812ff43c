"""Minimal dense feed-forward engine.

Every network is a stack of fully connected layers whose parameters live in
one contiguous float64 buffer.  Per-layer weight matrices and bias vectors are
views into that buffer, so flattening for aggregation or serialization is a
copy and the Adam update is one fused pass over the buffer.

Layout of the flat buffer, layer by layer: ``W`` (``output_dim x input_dim``,
row-major) followed by ``b`` (``output_dim``).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numba
import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "tanh", "linear", "softmax")
PROB_FLOOR = 1e-12
MAGIC = b"FCW1"


class ShapeError(ValueError):
    """Raised when arrays do not conform to a layer stack."""


class TrainingError(RuntimeError):
    """Raised when an optimization step receives unusable values."""


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ShapeError(f"layer dims must be positive, got {self.input_dim}->{self.output_dim}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return self.output_dim * self.input_dim + self.output_dim


def dense_stack(n_in: int, hidden: Sequence[int], n_out: int, output_activation: str = "linear",
                hidden_activation: str = "relu") -> tuple[LayerSpec, ...]:
    """Build the layer specs for ``n_in -> hidden... -> n_out``."""
    dims = [n_in, *hidden, n_out]
    acts = [hidden_activation] * len(hidden) + [output_activation]
    return tuple(LayerSpec(a, b, act) for a, b, act in zip(dims[:-1], dims[1:], acts))


def check_specs(specs: Sequence[LayerSpec]) -> None:
    if not specs:
        raise ShapeError("empty layer stack")
    for i, (prev, cur) in enumerate(zip(specs[:-1], specs[1:]), start=1):
        if prev.output_dim != cur.input_dim:
            raise ShapeError(
                f"layer {i}: input_dim {cur.input_dim} does not match previous output_dim {prev.output_dim}")
    for i, spec in enumerate(specs[:-1]):
        if spec.activation == "softmax":
            raise ShapeError(f"layer {i}: softmax is only allowed on the final layer")


def param_count(specs: Sequence[LayerSpec]) -> int:
    return sum(s.n_params for s in specs)


class ModelWeights:
    """Parameters of one dense stack, backed by a single flat buffer.

    ``layers[i]`` is a ``(W, b)`` pair of views into ``flat``; writing to
    either side is visible through the other.
    """

    def __init__(self, specs: Sequence[LayerSpec], flat: np.ndarray | None = None):
        specs = tuple(specs)
        check_specs(specs)
        n = param_count(specs)
        if flat is None:
            flat = np.zeros(n)
        else:
            flat = np.ascontiguousarray(flat, dtype=np.float64)
            if flat.shape != (n,):
                raise ShapeError(f"expected {n} parameters for this layer stack, got {flat.size}")
        self.specs = specs
        self.flat = flat
        self.layers: list[tuple[np.ndarray, np.ndarray]] = []
        offset = 0
        for s in specs:
            w = flat[offset:offset + s.output_dim * s.input_dim].reshape(s.output_dim, s.input_dim)
            offset += w.size
            b = flat[offset:offset + s.output_dim]
            offset += s.output_dim
            self.layers.append((w, b))

    @property
    def n_params(self) -> int:
        return self.flat.size

    @property
    def input_dim(self) -> int:
        return self.specs[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.specs[-1].output_dim

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.specs, self.flat.copy())

    def zeros_like(self) -> "ModelWeights":
        return ModelWeights(self.specs)

    def __repr__(self):
        dims = "->".join([str(self.input_dim)] + [str(s.output_dim) for s in self.specs])
        return f"ModelWeights({dims}, n_params={self.n_params})"


def flatten(weights: ModelWeights) -> np.ndarray:
    return weights.flat.copy()


def unflatten(vector: np.ndarray, specs: Sequence[LayerSpec]) -> ModelWeights:
    vector = np.asarray(vector, dtype=np.float64)
    n = param_count(specs)
    if vector.ndim != 1 or vector.size != n:
        raise ShapeError(f"vector of length {vector.size} cannot fill {n} parameters")
    return ModelWeights(specs, vector.copy())


def init_weights(specs: Sequence[LayerSpec], rng: np.random.Generator) -> ModelWeights:
    """He-uniform weights (limit ``sqrt(6 / fan_in)``) and zero biases."""
    w = ModelWeights(specs)
    for s, (W, _) in zip(w.specs, w.layers):
        limit = np.sqrt(6.0 / s.input_dim)
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return w


# -- activations -------------------------------------------------------------

def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softmax(a):
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(a, kind):
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "linear":
        return a
    if kind == "sigmoid":
        return _sigmoid(a)
    if kind == "tanh":
        return np.tanh(a)
    return _softmax(a)


def _activation_backward(grad, out, kind):
    """Map d(loss)/d(output) to d(loss)/d(pre-activation)."""
    if kind == "relu":
        return grad * (out > 0)
    if kind == "linear":
        return grad
    if kind == "sigmoid":
        return grad * out * (1.0 - out)
    if kind == "tanh":
        return grad * (1.0 - out * out)
    return out * (grad - (grad * out).sum(axis=-1, keepdims=True))


# -- forward / backward ------------------------------------------------------

@dataclass
class ForwardCache:
    """Activations retained by :func:`forward_cached` for :func:`backward`.

    ``outputs[0]`` is the input batch and ``outputs[i + 1]`` the output of
    layer ``i``; ``logits`` is the final pre-activation.
    """
    outputs: list[np.ndarray] = field(default_factory=list)
    logits: np.ndarray | None = None
    squeeze: bool = False

    @property
    def output(self) -> np.ndarray:
        out = self.outputs[-1]
        return out[0] if self.squeeze else out


def _as_batch(x, dim, what="input"):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"layer 0: {what} has width {x.shape[-1]}, expected {dim}")
    return x, squeeze


def forward_cached(weights: ModelWeights, x: np.ndarray) -> ForwardCache:
    """Forward pass over a batch (``n x input_dim``) or a single vector."""
    h, squeeze = _as_batch(x, weights.input_dim)
    cache = ForwardCache([h], None, squeeze)
    last = len(weights.specs) - 1
    for i, (s, (W, b)) in enumerate(zip(weights.specs, weights.layers)):
        a = h @ W.T
        a += b
        if i == last:
            cache.logits = a
        h = _activate(a, s.activation)
        cache.outputs.append(h)
    return cache


def forward(weights: ModelWeights, specs: Sequence[LayerSpec] | None, x: np.ndarray) -> np.ndarray:
    """Network output for ``x``; ``specs`` (optional) must match ``weights``."""
    if specs is not None and tuple(specs) != weights.specs:
        for i, (a, b) in enumerate(zip(specs, weights.specs)):
            if a != b:
                raise ShapeError(f"layer {i}: spec {a} does not match weights {b}")
        raise ShapeError(f"spec list has {len(specs)} layers, weights have {len(weights.specs)}")
    return forward_cached(weights, x).output


def backward(weights: ModelWeights, cache: ForwardCache, grad: np.ndarray, *,
             wrt_logits: bool = False, param_grads: bool = True,
             input_grad: bool = False) -> tuple[ModelWeights | None, np.ndarray | None]:
    """Reverse-mode gradients of a scalar loss through a cached forward pass.

    Parameters
    ----------
    grad : array
        d(loss)/d(network output), same shape as the output. With
        ``wrt_logits=True`` it is d(loss)/d(final pre-activation) instead,
        which lets callers use the fused softmax/sigmoid cross-entropy forms.
    param_grads, input_grad : bool
        Which gradients to produce. Skipping parameter gradients saves the
        weight-gradient products when only the input gradient is needed.

    Returns
    -------
    (ModelWeights or None, ndarray or None)
        Parameter gradients laid out like ``weights`` and d(loss)/d(input).
    """
    grad = np.asarray(grad, dtype=np.float64)
    if cache.squeeze and grad.ndim == 1:
        grad = grad[None, :]
    if grad.shape != cache.outputs[-1].shape:
        raise ShapeError(f"layer {len(weights.specs) - 1}: gradient shape {grad.shape} "
                         f"does not match output {cache.outputs[-1].shape}")
    grads = weights.zeros_like() if param_grads else None
    last = len(weights.specs) - 1
    delta = grad
    for i in range(last, -1, -1):
        s = weights.specs[i]
        if not (i == last and wrt_logits):
            delta = _activation_backward(delta, cache.outputs[i + 1], s.activation)
        x = cache.outputs[i]
        W, _ = weights.layers[i]
        if grads is not None:
            gW, gb = grads.layers[i]
            np.dot(delta.T, x, out=gW)
            gb[...] = delta.sum(axis=0)
        if i > 0 or input_grad:
            delta = delta @ W
    gin = None
    if input_grad:
        gin = delta[0] if cache.squeeze else delta
    return grads, gin


# -- losses ------------------------------------------------------------------

def gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> float | np.ndarray:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(logvar))):
        raise ValueError("gaussian_kl needs finite inputs")
    # expm1(lv) - lv is the non-negative core; written this way to avoid cancellation
    kl = 0.5 * np.sum(mu * mu + np.expm1(logvar) - logvar, axis=-1)
    return float(kl) if np.ndim(kl) == 0 else kl


def cross_entropy(probs: np.ndarray, label: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[-1]:
        raise ValueError(f"label {label} out of range for {probs.shape[-1]} classes")
    if abs(probs.sum() - 1.0) > 1e-6:
        raise ValueError("probabilities must sum to 1")
    return float(-np.log(max(probs[label], PROB_FLOOR)))


# -- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_weights(cls, weights: ModelWeights, **kw) -> "AdamState":
        return cls(np.zeros(weights.n_params), np.zeros(weights.n_params), **kw)


def _check_finite(grads):
    if np.all(np.isfinite(grads.flat)):
        return
    for i, (gW, gb) in enumerate(grads.layers):
        if not (np.all(np.isfinite(gW)) and np.all(np.isfinite(gb))):
            raise TrainingError(f"non-finite gradient in layer {i}")


@numba.njit(cache=True)
def _adam_kernel(w, g, m, v, lr, beta1, beta2, eps, corr1, corr2):
    for i in range(g.size):
        if not np.isfinite(g[i]):
            return False
    step = lr / corr1
    for i in range(w.size):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m[i] = mi
        v[i] = vi
        w[i] -= step * mi / (np.sqrt(vi / corr2) + eps)
    return True


def adam_step(weights: ModelWeights, grads: ModelWeights, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, applied in place to ``weights`` and ``state``."""
    if grads.n_params != weights.n_params or state.m.size != weights.n_params:
        raise ShapeError("gradients, moments and weights differ in size")
    t = state.t + 1
    ok = _adam_kernel(weights.flat, grads.flat, state.m, state.v, lr, state.beta1, state.beta2,
                      state.eps, 1.0 - state.beta1 ** t, 1.0 - state.beta2 ** t)
    if not ok:
        _check_finite(grads)
    state.t = t


def sgd_step(weights: ModelWeights, grads: ModelWeights, lr: float) -> None:
    _check_finite(grads)
    weights.flat -= lr * grads.flat


class Optimizer:
    """Adam or plain gradient descent behind one ``step`` call."""

    def __init__(self, weights: ModelWeights, kind: str = "adam", lr: float = 1e-3):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.lr = lr
        self.state = AdamState.for_weights(weights) if kind == "adam" else None

    def step(self, weights: ModelWeights, grads: ModelWeights) -> None:
        if self.state is None:
            sgd_step(weights, grads, self.lr)
        else:
            adam_step(weights, grads, self.state, self.lr)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 100
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterable[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def checksum(*vectors: np.ndarray) -> str:
    import hashlib
    h = hashlib.sha256()
    for v in vectors:
        h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


# -- weight files ------------------------------------------------------------

def _spec_list(specs):
    return [[s.input_dim, s.output_dim, s.activation] for s in specs]


def encode_weights(name: str, networks: dict[str, ModelWeights], meta: dict | None = None) -> bytes:
    """Serialize networks as ``FCW1 | u32 header length | JSON header | float64 LE data``."""
    header = {
        "name": name,
        "networks": [{"name": k, "layers": _spec_list(w.specs)} for k, w in networks.items()],
        "meta": meta or {},
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(w.flat, dtype="<f8").tobytes() for w in networks.values())
    return MAGIC + struct.pack("<I", len(hb)) + hb + body


def decode_weights(blob: bytes) -> tuple[str, dict[str, ModelWeights], dict]:
    if blob[:4] != MAGIC:
        raise ShapeError("not an FCW1 weight file (bad magic)")
    (hlen,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    offset = 8 + hlen
    networks = {}
    for net in header["networks"]:
        specs = tuple(LayerSpec(*layer) for layer in net["layers"])
        n = param_count(specs)
        end = offset + 8 * n
        if end > len(blob):
            raise ShapeError(f"network {net['name']!r}: file truncated")
        networks[net["name"]] = ModelWeights(specs, np.frombuffer(blob, dtype="<f8", count=n, offset=offset).copy())
        offset = end
    if offset != len(blob):
        raise ShapeError(f"{len(blob) - offset} trailing bytes after parameters")
    return header["name"], networks, header["meta"]


def save_weights(path, name: str, networks: dict[str, ModelWeights], meta: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(encode_weights(name, networks, meta))
    return path


def load_weights(path) -> tuple[str, dict[str, ModelWeights], dict]:
    return decode_weights(Path(path).read_bytes())
