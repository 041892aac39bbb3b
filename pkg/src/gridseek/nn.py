"""Minimal reverse-mode network kernel (numpy only).

Supports exactly what the search-policy architecture needs: dense layers,
pointwise (1x1) linear maps over channel grids, ReLU, softmax, flatten and
channel concatenation, plus Adam and cross-entropy/BCE losses.  All
arithmetic is float64; gradients accumulate with ``+=`` so several
backward passes sum into the same ParamStore.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NumericError, ShapeError

PARAM_MAGIC = b"VASP"
PARAM_VERSION = 1


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray

    @classmethod
    def zeros_like(cls, value: np.ndarray) -> "Param":
        v = np.asarray(value, dtype=np.float64)
        return cls(value=v, grad=np.zeros_like(v))


class ParamStore:
    """Named parameter arrays with matching gradient accumulators."""

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, value: np.ndarray) -> Param:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Param.zeros_like(value)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0.0

    def scale_grads(self, factor: float) -> None:
        for p in self._params.values():
            p.grad *= factor

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, value in snap.items():
            self._params[name].value[...] = value

    def save(self, path: str) -> None:
        with open(path, "wb") as f:
            f.write(PARAM_MAGIC)
            f.write(struct.pack("<H", PARAM_VERSION))
            for name, p in self._params.items():
                encoded = name.encode("utf-8")
                f.write(struct.pack("<H", len(encoded)))
                f.write(encoded)
                f.write(struct.pack("<B", p.value.ndim))
                for dim in p.value.shape:
                    f.write(struct.pack("<I", dim))
                f.write(p.value.astype("<f8").tobytes())

    def load(self, path: str) -> None:
        with open(path, "rb") as f:
            blob = f.read()
        if blob[:4] != PARAM_MAGIC:
            raise FormatError(f"bad magic {blob[:4]!r}", path=path, offset=0)
        (version,) = struct.unpack("<H", blob[4:6])
        if version != PARAM_VERSION:
            raise FormatError(f"unsupported version {version}", path=path, offset=4)
        pos = 6
        seen = set()
        while pos < len(blob):
            try:
                (name_len,) = struct.unpack("<H", blob[pos:pos + 2])
                pos += 2
                name = blob[pos:pos + name_len].decode("utf-8")
                pos += name_len
                (rank,) = struct.unpack("<B", blob[pos:pos + 1])
                pos += 1
                dims = struct.unpack("<" + "I" * rank, blob[pos:pos + 4 * rank])
                pos += 4 * rank
                count = int(np.prod(dims)) if rank else 1
                value = np.frombuffer(blob, dtype="<f8", count=count,
                                      offset=pos).reshape(dims)
                pos += count * 8
            except (struct.error, ValueError) as e:
                raise FormatError(f"truncated record: {e}", path=path, offset=pos)
            if name not in self._params:
                raise FormatError(f"unknown parameter {name!r}", path=path)
            if self._params[name].value.shape != value.shape:
                raise FormatError(
                    f"shape mismatch for {name!r}: file {value.shape}, "
                    f"store {self._params[name].value.shape}", path=path)
            self._params[name].value[...] = value
            seen.add(name)
        missing = set(self._params) - seen
        if missing:
            raise FormatError(f"missing parameters {sorted(missing)}", path=path)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Forward caches whatever backward needs; backward returns the input grad."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int, store: ParamStore, name: str,
                 rng: np.random.Generator | None = None):
        self.in_dim = in_dim
        self.out_dim = out_dim
        if rng is None:
            w = np.zeros((out_dim, in_dim))
        else:
            w = glorot_uniform(rng, in_dim, out_dim, (out_dim, in_dim))
        self.W = store.add(f"{name}.W", w)
        self.b = store.add(f"{name}.b", np.zeros(out_dim))
        self._x = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.in_dim,):
            raise ShapeError(f"dense expected ({self.in_dim},), got {x.shape}")
        self._x = x
        return self.W.value @ x + self.b.value

    def backward(self, grad_out):
        if self._x is None:
            raise ShapeError("backward before forward")
        self.W.grad += np.outer(grad_out, self._x)
        self.b.grad += grad_out
        return self.W.value.T @ grad_out


class PointwiseLinear(Layer):
    """1x1 channel map over a (C, h, w) grid: out[c'] = W[c',c] x[c] + b[c']."""

    def __init__(self, in_ch: int, out_ch: int, store: ParamStore, name: str,
                 rng: np.random.Generator | None = None):
        self.in_ch = in_ch
        self.out_ch = out_ch
        if rng is None:
            w = np.zeros((out_ch, in_ch))
        else:
            w = glorot_uniform(rng, in_ch, out_ch, (out_ch, in_ch))
        self.W = store.add(f"{name}.W", w)
        self.b = store.add(f"{name}.b", np.zeros(out_ch))
        self._x = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[0] != self.in_ch:
            raise ShapeError(
                f"pointwise expected ({self.in_ch}, h, w), got {x.shape}")
        self._x = x
        return np.tensordot(self.W.value, x, axes=([1], [0])) \
            + self.b.value[:, None, None]

    def backward(self, grad_out):
        if self._x is None:
            raise ShapeError("backward before forward")
        self.W.grad += np.tensordot(grad_out, self._x, axes=([1, 2], [1, 2]))
        self.b.grad += grad_out.sum(axis=(1, 2))
        return np.tensordot(self.W.value.T, grad_out, axes=([1], [0]))


class Relu(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out):
        if self._mask is None:
            raise ShapeError("backward before forward")
        return np.where(self._mask, grad_out, 0.0)


class Softmax(Layer):
    def __init__(self):
        self._y = None

    def forward(self, x):
        shifted = x - np.max(x)
        e = np.exp(shifted)
        self._y = e / e.sum()
        return self._y

    def backward(self, grad_out):
        if self._y is None:
            raise ShapeError("backward before forward")
        y = self._y
        return y * (grad_out - np.dot(grad_out, y))


class Sigmoid(Layer):
    def __init__(self):
        self._y = None

    def forward(self, x):
        self._y = 1.0 / (1.0 + np.exp(-x))
        return self._y

    def backward(self, grad_out):
        if self._y is None:
            raise ShapeError("backward before forward")
        return grad_out * self._y * (1.0 - self._y)


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(-1)

    def backward(self, grad_out):
        if self._shape is None:
            raise ShapeError("backward before forward")
        return grad_out.reshape(self._shape)


class Network:
    """A simple layer pipeline with cached activations."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers
        self._ran_forward = False

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({type(layer).__name__}): {e}")
        self._ran_forward = True
        return x

    def backward(self, grad_out, from_logits: bool = False):
        """Accumulate parameter grads; returns the input gradient.

        ``from_logits=True`` skips a trailing Softmax/Sigmoid layer and
        interprets grad_out as the gradient at its input.
        """
        if not self._ran_forward:
            raise ShapeError("backward before forward")
        layers = self.layers
        if from_logits:
            if not isinstance(layers[-1], (Softmax, Sigmoid)):
                raise ShapeError("from_logits requires a Softmax/Sigmoid tail")
            layers = layers[:-1]
        g = np.asarray(grad_out, dtype=np.float64)
        for layer in reversed(layers):
            g = layer.backward(g)
        return g


LOG_CLAMP = 1e-12


def cross_entropy(predicted: np.ndarray, target: np.ndarray):
    """Loss and gradient w.r.t. the softmax logits (= predicted - target)."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ShapeError("predicted/target length mismatch")
    if np.any(target < 0) or abs(target.sum() - 1.0) > 1e-6:
        raise ValueError("target is not a probability distribution")
    loss = -float(np.dot(target, np.log(np.maximum(predicted, LOG_CLAMP))))
    return loss, predicted - target


def binary_cross_entropy(predicted: np.ndarray, labels: np.ndarray):
    """Mean per-cell BCE; gradient w.r.t. the sigmoid logits."""
    predicted = np.asarray(predicted, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if predicted.shape != labels.shape:
        raise ShapeError("predicted/labels length mismatch")
    p = np.clip(predicted, LOG_CLAMP, 1.0 - LOG_CLAMP)
    loss = -float(np.mean(labels * np.log(p) + (1 - labels) * np.log(1 - p)))
    return loss, (predicted - labels) / predicted.size


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    def __init__(self, store: ParamStore, lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        """One Adam update from the accumulated grads; grads are zeroed."""
        s = self.state
        for name, p in self.store.items():
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in {name!r}")
        s.t += 1
        bias1 = 1.0 - s.beta1 ** s.t
        bias2 = 1.0 - s.beta2 ** s.t
        for name, p in self.store.items():
            if name not in s.m:
                s.m[name] = np.zeros_like(p.value)
                s.v[name] = np.zeros_like(p.value)
            s.m[name] = s.beta1 * s.m[name] + (1 - s.beta1) * p.grad
            s.v[name] = s.beta2 * s.v[name] + (1 - s.beta2) * p.grad ** 2
            m_hat = s.m[name] / bias1
            v_hat = s.v[name] / bias2
            p.value -= s.lr * m_hat / (np.sqrt(v_hat) + s.eps)
            if not np.all(np.isfinite(p.value)):
                raise NumericError(f"non-finite parameter {name!r} after update")
        self.store.zero_grads()
