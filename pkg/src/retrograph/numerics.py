"""Minimal dense-tensor numerics: float64 arrays with reverse-mode
gradients, residual MLP blocks, Adam, radial-basis embeddings, and a
versioned binary weight file.

Everything is numpy-backed and deterministic for a fixed seed; any NaN or
Inf produced by an operation raises immediately instead of propagating.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

Pull = Callable[[np.ndarray], np.ndarray]


def _check_finite(arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError("non-finite value produced by a tensor operation")
    return arr


class Tensor:
    """A float64 array plus the closure needed to backpropagate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_pulls")

    def __init__(self, data, requires_grad: bool = False,
                 pulls: Sequence[tuple["Tensor", Pull]] = ()):
        self.data = _check_finite(np.asarray(data, dtype=np.float64))
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in pulls)
        self._pulls = tuple(pulls)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar; gradients accumulate into
        every reachable tensor with requires_grad set."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._pulls:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node.grad is None:
                continue
            for parent, pull in node._pulls:
                if not parent.requires_grad:
                    continue
                g = pull(node.grad)
                parent.grad = g if parent.grad is None else parent.grad + g

    # operator sugar; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.data + b.data, pulls=(
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.data - b.data, pulls=(
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(-g, b.data.shape)),
    ))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.data * b.data, pulls=(
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.data @ b.data, pulls=(
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    ))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return Tensor(a.data * mask, pulls=((a, lambda g: g * mask),))


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(s, pulls=((a, lambda g: g * s * (1.0 - s)),))


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0.0, a.data)
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(out, pulls=((a, lambda g: g * s),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, pulls=((a, lambda g: g * out),))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return Tensor(out, pulls=((a, lambda g: g / a.data),))


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    def pull(g: np.ndarray) -> np.ndarray:
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.data.shape).copy()
    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), pulls=((a, pull),))


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis, keepdims), _as_tensor(1.0 / count))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_pull(i: int, t: Tensor) -> Pull:
        sl = [slice(None)] * t.data.ndim
        sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        return lambda g: g[tuple(sl)]

    pulls = tuple((t, make_pull(i, t)) for i, t in enumerate(tensors))
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), pulls=pulls)


def vstack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 2-D tensors along axis 0."""
    sizes = [t.data.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_pull(i: int) -> Pull:
        return lambda g: g[int(offsets[i]):int(offsets[i + 1])]

    pulls = tuple((t, make_pull(i)) for i, t in enumerate(tensors))
    return Tensor(np.concatenate([t.data for t in tensors], axis=0), pulls=pulls)


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)

    def pull(g: np.ndarray) -> np.ndarray:
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return out

    return Tensor(a.data[index], pulls=((a, pull),))


def segment_mean(a: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Row-wise mean of *a* grouped by segment id; empty segments give a
    zero row (an empty incoming-edge set contributes no message)."""
    segments = np.asarray(segments, dtype=np.int64)
    counts = np.bincount(segments, minlength=num_segments).astype(np.float64)
    safe = np.maximum(counts, 1.0)
    out = np.zeros((num_segments, a.data.shape[1]))
    np.add.at(out, segments, a.data)
    out /= safe[:, None]

    def pull(g: np.ndarray) -> np.ndarray:
        return g[segments] / safe[segments, None]

    return Tensor(out, pulls=((a, pull),))


def tile_rows(a: Tensor, n: int) -> Tensor:
    """Repeat a single-row tensor into n rows (for broadcasting a global
    state to every node or edge)."""
    if a.data.shape[0] != 1:
        raise ValueError(f"tile_rows expects a single-row tensor, got {a.data.shape}")
    return Tensor(np.repeat(a.data, n, axis=0),
                  pulls=((a, lambda g: g.sum(axis=0, keepdims=True)),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.data.shape
    return Tensor(a.data.reshape(shape), pulls=((a, lambda g: g.reshape(old)),))


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted-scale dropout; call only in training mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    return mul(a, Tensor(mask))


def kaiming_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class MlpBlock:
    """Three affine layers with ReLU and a residual connection.

    For equal input/output width the block computes
    ``y = x + L3(ReLU(L2(ReLU(L1(x)))))`` with dropout after each ReLU in
    training mode. When the input is wider (a concatenation), the first
    affine layer projects it down and the residual applies on the projected
    path instead.
    """

    def __init__(self, in_width: int, width: int, drop_rate: float,
                 rng: np.random.Generator):
        self.in_width = in_width
        self.width = width
        self.drop_rate = drop_rate
        self.w1 = Tensor(kaiming_uniform(rng, in_width, width), requires_grad=True)
        self.b1 = Tensor(np.zeros(width), requires_grad=True)
        self.w2 = Tensor(kaiming_uniform(rng, width, width), requires_grad=True)
        self.b2 = Tensor(np.zeros(width), requires_grad=True)
        self.w3 = Tensor(kaiming_uniform(rng, width, width), requires_grad=True)
        self.b3 = Tensor(np.zeros(width), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def __call__(self, x: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        if x.data.shape[1] != self.in_width:
            raise ValueError(
                f"block expects input width {self.in_width}, got {x.data.shape[1]}"
            )
        if training and self.drop_rate > 0.0 and rng is None:
            raise ValueError("training-mode forward needs an rng for dropout")
        h1 = x @ self.w1 + self.b1
        a1 = relu(h1)
        if training:
            a1 = dropout(a1, self.drop_rate, rng)
        h2 = a1 @ self.w2 + self.b2
        a2 = relu(h2)
        if training:
            a2 = dropout(a2, self.drop_rate, rng)
        h3 = a2 @ self.w3 + self.b3
        residual = x if self.in_width == self.width else h1
        return residual + h3


class AdamState:
    """Adam with bias correction over a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0.0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        """One update from the gradients stored on the parameters; a missing
        (None) gradient is treated as zero and leaves the parameter put."""
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1.0 - self.beta2 ** self.t)
            p.data = _check_finite(p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))


def rbf(x: float, low: float = 0.0, high: float = 10.0, n: int = 64,
        tau: float | None = None) -> np.ndarray:
    """Radial-basis embedding of a scalar over n evenly spaced centers.

    Component i is exp(-(x - (low + i*(high-low)/n))**2 / tau); the default
    bandwidth is tau = (high-low)**2 / 4.
    """
    return rbf_matrix(np.array([x]), low, high, n, tau)[0]


def rbf_matrix(xs: np.ndarray, low: float = 0.0, high: float = 10.0, n: int = 64,
               tau: float | None = None) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if not np.all(np.isfinite(xs)):
        raise FloatingPointError("rbf input must be finite")
    if n < 1:
        raise ValueError(f"rbf needs n >= 1 centers, got {n}")
    if not high > low:
        raise ValueError(f"rbf needs high > low, got [{low}, {high}]")
    if tau is None:
        tau = (high - low) ** 2 / 4.0
    if tau <= 0.0:
        raise ValueError(f"rbf bandwidth must be > 0, got {tau}")
    centers = low + np.arange(n) * (high - low) / n
    return np.exp(-((xs[:, None] - centers[None, :]) ** 2) / tau)


# -- weight files -----------------------------------------------------------

WEIGHT_FILE_VERSION = 1


def save_weights(path: str | Path, named_arrays: Sequence[tuple[str, np.ndarray]],
                 hyper: dict) -> None:
    """Write a versioned JSON header plus the flat little-endian float64
    concatenation of the arrays, in order."""
    header = {
        "version": WEIGHT_FILE_VERSION,
        "hyper": hyper,
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in named_arrays],
    }
    blob = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in named_arrays
    )
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)


def load_weights(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a weight file back into {name: array} plus its hyperparameters.

    Version mismatches and truncated payloads raise before any array is
    returned.
    """
    raw = Path(path).read_bytes()
    split = raw.find(b"\n")
    if split < 0:
        raise ValueError(f"{path}: missing weight-file header")
    header = json.loads(raw[:split].decode("utf-8"))
    if header.get("version") != WEIGHT_FILE_VERSION:
        raise ValueError(
            f"{path}: unsupported weight-file version {header.get('version')!r}"
        )
    blob = raw[split + 1:]
    expected = sum(int(np.prod(spec["shape"])) for spec in header["tensors"])
    if len(blob) != expected * 8:
        raise ValueError(
            f"{path}: weight payload has {len(blob)} bytes, expected {expected * 8}"
        )
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"]))
        flat = np.frombuffer(blob, dtype="<f8", count=count, offset=offset * 8)
        arrays[spec["name"]] = flat.astype(np.float64).reshape(spec["shape"])
        offset += count
    return arrays, header["hyper"]
