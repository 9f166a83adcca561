"""Minimal dense-tensor autodiff and the Adam optimizer.

Reverse-mode tape built dynamically per forward pass over float64 numpy
buffers. The op set is exactly what the perception/dynamics networks
need; conv2d dispatches to the selected kernel backend. Everything is
deterministic given the caller's rng.

A trained parameter set is just a dict of arrays; snapshots are immutable
once saved and can be shared across threads for parallel inference.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import backend


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape construction inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array plus an optional gradient and tape edge."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} do not broadcast")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.data.shape} and {b.data.shape} are incompatible")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(data, (a, b), backward)


def conv2d(x, w, b, stride: int = 1, pad: int = 0) -> Tensor:
    """2D cross-correlation, x (N,C,H,W), w (O,C,kh,kw), bias (O,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"conv2d: input {x.data.shape} incompatible with kernel {w.data.shape}")
    if b.data.shape != (w.data.shape[0],):
        raise ShapeError(f"conv2d: bias {b.data.shape} incompatible with kernel {w.data.shape}")
    data = backend.conv2d_forward(
        np.ascontiguousarray(x.data), np.ascontiguousarray(w.data), b.data, stride, pad
    )

    def backward(g):
        gx, gw, gb = backend.conv2d_backward(
            np.ascontiguousarray(x.data), np.ascontiguousarray(w.data),
            np.ascontiguousarray(g), stride, pad,
        )
        if x.requires_grad:
            x._accumulate(gx)
        if w.requires_grad:
            w._accumulate(gw)
        if b.requires_grad:
            b._accumulate(gb)

    return _make(data, (x, w, b), backward)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    data = np.maximum(x.data, 0.0)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0.0))

    return _make(data, (x,), backward)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    data = np.tanh(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (1.0 - data * data))

    return _make(data, (x,), backward)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * data * (1.0 - data))

    return _make(data, (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    shapes = [t.data.shape for t in ts]
    base = list(shapes[0])
    for s in shapes[1:]:
        if len(s) != len(base) or any(s[i] != base[i] for i in range(len(base)) if i != axis % len(base)):
            raise ShapeError(f"concat: shapes {shapes} differ off axis {axis}")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(data, tuple(ts), backward)


def cumulative_sum(x, axis: int) -> Tensor:
    x = _as_tensor(x)
    data = np.cumsum(x.data, axis=axis)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis))

    return _make(data, (x,), backward)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.data.shape))

    return _make(data, (x,), backward)


def expand_steps(x, steps: int) -> Tensor:
    """Repeat a (B, D) tensor into (B, steps, D) (shared across a horizon)."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"expand_steps: expected 2-D input, got {x.data.shape}")
    data = np.broadcast_to(x.data[:, None, :], (x.data.shape[0], steps, x.data.shape[1])).copy()

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.sum(axis=1))

    return _make(data, (x,), backward)


def mse(pred, target) -> Tensor:
    """Summed squared error (the squared L2 distance of the training losses)."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse: shapes {pred.data.shape} and {target.data.shape} differ")
    res = pred.data - target.data
    data = np.array(np.sum(res * res))

    def backward(g):
        if pred.requires_grad:
            pred._accumulate(2.0 * g * res)
        if target.requires_grad:
            target._accumulate(-2.0 * g * res)

    return _make(data, (pred, target), backward)


def backward(loss: Tensor) -> None:
    """Populate gradients of everything the scalar ``loss`` depends on."""
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


@dataclass
class AdamConfig:
    """Adam hyperparameters; grad_clip_norm is a global-norm ceiling."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.5
    grad_clip_norm: float = 10.0

    def __post_init__(self):
        for name in ("learning_rate", "beta1", "beta2", "epsilon", "grad_clip_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"AdamConfig.{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("AdamConfig.weight_decay must be nonnegative")


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    total = float(np.sqrt(total))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return total


class Adam:
    """Adam with global grad-norm clipping and decoupled weight decay.

    The decay step subtracts learning_rate * weight_decay * param, applied
    alongside the Adam update (the raw decay value as a coupled L2
    coefficient would dwarf the losses here).
    """

    def __init__(self, params: list[Tensor], cfg: AdamConfig):
        self.params = list(params)
        self.cfg = cfg
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        cfg = self.cfg
        for i, p in enumerate(self.params):
            g = p.grad
            if g is not None and not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"adam: non-finite gradient in parameter {i} (shape {p.data.shape})"
                )
        clip_grad_norm(self.params, cfg.grad_clip_norm)
        self.t += 1
        b1t = 1.0 - cfg.beta1**self.t
        b2t = 1.0 - cfg.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self._m[i] = cfg.beta1 * self._m[i] + (1.0 - cfg.beta1) * g
            self._v[i] = cfg.beta2 * self._v[i] + (1.0 - cfg.beta2) * g * g
            mhat = self._m[i] / b1t
            vhat = self._v[i] / b2t
            p.data -= cfg.learning_rate * (
                mhat / (np.sqrt(vhat) + cfg.epsilon) + cfg.weight_decay * p.data
            )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# checkpoint format: magic, schema version, named tensors (shape + float64 LE)

_MAGIC = b"INAVTENS"
_VERSION = 1


class CheckpointError(IOError):
    """Malformed or incompatible checkpoint payload."""


def write_tensors(f, tensors: dict[str, np.ndarray]) -> None:
    f.write(_MAGIC)
    f.write(struct.pack("<II", _VERSION, len(tensors)))
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype=np.float64)
        enc = name.encode("utf-8")
        f.write(struct.pack("<H", len(enc)))
        f.write(enc)
        f.write(struct.pack("<B", a.ndim))
        f.write(struct.pack(f"<{a.ndim}I", *a.shape))
        f.write(a.astype("<f8").tobytes())


def read_tensors(f) -> dict[str, np.ndarray]:
    magic = f.read(len(_MAGIC))
    if magic != _MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    version, count = struct.unpack("<II", f.read(8))
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", f.read(2))
        name = f.read(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", f.read(1))
        shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim)) if ndim else ()
        nbytes = 8 * int(np.prod(shape)) if shape else 8
        raw = f.read(nbytes)
        if len(raw) != nbytes:
            raise CheckpointError(f"truncated payload for tensor {name!r}")
        out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return out


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        write_tensors(f, tensors)


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return read_tensors(f)
