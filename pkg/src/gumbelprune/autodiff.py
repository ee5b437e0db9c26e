"""Minimal dense-tensor library with reverse-mode automatic differentiation.

Just enough operations to express a small masked transformer and the
mask-learning objective: matmul (2-D, batched, and batched-times-2D),
same-shape / scalar elementwise arithmetic, sigmoid, abs, sum, mean,
softmax, log-softmax, cross-entropy with integer targets, embedding
lookup, reshape/transpose, and a fused layer norm.

Graphs are define-by-run: every op whose inputs require grad records a
closure, and `backward()` replays them in reverse order. Gradient buffers
are zeroed at the start of every backward pass, so repeated backward on
the same graph produces identical results rather than accumulating.

Precision is a per-run global: float32 for training, float64 for
gradient checking (see `precision`).
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

_DTYPE = np.float32


def set_precision(bits: int) -> None:
    """Select the global floating precision (32 or 64) for new tensors."""
    global _DTYPE
    if bits == 32:
        _DTYPE = np.float32
    elif bits == 64:
        _DTYPE = np.float64
    else:
        raise ValueError(f"precision must be 32 or 64, got {bits}")


def precision_bits() -> int:
    return 32 if _DTYPE is np.float32 else 64


def current_dtype():
    return _DTYPE


@contextmanager
def precision(bits: int):
    """Temporarily switch the global precision."""
    prev = precision_bits()
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(prev)


class ShapeMismatchError(ValueError):
    """Raised when operand shapes do not conform for an op."""

    def __init__(self, op: str, shape_a, shape_b):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        super().__init__(f"{op}: incompatible shapes {self.shape_a} vs {self.shape_b}")


class Tensor:
    """A numpy-backed tensor node in a define-by-run graph.

    Tensors with requires_grad=False are frozen leaves: they never receive
    a gradient buffer (grad stays None after backward).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str | None = None):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._backward = None
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self._op})"

    # -- graph mechanics -------------------------------------------------

    def _toposort(self):
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self):
        """Backpropagate from a scalar loss to every grad-requiring leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        order = self._toposort()
        for node in order:
            node.grad = np.zeros_like(node.data) if node.requires_grad else None
        if not self.requires_grad:
            return
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.requires_grad:
                node._backward(node.grad)

    def _accum(self, g: np.ndarray):
        if self.requires_grad:
            self.grad += g

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is unsupported; divide by a scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DTYPE))


def _is_scalar(x) -> bool:
    return np.ndim(x) == 0 or (isinstance(x, Tensor) and x.data.ndim == 0)


def _make(data, parents, op) -> Tensor:
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, _parents=parents if req else (), _op=op)
    return out


def _check_elementwise(op: str, a: Tensor, b: Tensor):
    # Broadcasting is limited to scalar-vs-tensor by design.
    if a.data.ndim != 0 and b.data.ndim != 0 and a.shape != b.shape:
        raise ShapeMismatchError(op, a.shape, b.shape)


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to `shape` (scalar or identical shape only)."""
    if tuple(shape) == g.shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


# -- elementwise ops ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise("add", a, b)
    out = _make(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def bw(g):
            a._accum(_reduce_to(g, a.shape))
            b._accum(_reduce_to(g, b.shape))
        out._backward = bw
    return out


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise("sub", a, b)
    out = _make(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def bw(g):
            a._accum(_reduce_to(g, a.shape))
            b._accum(_reduce_to(-g, b.shape))
        out._backward = bw
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise("mul", a, b)
    out = _make(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def bw(g):
            a._accum(_reduce_to(g * b.data, a.shape))
            b._accum(_reduce_to(g * a.data, b.shape))
        out._backward = bw
    return out


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    # Stable two-branch sigmoid; saturates cleanly in float32.
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d)))).astype(d.dtype)
    out = _make(s, (x,), "sigmoid")
    if out.requires_grad:
        def bw(g):
            x._accum(g * s * (1.0 - s))
        out._backward = bw
    return out


def tabs(x) -> Tensor:
    """|x| with the subgradient at 0 defined as 0."""
    x = _wrap(x)
    out = _make(np.abs(x.data), (x,), "abs")
    if out.requires_grad:
        sign = np.sign(x.data)
        def bw(g):
            x._accum(g * sign)
        out._backward = bw
    return out


def tsum(x) -> Tensor:
    x = _wrap(x)
    out = _make(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), "sum")
    if out.requires_grad:
        def bw(g):
            x._accum(np.broadcast_to(g, x.shape).astype(x.data.dtype, copy=True))
        out._backward = bw
    return out


def tmean(x) -> Tensor:
    x = _wrap(x)
    n = x.data.size
    out = _make(np.asarray(x.data.mean(), dtype=x.data.dtype), (x,), "mean")
    if out.requires_grad:
        def bw(g):
            x._accum(np.broadcast_to(g / n, x.shape).astype(x.data.dtype, copy=True))
        out._backward = bw
    return out


# -- shape ops ------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    out = _make(x.data.reshape(shape), (x,), "reshape")
    if out.requires_grad:
        orig = x.shape
        def bw(g):
            x._accum(g.reshape(orig))
        out._backward = bw
    return out


def transpose(x, axes=None) -> Tensor:
    x = _wrap(x)
    out = _make(np.transpose(x.data, axes), (x,), "transpose")
    if out.requires_grad:
        inv = None if axes is None else np.argsort(axes)
        def bw(g):
            x._accum(np.transpose(g, inv))
        out._backward = bw
    return out


# -- matmul ---------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product. Supports 2D@2D, ND@ND (matching batch dims), ND@2D."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    if a.data.ndim != b.data.ndim and b.data.ndim != 2:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    if a.data.ndim == b.data.ndim and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    out = _make(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def bw(g):
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                a._accum(ga)
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g
                if gb.ndim > b.data.ndim:
                    gb = gb.sum(axis=tuple(range(gb.ndim - b.data.ndim)))
                b._accum(gb)
        out._backward = bw
    return out


# -- softmax family -------------------------------------------------------


def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = _wrap(x)
    s = _softmax_np(x.data)
    out = _make(s, (x,), "softmax")
    if out.requires_grad:
        def bw(g):
            dot = (g * s).sum(axis=-1, keepdims=True)
            x._accum(s * (g - dot))
        out._backward = bw
    return out


def log_softmax(x) -> Tensor:
    """Log-softmax over the last axis."""
    x = _wrap(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    ls = z - lse
    out = _make(ls, (x,), "log_softmax")
    if out.requires_grad:
        s = np.exp(ls)
        def bw(g):
            x._accum(g - s * g.sum(axis=-1, keepdims=True))
        out._backward = bw
    return out


def cross_entropy(logits, targets) -> Tensor:
    """Mean next-token cross-entropy with integer targets.

    logits: (..., V); targets: integer array of the leading shape.
    The mean is over every predicted position.
    """
    logits = _wrap(logits)
    t = np.asarray(targets)
    if t.shape != logits.shape[:-1]:
        raise ShapeMismatchError("cross_entropy", logits.shape, t.shape)
    flat = logits.data.reshape(-1, logits.shape[-1])
    idx = t.reshape(-1).astype(np.int64)
    z = flat - flat.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    nll = lse - z[np.arange(flat.shape[0]), idx]
    out = _make(np.asarray(nll.mean(), dtype=flat.dtype), (logits,), "cross_entropy")
    if out.requires_grad:
        def bw(g):
            p = _softmax_np(flat)
            p[np.arange(flat.shape[0]), idx] -= 1.0
            p *= g / flat.shape[0]
            logits._accum(p.reshape(logits.shape).astype(logits.data.dtype))
        out._backward = bw
    return out


def embedding(table, indices) -> Tensor:
    """Row lookup: table (V, D), indices integer array -> (*indices, D)."""
    table = _wrap(table)
    idx = np.asarray(indices).astype(np.int64)
    out = _make(table.data[idx], (table,), "embedding")
    if out.requires_grad:
        def bw(g):
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
            table._accum(gt)
        out._backward = bw
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Layer norm over the last axis with learnable gain/bias (fused op)."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeMismatchError("layer_norm", x.shape, gain.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = _make(xhat * gain.data + bias.data, (x, gain, bias), "layer_norm")
    if out.requires_grad:
        def bw(g):
            if gain.requires_grad:
                gain._accum((g * xhat).reshape(-1, x.shape[-1]).sum(axis=0))
            if bias.requires_grad:
                bias._accum(g.reshape(-1, x.shape[-1]).sum(axis=0))
            if x.requires_grad:
                n = x.shape[-1]
                gx = g * gain.data
                x._accum(inv * (gx - gx.mean(axis=-1, keepdims=True)
                                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))
        out._backward = bw
    return out


# -- gradient checking ----------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    passed: bool
    n_coords: int
    worst_coord: tuple | None = None


def grad_check(fn, point, step: float = 1e-5, tolerance: float = 1e-5,
               coords=None) -> GradCheckReport:
    """Compare analytic gradients of a scalar fn against central differences.

    fn maps a Tensor to a scalar Tensor. Runs entirely in 64-bit.
    coords: optional iterable of flat indices to check (default: all).
    """
    with precision(64):
        p = np.asarray(point, dtype=np.float64)
        x = Tensor(p.copy(), requires_grad=True)
        loss = fn(x)
        loss.backward()
        analytic = x.grad.reshape(-1).copy() if x.grad is not None else np.zeros(p.size)

        if coords is None:
            coords = range(p.size)
        coords = list(coords)
        max_rel, worst = 0.0, None
        flat = p.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            fp = float(fn(Tensor(p.copy())).data)
            flat[i] = orig - step
            fm = float(fn(Tensor(p.copy())).data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            denom = max(abs(analytic[i]) + abs(numeric), 1e-8)
            rel = abs(analytic[i] - numeric) / denom
            if rel > max_rel:
                max_rel, worst = rel, np.unravel_index(i, p.shape)
        return GradCheckReport(max_rel_error=max_rel, tolerance=tolerance,
                               passed=max_rel <= tolerance, n_coords=len(coords),
                               worst_coord=worst)
