"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

Each :class:`Tensor` produced by an operation records its parents and a
backward closure. :meth:`Tensor.backward` orders the recorded graph
topologically (the tape) and visits each node once in reverse.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonFiniteInput(ValueError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _op: str = ""):
        self.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 else np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = _op

    # -- basics ------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        # intermediate gradients are rebuilt on every call
        for node in order:
            if node._backward is not None:
                node.grad = None
        self._accumulate(np.broadcast_to(grad, self.shape))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Leaf tensor; rejects non-finite input."""
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("tensor data contains NaN or inf")
    return Tensor(arr, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (), _op=op)
    if needs:
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _broadcast_check(a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), "mul", backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _result(out, (a, b), "div", backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** exponent

    def backward(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1))

    return _result(out, (a,), "pow", backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out)

    return _result(out, (a,), "exp", backward)


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g / a.data)

    return _result(np.log(a.data), (a,), "log", backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / out)

    return _result(out, (a,), "sqrt", backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return _result(a.data * mask, (a,), "relu", backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out * out))

    return _result(out, (a,), "tanh", backward)


def silu(a) -> Tensor:
    a = as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a._accumulate(g * (sig * (1.0 + a.data * (1.0 - sig))))

    return _result(a.data * sig, (a,), "silu", backward)


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul operands need at least two dimensions")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2:
                k = a.shape[-1]
                b._accumulate(a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
            else:
                b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), "matmul", backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"cannot reshape {a.shape} to {shape}") from None

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _result(out, (a,), "reshape", backward)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(np.transpose(g, inverse))

    return _result(np.transpose(a.data, axes), (a,), "transpose", backward)


def swapaxes(a, i: int, j: int) -> Tensor:
    axes = list(range(as_tensor(a).ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    basic = all(isinstance(k, (int, slice, type(Ellipsis), type(None)))
                for k in (index if isinstance(index, tuple) else (index,)))

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        a._accumulate(full)

    return _result(np.array(out, copy=True), (a,), "slice", backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeMismatch("concat shapes disagree off the concat axis") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        for t, piece in zip(ts, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _result(out, ts, "concat", backward)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _result(np.asarray(out), (a,), "sum", backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def embedding(table, indices) -> Tensor:
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accumulate(full)

    return _result(table.data[idx], (table,), "embedding", backward)


def masked_fill(a, mask, value: float) -> Tensor:
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    keep = ~mask

    def backward(g):
        a._accumulate(g * keep)

    return _result(np.where(mask, value, a.data), (a,), "masked_fill", backward)


# ---------------------------------------------------------------------------
# normalisation and probabilistic ops


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _result(out, (a,), "softmax", backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        a._accumulate(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _result(out, (a,), "log_softmax", backward)


def layernorm(a, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalise to zero mean / unit variance along ``axis`` (no affine part)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=axis, keepdims=True)
    centered = a.data - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=axis, keepdims=True) + eps)
    xhat = centered * inv

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        a._accumulate(inv * (g - gm - xhat * gx))

    return _result(xhat, (a,), "layernorm", backward)


def cross_entropy(logits, targets, weights=None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``softmax(logits)``.

    ``weights`` (same shape as targets) selects or weighs positions; the mean
    is taken over their sum.
    """
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.intp)
    if logits.shape[:-1] != t.shape:
        raise ShapeMismatch(f"logits {logits.shape} vs targets {t.shape}")
    w = np.ones(t.shape) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise ValueError("cross_entropy needs at least one weighted position")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    picked = np.take_along_axis(logp, t[..., None], axis=-1)[..., 0]
    value = -(picked * w).sum() / total

    def backward(g):
        probs = np.exp(logp)
        np.put_along_axis(probs, t[..., None], np.take_along_axis(probs, t[..., None], axis=-1) - 1.0, axis=-1)
        logits._accumulate(g * probs * (w / total)[..., None])

    return _result(np.asarray(value), (logits,), "cross_entropy", backward)


def l2_normalize(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    norm = sqrt(tsum(a * a, axis=axis, keepdims=True))
    return a / norm


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    excluded: list[tuple[int, ...]] = field(default_factory=list)
    checked: int = 0


def grad_check(f: Callable[[Tensor], Tensor], point, h: float = 1e-5, tol: float = 1e-4,
               floor: float = 1e-3) -> GradCheckReport:
    """Compare tape gradients of scalar ``f`` with central differences at ``point``.

    Relative error per coordinate is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    Coordinates where the one-sided slopes disagree and the disagreement does
    not shrink with the step are treated as kinks and excluded.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    y = f(x)
    if y.data.size != 1 or not np.isfinite(y.data).all():
        raise NonFiniteInput("grad_check needs a finite scalar function")
    y.backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(x0)

    def value(arr):
        with no_grad():
            out = f(Tensor(arr)).data
        if not np.isfinite(out).all():
            raise NonFiniteInput("function returned a non-finite value")
        return float(out)

    f0 = float(y.data)
    worst = 0.0
    excluded = []
    checked = 0
    for idx in np.ndindex(x0.shape):
        xp, xm = x0.copy(), x0.copy()
        xp[idx] += h
        xm[idx] -= h
        fp, fm = value(xp), value(xm)
        fwd, bwd = (fp - f0) / h, (f0 - fm) / h
        gap = abs(fwd - bwd)
        if gap > 1e-3 * max(1.0, abs(fwd), abs(bwd)):
            hs = h / 10
            xp[idx] = x0[idx] + hs
            xm[idx] = x0[idx] - hs
            gap_small = abs((value(xp) - f0) / hs - (f0 - value(xm)) / hs)
            if gap_small > 0.5 * gap:
                excluded.append(idx)
                continue
        numeric = (fp - fm) / (2 * h)
        a = analytic[idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, err)
        checked += 1
    return GradCheckReport(worst, worst < tol, excluded, checked)


def parameters_grad_check(loss_fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5, tol: float = 1e-4,
                          floor: float = 1e-3, max_coords: int | None = None,
                          rng: np.random.Generator | None = None) -> GradCheckReport:
    """Finite-difference check of ``loss_fn`` with respect to a parameter tensor in place."""
    param.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = param.grad.copy() if param.grad is not None else np.zeros_like(param.data)
    coords = list(np.ndindex(param.shape))
    if max_coords is not None and len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        coords = [coords[i] for i in rng.choice(len(coords), size=max_coords, replace=False)]
    worst = 0.0
    for idx in coords:
        orig = param.data[idx]
        with no_grad():
            param.data[idx] = orig + h
            fp = float(loss_fn().data)
            param.data[idx] = orig - h
            fm = float(loss_fn().data)
            param.data[idx] = orig
        numeric = (fp - fm) / (2 * h)
        a = analytic[idx]
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
    return GradCheckReport(worst, worst < tol, [], len(coords))


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
