"""Dense float64 kernel with reverse-mode differentiation.

Every value flowing through the model is a :class:`Tensor`: a float64
ndarray plus the closure needed to push gradients back to its parents.
Leading axes broadcast like numpy, so the same code path handles a single
sample or a stacked batch.

Gradients are collected through a :class:`GradTape`, which owns the
parameter registry::

    tape = GradTape()
    w = tape.watch("w", np.array([3.0]))
    grads = backward(tape, (w * w).sum())
    grads["w"]  # array([6.])
"""
from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import (
    ContractError,
    DegenerateVectorError,
    DimensionError,
    DomainError,
    NumericError,
)

DEFAULT_SLOPE = 0.2


def _check_finite(data: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    return data


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array node in a differentiation graph."""

    __slots__ = ("data", "parents", "grad_fn", "name")
    __array_priority__ = 100

    def __init__(self, data, parents: tuple = (), grad_fn: Callable | None = None,
                 name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.parents = parents
        self.grad_fn = grad_fn
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def requires_grad(self) -> bool:
        return self.name is not None or bool(self.parents)

    def numpy(self) -> np.ndarray:
        return self.data

    def __float__(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"cannot convert tensor of shape {self.shape} to float")
        return float(self.data.reshape(()))

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor({self.data!r}{tag})"

    # operator sugar
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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


Matrix = Tensor
Vector = Tensor


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """Detach ``x`` from any graph."""
    return Tensor(x.data if isinstance(x, Tensor) else x)


def _node(data: np.ndarray, parents: tuple, grad_fn: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Tensor(data)
    return Tensor(data, parents, grad_fn)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(out, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, (a, b), grad_fn, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0):
        raise NumericError("division by zero")
    out = a.data / b.data

    def grad_fn(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(out, (a, b), grad_fn, "div")


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of non-positive value")
    out = np.log(x.data)
    return _node(out, (x,), lambda g: (g / x.data,), "log")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(x.data)

    def grad_fn(g):
        if np.any(out == 0):
            raise NumericError("sqrt gradient undefined at zero")
        return (g * 0.5 / out,)

    return _node(out, (x,), grad_fn, "sqrt")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def leaky_relu(x, slope: float = DEFAULT_SLOPE) -> Tensor:
    """``x`` where non-negative, ``slope * x`` elsewhere."""
    if not 0.0 < slope < 1.0:
        raise DomainError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = as_tensor(x)
    pos = x.data >= 0
    out = np.where(pos, x.data, slope * x.data)
    return _node(out, (x,), lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


# ---------------------------------------------------------------------------
# shape and reduction


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes.

    1-D operands are promoted to a row (left) or column (right) and the
    promoted axis is dropped from the result, as in ``np.matmul``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise DimensionError(f"matmul needs arrays, got shapes {a.shape} and {b.shape}")
    ka = a.shape[-1]
    kb = b.shape[-2] if b.ndim >= 2 else b.shape[0]
    if ka != kb:
        raise DimensionError(
            f"matmul shape mismatch: {a.shape} x {b.shape} (inner dims {ka} != {kb})")
    if a.ndim == 1:
        out = matmul(reshape(a, (1, ka)), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if b.ndim == 1:
        out = matmul(a, reshape(b, (kb, 1)))
        return reshape(out, out.shape[:-1])
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul cannot broadcast {a.shape} x {b.shape}") from exc

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), grad_fn, "matmul")


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, (x,), grad_fn, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[i] for i in axes]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return _node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    out = np.swapaxes(x.data, a1, a2)
    return _node(out, (x,), lambda g: (np.swapaxes(g, a1, a2),), "swapaxes")


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]

    def grad_fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out, dtype=np.float64), (x,), grad_fn, "getitem")


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _node(out, tuple(ts), grad_fn, "concat")


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _node(out, tuple(ts), grad_fn, "stack")


# ---------------------------------------------------------------------------
# normalizers and similarity


def softmax(v, axis: int = -1, mask=None) -> Tensor:
    """Max-subtracted softmax along ``axis``.

    With ``mask`` (same shape, 0/1), masked entries get probability 0 and a
    slice with no unmasked entries comes out all zero.
    """
    v = as_tensor(v)
    if v.size == 0 or v.shape[axis] == 0:
        raise DomainError("softmax of empty input")
    d = v.data
    if mask is None:
        shifted = d - d.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)
    else:
        m = np.asarray(mask, dtype=bool)
        filled = np.where(m, d, -np.inf)
        top = filled.max(axis=axis, keepdims=True)
        top = np.where(np.isfinite(top), top, 0.0)
        e = np.where(m, np.exp(np.where(m, d - top, 0.0)), 0.0)
        total = e.sum(axis=axis, keepdims=True)
        out = e / np.where(total > 0, total, 1.0)

    def grad_fn(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (v,), grad_fn, "softmax")


def log_softmax(v, axis: int = -1) -> Tensor:
    v = as_tensor(v)
    d = v.data
    shifted = d - d.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def grad_fn(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _node(out, (v,), grad_fn, "log_softmax")


def cosine_similarity(a, b, axis: int = -1) -> Tensor:
    """Cosine of the angle between ``a`` and ``b`` along ``axis``.

    Raises :class:`DegenerateVectorError` if any compared vector has zero norm.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[axis] != b.shape[axis]:
        raise DimensionError(f"cosine_similarity length mismatch: {a.shape} vs {b.shape}")
    na2 = (a.data * a.data).sum(axis=axis)
    nb2 = (b.data * b.data).sum(axis=axis)
    if np.any(na2 == 0) or np.any(nb2 == 0):
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    num = tsum(a * b, axis=axis)
    # separate square roots so tiny norms do not underflow in the product
    den = sqrt(tsum(a * a, axis=axis)) * sqrt(tsum(b * b, axis=axis))
    out = num / den
    # rounding can push |cos| a hair past 1
    if np.any(np.abs(out.data) > 1.0):
        clipped = np.clip(out.data, -1.0, 1.0)
        out = Tensor(clipped, out.parents, out.grad_fn)
    return out


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise DimensionError(
            f"cross_entropy expects (n, classes) logits for {labels.shape[0]} labels, "
            f"got {logits.shape}")
    logp = log_softmax(logits, axis=-1)
    picked = getitem(logp, (np.arange(labels.shape[0]), labels))
    return mean(picked) * -1.0


# ---------------------------------------------------------------------------
# differentiation


class GradTape:
    """Parameter registry plus the gradients from the last backward pass.

    A tape is not thread-safe; keep each one inside a single thread.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.grads: dict[str, np.ndarray] = {}

    def watch(self, name: str, value) -> Tensor:
        if name in self.params:
            raise ContractError(f"parameter {name!r} already registered")
        arr = np.array(value.data if isinstance(value, Tensor) else value,
                       dtype=np.float64)
        _check_finite(arr, f"parameter {name}")
        t = Tensor(arr, name=name)
        self.params[name] = t
        return t

    def watch_all(self, values: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
        return {k: self.watch(k, v) for k, v in values.items()}

    def gradient(self, output: Tensor) -> dict[str, np.ndarray]:
        return backward(self, output)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(tape: GradTape, output: Tensor) -> dict[str, np.ndarray]:
    """Reverse-accumulate d(output)/d(param) for every parameter on ``tape``.

    Parameters the output does not depend on receive zero gradients.
    """
    if not isinstance(output, Tensor) or output.size != 1:
        shape = output.shape if isinstance(output, Tensor) else type(output).__name__
        raise ContractError(f"backward needs a scalar output, got {shape}")
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for node in reversed(_toposort(output)):
        g = grads.get(id(node))
        if g is None or node.grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64)
    result = {}
    for name, t in tape.params.items():
        g = grads.get(id(t))
        result[name] = np.zeros_like(t.data) if g is None else g.reshape(t.shape).copy()
    tape.grads = result
    return result


def value_and_grad(f: Callable[[dict[str, Tensor]], Tensor],
                   params: Mapping[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]:
    tape = GradTape()
    watched = tape.watch_all(params)
    out = f(watched)
    return float(out), backward(tape, out)


def finite_diff_check(f: Callable[[dict[str, Tensor]], Tensor],
                      params: Mapping[str, np.ndarray], eps: float = 1e-5) -> float:
    """Largest relative gap between backward gradients and central differences.

    ``f`` maps a dict of parameter tensors to a scalar tensor. The relative
    error for each entry uses ``max(|g|, |g_fd|, 1e-8)`` as denominator.
    """
    if not 0.0 < eps <= 1e-2:
        raise DomainError(f"eps must lie in (0, 1e-2], got {eps}")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, analytic = value_and_grad(f, base)

    def probe(name, idx, delta):
        shifted = {k: v.copy() for k, v in base.items()}
        shifted[name][idx] += delta
        try:
            val = float(f({k: Tensor(v) for k, v in shifted.items()}))
        except NumericError as exc:
            raise NumericError(f"f is not finite at probe {name}{list(idx)}") from exc
        if not np.isfinite(val):
            raise NumericError(f"f is not finite at probe {name}{list(idx)}")
        return val

    worst = 0.0
    for name, arr in base.items():
        for idx in np.ndindex(arr.shape):
            fd = (probe(name, idx, eps) - probe(name, idx, -eps)) / (2.0 * eps)
            g = analytic[name][idx]
            denom = max(abs(g), abs(fd), 1e-8)
            worst = max(worst, abs(g - fd) / denom)
    return worst
