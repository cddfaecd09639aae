"""Dense-tensor math with reverse-mode differentiation.

Arrays are numpy ndarrays; this module adds the recorded computation graph,
the operations the translation model and the CTC loss need, and numerically
stable log-space primitives.  Scalars are 32-bit by default; a 64-bit mode
(`precision("float64")`) exists for gradient verification.

Tensors are immutable once created by a forward op.  Gradients accumulate
into Parameter objects when `backward` runs over a recorded graph; a graph
can be walked exactly once.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractViolation, DimensionError, GraphReuseError

_DEFAULT_DTYPE = np.dtype(np.float32)
_DEBUG_CHECKS = False
_GRAD_ENABLED = True

LAYER_NORM_EPS = 1e-6


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractViolation(f"unsupported scalar dtype {dt}")
    _DEFAULT_DTYPE = dt


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default scalar dtype (e.g. "float64" for checks)."""
    global _DEFAULT_DTYPE
    saved = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = saved


def set_debug_checks(enabled: bool) -> None:
    """When on, every forward op asserts its output is finite."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference mode: faster, no memory held)."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


class Tensor:
    """Immutable node of the recorded computation.

    `data` is the value; `grad` is filled in during backward for nodes on a
    differentiable path.  Do not mutate `data` after construction.
    """

    __slots__ = ("data", "grad", "needs_grad", "_parents", "_backward", "_spent")

    def __init__(self, data: np.ndarray, parents=(), backward=None, needs_grad=False):
        self.data = data
        self.grad = None
        self.needs_grad = needs_grad
        self._parents = parents
        self._backward = backward
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __getitem__(self, index):
        return take(self, index)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter:
    """A learned array plus its gradient accumulator.

    The gradient always has the value's shape and is zero after `zero_grad`.
    """

    __slots__ = ("value", "grad", "name")

    def __init__(self, value: np.ndarray, name: str):
        self.value = np.asarray(value, dtype=default_dtype())
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def node(self) -> Tensor:
        """Leaf tensor for this parameter; backward accumulates into `grad`."""
        if not _GRAD_ENABLED:
            return Tensor(self.value)
        param = self

        def push(g):
            param.grad += g

        return Tensor(self.value, parents=(), backward=push, needs_grad=True)

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.value.shape})"


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def tensor(values, dtype=None) -> Tensor:
    """Constant leaf tensor in the default (or given) dtype."""
    data = np.asarray(values, dtype=dtype or default_dtype())
    return Tensor(data)


def _as_node(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Parameter):
        return x.node()
    return tensor(x)


def _check_finite(data: np.ndarray) -> None:
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise ContractViolation("forward op produced a non-finite value")


def _make(data, parents: tuple, backward: Callable) -> Tensor:
    _check_finite(data)
    if _GRAD_ENABLED and any(p.needs_grad for p in parents):
        return Tensor(data, parents=parents, backward=backward, needs_grad=True)
    return Tensor(data)


def _accumulate(t: Tensor, piece: np.ndarray) -> None:
    if not t.needs_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += piece


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable Parameter.

    `loss` must be a scalar node of a recorded forward computation, and each
    recorded graph may be walked once; re-run the forward pass to differentiate
    again.
    """
    if loss.data.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._spent:
        raise GraphReuseError("backward already ran on this graph; re-run forward first")
    if not loss.needs_grad:
        loss._spent = True
        return

    # Iterative topological order (graphs can outgrow the recursion limit).
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(loss, 0)]
    visited.add(id(loss))
    while stack:
        node, i = stack[-1]
        parents = node._parents
        while i < len(parents) and (
            id(parents[i]) in visited or not parents[i].needs_grad
        ):
            i += 1
        if i < len(parents):
            stack[-1] = (node, i + 1)
            child = parents[i]
            visited.add(id(child))
            stack.append((child, 0))
        else:
            order.append(node)
            stack.pop()

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    loss._spent = True


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_node(a), _as_node(b)
    data = a.data + b.data

    def back(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_node(a), _as_node(b)
    data = a.data * b.data

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), back)


def scale(a, c: float) -> Tensor:
    a = _as_node(a)
    data = a.data * a.data.dtype.type(c)

    def back(g):
        _accumulate(a, g * c)

    return _make(data, (a,), back)


def matmul(a, b) -> Tensor:
    a, b = _as_node(a), _as_node(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(
            f"matmul needs 2-D or stacked operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} vs {b.data.shape}"
        )
    data = a.data @ b.data

    def back(g):
        _accumulate(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape))
        _accumulate(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape))

    return _make(data, (a, b), back)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_node(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def back(g):
        _accumulate(a, g.transpose(inverse))

    return _make(data, (a,), back)


def reshape(a, shape) -> Tensor:
    a = _as_node(a)
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def back(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(data, (a,), back)


def take(a, index) -> Tensor:
    """Basic (slice/int) indexing with gradient routing back into place."""
    a = _as_node(a)
    data = a.data[index]

    def back(g):
        full = np.zeros_like(a.data)
        full[index] += g
        _accumulate(a, full)

    return _make(data, (a,), back)


def relu(a) -> Tensor:
    a = _as_node(a)
    mask = a.data > 0
    data = np.where(mask, a.data, a.data.dtype.type(0))

    def back(g):
        _accumulate(a, g * mask)

    return _make(data, (a,), back)


def sum_all(a) -> Tensor:
    a = _as_node(a)
    data = a.data.sum()

    def back(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _make(data, (a,), back)


# ---------------------------------------------------------------------------
# row-normalizing ops
# ---------------------------------------------------------------------------

def softmax_rows(a) -> Tensor:
    """Softmax over the last axis, max-shifted for stability."""
    a = _as_node(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        _accumulate(a, data * (g - inner))

    return _make(data, (a,), back)


def log_softmax_rows(a) -> Tensor:
    """Log-softmax over the last axis, max-shifted for stability."""
    a = _as_node(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def back(g):
        _accumulate(a, g - np.exp(data) * g.sum(axis=-1, keepdims=True))

    return _make(data, (a,), back)


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize each row (last axis) to zero mean / unit variance, then scale and shift."""
    x, gain, bias = _as_node(x), _as_node(gain), _as_node(bias)
    d = x.data.shape[-1]
    if d < 2:
        raise DimensionError(f"layer_norm needs a feature width of at least 2, got {d}")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normed = centered * inv_std
    data = normed * gain.data + bias.data

    def back(g):
        gh = g * gain.data
        m1 = gh.mean(axis=-1, keepdims=True)
        m2 = (gh * normed).mean(axis=-1, keepdims=True)
        _accumulate(x, inv_std * (gh - m1 - normed * m2))
        reduce_axes = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * normed).sum(axis=reduce_axes))
        _accumulate(bias, g.sum(axis=reduce_axes))

    return _make(data, (x, gain, bias), back)


# ---------------------------------------------------------------------------
# projections and lookups
# ---------------------------------------------------------------------------

def affine(x, weight, bias) -> Tensor:
    """x @ weight + bias over the last axis; the workhorse projection."""
    x, weight, bias = _as_node(x), _as_node(weight), _as_node(bias)
    if weight.data.ndim != 2:
        raise DimensionError(f"affine weight must be 2-D, got {weight.data.shape}")
    if x.data.shape[-1] != weight.data.shape[0]:
        raise DimensionError(
            f"affine inner dimensions disagree: input {x.data.shape} vs weight {weight.data.shape}"
        )
    if bias.data.shape != (weight.data.shape[1],):
        raise DimensionError(
            f"affine bias shape {bias.data.shape} does not match weight {weight.data.shape}"
        )
    return add(matmul(x, weight), bias)


def embedding(table, ids: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...], :]."""
    table = _as_node(table)
    ids = np.asarray(ids)
    data = table.data[ids]

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accumulate(table, full)

    return _make(data, (table,), back)


# ---------------------------------------------------------------------------
# stable log-space scalar primitive
# ---------------------------------------------------------------------------

def log_sum_exp(values: Sequence[float]) -> float:
    """log(sum(exp(v))) with max-shift; exact -inf when every entry is -inf."""
    vals = list(values)
    if not vals:
        raise ContractViolation("log_sum_exp of an empty list")
    m = max(vals)
    if m == -math.inf:
        return -math.inf
    return m + math.log(sum(math.exp(v - m) for v in vals))


# ---------------------------------------------------------------------------
# verification helpers
# ---------------------------------------------------------------------------

def fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by coordinate."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        up = f(x)
        flat[i] = saved - h
        down = f(x)
        flat[i] = saved
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def max_relative_difference(a, b, floor: float = 1e-12) -> float:
    """Normwise relative error: max|a-b| / max(max|a|, max|b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = np.max(np.abs(a - b)) if a.size else 0.0
    denom = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), floor)
    return float(diff / denom)
