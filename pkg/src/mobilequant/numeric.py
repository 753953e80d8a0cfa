"""Dense float64 tensors with a small reverse-mode autodiff tape.

Every op records its parents and a closure mapping the upstream gradient to
per-parent gradients. Nodes that do not depend on a trainable leaf are not
recorded, so inference-only passes pay no tape cost.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import math
from typing import Callable, Iterable, Sequence

import numpy as np

GradFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


class NumericalError(ArithmeticError):
    """Non-finite loss, accumulator overflow or an unrepresentable scale."""


def tune_allocator() -> bool:
    """Keep freed heap pages mapped (glibc only).

    The tape churns through many short-lived megabyte-sized temporaries; with
    default malloc settings each one is mmapped and page-faulted afresh, which
    costs several times the arithmetic. Returns False where unsupported.
    """
    name = ctypes.util.find_library("c")
    if not name:
        return False
    try:
        libc = ctypes.CDLL(name)
        m_trim_threshold, m_mmap_threshold = -1, -3
        return bool(libc.mallopt(m_trim_threshold, 1 << 30) and libc.mallopt(m_mmap_threshold, 32 << 20))
    except (OSError, AttributeError):
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "op", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _grad_fn: GradFn | None = None,
                 op: str = "leaf"):
        self.data = data
        self.requires_grad = requires_grad
        self.name = name
        self.op = op
        self._parents = _parents
        self._grad_fn = _grad_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def tensor(data, name: str | None = None, trainable: bool = False) -> Tensor:
    """Build an input tensor, rejecting NaN/Inf."""
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in input tensor {name or ''}".rstrip())
    return Tensor(arr, requires_grad=trainable, name=name)


def parameter(data, name: str) -> Tensor:
    return tensor(data, name=name, trainable=True)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def make_node(data: np.ndarray, parents: Iterable[Tensor], grad_fn: GradFn, op: str) -> Tensor:
    """Record a new node. ``grad_fn`` maps the upstream gradient to one entry per parent."""
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, None, parents, grad_fn, op)
    return Tensor(data, op=op)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(a.data + b.data, (a, b),
                     lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(a.data - b.data, (a, b),
                     lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(a.data * b.data, (a, b),
                     lambda g: (unbroadcast(g * b.data, a.shape),
                                unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return make_node(out, (a, b),
                     lambda g: (unbroadcast(g / b.data, a.shape),
                                unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    return make_node(a.data * s, (a,), lambda g: (g * s * (1.0 + a.data * (1.0 - s)),), "silu")


def gelu(a) -> Tensor:
    """Tanh-approximated GELU."""
    a = as_tensor(a)
    x = a.data
    inner = _SQRT_2_OVER_PI * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def grad_fn(g):
        dinner = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return make_node(out, (a,), grad_fn, "gelu")


def clamp(x, lo, hi) -> Tensor:
    """Clamp with hard gradient: zero outside [lo, hi], routed to the active bound."""
    x, lo, hi = as_tensor(x), as_tensor(lo), as_tensor(hi)
    below = x.data < lo.data
    above = x.data > hi.data
    out = np.where(below, lo.data, np.where(above, hi.data, x.data))
    out = np.broadcast_to(out, np.broadcast_shapes(x.shape, lo.shape, hi.shape)).copy()

    def grad_fn(g):
        inside = ~(below | above)
        return (unbroadcast(g * inside, x.shape),
                unbroadcast(g * below, lo.shape),
                unbroadcast(g * above, hi.shape))

    return make_node(out, (x, lo, hi), grad_fn, "clamp")


def ste_round(x) -> Tensor:
    """Round half to even; backward passes the gradient through unchanged."""
    x = as_tensor(x)
    return make_node(np.round(x.data), (x,), lambda g: (g,), "ste_round")


# -- reductions / shape --------------------------------------------------------

def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is not None:
        axis = _check_axis(axis, x.ndim)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return make_node(np.asarray(out), (x,), grad_fn, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[_check_axis(axis, x.ndim)]
    return sum_(x, axis, keepdims) * (1.0 / n)


def _reduce_extreme(x, axis, keepdims, fn, op) -> Tensor:
    x = as_tensor(x)
    if axis is not None:
        axis = _check_axis(axis, x.ndim)
    out = fn(x.data, axis=axis, keepdims=True)
    hit = x.data == out
    share = hit / hit.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        elif axis is None and not keepdims:
            g = np.reshape(g, (1,) * x.ndim)
        return (g * share,)

    res = out if keepdims else (np.squeeze(out, axis=axis) if axis is not None else out.reshape(()))
    return make_node(np.asarray(res), (x,), grad_fn, op)


def reduce_max(x, axis=None, keepdims: bool = False) -> Tensor:
    """Max; ties split the gradient evenly."""
    return _reduce_extreme(x, axis, keepdims, np.max, "reduce_max")


def reduce_min(x, axis=None, keepdims: bool = False) -> Tensor:
    return _reduce_extreme(x, axis, keepdims, np.min, "reduce_min")


def transpose(x, axes: Sequence[int] | None = None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = [_check_axis(a, x.ndim) for a in axes]
    inv = np.argsort(axes)
    return make_node(np.transpose(x.data, axes), (x,),
                     lambda g: (np.transpose(g, inv),), "transpose")


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def take_rows(table, ids: np.ndarray) -> Tensor:
    """Embedding lookup ``table[ids]`` with scatter-add gradient."""
    table = as_tensor(table)
    ids = np.asarray(ids)

    def grad_fn(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (out,)

    return make_node(table.data[ids], (table,), grad_fn, "take_rows")


# -- linear algebra --------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # activations [..., d_in] times a weight: one flat GEMM each way
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[1],))

        def flat_grad(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return make_node(out, (a, b), flat_grad, "matmul")

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make_node(a.data @ b.data, (a, b), grad_fn, "matmul")


# -- fused nonlinearities --------------------------------------------------------

def rmsnorm(x, weight, eps: float = 1e-6) -> Tensor:
    """x / sqrt(mean(x^2) + eps) * weight over the last axis."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[-1]:
        raise ValueError(f"rmsnorm: last extent {x.shape[-1]} != weight {weight.shape[-1]}")
    n = x.shape[-1]
    inv = 1.0 / np.sqrt(np.mean(x.data * x.data, axis=-1, keepdims=True) + eps)
    xhat = x.data * inv
    out = xhat * weight.data

    def grad_fn(g):
        gw = unbroadcast(g * xhat, weight.shape)
        gx_hat = g * weight.data
        gx = inv * (gx_hat - xhat * np.sum(gx_hat * xhat, axis=-1, keepdims=True) / n)
        return gx, gw

    return make_node(out, (x, weight), grad_fn, "rmsnorm")


def softmax(x, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax; positions where ``mask`` is False get probability zero."""
    x = as_tensor(x)
    axis = _check_axis(axis, x.ndim)
    z = x.data if mask is None else np.where(mask, x.data, -np.inf)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / np.sum(e, axis=axis, keepdims=True)

    def grad_fn(g):
        return (p * (g - np.sum(g * p, axis=axis, keepdims=True)),)

    return make_node(p, (x,), grad_fn, "softmax")


def rope(x, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotary embedding on the last axis using the half-split convention."""
    x = as_tensor(x)
    h = x.shape[-1] // 2

    def rot(a):
        return np.concatenate([-a[..., h:], a[..., :h]], axis=-1)

    def rot_t(a):
        return np.concatenate([a[..., h:], -a[..., :h]], axis=-1)

    out = x.data * cos + rot(x.data) * sin
    return make_node(out, (x,), lambda g: (g * cos + rot_t(g * sin),), "rope")


def cross_entropy(logits, targets: np.ndarray) -> Tensor:
    """Mean next-token negative log-likelihood; ``logits`` is [..., V]."""
    logits = as_tensor(logits)
    flat = logits.data.reshape(-1, logits.shape[-1])
    t = np.asarray(targets).reshape(-1)
    z = flat - flat.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    nll = -logp[np.arange(len(t)), t]

    def grad_fn(g):
        p = np.exp(logp)
        p[np.arange(len(t)), t] -= 1.0
        return ((g / len(t)) * p.reshape(logits.shape),)

    return make_node(np.asarray(nll.mean()), (logits,), grad_fn, "cross_entropy")


# -- backward ----------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` for every named trainable leaf reachable from it."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    out: dict[str, np.ndarray] = {}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._grad_fn is None:
            if node.name is not None:
                out[node.name] = out[node.name] + g if node.name in out else np.array(g)
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return out


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad
