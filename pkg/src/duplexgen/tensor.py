"""Dense arrays with reverse-mode gradients over a small fixed op set.

Everything runs on plain numpy. Training code uses float32 throughout;
the ops are dtype-preserving so verification code may push float64
through the same tape. Gradients are accumulated by `Tensor.backward()`
in a deterministic topological order, so identical inputs give
bit-identical gradients.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np


class NonFiniteError(ArithmeticError):
    """Raised when a NaN or Inf shows up where only finite values are legal."""


class ShapeMismatchError(ValueError):
    pass


_GRAD_ENABLED = True
_FINITE_CHECKS = False


@contextlib.contextmanager
def no_grad():
    """Disable tape construction (forward-only evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf validation. Off by default (costs ~2x at toy scale)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def _coerce(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


def _first_nonfinite(arr: np.ndarray) -> tuple:
    bad = np.argwhere(~np.isfinite(arr))
    return tuple(int(i) for i in bad[0]) if len(bad) else ()


def _assert_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        idx = _first_nonfinite(arr)
        raise NonFiniteError(f"non-finite value in {where} at index {idx}")


class Tensor:
    """A dense array plus an optional gradient and tape node."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _coerce(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise ShapeMismatchError(f"backward() needs a scalar output, got shape {self.data.shape}")
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
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward_fn is None:
                continue
            parent_grads = node._backward_fn(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if _FINITE_CHECKS:
        _assert_finite(data, "op output")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _node(data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    data = a.data * c

    def backward(g):
        return (g * c,)

    return _node(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; leading dims broadcast as in numpy."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _node(data, (a, b), backward)


def transpose(a: Tensor, axes: tuple) -> Tensor:
    data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return _node(data, (a,), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    data = a.data.reshape(shape)
    orig = a.data.shape

    def backward(g):
        return (g.reshape(orig),)

    return _node(data, (a,), backward)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(data, tuple(parts), backward)


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Index rows along axis 0; backward scatter-adds."""
    index = np.asarray(index)
    data = a.data[index]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, index, g)
        return (ga,)

    return _node(data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        return (g * data,)

    return _node(data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - data * data),)

    return _node(data, (a,), backward)


def softmax_last(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by max subtraction."""
    m = a.data.max(axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        return ((g - dot) * data,)

    return _node(data, (a,), backward)


def softmax_rows(m: Tensor | np.ndarray) -> Tensor:
    """Row softmax of a rank-2 array. Rejects non-finite input, naming the index."""
    t = as_tensor(m)
    if t.ndim != 2:
        raise ShapeMismatchError(f"softmax_rows expects a rank-2 array, got shape {t.shape}")
    _assert_finite(t.data, "softmax_rows input")
    return softmax_last(t)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xc * inv
    data = gamma.data * xhat + beta.data
    n = x.data.shape[-1]

    def backward(g):
        dgamma = _unbroadcast(g * xhat, gamma.data.shape)
        dbeta = _unbroadcast(g, beta.data.shape)
        dxhat = g * gamma.data
        term = dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True) / n
        return term * inv, dgamma, dbeta

    return _node(data, (x, gamma, beta), backward)


def rope_rotate(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate interleaved feature pairs (2m, 2m+1) by per-position angles.

    `cos`/`sin` have shape (n, d/2) against x of shape (..., n, d).
    """
    if x.shape[-1] % 2 != 0:
        raise ShapeMismatchError(f"rope_rotate needs an even last dim, got {x.shape}")
    xe = x.data[..., 0::2]
    xo = x.data[..., 1::2]
    data = np.empty_like(x.data)
    data[..., 0::2] = xe * cos - xo * sin
    data[..., 1::2] = xe * sin + xo * cos

    def backward(g):
        ge = g[..., 0::2]
        go = g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = -ge * sin + go * cos
        return (gx,)

    return _node(data, (x,), backward)


def sum_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def backward(g):
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype),)

    return _node(data, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.mean(), dtype=a.data.dtype)
    n = a.data.dtype.type(a.data.size)

    def backward(g):
        return (np.broadcast_to(g / n, a.data.shape).astype(a.data.dtype),)

    return _node(data, (a,), backward)


def linear(x: Tensor | np.ndarray, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x W + b. Accepts a single vector or a stack of them."""
    xt = as_tensor(x)
    squeeze = xt.ndim == 1
    if squeeze:
        xt = reshape(xt, (1, xt.shape[0]))
    if xt.shape[-1] != w.shape[0]:
        raise ShapeMismatchError(f"linear: input shape {xt.shape} does not match weight shape {w.shape}")
    y = matmul(xt, w)
    if b is not None:
        y = add(y, b)
    if squeeze:
        y = reshape(y, (y.shape[-1],))
    return y
