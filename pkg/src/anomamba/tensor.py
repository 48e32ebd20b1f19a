"""Dense-tensor reverse-mode autodiff core.

Tensors wrap row-major numpy arrays (float32 for training, float64 for
oracle tests). Every op records its parents and a backward closure; calling
``backward()`` on a scalar walks the graph in reverse topological order.
Broadcasting is not implicit: binary ops accept equal shapes or a python
scalar, anything else goes through an explicit op (``add_bias``, ``linear``,
the conv family in :mod:`anomamba.nnops`).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, ShapeError

_CHECK_FINITE = False


def set_check_finite(enabled: bool) -> None:
    """Assert every forward result is finite (debug/test mode)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # -- graph ---------------------------------------------------------
    def backward(self) -> None:
        if self.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else -float(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / float(other))

    def __pow__(self, exponent):
        return power(self, exponent)

    # -- method aliases --------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def flip(self, axis):
        return flip(self, axis)


def from_op(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericalError("non-finite value produced by a forward primitive")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def _check_same_shape(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} differ")


# -- elementwise binary -------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "add")
        return from_op(a.data + b.data, (a, b), lambda g: (g, g))
    return from_op(a.data + float(b), (a,), lambda g: (g,))


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "mul")
        return from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))
    c = float(b)
    return from_op(a.data * c, (a,), lambda g: (g * c,))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "div")
    out = a.data / b.data

    def back(g):
        return g / b.data, -g * out / b.data

    return from_op(out, (a, b), back)


def power(x: Tensor, exponent: float) -> Tensor:
    c = float(exponent)
    out = x.data**c

    def back(g):
        if c == 0.0:
            return (np.zeros_like(x.data),)
        return (g * c * x.data ** (c - 1.0),)

    return from_op(out, (x,), back)


# -- elementwise unary --------------------------------------------------

def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return from_op(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return from_op(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    """Square root with a guarded gradient: zero where the input is zero.

    Exact zeros occur when two feature maps coincide; the true derivative is
    unbounded there and a zero subgradient keeps training finite.
    """
    out = np.sqrt(x.data)

    def back(g):
        denom = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / denom, 0.0),)

    return from_op(out, (x,), back)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return from_op(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid_np(x.data)
    return from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def _sigmoid_np(v: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp.
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid_np(x.data)
    out = x.data * s
    return from_op(out, (x,), lambda g: (g * (s + out * (1.0 - s)),))


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(np.zeros((), dtype=x.dtype), x.data)
    return from_op(out, (x,), lambda g: (g * _sigmoid_np(x.data),))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    mask = (x.data >= lo) & (x.data <= hi)
    return from_op(np.clip(x.data, lo, hi), (x,), lambda g: (g * mask,))


# -- reductions -----------------------------------------------------------

def _restore_axes(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    if not keepdims:
        g = np.expand_dims(g, [a % len(shape) for a in axes])
    return np.broadcast_to(g, shape)


def reduce_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)
    return from_op(
        np.asarray(out), (x,), lambda g: (_restore_axes(g, x.shape, axis, keepdims),)
    )


def reduce_mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    n = x.size if axis is None else np.prod(
        [x.shape[a] for a in ((axis,) if isinstance(axis, int) else axis)]
    )
    scale = 1.0 / float(n)
    return from_op(
        np.asarray(out),
        (x,),
        lambda g: (_restore_axes(g * scale, x.shape, axis, keepdims),),
    )


# -- shape ops ------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)
    return from_op(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (g.transpose(inv),),
    )


def flip(x: Tensor, axis: int) -> Tensor:
    return from_op(
        np.ascontiguousarray(np.flip(x.data, axis)), (x,), lambda g: (np.flip(g, axis),)
    )


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return from_op(np.concatenate(datas, axis=axis), tuple(tensors), back)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b where b's shape equals a trailing suffix of x's shape."""
    nb = b.ndim
    if x.shape[x.ndim - nb :] != b.shape:
        raise ShapeError(f"add_bias: {b.shape} is not a suffix of {x.shape}")
    lead = tuple(range(x.ndim - nb))

    def back(g):
        return g, g.sum(axis=lead) if lead else g

    return from_op(x.data + b.data, (x, b), back)


# -- matmul family ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; leading dims must match exactly."""
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims {a.shape[-1]} != {b.shape[-2]}")

    def back(g):
        return (
            np.matmul(g, np.swapaxes(b.data, -1, -2)),
            np.matmul(np.swapaxes(a.data, -1, -2), g),
        )

    return from_op(np.matmul(a.data, b.data), (a, b), back)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w.T (+ b). ``w`` is (d_out, d_in); x is (..., d_in)."""
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != weight d_in {w.shape[1]}")
    x2 = x.data.reshape(-1, x.shape[-1])
    y2 = x2 @ w.data.T
    out_shape = x.shape[:-1] + (w.shape[0],)
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        g2 = g.reshape(-1, w.shape[0])
        dx = (g2 @ w.data).reshape(x.shape)
        dw = g2.T @ x2
        if b is None:
            return dx, dw
        return dx, dw, g2.sum(axis=0)

    data = y2.reshape(out_shape) if b is None else (y2 + b.data).reshape(out_shape)
    return from_op(data, parents, back)


def softmax_lastdim(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return from_op(out, (x,), back)
