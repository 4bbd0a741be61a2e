"""Dense tensor with a define-by-run reverse-mode tape.

Every differentiable primitive records one node on the active :class:`Tape`
when at least one input requires a gradient. ``Tensor.backward`` replays the
tape in reverse recording order (a valid topological order for a
define-by-run graph) and then clears it.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence, Tuple

import numpy as np

from ..errors import DimensionError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class _State(threading.local):
    def __init__(self) -> None:
        self.grad_enabled = True
        self.dtype = np.dtype(np.float32)
        self.tape = Tape()


class Tape:
    """Ordered record of primitive operations awaiting a backward pass."""

    def __init__(self) -> None:
        self.nodes: list[tuple["Tensor", tuple["Tensor", ...], BackwardFn]] = []

    def record(self, out: "Tensor", inputs: tuple["Tensor", ...], backward: BackwardFn) -> None:
        self.nodes.append((out, inputs, backward))

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, root: "Tensor", grad: Optional[np.ndarray] = None) -> None:
        if grad is None:
            if root.data.size != 1:
                raise DimensionError(
                    f"backward() without an explicit gradient needs a scalar, got shape {root.shape}"
                )
            grad = np.ones_like(root.data)
        root.grad = grad if root.grad is None else root.grad + grad
        try:
            for out, inputs, fn in reversed(self.nodes):
                if out.grad is None:
                    continue
                grads = fn(out.grad)
                for inp, g in zip(inputs, grads):
                    if g is None or not inp.requires_grad:
                        continue
                    inp.grad = g if inp.grad is None else inp.grad + g
        finally:
            self.clear()


_state = _State()


def get_tape() -> Tape:
    return _state.tape


def is_grad_enabled() -> bool:
    return _state.grad_enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def get_default_dtype() -> np.dtype:
    return _state.dtype


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _state.dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the dtype used for newly constructed tensors."""
    prev = _state.dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = "") -> None:
        dtype = np.dtype(dtype) if dtype is not None else _state.dtype
        self.data = np.ascontiguousarray(np.asarray(data, dtype=dtype))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray, inputs: tuple["Tensor", ...], backward: BackwardFn) -> "Tensor":
        """Build an op result and record it on the tape when a gradient is needed."""
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = ""
        out.requires_grad = _state.grad_enabled and any(t.requires_grad for t in inputs)
        if out.requires_grad:
            _state.tape.record(out, inputs, backward)
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        _state.tape.backward(self, grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


# -- elementwise arithmetic ----------------------------------------------------
# Operands must have identical shapes, or one of them must be a scalar.



def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} must match exactly")


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = a.data.dtype.type(b)
        return Tensor._wrap(a.data + c, (a,), lambda g: (g,))
    if b.ndim == 0 and a.ndim > 0:
        return Tensor._wrap(a.data + b.data, (a, b), lambda g: (g, g.sum(dtype=g.dtype)))
    if a.ndim == 0 and b.ndim > 0:
        return add(b, a)
    _check_same(a, b, "add")
    return Tensor._wrap(a.data + b.data, (a, b), lambda g: (g, g))


def neg(a: Tensor) -> Tensor:
    return Tensor._wrap(-a.data, (a,), lambda g: (-g,))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    return add(a, neg(b))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = a.data.dtype.type(b)
        return Tensor._wrap(a.data * c, (a,), lambda g: (g * c,))
    if b.ndim == 0 and a.ndim > 0:
        ad, bd = a.data, b.data
        return Tensor._wrap(ad * bd, (a, b), lambda g: (g * bd, np.sum(g * ad, dtype=g.dtype)))
    if a.ndim == 0 and b.ndim > 0:
        return mul(b, a)
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor._wrap(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return Tensor._wrap(y, (a,), lambda g: (g * y,))


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    x = np.maximum(a.data, floor) if floor > 0 else a.data
    mask = a.data >= floor if floor > 0 else None

    def backward(g):
        gx = g / x
        if mask is not None:
            gx = np.where(mask, gx, 0.0).astype(g.dtype)
        return (gx,)

    return Tensor._wrap(np.log(x), (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._wrap(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return Tensor._wrap(y.astype(a.dtype), (a,), lambda g: (g * y * (1.0 - y),))


def hardswish(a: Tensor) -> Tensor:
    """x * relu6(x + 3) / 6."""
    x = a.data
    gate = np.clip(x + 3.0, 0.0, 6.0) / 6.0
    y = x * gate

    def backward(g):
        d = np.where(x < -3.0, 0.0, np.where(x > 3.0, 1.0, (2.0 * x + 3.0) / 6.0))
        return (g * d.astype(g.dtype),)

    return Tensor._wrap(y.astype(a.dtype), (a,), backward)


# -- shape and reduction ---------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._wrap(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._wrap(
        np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),)
    )


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))
    y = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        return (np.broadcast_to(g.reshape(kept), shape).copy(),)

    return Tensor._wrap(np.asarray(y, dtype=a.dtype), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(tsum(a, axes, keepdims), 1.0 / count)


# -- products ----------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul; leading (batch) dimensions must be identical."""
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g)

    return Tensor._wrap(ad @ bd, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` over the last axis; weight is (in, out)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not fit weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias {bias.shape} does not match out features {weight.shape[1]}")
    xd, wd = x.data, weight.data
    lead = x.shape[:-1]
    x2 = xd.reshape(-1, wd.shape[0])
    y = x2 @ wd
    if bias is not None:
        y = y + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = x2.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor._wrap(y.reshape(*lead, wd.shape[1]), inputs, backward)


def add_bias(x: Tensor, bias: Tensor, axis: int = 1) -> Tensor:
    """Add a 1-D bias along ``axis`` (the one permitted broadcast besides scalars)."""
    axis = axis % x.ndim
    if bias.shape != (x.shape[axis],):
        raise DimensionError(f"add_bias: bias {bias.shape} does not match axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = -1
    others = tuple(i for i in range(x.ndim) if i != axis)
    return Tensor._wrap(x.data + bias.data.reshape(view), (x, bias), lambda g: (g, g.sum(axis=others)))


def add_batch_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add ``bias`` of shape ``x.shape[1:]`` to every batch entry."""
    if bias.shape != x.shape[1:]:
        raise DimensionError(f"add_batch_bias: bias {bias.shape} does not match {x.shape[1:]}")
    return Tensor._wrap(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0)))


def scale_channels(x: Tensor, gate: Tensor) -> Tensor:
    """Rescale a (B, C, H, W) map by a (B, C) gate."""
    if x.ndim != 4 or gate.shape != x.shape[:2]:
        raise DimensionError(f"scale_channels: gate {gate.shape} does not match features {x.shape}")
    xd, gd = x.data, gate.data[:, :, None, None]

    def backward(g):
        return g * gd, (g * xd).sum(axis=(2, 3))

    return Tensor._wrap(xd * gd, (x, gate), backward)
