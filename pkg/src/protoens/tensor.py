"""Dense float64 arrays with reverse-mode automatic differentiation.

Every differentiable operation executes eagerly on numpy arrays and, when a
``Tape`` is active on the current thread, appends a record (output, inputs,
gradient function) to it.  Because ops record in execution order, the tape is
already topologically sorted: ``backward`` seeds the loss gradient and walks
the records in reverse, accumulating into each tensor's ``grad`` buffer.

Running ops outside any ``Tape`` block skips recording entirely, which is how
evaluation avoids autodiff overhead.  Tapes live in thread-local storage, so
independent threads may each run their own forward/backward passes; a single
tape must never be shared across threads.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, DomainError, ShapeMismatchError

Scalar = Union[int, float]


class Tensor:
    """A dense array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A non-differentiable tensor sharing this tensor's values."""
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars are wrapped as constants.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class _TapeEntry:
    __slots__ = ("out", "inputs", "grad_fn")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], grad_fn: Callable):
        self.out = out
        self.inputs = inputs
        self.grad_fn = grad_fn


_tape_stack = threading.local()


def _stack() -> list:
    if not hasattr(_tape_stack, "tapes"):
        _tape_stack.tapes = []
    return _tape_stack.tapes


class Tape:
    """Ordered record of differentiable ops; use as a context manager."""

    def __init__(self):
        self.entries: list[_TapeEntry] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.entries)


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


def _record(out: Tensor, inputs: Sequence[Tensor], grad_fn: Callable) -> None:
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.entries.append(_TapeEntry(out, tuple(inputs), grad_fn))


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``grad`` for every tensor on the tape.

    Requires a scalar loss and an active tape.  Repeated calls on the same
    tape keep accumulating until gradients are cleared (the SGD step does
    that for its parameters).
    """
    tape = active_tape()
    if tape is None:
        raise ContractError("backward() requires an active Tape")
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    loss.grad = seed if loss.grad is None else loss.grad + seed
    for entry in reversed(tape.entries):
        out_grad = entry.out.grad
        if out_grad is None:
            continue
        grads = entry.grad_fn(out_grad)
        for inp, g in zip(entry.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            # Never mutate in place: grad_fn results may alias out_grad.
            inp.grad = g if inp.grad is None else inp.grad + g


def clear_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a_shape: tuple, b_shape: tuple) -> None:
    try:
        np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ShapeMismatchError(f"shapes {a_shape} and {b_shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# Pointwise ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def grad_fn(g):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    _record(out, (a, b), grad_fn)
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    if np.any(b.data == 0.0):
        raise DomainError("division by zero")
    out = Tensor(a.data / b.data, a.requires_grad or b.requires_grad)

    def grad_fn(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return (ga, gb)

    _record(out, (a, b), grad_fn)
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data, a.requires_grad)
    _record(out, (a,), lambda g: (-g,))
    return out


def abs_(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.abs(a.data), a.requires_grad)
    _record(out, (a,), lambda g: (g * np.sign(a.data),))
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log of non-positive value")
    out = Tensor(np.log(a.data), a.requires_grad)
    _record(out, (a,), lambda g: (g / a.data,))
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    result = np.exp(a.data)
    if not np.all(np.isfinite(result)):
        raise DomainError("exp overflow")
    out = Tensor(result, a.requires_grad)
    _record(out, (a,), lambda g: (g * result,))
    return out


def square(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data * a.data, a.requires_grad)
    _record(out, (a,), lambda g: (g * 2.0 * a.data,))
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise DomainError("sqrt of negative value")
    result = np.sqrt(a.data)
    out = Tensor(result, a.requires_grad)
    _record(out, (a,), lambda g: (g * 0.5 / result,))
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    result = np.tanh(a.data)
    out = Tensor(result, a.requires_grad)
    _record(out, (a,), lambda g: (g * (1.0 - result * result),))
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # Split by sign to stay overflow-free on both tails.
    x = a.data
    result = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(result, a.requires_grad)
    _record(out, (a,), lambda g: (g * result * (1.0 - result),))
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), a.requires_grad)
    _record(out, (a,), lambda g: (g * (a.data > 0.0),))
    return out


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "abs": abs_,
    "log": log,
    "exp": exp,
    "square": square,
    "negate": neg,
}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Dispatch a pointwise op by name; binary kinds require ``b``."""
    fn = _ELEMENTWISE.get(op_kind)
    if fn is None:
        raise ContractError(f"unknown elementwise op {op_kind!r}")
    if op_kind in ("add", "sub", "mul", "div"):
        if b is None:
            raise ContractError(f"{op_kind} needs two operands")
        return fn(a, b)
    if b is not None:
        raise ContractError(f"{op_kind} takes one operand")
    return fn(a)


# ---------------------------------------------------------------------------
# Matrix product
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch semantics (leading dims broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError("matmul operands need at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    _check_broadcast(a.shape[:-2], b.shape[:-2])
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)

    def grad_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return (ga, gb)

    _record(out, (a, b), grad_fn)
    return out


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def _check_axis(a: Tensor, axis: Optional[int]) -> None:
    if axis is None:
        if a.size == 0:
            raise DomainError("reduction over empty tensor")
        return
    if not -a.ndim <= axis < a.ndim:
        raise ShapeMismatchError(f"axis {axis} out of range for rank {a.ndim}")
    if a.shape[axis] == 0:
        raise DomainError(f"reduction over empty axis {axis}")


def _expand_for(grad: np.ndarray, shape: tuple, axis: Optional[int], keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(grad.reshape((1,) * len(shape)), shape)
    if not keepdims:
        grad = np.expand_dims(grad, axis)
    return np.broadcast_to(grad, shape)


def reduce_sum(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad)
    _record(out, (a,), lambda g: (_expand_for(g, a.shape, axis, keepdims).copy(),))
    return out


def reduce_mean(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)
    count = a.size if axis is None else a.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), a.requires_grad)
    _record(out, (a,), lambda g: (_expand_for(g, a.shape, axis, keepdims) / count,))
    return out


def reduce_max(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """Max reduction; the gradient flows to the first occurrence of the max."""
    a = as_tensor(a)
    _check_axis(a, axis)
    if axis is None:
        flat_idx = int(np.argmax(a.data))
        out = Tensor(a.data.reshape(-1)[flat_idx], a.requires_grad)

        def grad_all(g):
            full = np.zeros_like(a.data)
            full.reshape(-1)[flat_idx] = float(np.asarray(g).reshape(()))
            return (full,)

        _record(out, (a,), grad_all)
        return out

    idx = np.argmax(a.data, axis=axis)
    out = Tensor(np.max(a.data, axis=axis, keepdims=keepdims), a.requires_grad)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        g_arr = np.asarray(g)
        if keepdims:
            g_arr = np.squeeze(g_arr, axis=axis)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g_arr, axis), axis)
        return (full,)

    _record(out, (a,), grad_fn)
    return out


_REDUCE = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max}


def reduce(op_kind: str, a, axis: Optional[int] = None) -> Tensor:
    fn = _REDUCE.get(op_kind)
    if fn is None:
        raise ContractError(f"unknown reduce op {op_kind!r}")
    return fn(a, axis)


def masked_max(a, mask: np.ndarray, axis: int, keepdims: bool = False) -> Tensor:
    """Max over ``axis`` restricted to positions where ``mask`` is true.

    Every reduction slice must contain at least one unmasked entry.  Ties
    break to the lowest index, matching ``reduce_max``.
    """
    a = as_tensor(a)
    _check_axis(a, axis)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    if not np.all(mask.any(axis=axis)):
        raise ContractError("masked_max slice with no unmasked entries")
    filled = np.where(mask, a.data, -np.inf)
    idx = np.argmax(filled, axis=axis)
    out = Tensor(np.max(filled, axis=axis, keepdims=keepdims), a.requires_grad)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        g_arr = np.asarray(g)
        if keepdims:
            g_arr = np.squeeze(g_arr, axis=axis)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g_arr, axis), axis)
        return (full,)

    _record(out, (a,), grad_fn)
    return out


# ---------------------------------------------------------------------------
# Softmax family
# ---------------------------------------------------------------------------


def softmax(a, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-stable softmax; masked positions come out exactly zero.

    Uses max-subtraction so arbitrarily large finite logits cannot overflow.
    With a mask, normalization runs over the unmasked entries only, and every
    slice must keep at least one of them.
    """
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise DomainError("softmax requires finite inputs")
    if mask is None:
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        result = e / e.sum(axis=axis, keepdims=True)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
        if not np.all(mask.any(axis=axis)):
            raise ContractError("softmax slice with all positions masked")
        filled = np.where(mask, a.data, -np.inf)
        shifted = filled - filled.max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, shifted, 0.0)), 0.0)
        result = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(result, a.requires_grad)

    def grad_fn(g):
        inner = (g * result).sum(axis=axis, keepdims=True)
        return (result * (g - inner),)

    _record(out, (a,), grad_fn)
    return out


def log_softmax(a, axis: int = -1) -> Tensor:
    """log(softmax(a)) computed without forming underflow-prone probabilities."""
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise DomainError("log_softmax requires finite inputs")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    result = shifted - log_z
    out = Tensor(result, a.requires_grad)

    def grad_fn(g):
        return (g - np.exp(result) * g.sum(axis=axis, keepdims=True),)

    _record(out, (a,), grad_fn)
    return out


# ---------------------------------------------------------------------------
# Shape and indexing ops
# ---------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), a.requires_grad)
    _record(out, (a,), lambda g: (g.reshape(a.shape),))
    return out


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.transpose(a.data, axes), a.requires_grad)
    _record(out, (a,), lambda g: (np.transpose(g, inverse),))
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of zero tensors")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(out_data, any(t.requires_grad for t in tensors))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        pieces = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    _record(out, tuple(tensors), grad_fn)
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in map(as_tensor, tensors)]
    return concat(expanded, axis=axis)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = Tensor(a.data[sl], a.requires_grad)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        return (full,)

    _record(out, (a,), grad_fn)
    return out


def pad_axis(a, axis: int, before: int, after: int) -> Tensor:
    a = as_tensor(a)
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    out = Tensor(np.pad(a.data, widths), a.requires_grad)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(before, before + a.shape[axis])
    sl = tuple(sl)
    _record(out, (a,), lambda g: (g[sl],))
    return out


def flip(a, axis: int) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.flip(a.data, axis=axis), a.requires_grad)
    _record(out, (a,), lambda g: (np.flip(g, axis=axis),))
    return out


def take_rows(table, indices) -> Tensor:
    """Gather rows of a 2-D table: output shape = indices.shape + (row_dim,)."""
    table = as_tensor(table)
    if table.ndim != 2:
        raise ShapeMismatchError("take_rows expects a 2-D table")
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(table.data[idx], table.requires_grad)

    def grad_fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    _record(out, (table,), grad_fn)
    return out


def select_index(a, indices) -> Tensor:
    """Per-row column pick from a 2-D tensor: out[i] = a[i, indices[i]]."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatchError("select_index expects a 2-D tensor")
    idx = np.asarray(indices, dtype=np.intp)
    rows = np.arange(a.shape[0])
    out = Tensor(a.data[rows, idx], a.requires_grad)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, idx), g)
        return (full,)

    _record(out, (a,), grad_fn)
    return out


# ---------------------------------------------------------------------------
# Parameter initialization
# ---------------------------------------------------------------------------


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    """Fan-in scaled uniform init for weight matrices."""
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(shape, requires_grad: bool = True) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)
