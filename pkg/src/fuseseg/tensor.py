"""Dense tensors with reverse-mode automatic differentiation.

Values live in flat row-major numpy buffers (float64 by default, float32
opt-in). Operations executed while a :class:`Tape` is active append their
backward closure to the tape in execution order, which is a valid
topological order; :func:`backward` replays the tape once in reverse.

Gradient buffers are allocated eagerly for every tracked tensor, so after
a backward pass every ``requires_grad`` leaf holds a gradient (zero if the
loss does not depend on it).
"""

from __future__ import annotations

import math
import struct
from contextlib import contextmanager
from typing import BinaryIO, Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, NonFiniteError, ShapeError

DEFAULT_DTYPE = np.float64

_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle per-op NaN/Inf detection; returns the previous setting."""
    global _FINITE_CHECKS
    previous = _FINITE_CHECKS
    _FINITE_CHECKS = enabled
    return previous


class Tensor:
    """N-dimensional array with an optional gradient slot."""

    __slots__ = ("data", "grad", "_requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self._requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self._requires_grad else None

    @property
    def requires_grad(self) -> bool:
        return self._requires_grad

    @requires_grad.setter
    def requires_grad(self, flag: bool) -> None:
        self._requires_grad = bool(flag)
        if self._requires_grad and self.grad is None:
            self.grad = np.zeros_like(self.data)
        elif not self._requires_grad:
            self.grad = None

    @property
    def shape(self) -> tuple[int, ...]:
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
        if self.data.size != 1:
            raise ContractError(f"item() requires a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self._requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self._requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # arithmetic dunders delegate to the module-level ops
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

    def __pow__(self, exponent):
        return pow_(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def narrow(self, axis: int, start: int, length: int) -> "Tensor":
        return narrow(self, axis, start, length)


class Tape:
    """Execution-ordered record of differentiable ops.

    Each entry holds the output tensor and a closure that scatters the
    output gradient into the inputs' gradient buffers. Entries are appended
    as ops execute, so the list order is topological by construction.
    """

    __slots__ = ("entries",)

    def __init__(self):
        self.entries: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __len__(self) -> int:
        return len(self.entries)

    def clear(self) -> None:
        self.entries.clear()


_TAPE_STACK: list[Tape | None] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


@contextmanager
def record() -> Iterator[Tape]:
    """Activate a fresh tape for the enclosed ops."""
    tape = Tape()
    _TAPE_STACK.append(tape)
    try:
        yield tape
    finally:
        _TAPE_STACK.pop()


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording, even inside an active record() block."""
    _TAPE_STACK.append(None)
    try:
        yield
    finally:
        _TAPE_STACK.pop()


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate gradients of everything `loss` depends on via `tape`."""
    if loss.size != 1:
        raise ContractError(f"backward() requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return  # loss is constant w.r.t. everything; all leaf grads stay zero
    _add_grad(loss, np.ones_like(loss.data))
    for out, backward_fn in reversed(tape.entries):
        if out.grad is not None:  # ops off the loss's cone are skipped
            backward_fn(out.grad)


def _add_grad(t: Tensor, g: np.ndarray, owned: bool = False) -> None:
    """Accumulate into a (possibly lazily allocated) gradient buffer.

    `owned=True` promises `g` is a fresh array no one else aliases, so it
    can be adopted as the buffer without a defensive copy.
    """
    if t.grad is None:
        if owned:
            t.grad = g
        else:
            t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=float)
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# op plumbing


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_finite(data: np.ndarray, op: str) -> None:
    # a single reduction catches NaN/Inf without allocating a bool array;
    # magnitudes here are far too small for the sum itself to overflow
    if _FINITE_CHECKS and not np.isfinite(data.sum()):
        raise NonFiniteError(f"{op} produced non-finite values")


def _result(data: np.ndarray, op: str, inputs: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    _check_finite(data, op)
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data)
    if track:
        # op outputs get lazy gradient buffers (filled on first accumulation)
        out._requires_grad = True
        tape.entries.append((out, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        if a.requires_grad:
            _add_grad(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _add_grad(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        if a.requires_grad:
            _add_grad(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            ub = _unbroadcast(g, b.shape)
            _add_grad(b, -ub, owned=True)

    return _result(a.data - b.data, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            _add_grad(a, _unbroadcast(g * b.data, a.shape), owned=True)
        if b.requires_grad:
            _add_grad(b, _unbroadcast(g * a.data, b.shape), owned=True)

    return _result(a.data * b.data, "mul", (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "div")

    def bw(g):
        if a.requires_grad:
            _add_grad(a, _unbroadcast(g / b.data, a.shape), owned=True)
        if b.requires_grad:
            _add_grad(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape), owned=True)

    return _result(a.data / b.data, "div", (a, b), bw)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        if a.requires_grad:
            _add_grad(a, -g, owned=True)

    return _result(-a.data, "neg", (a,), bw)


def pow_(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    exponent = float(exponent)

    def bw(g):
        if a.requires_grad:
            _add_grad(a, g * exponent * a.data ** (exponent - 1.0), owned=True)

    return _result(a.data ** exponent, "pow", (a,), bw)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):  # overflow surfaces as NonFiniteError
        out_data = np.exp(a.data)

    def bw(g):
        if a.requires_grad:
            _add_grad(a, g * out_data, owned=True)

    return _result(out_data, "exp", (a,), bw)


def log(a) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        if a.requires_grad:
            _add_grad(a, g / a.data, owned=True)

    return _result(np.log(a.data), "log", (a,), bw)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def bw(g):
        if a.requires_grad:
            _add_grad(a, g / (2.0 * out_data), owned=True)

    return _result(out_data, "sqrt", (a,), bw)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def bw(g):
        if a.requires_grad:
            _add_grad(a, g * (1.0 - out_data * out_data), owned=True)

    return _result(out_data, "tanh", (a,), bw)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out_data = _stable_sigmoid(a.data)

    def bw(g):
        if a.requires_grad:
            _add_grad(a, g * out_data * (1.0 - out_data), owned=True)

    return _result(out_data, "sigmoid", (a,), bw)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def bw(g):
        if a.requires_grad:
            _add_grad(a, g * mask, owned=True)

    return _result(a.data * mask, "relu", (a,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """tanh-approximated GELU: 0.5x(1 + tanh(c(x + 0.044715x^3)))."""
    a = _as_tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * (x2 * x)))

    def bw(g):
        if a.requires_grad:
            d_inner = _GELU_C * (1.0 + 0.134145 * x2)
            _add_grad(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner), owned=True)

    return _result(0.5 * x * (1.0 + t), "gelu", (a,), bw)


# ---------------------------------------------------------------------------
# reductions / structure


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if a.requires_grad:
            _add_grad(a, _expand_reduced(g, a.shape, axis, keepdims))

    return _result(out_data, "sum", (a,), bw)


def mean_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in _normalize_axes(axis, a.ndim)])

    def bw(g):
        if a.requires_grad:
            _add_grad(a, _expand_reduced(g, a.shape, axis, keepdims) / count, owned=True)

    return _result(out_data, "mean", (a,), bw)


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None and not keepdims:
        return np.broadcast_to(g, shape)
    if not keepdims:
        for ax in sorted(_normalize_axes(axis, len(shape))):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree for {a.shape} @ {b.shape}")
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dims disagree for {a.shape} @ {b.shape}") from None

    def bw(g):
        if a.requires_grad:
            _add_grad(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape), owned=True)
        if b.requires_grad:
            _add_grad(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape), owned=True)

    return _result(out_data, "matmul", (a, b), bw)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def bw(g):
        if a.requires_grad:
            _add_grad(a, g.reshape(a.shape))

    return _result(out_data, "reshape", (a,), bw)


def transpose(a, axes: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    inverse = np.argsort(axes)

    def bw(g):
        if a.requires_grad:
            _add_grad(a, g.transpose(inverse))

    return _result(a.data.transpose(axes), "transpose", (a,), bw)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along `axis` starting at `start`."""
    a = _as_tensor(a)
    axis = axis % a.ndim
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(
            f"narrow: [{start}:{start + length}) out of range for axis {axis} of {a.shape}")
    index = tuple(slice(None) if d != axis else slice(start, start + length)
                  for d in range(a.ndim))

    def bw(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[index] += g

    return _result(a.data[index].copy(), "narrow", (a,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat of zero tensors")
    axis = axis % parts[0].ndim
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def bw(g):
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                index = tuple(slice(None) if d != axis else slice(offset, offset + size)
                              for d in range(p.ndim))
                _add_grad(p, g[index])
            offset += size

    return _result(out_data, "concat", parts, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    out_data = np.stack([p.data for p in parts], axis=axis)

    def bw(g):
        slices = np.moveaxis(g, axis, 0)
        for p, gs in zip(parts, slices):
            if p.requires_grad:
                _add_grad(p, gs)

    return _result(out_data, "stack", parts, bw)


def take_rows(weight, ids: np.ndarray) -> Tensor:
    """Row gather `weight[ids]` (embedding lookup); scatter-adds on backward."""
    weight = _as_tensor(weight)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("take_rows: ids must be integers")

    def bw(g):
        if weight.requires_grad:
            if weight.grad is None:
                weight.grad = np.zeros_like(weight.data)
            np.add.at(weight.grad, ids.reshape(-1),
                      g.reshape(-1, weight.shape[-1]))

    return _result(weight.data[ids], "take_rows", (weight,), bw)


# ---------------------------------------------------------------------------
# composite neural ops


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis` (max subtraction)."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if x.requires_grad:
            _add_grad(x, s * (g - (g * s).sum(axis=axis, keepdims=True)), owned=True)

    return _result(s, "softmax", (x,), bw)


def masked_softmax(x, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over positions where `mask` is 1; masked weights are exactly 0.

    `mask` is a constant 0/1 array broadcastable to `x`. Every slice along
    `axis` must contain at least one unmasked position.
    """
    x = _as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=x.dtype), x.shape)
    masked_max = np.where(mask > 0, x.data, -np.inf).max(axis=axis, keepdims=True)
    e = np.exp(x.data - masked_max) * mask
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if x.requires_grad:
            _add_grad(x, s * (g - (g * s).sum(axis=axis, keepdims=True)), owned=True)

    return _result(s, "masked_softmax", (x,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with biased variance, then affine map."""
    x = _as_tensor(x)
    gamma = _as_tensor(gamma)
    beta = _as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normed = centered * inv_std
    lead_axes = tuple(range(x.ndim - 1))

    def bw(g):
        if gamma.requires_grad:
            _add_grad(gamma, (g * normed).sum(axis=lead_axes), owned=True)
        if beta.requires_grad:
            _add_grad(beta, g.sum(axis=lead_axes), owned=True)
        if x.requires_grad:
            gg = g * gamma.data
            mean_gg = gg.mean(axis=-1, keepdims=True)
            mean_gg_normed = (gg * normed).mean(axis=-1, keepdims=True)
            _add_grad(x, inv_std * (gg - mean_gg - normed * mean_gg_normed), owned=True)

    return _result(normed * gamma.data + beta.data, "layer_norm", (x, gamma, beta), bw)


def bce_with_logits(logits, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on logits via the log-sum-exp form."""
    logits = _as_tensor(logits)
    t = np.asarray(target, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ShapeError(f"bce: target shape {t.shape} != logits shape {logits.shape}")
    z = logits.data
    # max(z,0) - z*t + log(1+exp(-|z|))
    per_pixel = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def bw(g):
        if logits.requires_grad:
            _add_grad(logits, g * (_stable_sigmoid(z) - t) / n, owned=True)

    return _result(np.asarray(per_pixel.mean()), "bce_with_logits", (logits,), bw)


# ---------------------------------------------------------------------------
# serialization: rank u64 LE, dims u64 LE each, values f64 LE


def write_tensor(stream: BinaryIO, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.float64)
    stream.write(struct.pack("<Q", array.ndim))
    stream.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    stream.write(array.astype("<f8").tobytes(order="C"))


def read_tensor(stream: BinaryIO) -> np.ndarray:
    rank = struct.unpack("<Q", _read_exact(stream, 8))[0]
    dims = struct.unpack(f"<{rank}Q", _read_exact(stream, 8 * rank)) if rank else ()
    count = int(np.prod(dims)) if dims else 1
    data = np.frombuffer(_read_exact(stream, 8 * count), dtype="<f8")
    return data.reshape(dims).copy()


def _read_exact(stream: BinaryIO, nbytes: int) -> bytes:
    data = stream.read(nbytes)
    if len(data) != nbytes:
        raise ContractError(f"truncated tensor stream: wanted {nbytes} bytes, got {len(data)}")
    return data
