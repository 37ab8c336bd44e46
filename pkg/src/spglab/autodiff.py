"""Reverse-mode automatic differentiation over a fixed primitive set.

Tensors carry double-precision numpy arrays. Primitives applied while a Tape
is active append records (operation, inputs, output, backward closure);
Tape.backward replays the records in reverse, accumulating gradients into
every requires_grad tensor exactly once per record.

The primitive set is closed: matmul, add, mul, bias_add, relu, log_softmax,
gather, embedding, reduce_sum, reduce_mean, dropout. Small MLP and residual
networks compose entirely from these.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .rng import RngStream


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to a primitive's rule."""


class GradientError(RuntimeError):
    """Raised on invalid backward requests (non-scalar loss, empty tape)."""


class Tensor:
    """N-d double-precision value, optionally tracking a gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class TapeRecord:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]


_ACTIVE_TAPE: Optional["Tape"] = None


class Tape:
    """Ordered record of primitive applications for one backward pass."""

    def __init__(self):
        self.records: list[TapeRecord] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise GradientError("a tape is already active; nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into .grad of every requires_grad tensor.

        The tape is reset afterwards; records are consumed exactly once.
        """
        if loss.size != 1:
            raise GradientError(f"backward: loss must be scalar, got shape {loss.shape}")
        if not self.records:
            raise GradientError("backward: tape is empty")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            out_grad = grads.pop(id(rec.output), None)
            if out_grad is None:
                continue
            for tensor, grad in zip(rec.inputs, rec.backward(out_grad)):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
                if tensor.grad is None:
                    tensor.grad = np.array(grad, dtype=np.float64, copy=True)
                else:
                    tensor.grad = tensor.grad + grad
        self.records.clear()


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE


def _check_finite(op: str, *tensors: Tensor) -> None:
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise ValueError(f"{op}: input contains non-finite values")


def _emit(op: str, inputs: tuple, out_data: np.ndarray, backward) -> Tensor:
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    if requires and _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.records.append(TapeRecord(op, inputs, out, backward))
    return out


# --- primitives ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    _check_finite("matmul", a, b)
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _emit("matmul", (a, b), out, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    _check_finite("add", a, b)

    def backward(g):
        return g, g

    return _emit("add", (a, b), a.data + b.data, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    _check_finite("mul", a, b)

    def backward(g):
        return g * b.data, g * a.data

    return _emit("mul", (a, b), a.data * b.data, backward)


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    if bias.data.ndim != 1 or x.data.ndim < 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"bias_add: shapes {x.shape} and {bias.shape} do not conform")
    _check_finite("bias_add", x, bias)
    lead = tuple(range(x.data.ndim - 1))

    def backward(g):
        return g, g.sum(axis=lead) if lead else g

    return _emit("bias_add", (x, bias), x.data + bias.data, backward)


def relu(x: Tensor) -> Tensor:
    _check_finite("relu", x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _emit("relu", (x,), np.where(mask, x.data, 0.0), backward)


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the last axis."""
    if x.data.ndim < 1:
        raise ShapeError(f"log_softmax: needs at least rank 1, got shape {x.shape}")
    _check_finite("log_softmax", x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _emit("log_softmax", (x,), out, backward)


def gather(x: Tensor, index: np.ndarray) -> Tensor:
    """Select one class entry along the last axis per leading position."""
    index = np.asarray(index, dtype=np.int64)
    if index.shape != x.shape[:-1]:
        raise ShapeError(f"gather: index shape {index.shape} does not match leading shape of {x.shape}")
    v = x.shape[-1]
    if index.size and (index.min() < 0 or index.max() >= v):
        raise ValueError(f"gather: index out of range [0, {v})")
    _check_finite("gather", x)
    out = np.take_along_axis(x.data, index[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, index[..., None], g[..., None], axis=-1)
        return (gx,)

    return _emit("gather", (x,), out, backward)


def embedding(table: Tensor, index: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[index[...], :]."""
    if table.data.ndim != 2:
        raise ShapeError(f"embedding: table must be rank 2, got shape {table.shape}")
    index = np.asarray(index, dtype=np.int64)
    rows = table.shape[0]
    if index.size and (index.min() < 0 or index.max() >= rows):
        raise ValueError(f"embedding: index out of range [0, {rows})")
    _check_finite("embedding", table)
    out = table.data[index]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, index.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _emit("embedding", (table,), out, backward)


def _normalize_axes(x: Tensor, axes) -> tuple:
    if axes is None:
        return tuple(range(x.data.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % x.data.ndim for a in axes))


def reduce_sum(x: Tensor, axes=None) -> Tensor:
    _check_finite("reduce_sum", x)
    ax = _normalize_axes(x, axes)

    def backward(g):
        g_exp = np.expand_dims(g, ax) if ax else g
        return (np.broadcast_to(g_exp, x.shape).copy(),)

    return _emit("reduce_sum", (x,), x.data.sum(axis=ax), backward)


def reduce_mean(x: Tensor, axes=None) -> Tensor:
    _check_finite("reduce_mean", x)
    ax = _normalize_axes(x, axes)
    count = int(np.prod([x.shape[a] for a in ax])) if ax else 1

    def backward(g):
        g_exp = np.expand_dims(g, ax) if ax else g
        return (np.broadcast_to(g_exp, x.shape).copy() / count,)

    return _emit("reduce_mean", (x,), x.data.mean(axis=ax), backward)


def dropout(x: Tensor, rate: float, rng: RngStream, training: bool) -> Tensor:
    """Inverted dropout: zero each element with probability `rate`, scale
    survivors by 1/(1-rate). Eval mode is the exact identity."""
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout: rate must lie in [0, 1), got {rate}")
    if not training:
        return x
    _check_finite("dropout", x)
    scale = rng.keep_mask(x.shape, rate) / (1.0 - rate)

    def backward(g):
        return (g * scale,)

    return _emit("dropout", (x,), x.data * scale, backward)


# --- convenience --------------------------------------------------------


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def scale(x: Tensor, factor) -> Tensor:
    """Elementwise multiply by a constant array or scalar."""
    return mul(x, constant(np.broadcast_to(np.asarray(factor, dtype=np.float64), x.shape)))


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None
