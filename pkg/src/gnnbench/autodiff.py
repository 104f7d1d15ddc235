"""Reverse-mode automatic differentiation over dense matrices and CSR operators.

Operations are recorded on the :class:`Tape` that is active in the current context::

    with Tape() as tape:
        loss = masked_cross_entropy(x @ w, labels, train_idx)
    backward(tape, loss)

Records are appended as results are produced, so the tape is in topological order and
:func:`backward` walks it once in reverse. Gradients of leaf tensors accumulate into
``Tensor.grad`` until the caller resets them.

Every tensor is 2-D. Broadcasting is numpy's, used for row-vector bias addition and
per-row scaling.
"""

from __future__ import annotations

import contextvars
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp

from .rng import RngStream

__all__ = [
    "LEAKY_SLOPE",
    "SparseOperator",
    "Tape",
    "Tensor",
    "add",
    "backward",
    "concat_cols",
    "dropout",
    "elementwise",
    "gather_rows",
    "glorot_init",
    "masked_cross_entropy",
    "matmul",
    "mean_of",
    "mul",
    "scale",
    "segment_max",
    "segment_softmax",
    "softmax_rows",
    "spmm",
    "square",
    "sub",
    "sum_all",
    "sum_cols",
    "zeros",
]

Array = npt.NDArray[np.floating]
IndexArray = npt.NDArray[np.int64]
ElementwiseOp = Literal["relu", "elu", "leaky_relu", "exp", "log"]

LEAKY_SLOPE = 0.2

_ACTIVE_TAPE: contextvars.ContextVar[Tape | None] = contextvars.ContextVar(
    "gnnbench_active_tape", default=None
)


class Tensor:
    """Dense 2-D real matrix with an optional gradient buffer."""

    __slots__ = ("data", "grad", "name", "requires_grad")

    def __init__(
        self,
        data: npt.ArrayLike,
        requires_grad: bool = False,
        name: str = "",
        dtype: npt.DTypeLike | None = None,
    ):
        """Wrap ``data`` (scalars become 1x1, vectors become columns)."""
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ValueError(f"Tensors are 2-D, got shape {arr.shape}")
        self.data: Array = arr
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        """(rows, cols)."""
        rows, cols = self.data.shape
        return int(rows), int(cols)

    @property
    def dtype(self) -> np.dtype[np.floating]:
        """Element type of the buffer."""
        return self.data.dtype

    def item(self) -> float:
        """Value of a 1x1 tensor."""
        if self.data.size != 1:
            raise ValueError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        """Reset the gradient buffer to zeros."""
        self.grad = np.zeros_like(self.data)

    def __matmul__(self, other: Tensor) -> Tensor:
        """Matrix product."""
        return matmul(self, other)

    def __add__(self, other: Tensor) -> Tensor:
        """Elementwise sum."""
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        """Elementwise difference."""
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        """Elementwise product."""
        return mul(self, other)

    def __neg__(self) -> Tensor:
        """Negation."""
        return scale(self, -1.0)

    def __repr__(self) -> str:
        """Return a string representation of the tensor."""
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} dtype={self.dtype} grad={self.requires_grad}>"


@dataclass
class _Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[Array], Sequence[Array | None]]


@dataclass
class Tape:
    """Ordered record of differentiable operations."""

    records: list[_Record] = field(default_factory=list)
    _token: contextvars.Token[Tape | None] | None = field(default=None, init=False, repr=False)

    def __enter__(self) -> Tape:
        """Make this tape the recording target."""
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *args: object) -> None:
        """Stop recording."""
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        """Number of recorded operations."""
        return len(self.records)


def _record(
    data: Array,
    inputs: tuple[Tensor, ...],
    backward_rule: Callable[[Array], Sequence[Array | None]],
) -> Tensor:
    out = Tensor(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append(_Record(out, inputs, backward_rule))
    return out


def _unbroadcast(grad: Array, shape: tuple[int, int]) -> Array:
    if grad.shape == shape:
        return grad
    axes = tuple(ax for ax in (0, 1) if shape[ax] == 1 and grad.shape[ax] != 1)
    return grad.sum(axis=axes, keepdims=True).reshape(shape)


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``grad`` of every leaf tensor that requires it.

    Leaves reachable from ``loss`` accumulate their gradient; leaves on the tape that
    the loss does not depend on receive zeros if they have no gradient yet.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not any(rec.output is loss for rec in tape.records):
        raise ValueError("loss was not recorded on this tape")
    produced = {id(rec.output) for rec in tape.records}
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        for t in rec.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g), strict=True):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else gi
    for key, leaf in leaves.items():
        g = grads.get(key)
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
        if g is not None:
            leaf.grad = leaf.grad + g.astype(leaf.data.dtype, copy=False)


# --------------------------------------------------------------------------- #
# Initializers
# --------------------------------------------------------------------------- #
def glorot_init(
    fan_in: int, fan_out: int, rng: RngStream, dtype: npt.DTypeLike = np.float32, name: str = ""
) -> Tensor:
    """Uniform on ``[-b, b]`` with ``b = sqrt(6 / (fan_in + fan_out))``."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"Glorot init needs positive fans, got ({fan_in}, {fan_out})")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-bound, bound, (fan_in, fan_out), dtype=dtype)
    return Tensor(data, requires_grad=True, name=name)


def zeros(rows: int, cols: int, dtype: npt.DTypeLike = np.float32, name: str = "") -> Tensor:
    """Trainable zero matrix (biases)."""
    return Tensor(np.zeros((rows, cols), dtype=dtype), requires_grad=True, name=name)


# --------------------------------------------------------------------------- #
# Dense algebra
# --------------------------------------------------------------------------- #
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``a @ b``."""
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def rule(g: Array) -> tuple[Array | None, Array | None]:
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return _record(ad @ bd, (a, b), rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with row-vector broadcasting."""
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise difference with row-vector broadcasting."""
    sa, sb = a.shape, b.shape
    return _record(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with row/column-vector broadcasting."""
    ad, bd = a.data, b.data
    sa, sb = a.shape, b.shape
    return _record(
        ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb))
    )


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a constant."""
    c = a.data.dtype.type(factor)
    return _record(a.data * c, (a,), lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    """Elementwise square."""
    ad = a.data
    return _record(ad * ad, (a,), lambda g: (2 * g * ad,))


def sum_all(a: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 tensor."""
    shape = a.data.shape
    return _record(
        a.data.sum(keepdims=True).reshape(1, 1), (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
    )


def sum_cols(a: Tensor) -> Tensor:
    """Row sums as a column vector."""
    shape = a.data.shape
    return _record(
        a.data.sum(axis=1, keepdims=True), (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
    )


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate tensors with equal row counts side by side."""
    widths = [p.shape[1] for p in parts]
    bounds = np.cumsum([0, *widths])

    def rule(g: Array) -> list[Array | None]:
        return [g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts))]

    return _record(np.concatenate([p.data for p in parts], axis=1), tuple(parts), rule)


def mean_of(parts: Sequence[Tensor]) -> Tensor:
    """Entrywise average of equally shaped tensors."""
    if len(parts) == 1:
        return parts[0]
    total = parts[0]
    for p in parts[1:]:
        total = add(total, p)
    return scale(total, 1.0 / len(parts))


def gather_rows(a: Tensor, index: IndexArray) -> Tensor:
    """Rows ``a[index]`` (repeats allowed)."""
    shape = a.data.shape

    def rule(g: Array) -> tuple[Array]:
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _record(a.data[index], (a,), rule)


# --------------------------------------------------------------------------- #
# Elementwise nonlinearities
# --------------------------------------------------------------------------- #
def elementwise(op: ElementwiseOp, x: Tensor) -> Tensor:
    """Apply ``relu``, ``elu``, ``leaky_relu`` (slope 0.2), ``exp`` or ``log``."""
    xd = x.data
    if op == "relu":
        return _record(np.maximum(xd, 0), (x,), lambda g: (g * (xd > 0),))
    if op == "elu":
        neg = np.expm1(np.minimum(xd, 0))
        out = np.where(xd > 0, xd, neg)
        return _record(out, (x,), lambda g: (g * np.where(xd >= 0, 1, neg + 1),))
    if op == "leaky_relu":
        slope = xd.dtype.type(LEAKY_SLOPE)
        out = np.where(xd > 0, xd, xd * slope)
        return _record(out, (x,), lambda g: (g * np.where(xd > 0, 1, slope),))
    if op == "exp":
        out = np.exp(xd)
        return _record(out, (x,), lambda g: (g * out,))
    if op == "log":
        if np.any(xd <= 0):
            raise ValueError("log of a non-positive value")
        return _record(np.log(xd), (x,), lambda g: (g / xd,))
    raise ValueError(f"Unknown elementwise op {op!r}")


# --------------------------------------------------------------------------- #
# Softmax variants
# --------------------------------------------------------------------------- #
def softmax_rows(x: Tensor) -> Tensor:
    """Max-subtracted softmax of every row."""
    if x.shape[1] == 0:
        raise ValueError("softmax over empty rows")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return _record(out, (x,), lambda g: (out * (g - (g * out).sum(axis=1, keepdims=True)),))


def _segment_starts(indptr: IndexArray, size: int) -> IndexArray:
    if len(indptr) < 2 or int(indptr[-1]) != size:
        raise ValueError(f"segment offsets end at {int(indptr[-1])}, expected {size}")
    if np.any(np.diff(indptr) <= 0):
        raise ValueError("empty segment in segment_softmax")
    return np.asarray(indptr[:-1], dtype=np.int64)


def segment_softmax(scores: Tensor, indptr: IndexArray) -> Tensor:
    """Softmax of each contiguous segment ``scores[indptr[i]:indptr[i+1]]``.

    ``scores`` is ``E x K``; each of the K columns is normalized independently.
    """
    sd = scores.data
    starts = _segment_starts(indptr, sd.shape[0])
    seg = np.repeat(np.arange(len(starts)), np.diff(indptr))
    seg_max = np.maximum.reduceat(sd, starts, axis=0)
    e = np.exp(sd - seg_max[seg])
    out = e / np.add.reduceat(e, starts, axis=0)[seg]

    def rule(g: Array) -> tuple[Array]:
        dot = np.add.reduceat(g * out, starts, axis=0)[seg]
        return (out * (g - dot),)

    return _record(out, (scores,), rule)


def segment_max(values: Tensor, indptr: IndexArray) -> Tensor:
    """Column-wise maximum over each segment; empty segments give zeros.

    The gradient goes to the first maximal entry of every segment and column.
    """
    vd = values.data
    num_rows = len(indptr) - 1
    counts = np.diff(indptr)
    filled = np.flatnonzero(counts > 0)
    starts = np.asarray(indptr[:-1][filled], dtype=np.int64)
    out = np.zeros((num_rows, vd.shape[1]), dtype=vd.dtype)
    if len(filled) == 0:
        return _record(out, (values,), lambda g: (np.zeros_like(vd),))
    out[filled] = np.maximum.reduceat(vd, starts, axis=0)
    seg = np.repeat(np.arange(num_rows), counts)
    positions = np.where(
        vd == out[seg], np.arange(vd.shape[0])[:, None], vd.shape[0]
    )
    first = np.minimum.reduceat(positions, starts, axis=0)

    def rule(g: Array) -> tuple[Array]:
        grad = np.zeros_like(vd)
        cols = np.broadcast_to(np.arange(vd.shape[1]), first.shape)
        np.add.at(grad, (first, cols), g[filled])
        return (grad,)

    return _record(out, (values,), rule)


# --------------------------------------------------------------------------- #
# Sparse operators
# --------------------------------------------------------------------------- #
@dataclass(frozen=True, eq=False)
class SparseOperator:
    """CSR matrix whose per-edge coefficients are an ``E x 1`` tensor."""

    num_rows: int
    num_cols: int
    indptr: IndexArray
    indices: IndexArray
    values: Tensor

    def __post_init__(self) -> None:
        """Check the coefficient vector matches the structure."""
        if self.values.shape != (len(self.indices), 1):
            raise ValueError(
                f"operator needs {len(self.indices)}x1 coefficients, got {self.values.shape}"
            )

    def with_values(self, values: Tensor) -> SparseOperator:
        """Same sparsity pattern with new coefficients."""
        return SparseOperator(self.num_rows, self.num_cols, self.indptr, self.indices, values)

    def to_scipy(self) -> sp.csr_matrix:
        """Current coefficients as a scipy CSR matrix."""
        return sp.csr_matrix(
            (self.values.data[:, 0], self.indices, self.indptr),
            shape=(self.num_rows, self.num_cols),
        )

    def row_ids(self) -> IndexArray:
        """Row of every stored entry."""
        return np.repeat(np.arange(self.num_rows, dtype=np.int64), np.diff(self.indptr))


def spmm(op: SparseOperator, dense: Tensor) -> Tensor:
    """Sparse-dense product ``op @ dense``.

    Differentiable in ``dense`` and, when they require gradients, in the coefficients.
    """
    if op.num_cols != dense.shape[0]:
        raise ValueError(f"spmm shape mismatch: ({op.num_rows}, {op.num_cols}) @ {dense.shape}")
    mat = op.to_scipy()
    dd = dense.data
    rows = op.row_ids()
    cols = op.indices

    def rule(g: Array) -> tuple[Array | None, Array | None]:
        g_values = None
        if op.values.requires_grad:
            g_values = np.einsum("ij,ij->i", g[rows], dd[cols])[:, None]
        g_dense = np.asarray(mat.T @ g, dtype=dd.dtype) if dense.requires_grad else None
        return g_values, g_dense

    out = np.asarray(mat @ dd, dtype=np.result_type(dd.dtype, op.values.dtype))
    return _record(out, (op.values, dense), rule)


# --------------------------------------------------------------------------- #
# Regularization and loss
# --------------------------------------------------------------------------- #
def dropout(x: Tensor, p: float, rng: RngStream, training: bool) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale survivors by ``1/(1-p)``."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / x.data.dtype.type(1 - p)
    return _record(x.data * keep, (x,), lambda g: (g * keep,))


def masked_cross_entropy(logits: Tensor, labels: IndexArray, mask: IndexArray) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the rows in ``mask``."""
    mask = np.asarray(mask, dtype=np.int64)
    if len(mask) == 0:
        raise ValueError("cross-entropy over an empty mask")
    ld = logits.data
    sel = ld[mask]
    shifted = sel - sel.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    targets = np.asarray(labels, dtype=np.int64)[mask]
    picked = log_probs[np.arange(len(mask)), targets]
    loss = np.asarray(-picked.mean(), dtype=ld.dtype).reshape(1, 1)

    def rule(g: Array) -> tuple[Array]:
        probs = np.exp(log_probs)
        probs[np.arange(len(mask)), targets] -= 1
        grad = np.zeros_like(ld)
        np.add.at(grad, mask, probs * (g[0, 0] / len(mask)))
        return (grad,)

    return _record(loss, (logits,), rule)
