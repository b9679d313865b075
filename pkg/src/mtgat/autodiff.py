"""A small dense reverse-mode differentiation engine on float64 arrays.

Only the primitives the graph attention model needs are provided.  Every
primitive appends one record to a :class:`Tape`; :func:`backward` walks the
records in reverse and accumulates gradients for the parameter leaves.

All arrays are 2-D.  Apart from :func:`add_row` there is no broadcasting;
shape mismatches raise :class:`ShapeError` and non-finite results raise
:class:`NumericalError`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "tape", "name", "uid")

    def __init__(self, data, tape: Optional["Tape"] = None, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.tape = tape
        self.name = name
        self.uid = next(_ids)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape})"


class Record(NamedTuple):
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable  # grad_output -> tuple of input grads (None to skip)


class Tape:
    """Append-only log of primitive applications for one forward pass."""

    def __init__(self):
        self.records: list[Record] = []
        self.params: dict[str, Tensor] = {}

    def param(self, data, name: str) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already on tape")
        t = Tensor(np.array(data, dtype=np.float64), self, name)
        _check_finite(name, t.data)
        self.params[name] = t
        return t

    def const(self, data) -> Tensor:
        return Tensor(data, None)

    def __len__(self):
        return len(self.records)


def _check_finite(op: str, arr: np.ndarray) -> None:
    # NaN and inf both survive a sum; a finite sum means finite entries
    # except in the overflow corner, which is worth flagging anyway
    if not np.isfinite(arr.sum()):
        raise NumericalError(f"non-finite value produced by {op}")


def _tape_of(*tensors) -> Optional[Tape]:
    for t in tensors:
        if isinstance(t, Tensor) and t.tape is not None:
            return t.tape
    return None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, inputs: tuple, out: np.ndarray, backward: Callable) -> Tensor:
    _check_finite(op, out)
    tape = _tape_of(*inputs)
    t = Tensor(out, tape)
    if tape is not None:
        tape.records.append(Record(op, inputs, t, backward))
    return t


# -- primitives -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _record("matmul", (a, b), A @ B, lambda g: (g @ B.T, A.T @ g))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} + {b.shape}")
    return _record("add", (a, b), a.data + b.data, lambda g: (g, g))


def add_row(a, row) -> Tensor:
    """``a`` (n x d) plus a 1 x d row added to every row."""
    a, row = _as_tensor(a), _as_tensor(row)
    if row.shape != (1, a.shape[1]):
        raise ShapeError(f"add_row: {a.shape} + {row.shape}")
    return _record("add_row", (a, row), a.data + row.data, lambda g: (g, g.sum(axis=0, keepdims=True)))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError("leaky_relu slope must lie in (0, 1)")
    x = _as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)
    return _record("leaky_relu", (x,), x.data * scale, lambda g: (g * scale,))


def gather_rows(x, index) -> Tensor:
    x = _as_tensor(x)
    idx = np.asarray(index, dtype=np.intp)
    n = x.shape[0]

    def back(g):
        return (_segment_sum(g, idx, n),)

    return _record("gather_rows", (x,), x.data[idx], back)


def gather_elements(x, rows, cols) -> Tensor:
    """Entries ``x[rows, cols]``.  1-D index arrays give an E x 1 column,
    2-D index arrays give a matrix of their shape."""
    x = _as_tensor(x)
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    if r.shape != c.shape or r.ndim not in (1, 2):
        raise ShapeError("gather_elements: rows and cols must be matching 1-D or 2-D index arrays")
    shape = x.shape
    flat = (r * shape[1] + c).ravel()
    out = x.data[r, c]

    def back(g):
        acc = np.bincount(flat, weights=g.ravel(), minlength=shape[0] * shape[1])
        return (acc.reshape(shape),)

    return _record("gather_elements", (x,), out[:, None] if r.ndim == 1 else out, back)


def transpose(x) -> Tensor:
    x = _as_tensor(x)
    return _record("transpose", (x,), x.data.T.copy(), lambda g: (g.T,))


def slice_cols(x, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_cols: [{start}, {stop}) out of range for {x.shape}")
    width = x.shape[1]

    def back(g):
        out = np.zeros((g.shape[0], width))
        out[:, start:stop] = g
        return (out,)

    return _record("slice_cols", (x,), x.data[:, start:stop], back)


def concat_cols(tensors: Sequence) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat_cols needs at least one tensor")
    rows = {t.shape[0] for t in ts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {sorted(rows)}")
    bounds = np.cumsum([0] + [t.shape[1] for t in ts])
    return _record("concat_cols", ts, np.concatenate([t.data for t in ts], axis=1),
                   lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(ts))))


def concat_rows(tensors: Sequence) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat_rows needs at least one tensor")
    cols = {t.shape[1] for t in ts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ {sorted(cols)}")
    bounds = np.cumsum([0] + [t.shape[0] for t in ts])
    return _record("concat_rows", ts, np.concatenate([t.data for t in ts], axis=0),
                   lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(ts))))


def rowwise_dot(a, b) -> Tensor:
    """Per-row inner product of two n x d tensors, giving n x 1."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"rowwise_dot: {a.shape} vs {b.shape}")
    A, B = a.data, b.data
    return _record("rowwise_dot", (a, b), np.einsum("ij,ij->i", A, B)[:, None],
                   lambda g: (g * B, g * A))


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    return _record("sum_all", (x,), np.array([[x.data.sum()]]), lambda g: (np.full(shape, g[0, 0]),))


def mean_rows(x) -> Tensor:
    x = _as_tensor(x)
    n = x.shape[0]
    if n == 0:
        raise ShapeError("mean_rows over zero rows (empty readout)")
    return _record("mean_rows", (x,), x.data.mean(axis=0, keepdims=True),
                   lambda g: (np.repeat(g / n, n, axis=0),))


def _segment_ids(segments, n_entries: int, n_segments: Optional[int]) -> tuple[np.ndarray, int]:
    seg = np.asarray(segments, dtype=np.intp)
    if seg.shape != (n_entries,):
        raise ShapeError(f"need one segment id per entry ({n_entries}), got shape {seg.shape}")
    if n_segments is None:
        n_segments = int(seg.max()) + 1 if seg.size else 0
    if seg.size and (seg.min() < 0 or seg.max() >= n_segments):
        raise ShapeError("segment id out of range")
    return seg, n_segments


def segment_softmax(scores, segments, n_segments: Optional[int] = None) -> Tensor:
    """Softmax inside each segment, for every column of an E x C score
    matrix independently (one column per attention head)."""
    s = _as_tensor(scores)
    x = s.data
    seg, n = _segment_ids(segments, x.shape[0], n_segments)
    seg_max = _segment_reduce(np.maximum, x, seg, n, -np.inf)
    ex = np.exp(x - seg_max[seg])
    y = ex / _segment_sum(ex, seg, n)[seg]

    def back(g):
        gy = g * y
        return (gy - y * _segment_sum(gy, seg, n)[seg],)

    return _record("segment_softmax", (s,), y, back)


def _segment_plan(seg: np.ndarray, n: int):
    """Stable sort order, nonempty segment ids and their run starts."""
    if seg.size and np.all(seg[1:] >= seg[:-1]):
        order = None
        sorted_seg = seg
    else:
        order = np.argsort(seg, kind="stable")
        sorted_seg = seg[order]
    counts = np.bincount(sorted_seg, minlength=n)
    nonempty = np.flatnonzero(counts)
    starts = (np.cumsum(counts) - counts)[nonempty]
    return order, nonempty, starts


def _segment_reduce(ufunc, values: np.ndarray, seg: np.ndarray, n: int, fill: float) -> np.ndarray:
    out = np.full((n,) + values.shape[1:], fill)
    if seg.size == 0:
        return out
    order, nonempty, starts = _segment_plan(seg, n)
    v = values if order is None else values[order]
    out[nonempty] = ufunc.reduceat(v, starts, axis=0)
    return out


def _segment_sum(values: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    # summation runs in stable sorted order, so results do not depend on how
    # entries of one segment are interleaved with other segments
    return _segment_reduce(np.add, values, seg, n, 0.0)


def segment_weighted_sum(weights, values, segments, n_segments: Optional[int] = None) -> Tensor:
    """Row ``s`` of the result is the sum of ``w_e * v_e`` over entries of
    segment ``s``; empty segments give zero rows.

    With ``C`` weight columns the value columns are split into ``C`` equal
    chunks and column ``c`` weights chunk ``c`` (one chunk per head).
    """
    w, v = _as_tensor(weights), _as_tensor(values)
    E, C = w.shape
    if E != v.shape[0] or v.shape[1] % C:
        raise ShapeError(f"segment_weighted_sum: weights {w.shape} vs values {v.shape}")
    seg, n = _segment_ids(segments, E, n_segments)
    k = v.shape[1] // C
    W = w.data
    V = v.data.reshape(E, C, k)
    out = _segment_sum((W[:, :, None] * V).reshape(E, C * k), seg, n)

    def back(g):
        ge = g[seg].reshape(E, C, k)
        return (np.einsum("eck,eck->ec", ge, V), (W[:, :, None] * ge).reshape(E, C * k))

    return _record("segment_weighted_sum", (w, v), out, back)


def isolated_segments(segments, n_segments: int) -> np.ndarray:
    """Boolean mask of segments that receive no entries."""
    return np.bincount(np.asarray(segments, dtype=np.intp), minlength=n_segments) == 0


def l1_loss(pred, target) -> Tensor:
    """Mean absolute error; the subgradient at equality is 0."""
    p, t = _as_tensor(pred), _as_tensor(target)
    if p.shape != t.shape:
        raise ShapeError(f"l1_loss: {p.shape} vs {t.shape}")
    diff = p.data - t.data
    sign = np.sign(diff) / diff.size
    return _record("l1_loss", (p, t), np.array([[np.abs(diff).mean()]]),
                   lambda g: (g[0, 0] * sign, -g[0, 0] * sign))


def bce_with_logits(logits, labels) -> Tensor:
    """Binary cross-entropy summed over entries, in the overflow-free form
    ``max(x, 0) - x*y + log(1 + exp(-|x|))``."""
    z = _as_tensor(logits)
    y = np.asarray(labels, dtype=np.float64).reshape(z.shape)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("bce labels must be 0 or 1")
    x = z.data
    loss = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    sig = np.where(x >= 0, 1 / (1 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1 + np.exp(-np.abs(x))))
    return _record("bce_with_logits", (z,), np.array([[loss.sum()]]), lambda g: (g[0, 0] * (sig - y),))


# -- reverse pass -----------------------------------------------------------

class Gradients(dict):
    """Parameter name -> gradient array of the parameter's shape."""


def backward(tape: Tape, loss: Tensor) -> Gradients:
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {loss.uid: np.ones((1, 1))}
    for rec in reversed(tape.records):
        g = grads.pop(rec.output.uid, None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or inp.tape is None:
                continue
            prev = grads.get(inp.uid)
            grads[inp.uid] = gi if prev is None else prev + gi
    out = Gradients()
    for name, p in tape.params.items():
        g = grads.get(p.uid)
        g = np.zeros(p.shape) if g is None else np.array(g, dtype=np.float64)
        _check_finite(f"gradient of {name}", g)
        out[name] = g
    return out


# -- verification -----------------------------------------------------------

@dataclass
class FiniteDiffReport:
    passed: bool
    max_rel_error: float
    worst: Optional[tuple]  # (param name, flat index)
    n_checked: int
    tolerance: float
    analytic: dict = field(repr=False, default_factory=dict)
    numeric: dict = field(repr=False, default_factory=dict)


def finite_diff_check(f: Callable[[Tape, Mapping[str, Tensor]], Tensor],
                      params: Mapping[str, np.ndarray],
                      step: float = 1e-5,
                      tolerance: float = 1e-6) -> FiniteDiffReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f(tape, tensors)`` must build a scalar loss on ``tape`` from the
    parameter tensors it is handed.  The relative error of one entry is
    ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def value(arrays) -> float:
        tape = Tape()
        return f(tape, {k: tape.param(v, k) for k, v in arrays.items()}).item()

    tape = Tape()
    loss = f(tape, {k: tape.param(v, k) for k, v in base.items()})
    analytic = backward(tape, loss)

    numeric, worst, max_err, count = {}, None, 0.0, 0
    for name, arr in base.items():
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up = value(base)
            arr[idx] = orig - step
            down = value(base)
            arr[idx] = orig
            num[idx] = (up - down) / (2 * step)
            ga = analytic[name][idx]
            err = abs(ga - num[idx]) / max(1e-8, abs(ga) + abs(num[idx]))
            count += 1
            if err > max_err or worst is None:
                max_err, worst = max(err, max_err), (name, int(np.ravel_multi_index(idx, arr.shape)))
        numeric[name] = num
    return FiniteDiffReport(max_err <= tolerance, max_err, worst, count, tolerance, dict(analytic), numeric)
