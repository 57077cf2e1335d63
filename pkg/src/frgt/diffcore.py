"""Small dense reverse-mode autodiff engine on top of numpy.

Only the operations the model needs are provided. Every primitive records a
backward closure on the active :class:`Tape`; :meth:`Tape.backward` replays the
records in reverse creation order, which is a valid topological order because
a tensor can only be consumed after it was produced.

Usage::

    with Tape() as tape:
        y = relu(x @ w)
        loss = tsum(y)
    grads = tape.backward(loss)   # {name: ndarray}
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

_ids = itertools.count()
_active: list["Tape"] = []
_debug = False


def set_debug(flag: bool) -> None:
    """Check every recorded activation for NaN/Inf when enabled."""
    global _debug
    _debug = bool(flag)


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "node_id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Record:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    records: list[Record] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` for every named tensor that requires grad.

        Unnamed leaves are keyed ``"t<node_id>"``.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self.records):
            g = grads.pop(rec.output.node_id, None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.node_id in grads:
                    grads[inp.node_id] = grads[inp.node_id] + gi
                else:
                    grads[inp.node_id] = gi
                leaves[inp.node_id] = inp
        out = {}
        for nid, g in grads.items():
            t = leaves.get(nid)
            if t is None:
                continue
            out[t.name if t.name is not None else f"t{nid}"] = g
        return out


def backward(loss: Tensor, tape: Tape | None = None) -> dict[str, np.ndarray]:
    if tape is None:
        if not _active:
            raise RuntimeError("no active tape")
        tape = _active[-1]
    return tape.backward(loss)


def _record(kind: str, out: np.ndarray, inputs: tuple[Tensor, ...], fn) -> Tensor:
    t = Tensor(out)
    if _debug and not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite output from {kind}")
    if _active and any(i.requires_grad for i in inputs):
        t.requires_grad = True
        _active[-1].records.append(Record(kind, inputs, t, fn))
    return t


# --------------------------------------------------------------------------
# segment helper

class Segments:
    """Precomputed structure for scatter-style reductions over integer segment ids.

    Sums use a cached CSR scatter matrix, so each segment accumulates in edge
    order. Maxima use ``ufunc.reduceat`` over the stably sorted ids (no gather
    when the ids are already sorted).
    """

    def __init__(self, ids, n_segments: int):
        ids = np.asarray(ids, dtype=np.int64).ravel()
        if ids.size and (ids.min() < 0 or ids.max() >= n_segments):
            raise IndexError(f"segment ids out of range [0, {n_segments})")
        self.ids = ids
        self.n = int(n_segments)
        self.sorted = bool(np.all(ids[1:] >= ids[:-1]))
        self.order = None if self.sorted else np.argsort(ids, kind="stable")
        counts = np.bincount(ids, minlength=self.n)
        starts = np.zeros(self.n, dtype=np.int64)
        np.cumsum(counts[:-1], out=starts[1:])
        self.nonempty = counts > 0
        self.starts = starts[self.nonempty]
        self._scatter: dict = {}

    def scatter_matrix(self, dtype) -> sp.csr_matrix:
        key = np.dtype(dtype)
        if key not in self._scatter:
            m = self.ids.size
            self._scatter[key] = sp.csr_matrix(
                (np.ones(m, dtype=key), (self.ids, np.arange(m))), shape=(self.n, m))
        return self._scatter[key]

    def sum(self, values: np.ndarray) -> np.ndarray:
        if values.ndim == 1:
            return self.sum(values[:, None])[:, 0]
        out = self.scatter_matrix(values.dtype) @ values
        return np.asarray(out, dtype=values.dtype)

    def max(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n,) + values.shape[1:], dtype=values.dtype)
        if self.ids.size:
            v = values if self.sorted else values[self.order]
            out[self.nonempty] = np.maximum.reduceat(v, self.starts, axis=0)
        return out


def _segments(ids, n: int) -> Segments:
    return ids if isinstance(ids, Segments) else Segments(ids, n)


# --------------------------------------------------------------------------
# primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        return (g @ B.T if a.requires_grad else None,
                A.T @ g if b.requires_grad else None)

    return _record("matmul", A @ B, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got {a.shape}")
    return _record("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a row vector broadcast over the rows of ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _record("add", a.data + b.data, (a, b), lambda g: (g, g))
    if a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        return _record("add", a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub shape mismatch: {a.shape} - {b.shape}")
    return _record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}")
    A, B = a.data, b.data
    return _record("mul", A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = a.data.dtype.type(c)
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = a.data.dtype.type(c)
    return _record("add_scalar", a.data + c, (a,), lambda g: (g,))


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record("relu", np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def tsum(a: Tensor) -> Tensor:
    """Sum of all entries as a shape-(1,) tensor."""
    a = as_tensor(a)
    shape = a.shape
    out = np.asarray([a.data.sum()], dtype=a.dtype)
    return _record("sum", out, (a,), lambda g: (np.broadcast_to(g.reshape(()), shape).copy(),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat of nothing")
    lead = ts[0].shape[:-1]
    for t in ts:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat shape mismatch: {ts[0].shape} vs {t.shape}")
    widths = [t.shape[-1] for t in ts]
    cuts = np.cumsum(widths)[:-1]
    out = np.concatenate([t.data for t in ts], axis=-1)
    return _record("concat", out, ts, lambda g: tuple(np.split(g, cuts, axis=-1)))


def column_slice(a: Tensor, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return _record("column_slice", a.data[..., start:stop].copy(), (a,), bw)


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply optional gain and bias."""
    x = as_tensor(x)
    X = x.data
    k = X.shape[-1]
    mu = X.mean(axis=-1, keepdims=True)
    xc = X - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + X.dtype.type(eps))
    xhat = xc * inv
    inputs: list[Tensor] = [x]
    out = xhat
    if gain is not None:
        gain = as_tensor(gain)
        if gain.shape != (k,):
            raise ShapeError(f"layer_norm gain shape {gain.shape} vs input {x.shape}")
        out = out * gain.data
        inputs.append(gain)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (k,):
            raise ShapeError(f"layer_norm bias shape {bias.shape} vs input {x.shape}")
        out = out + bias.data
        inputs.append(bias)

    def bw(g):
        gx_hat = g * gain.data if gain is not None else g
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if gain is not None:
            grads.append((g * xhat).reshape(-1, k).sum(axis=0))
        if bias is not None:
            grads.append(g.reshape(-1, k).sum(axis=0))
        return grads

    return _record("layer_norm", out.astype(X.dtype, copy=False), tuple(inputs), bw)


def gather_rows(x: Tensor, index) -> Tensor:
    x = as_tensor(x)
    idx = index.ids if isinstance(index, Segments) else np.asarray(index, dtype=np.int64)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather index out of range for {n} rows")

    def bw(g):
        return (_segments(index, n).sum(g),)

    return _record("gather_rows", x.data[idx], (x,), bw)


def segment_sum(values: Tensor, segment_ids, n_segments: int) -> Tensor:
    values = as_tensor(values)
    seg = _segments(segment_ids, n_segments)
    if seg.ids.shape[0] != values.shape[0]:
        raise ShapeError(f"segment ids length {seg.ids.shape[0]} vs values {values.shape}")
    ids = seg.ids
    return _record("segment_sum", seg.sum(values.data), (values,), lambda g: (g[ids],))


def segment_softmax_weighted_sum(messages: Tensor, segment_ids, n_segments: int,
                                 beta: Tensor) -> Tensor:
    """Per segment and per channel: sum_j softmax_j(beta * m_j) * m_j.

    Empty segments produce zeros. ``beta`` is a one-element tensor.
    """
    messages, beta = as_tensor(messages), as_tensor(beta)
    if beta.data.size != 1:
        raise ShapeError(f"beta must hold one value, got shape {beta.shape}")
    seg = _segments(segment_ids, n_segments)
    M = messages.data
    if seg.ids.shape[0] != M.shape[0]:
        raise ShapeError(f"segment ids length {seg.ids.shape[0]} vs messages {M.shape}")
    ids = seg.ids
    b = beta.data.reshape(()).astype(M.dtype)
    s = b * M
    e = np.exp(s - seg.max(s)[ids])
    w = e / seg.sum(e)[ids]
    out = seg.sum(w * M)

    def bw(g):
        ge = g[ids]
        dev = M - out[ids]
        gm = ge * w * (1 + b * dev)
        gb = np.sum(ge * w * M * dev)
        return gm, np.asarray(gb, dtype=beta.dtype).reshape(beta.shape)

    return _record("segment_softmax", out, (messages, beta), bw)


# --------------------------------------------------------------------------
# finite-difference checking

@dataclass
class GradCheckReport:
    op: str
    max_rel_error: list[float]

    @property
    def worst(self) -> float:
        return max(self.max_rel_error) if self.max_rel_error else 0.0


def grad_check(op: Callable[..., Tensor], shapes: Sequence[tuple[int, ...]], seed: int = 0,
               h: float = 1e-6, inputs: Sequence[np.ndarray] | None = None,
               name: str | None = None) -> GradCheckReport:
    """Compare tape gradients with central differences in float64.

    The output is contracted with a fixed random weight so the whole Jacobian
    is exercised. Relative error per input is ``max|g_tape - g_fd|`` divided by
    the gradient scale ``max(max|g_fd|, max|g_tape|, 1e-6)``.
    """
    rng = np.random.default_rng(seed)
    if inputs is None:
        inputs = [rng.standard_normal(s) for s in shapes]
    xs = [np.array(x, dtype=np.float64) for x in inputs]

    def evaluate(arrays):
        return op(*[Tensor(a) for a in arrays]).data

    proj = rng.standard_normal(evaluate(xs).shape)

    leaves = [Tensor(x.copy(), requires_grad=True, name=f"in{i}") for i, x in enumerate(xs)]
    with Tape() as tape:
        out = op(*leaves)
        loss = tsum(mul(out, Tensor(proj)))
    grads = tape.backward(loss)

    errors = []
    for i, x in enumerate(xs):
        g_tape = grads.get(f"in{i}", np.zeros_like(x))
        g_fd = np.zeros_like(x)
        flat = g_fd.reshape(-1)
        for k in range(x.size):
            xp = [a.copy() for a in xs]
            xm = [a.copy() for a in xs]
            xp[i].reshape(-1)[k] += h
            xm[i].reshape(-1)[k] -= h
            flat[k] = (np.sum(evaluate(xp) * proj) - np.sum(evaluate(xm) * proj)) / (2 * h)
        denom = max(float(np.max(np.abs(g_fd), initial=0.0)),
                    float(np.max(np.abs(g_tape), initial=0.0)), 1e-6)
        errors.append(float(np.max(np.abs(g_tape - g_fd), initial=0.0)) / denom)
    return GradCheckReport(name or getattr(op, "__name__", "op"), errors)


def primitive_suite(seed: int = 0) -> list[GradCheckReport]:
    """Finite-difference checks for every primitive on small random inputs."""
    rng = np.random.default_rng(seed)
    ids = np.array([0, 2, 0, 1, 2, 2, 0])
    n_seg = 4  # segment 3 stays empty
    cases = [
        ("identity", lambda a: a, [(3, 2)]),
        ("matmul", matmul, [(3, 4), (4, 2)]),
        ("transpose", transpose, [(3, 4)]),
        ("add", add, [(3, 4), (3, 4)]),
        ("add_row", add, [(3, 4), (4,)]),
        ("sub", sub, [(3, 4), (3, 4)]),
        ("mul", mul, [(3, 4), (3, 4)]),
        ("scale", lambda a: scale(a, 0.37), [(3, 4)]),
        ("relu", relu, [(5, 4)]),
        ("sum", tsum, [(3, 4)]),
        ("concat", lambda a, b: concat([a, b]), [(3, 2), (3, 3)]),
        ("column_slice", lambda a: column_slice(a, 1, 3), [(3, 4)]),
        ("layer_norm", layer_norm, [(4, 5), (5,), (5,)]),
        ("layer_norm_bare", lambda a: layer_norm(a), [(4, 5)]),
        ("gather_rows", lambda a: gather_rows(a, ids % 3), [(3, 4)]),
        ("segment_sum", lambda a: segment_sum(a, ids, n_seg), [(7, 3)]),
        ("segment_softmax", lambda m, b: segment_softmax_weighted_sum(m, ids, n_seg, b),
         [(7, 3), (1,)]),
    ]
    reports = []
    for name, op, shapes in cases:
        reports.append(grad_check(op, shapes, seed=int(rng.integers(1 << 31)), name=name))
    const = np.full((3, 5), 0.7)
    reports.append(grad_check(lambda a: layer_norm(a), [const.shape], inputs=[const],
                              name="layer_norm_constant"))
    return reports
