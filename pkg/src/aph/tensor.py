"""Dense float64 tensors with a reverse-mode gradient tape.

Every primitive the recommender needs is defined here together with its
backward rule. Values live in numpy arrays; each op records its parents and
a closure that pushes the upstream gradient to them. ``backward`` walks the
recorded graph once in reverse topological order.

Forward ops refuse to produce NaN/Inf (:class:`NonFiniteError`).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "NonFiniteError", "tensor", "parameter",
    "add", "sub", "mul", "neg", "matmul", "dot", "concat", "relu",
    "leaky_relu", "sigmoid", "square", "tsum", "mean", "take", "reshape",
    "segment_sum", "segment_max", "segment_mean", "softmax_grouped",
    "segment_softmax", "max_pool_columns", "bce_with_logits",
    "backward", "grad_check", "branch_recorder",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf", name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(out: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")
    return out


def _make(out, parents, backward_fn, op) -> Tensor:
    _check_finite(out, op)
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(out, op=op)
    return Tensor(out, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- branch recording (used by grad_check to skip kinks) -------------------

_branch_log: list | None = None


@contextlib.contextmanager
def branch_recorder():
    """Collect the discrete branch decisions made by piecewise ops.

    ReLU-style ops log their activation masks, max-type ops their argmax. Two
    evaluations with different logs sit on different sides of a kink.
    """
    global _branch_log
    prev = _branch_log
    _branch_log = []
    try:
        yield _branch_log
    finally:
        _branch_log = prev


def _log_branch(arr: np.ndarray):
    if _branch_log is not None:
        _branch_log.append(np.array(arr, copy=True))


def record_branch(arr) -> None:
    """Public hook for callers that make discrete choices outside this module."""
    _log_branch(np.asarray(arr))


def scatter_add(index: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    """``out[index[k]] += values[k]`` for 1-D or 2-D ``values`` (bincount based)."""
    index = np.asarray(index, dtype=np.int64)
    if values.ndim == 1:
        return np.bincount(index, weights=values, minlength=n).astype(np.float64)
    flat = values.reshape(values.shape[0], int(np.prod(values.shape[1:])))
    out = np.empty((n, flat.shape[1]))
    for c in range(flat.shape[1]):
        out[:, c] = np.bincount(index, weights=flat[:, c], minlength=n)
    return out.reshape((n,) + values.shape[1:])


def _segment_reduce_max(values: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    """Per-segment max along axis 0; empty segments hold -inf."""
    out = np.full((n,) + values.shape[1:], -np.inf)
    if seg.size == 0:
        return out
    order = np.argsort(seg, kind="stable")
    sseg = seg[order]
    starts = np.flatnonzero(np.r_[True, sseg[1:] != sseg[:-1]])
    out[sseg[starts]] = np.maximum.reduceat(values[order], starts, axis=0)
    return out


# --- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bw, "mul")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    _log_branch(mask)
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    _log_branch(mask)
    scale = np.where(mask, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def bce_with_logits(logits, labels) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 labels."""
    logits = _as_tensor(logits)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: logits {logits.shape} vs labels {y.shape}")
    x = logits.data
    # log(1 + exp(-|x|)) form avoids overflow
    e = np.exp(-np.abs(x))
    losses = np.maximum(x, 0.0) - x * y + np.log1p(e)
    n = max(x.size, 1)
    p = np.where(x >= 0, 1.0, e) / (1.0 + e)

    def bw(g):
        return (g * (p - y) / n,)

    return _make(np.array(losses.sum() / n), (logits,), bw, "bce_with_logits")


# --- linear algebra / shape -------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def bw(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _make(out, (a, b), bw, "matmul")


def dot(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: incompatible shapes {a.shape} and {b.shape}")
    return matmul(a, b)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref) or any(s != r for k, (s, r) in enumerate(zip(t.shape, ref)) if k != ax):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    out = np.concatenate([t.data for t in ts], axis=ax)
    cuts = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(out, tuple(ts), bw, "concat")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def tsum(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def take(table, index) -> Tensor:
    """Row gather ``table[index]``; backward scatters with accumulation."""
    table = _as_tensor(table)
    idx = np.asarray(index, dtype=np.int64)
    out = table.data[idx]

    def bw(g):
        if idx.ndim != 1:
            grad = np.zeros_like(table.data)
            np.add.at(grad, idx, g)
            return (grad,)
        return (scatter_add(idx, g, table.shape[0]),)

    return _make(out, (table,), bw, "take")


# --- segment (grouped) reductions --------------------------------------------

def _check_segments(seg, n_rows, num_segments, op):
    seg = np.asarray(seg, dtype=np.int64)
    if seg.shape != (n_rows,):
        raise ShapeError(f"{op}: segment ids shape {seg.shape} vs {n_rows} rows")
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise IndexError(f"{op}: segment id out of range [0, {num_segments})")
    return seg


def segment_sum(values, segment_ids, num_segments: int) -> Tensor:
    values = _as_tensor(values)
    seg = _check_segments(segment_ids, values.shape[0], num_segments, "segment_sum")
    out = scatter_add(seg, values.data, num_segments)
    return _make(out, (values,), lambda g: (g[seg],), "segment_sum")


def segment_mean(values, segment_ids, num_segments: int) -> Tensor:
    """Per-segment mean; empty segments give zeros."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    s = segment_sum(values, seg, num_segments)
    return mul(s, inv.reshape((-1,) + (1,) * (s.ndim - 1)))


def segment_max(values, segment_ids, num_segments: int) -> Tensor:
    """Per-segment, per-column maximum of a 2-D value matrix.

    Gradient goes to the first row (in input order) attaining the maximum.
    Empty segments yield zero rows with no gradient.
    """
    values = _as_tensor(values)
    if values.ndim != 2:
        raise ShapeError(f"segment_max: expected 2-D values, got {values.shape}")
    n, c = values.shape
    seg = _check_segments(segment_ids, n, num_segments, "segment_max")
    out = _segment_reduce_max(values.data, seg, num_segments)
    hit = values.data == out[seg]
    # first row per (segment, column) reaching the max
    arg = np.full((num_segments, c), n, dtype=np.int64)
    for col in range(c):
        r = np.flatnonzero(hit[:, col])
        first_seg, first_pos = np.unique(seg[r], return_index=True)
        arg[first_seg, col] = r[first_pos]
    _log_branch(arg)
    empty = arg == n
    out[empty] = 0.0

    def bw(g):
        grad = np.zeros_like(values.data)
        segs, cols = np.nonzero(~empty)
        # each row belongs to one segment, so (row, col) targets are unique
        grad[arg[segs, cols], cols] = g[segs, cols]
        return (grad,)

    return _make(out, (values,), bw, "segment_max")


def segment_softmax(scores, segment_ids, num_segments: int) -> Tensor:
    """Softmax of a flat score vector restricted to each segment."""
    scores = _as_tensor(scores)
    if scores.ndim != 1:
        raise ShapeError(f"segment_softmax: expected 1-D scores, got {scores.shape}")
    seg = _check_segments(segment_ids, scores.shape[0], num_segments, "segment_softmax")
    top = _segment_reduce_max(scores.data, seg, num_segments)
    ex = np.exp(scores.data - top[seg])
    den = scatter_add(seg, ex, num_segments)
    w = ex / den[seg]

    def bw(g):
        inner = scatter_add(seg, g * w, num_segments)
        return (w * (g - inner[seg]),)

    return _make(w, (scores,), bw, "segment_softmax")


def softmax_grouped(scores, groups: Iterable) -> Tensor:
    """Softmax within each group of a partition of the score indices.

    ``groups`` is a sequence of ``(start, stop)`` half-open ranges or of
    explicit index lists; together they must cover every index exactly once.
    """
    scores = _as_tensor(scores)
    n = scores.shape[0] if scores.ndim == 1 else -1
    if n < 0:
        raise ShapeError(f"softmax_grouped: expected 1-D scores, got {scores.shape}")
    seg = np.full(n, -1, dtype=np.int64)
    count = 0
    for g, grp in enumerate(groups):
        if isinstance(grp, tuple) and len(grp) == 2 and all(isinstance(x, (int, np.integer)) for x in grp):
            idx = np.arange(grp[0], grp[1])
        else:
            idx = np.asarray(list(grp), dtype=np.int64)
        if idx.size == 0:
            raise ValueError(f"softmax_grouped: group {g} is empty")
        if np.any(seg[idx] >= 0):
            raise ValueError(f"softmax_grouped: group {g} overlaps an earlier group")
        seg[idx] = g
        count += 1
    if np.any(seg < 0):
        raise ValueError("softmax_grouped: groups do not cover every score")
    return segment_softmax(scores, seg, count)


def max_pool_columns(m, top_t: int) -> Tensor:
    """Column-wise max over the first ``min(top_t, rows)`` rows of ``m``."""
    m = _as_tensor(m)
    if m.ndim != 2 or m.shape[0] == 0:
        raise ShapeError(f"max_pool_columns: empty or non-matrix input {m.shape}")
    if top_t < 1:
        raise ValueError("max_pool_columns: top_t must be >= 1")
    r = min(top_t, m.shape[0])
    head = take(m, np.arange(r)) if r < m.shape[0] else m
    return reshape(segment_max(head, np.zeros(r, dtype=np.int64), 1), (m.shape[1],))


# --- backward -----------------------------------------------------------------

def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Sequence[Tensor] | None = None) -> dict:
    """Reverse-mode sweep from a scalar ``loss``.

    Returns ``{id(tensor): grad}`` for every leaf reached, plus zero arrays for
    any ``params`` that did not participate. Leaf ``.grad`` fields are set.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    if loss.requires_grad:
        for node in reversed(_topo_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                leaves[id(node)] = (node, g)
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
    out = {}
    for key, (node, g) in leaves.items():
        node.grad = np.asarray(g, dtype=np.float64).reshape(node.shape)
        out[key] = node.grad
    for p in params or ():
        if id(p) not in out:
            p.grad = np.zeros_like(p.data)
            out[id(p)] = p.grad
    return out


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               max_coords: int | None = None, rng=None) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` recomputes a scalar loss from the current contents of ``params``.
    The error for one coordinate is ``|analytic - numeric| / (|analytic| + eps)``.
    Coordinates whose +eps and -eps evaluations take different branches of a
    piecewise op (ReLU kink, argmax switch) are skipped. ``max_coords`` samples
    that many coordinates uniformly instead of checking all of them.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("grad_check: f returned a non-finite value")
    grads = backward(loss, params)
    coords = [(k, j) for k, p in enumerate(params) for j in range(p.size)]
    if max_coords is not None and max_coords < len(coords):
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[c] for c in sorted(pick)]
    worst = 0.0
    for k, j in coords:
        p = params[k]
        flat = p.data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        with branch_recorder() as hi_log:
            hi = f().item()
        flat[j] = orig - eps
        with branch_recorder() as lo_log:
            lo = f().item()
        flat[j] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteError("grad_check: f returned a non-finite value")
        if len(hi_log) != len(lo_log) or any(
                a.shape != b.shape or not np.array_equal(a, b) for a, b in zip(hi_log, lo_log)):
            continue
        analytic = grads[id(p)].reshape(-1)[j]
        numeric = (hi - lo) / (2.0 * eps)
        worst = max(worst, abs(analytic - numeric) / (abs(analytic) + eps))
    return worst
