"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records operations as they execute (define-by-run); ``backward``
replays it once in reverse to accumulate adjoints. Every op is a module-level
function that accepts either ``Tensor`` operands (recorded) or plain
numpy/scalar operands (treated as constants). When no operand carries a tape
the op degenerates to straight numpy, so evaluation-only code pays no
bookkeeping cost and produces bit-identical values to the recorded forward
pass.

Broadcasting is deliberately restricted: elementwise ops demand identical
shapes and the only broadcast form is a row vector over a matrix
(``broadcast_add_row``). Anything fancier must be spelled out with explicit
ops so the gradient code stays auditable.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class DomainError(ValueError):
    """Operand values lie outside the op's mathematical domain."""


class NonFiniteError(ArithmeticError):
    """A computation produced NaN or Inf, which is an error state here."""


class TapeError(RuntimeError):
    """Tape misuse: mixed tapes, non-scalar backward root, etc."""


class Tensor:
    """Dense float64 array plus an optional handle onto a recording tape."""

    __slots__ = ("array", "tape", "node_id")

    def __init__(self, array: np.ndarray, tape: "Tape | None" = None,
                 node_id: int | None = None):
        self.array = array
        self.tape = tape
        self.node_id = node_id

    # numpy must not silently absorb Tensors into object arrays
    __array_ufunc__ = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def size(self) -> int:
        return self.array.size

    def item(self) -> float:
        return float(self.array)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = f", node {self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.array.shape}{tag})"


class Tape:
    """Ordered record of ops; parents always precede children."""

    def __init__(self):
        self._nodes: list[tuple[tuple[int, ...], tuple | None]] = []
        self._leaves: list[int] = []
        self._leaf_shapes: dict[int, tuple[int, ...]] = {}

    def watch(self, array) -> Tensor:
        """Register a leaf (parameter) and return its tracked Tensor."""
        arr = np.asarray(array, dtype=np.float64)
        nid = len(self._nodes)
        self._nodes.append(((), None))
        self._leaves.append(nid)
        self._leaf_shapes[nid] = arr.shape
        return Tensor(arr, self, nid)

    def _record(self, value: np.ndarray, contribs) -> Tensor:
        nid = len(self._nodes)
        parents = tuple(pid for pid, _ in contribs)
        pulls = tuple(fn for _, fn in contribs)
        for pid in parents:
            if pid >= nid:
                raise TapeError("tape order violated: parent recorded after child")
        self._nodes.append((parents, pulls))
        return Tensor(value, self, nid)

    def __len__(self) -> int:
        return len(self._nodes)


def _value(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.array
    return np.asarray(x, dtype=np.float64)


def _tape(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Tensor) and x.tape is not None:
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise TapeError("operands belong to different tapes")
    return tape


def _contrib(x, pull):
    """Build the (parent_id, pull) entry for a tensor operand, if tracked."""
    if isinstance(x, Tensor) and x.tape is not None:
        return [(x.node_id, pull)]
    return []


def _same_shape(av, bv, op):
    if av.shape != bv.shape:
        raise ShapeMismatchError(f"{op}: shapes {av.shape} and {bv.shape} differ")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    av, bv = _value(a), _value(b)
    _same_shape(av, bv, "add")
    out = av + bv
    tape = _tape(a, b)
    if tape is None:
        return out
    contribs = _contrib(a, lambda adj: adj) + _contrib(b, lambda adj: adj)
    return tape._record(out, contribs)


def sub(a, b):
    av, bv = _value(a), _value(b)
    _same_shape(av, bv, "sub")
    out = av - bv
    tape = _tape(a, b)
    if tape is None:
        return out
    contribs = _contrib(a, lambda adj: adj) + _contrib(b, lambda adj: -adj)
    return tape._record(out, contribs)


def mul(a, b):
    """Elementwise product; same-shape operands only."""
    av, bv = _value(a), _value(b)
    _same_shape(av, bv, "mul")
    out = av * bv
    tape = _tape(a, b)
    if tape is None:
        return out
    contribs = _contrib(a, lambda adj: adj * bv) + _contrib(b, lambda adj: adj * av)
    return tape._record(out, contribs)


def scale(x, c: float):
    """Multiply by a python-float constant (constants carry no gradient)."""
    xv = _value(x)
    c = float(c)
    out = xv * c
    tape = _tape(x)
    if tape is None:
        return out
    return tape._record(out, _contrib(x, lambda adj: adj * c))


def matmul(a, b):
    av, bv = _value(a), _value(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeMismatchError(
            f"matmul: shapes {av.shape} and {bv.shape} are not compatible")
    out = av @ bv
    tape = _tape(a, b)
    if tape is None:
        return out
    contribs = (_contrib(a, lambda adj: adj @ bv.T)
                + _contrib(b, lambda adj: av.T @ adj))
    return tape._record(out, contribs)


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(x):
    xv = _value(x)
    out = np.tanh(xv)
    tape = _tape(x)
    if tape is None:
        return out
    return tape._record(out, _contrib(x, lambda adj: adj * (1.0 - out * out)))


def relu(x):
    xv = _value(x)
    out = np.maximum(xv, 0.0)
    tape = _tape(x)
    if tape is None:
        return out
    mask = xv > 0.0
    return tape._record(out, _contrib(x, lambda adj: adj * mask))


def exp(x):
    xv = _value(x)
    with np.errstate(over="ignore"):
        out = np.exp(xv)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("exp overflowed to Inf")
    tape = _tape(x)
    if tape is None:
        return out
    return tape._record(out, _contrib(x, lambda adj: adj * out))


def log(x):
    xv = _value(x)
    if np.any(xv <= 0.0):
        raise DomainError("log: non-positive input")
    out = np.log(xv)
    tape = _tape(x)
    if tape is None:
        return out
    return tape._record(out, _contrib(x, lambda adj: adj / xv))


def sqrt(x):
    xv = _value(x)
    if np.any(xv <= 0.0):
        raise DomainError("sqrt: non-positive input")
    out = np.sqrt(xv)
    tape = _tape(x)
    if tape is None:
        return out
    return tape._record(out, _contrib(x, lambda adj: adj * (0.5 / out)))


def softplus(x):
    """log(1 + exp(x)), computed without overflow."""
    xv = _value(x)
    out = np.logaddexp(0.0, xv)
    tape = _tape(x)
    if tape is None:
        return out
    sig = 1.0 / (1.0 + np.exp(-xv))
    return tape._record(out, _contrib(x, lambda adj: adj * sig))


def reciprocal(x):
    xv = _value(x)
    if np.any(xv == 0.0):
        raise DomainError("reciprocal: zero input")
    out = 1.0 / xv
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("reciprocal overflowed")
    tape = _tape(x)
    if tape is None:
        return out
    return tape._record(out, _contrib(x, lambda adj: adj * (-out * out)))


def clip(x, lo: float, hi: float):
    """Clamp values to [lo, hi]; gradient passes only inside the interval."""
    xv = _value(x)
    out = np.clip(xv, lo, hi)
    tape = _tape(x)
    if tape is None:
        return out
    mask = (xv >= lo) & (xv <= hi)
    return tape._record(out, _contrib(x, lambda adj: adj * mask))


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum(x, axis: int | None = None):  # noqa: A001 - deliberate name, op surface
    xv = _value(x)
    if axis is None:
        out = np.sum(xv)
        pull = lambda adj: np.broadcast_to(adj, xv.shape).copy()
    elif axis in (0, 1) and xv.ndim == 2:
        out = np.sum(xv, axis=axis, keepdims=True)
        pull = lambda adj: np.broadcast_to(adj, xv.shape).copy()
    else:
        raise ShapeMismatchError(f"sum: axis {axis} invalid for shape {xv.shape}")
    tape = _tape(x)
    if tape is None:
        return out
    return tape._record(out, _contrib(x, pull))


def mean(x, axis: int | None = None):
    xv = _value(x)
    if axis is None:
        n = xv.size
        out = np.mean(xv)
    elif axis in (0, 1) and xv.ndim == 2:
        n = xv.shape[axis]
        out = np.mean(xv, axis=axis, keepdims=True)
    else:
        raise ShapeMismatchError(f"mean: axis {axis} invalid for shape {xv.shape}")
    tape = _tape(x)
    if tape is None:
        return out
    inv = 1.0 / n
    return tape._record(
        out, _contrib(x, lambda adj: np.broadcast_to(adj * inv, xv.shape).copy()))


def broadcast_add_row(mat, row):
    """Add a (1, D) or (D,) row vector to every row of an (N, D) matrix."""
    mv, rv = _value(mat), _value(row)
    if mv.ndim != 2 or rv.shape not in ((mv.shape[1],), (1, mv.shape[1])):
        raise ShapeMismatchError(
            f"broadcast_add_row: shapes {mv.shape} and {rv.shape}")
    out = mv + rv.reshape(1, -1)
    tape = _tape(mat, row)
    if tape is None:
        return out
    contribs = (_contrib(mat, lambda adj: adj)
                + _contrib(row, lambda adj: adj.sum(axis=0).reshape(rv.shape)))
    return tape._record(out, contribs)


def slice_rows(x, start: int, stop: int):
    xv = _value(x)
    if xv.ndim != 2 or not (0 <= start <= stop <= xv.shape[0]):
        raise ShapeMismatchError(
            f"slice_rows: range [{start}:{stop}] invalid for shape {xv.shape}")
    out = xv[start:stop].copy()

    def pull(adj):
        g = np.zeros_like(xv)
        g[start:stop] = adj
        return g

    tape = _tape(x)
    if tape is None:
        return out
    return tape._record(out, _contrib(x, pull))


def concat_cols(*parts):
    """Concatenate 2-D blocks along columns; all blocks share the row count."""
    if not parts:
        raise ShapeMismatchError("concat_cols: no operands")
    vals = [_value(p) for p in parts]
    rows = vals[0].shape[0]
    for v in vals:
        if v.ndim != 2 or v.shape[0] != rows:
            raise ShapeMismatchError(
                f"concat_cols: row counts differ: {[v.shape for v in vals]}")
    out = np.concatenate(vals, axis=1)
    tape = _tape(*parts)
    if tape is None:
        return out
    contribs = []
    offset = 0
    for p, v in zip(parts, vals):
        lo, hi = offset, offset + v.shape[1]
        contribs += _contrib(p, lambda adj, lo=lo, hi=hi: adj[:, lo:hi])
        offset = hi
    return tape._record(out, contribs)


def reshape(x, shape):
    xv = _value(x)
    out = xv.reshape(shape)
    tape = _tape(x)
    if tape is None:
        return out
    return tape._record(out, _contrib(x, lambda adj: adj.reshape(xv.shape)))


def tile_rows(x, times: int):
    """Stack ``times`` vertical copies of an (N, D) matrix, k-major."""
    xv = _value(x)
    if xv.ndim != 2 or times < 1:
        raise ShapeMismatchError(f"tile_rows: shape {xv.shape}, times {times}")
    out = np.tile(xv, (times, 1))
    tape = _tape(x)
    if tape is None:
        return out
    n = xv.shape[0]
    return tape._record(
        out, _contrib(x, lambda adj: adj.reshape(times, n, -1).sum(axis=0)))


# ---------------------------------------------------------------------------
# backward pass


def backward(tape: Tape, root: Tensor) -> dict[int, np.ndarray]:
    """Accumulate d(root)/d(leaf) for every watched leaf on the tape.

    The root must be a scalar (size 1). Leaves that root does not depend on
    map to zero arrays of their own shape. Running backward twice over the
    same tape yields bitwise-identical results.
    """
    if not isinstance(root, Tensor) or root.tape is not tape:
        raise TapeError("backward root does not belong to this tape")
    if root.array.size != 1:
        raise TapeError(f"backward root must be scalar, got shape {root.array.shape}")
    accum: list[np.ndarray | None] = [None] * len(tape._nodes)
    accum[root.node_id] = np.ones_like(root.array)
    for nid in range(root.node_id, -1, -1):
        adj = accum[nid]
        if adj is None:
            continue
        parents, pulls = tape._nodes[nid]
        if not parents:
            continue
        for pid, pull in zip(parents, pulls):
            g = pull(adj)
            if accum[pid] is None:
                accum[pid] = g
            else:
                accum[pid] = accum[pid] + g
    grads = {}
    for leaf in tape._leaves:
        g = accum[leaf]
        if g is None:
            g = np.zeros(tape._leaf_shapes[leaf])
        grads[leaf] = g
    return grads


def assert_finite(x, name: str):
    """Raise NonFiniteError naming the offending quantity; returns x."""
    if not np.all(np.isfinite(_value(x))):
        raise NonFiniteError(f"non-finite values in {name}")
    return x


# ---------------------------------------------------------------------------
# finite differences: first-class utility, reused by the bound certifier


def finite_difference(f, params: dict[str, np.ndarray], step: float = 1e-5
                      ) -> dict[str, np.ndarray]:
    """Central-difference gradient of scalar ``f()`` w.r.t. entries of params.

    ``f`` must read the (mutated in place, then restored) arrays in
    ``params`` on every call.
    """
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat, gf = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f())
            flat[i] = orig - step
            fm = float(f())
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * step)
        grads[name] = g
    return grads


def check_gradients(build, params: dict[str, np.ndarray], step: float = 1e-5,
                    rtol: float = 1e-4, atol: float = 1e-7) -> float:
    """Compare tape gradients of ``build`` against central differences.

    ``build`` maps a dict of operands (Tensors when recording, raw arrays
    when evaluating) to a scalar. Returns the worst error ratio
    ``|analytic - numeric| / (atol + rtol * max(|analytic|, |numeric|))``;
    values <= 1 mean every component is within tolerance.
    """
    tape = Tape()
    tensors = {k: tape.watch(v) for k, v in params.items()}
    root = build(tensors)
    grads = backward(tape, root)
    numeric = finite_difference(lambda: np.asarray(build(params)), params, step)
    worst = 0.0
    for k in params:
        a, n = grads[tensors[k].node_id], numeric[k]
        denom = atol + rtol * np.maximum(np.abs(a), np.abs(n))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
