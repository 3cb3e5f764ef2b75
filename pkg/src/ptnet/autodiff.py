"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every primitive computes its forward value eagerly and appends one node to a
:class:`Tape`: the parent node indices plus a closure mapping the output
cotangent to parent cotangents. Nodes are appended in execution order, so the
tape is topologically sorted and :meth:`Tape.backward` is a single reverse
sweep.

Elementwise ops require identical operand shapes when both are ``Var``;
constants may be scalars or match the ``Var`` shape. ``matvec`` and
``vecadd`` accept a leading batch axis.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

CHECKPOINT_FORMAT = "ptnet-params"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@dataclass
class Parameter:
    name: str
    values: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)


class Var:
    __slots__ = ("value", "tape", "index")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var({self.value!r})"

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)


class Tape:
    """Append-only record of primitive applications."""

    def __init__(self):
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list[Callable | None] = []
        self._shapes: list[tuple[int, ...]] = []
        self._params: dict[int, Parameter] = {}
        self._param_vars: dict[int, Var] = {}
        self._done = False
        # smallest observed distance of a clamp/kink input from its breakpoint
        self.kink_margin = math.inf

    def __len__(self) -> int:
        return len(self._parents)

    def _record(self, value, parents: tuple[int, ...], vjp: Callable | None) -> Var:
        if self._done:
            raise RuntimeError("tape already differentiated; start a new tape")
        self._parents.append(parents)
        self._vjps.append(vjp)
        self._shapes.append(np.shape(value))
        return Var(value, self, len(self._parents) - 1)

    def leaf(self, value) -> Var:
        """An input that gradients should flow to but is not a Parameter."""
        return self._record(np.array(value, dtype=float), (), None)

    def param(self, p: Parameter) -> Var:
        key = id(p)
        if key not in self._param_vars:
            v = self._record(p.values, (), None)
            self._params[v.index] = p
            self._param_vars[key] = v
        return self._param_vars[key]

    def backward(self, output: Var, leaves: Sequence[Var] = ()) -> list[np.ndarray]:
        """Accumulate d(output)/d(param) into every reachable Parameter.

        Returns the gradients of the requested ``leaves`` (zeros if unreachable).
        """
        if output.tape is not self:
            raise ValueError("output was recorded on a different tape")
        if np.shape(output.value) not in ((), (1,)):
            raise ShapeError(f"backward needs a scalar output, got shape {np.shape(output.value)}")
        if self._done:
            raise RuntimeError("backward already called on this tape")
        self._done = True
        grads: list = [None] * len(self._parents)
        grads[output.index] = np.ones(np.shape(output.value))
        for i in range(output.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            vjp = self._vjps[i]
            if vjp is None:
                continue
            parents = self._parents[i]
            contribs = vjp(g)
            for j, c in zip(parents, contribs):
                if c is None:
                    continue
                if grads[j] is None:
                    grads[j] = c
                else:
                    grads[j] = grads[j] + c
        for idx, p in self._params.items():
            if grads[idx] is not None:
                p.grad = p.grad + np.asarray(grads[idx]).reshape(p.shape)
        return [np.zeros(self._shapes[v.index]) if grads[v.index] is None
                else np.asarray(grads[v.index]) for v in leaves]


# ---------------------------------------------------------------------------
# helpers


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _check(op: str, value) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite value produced by '{op}'")
    return value


def _binary_shapes(op: str, a, b):
    va, vb = _val(a), _val(b)
    if isinstance(a, Var) and isinstance(b, Var):
        if va.shape != vb.shape:
            raise ShapeError(f"{op}: shape mismatch {va.shape} vs {vb.shape}")
    else:
        var, const = (va, vb) if isinstance(a, Var) else (vb, va)
        if const.shape not in ((), var.shape):
            raise ShapeError(f"{op}: constant of shape {const.shape} against {var.shape}")
    return va, vb


def _record(op: str, value, operands: Sequence, vjps: Sequence[Callable]) -> Var:
    """Record a node whose Var operands get cotangents from ``vjps``."""
    tape = _tape_of(*operands)
    value = _check(op, value)
    idx = [i for i, x in enumerate(operands) if isinstance(x, Var)]
    parents = tuple(operands[i].index for i in idx)
    fns = [vjps[i] for i in idx]

    def vjp(g):
        return [f(g) for f in fns]

    return tape._record(value, parents, vjp)


def _unary(op: str, x: Var, value, dfdx: Callable[[], np.ndarray]) -> Var:
    value = _check(op, value)
    return x.tape._record(value, (x.index,), lambda g: [g * dfdx()])


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Var:
    va, vb = _binary_shapes("add", a, b)
    return _record("add", va + vb, (a, b),
                   (lambda g: g, lambda g: g))


def sub(a, b) -> Var:
    va, vb = _binary_shapes("sub", a, b)
    return _record("sub", va - vb, (a, b),
                   (lambda g: g, lambda g: -g))


def mul(a, b) -> Var:
    va, vb = _binary_shapes("mul", a, b)
    return _record("mul", va * vb, (a, b),
                   (lambda g: g * vb, lambda g: g * va))


def div(a, b) -> Var:
    va, vb = _binary_shapes("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = va / vb
    return _record("div", out, (a, b),
                   (lambda g: g / vb, lambda g: -g * va / vb ** 2))


def neg(x: Var) -> Var:
    return x.tape._record(-x.value, (x.index,), lambda g: [-g])


def sin(x: Var) -> Var:
    return _unary("sin", x, np.sin(x.value), lambda: np.cos(x.value))


def cos(x: Var) -> Var:
    return _unary("cos", x, np.cos(x.value), lambda: -np.sin(x.value))


def tanh(x: Var) -> Var:
    y = np.tanh(x.value)
    return _unary("tanh", x, y, lambda: 1.0 - y ** 2)


def exp(x: Var) -> Var:
    with np.errstate(over="ignore"):
        y = np.exp(x.value)
    return _unary("exp", x, y, lambda: y)


def log(x: Var) -> Var:
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x.value)
    return _unary("log", x, y, lambda: 1.0 / x.value)


def sqrt(x: Var) -> Var:
    with np.errstate(invalid="ignore"):
        y = np.sqrt(x.value)
    return _unary("sqrt", x, y, lambda: 0.5 / y)


def square(x: Var) -> Var:
    return _unary("square", x, x.value ** 2, lambda: 2.0 * x.value)


def _note_kink(x: Var, c) -> None:
    if x.value.size:
        x.tape.kink_margin = min(x.tape.kink_margin, float(np.min(np.abs(x.value - c))))


def min_const(x: Var, c: float) -> Var:
    """min(x, c); the gradient passes when x <= c (boundary counts as interior)."""
    _note_kink(x, c)
    keep = x.value <= c
    return _unary("min_const", x, np.where(keep, x.value, c), lambda: keep.astype(float))


def max_const(x: Var, c: float) -> Var:
    """max(x, c); the gradient passes when x >= c (boundary counts as interior)."""
    _note_kink(x, c)
    keep = x.value >= c
    return _unary("max_const", x, np.where(keep, x.value, c), lambda: keep.astype(float))


def clamp(x: Var, lo: float, hi: float) -> Var:
    return min_const(max_const(x, lo), hi)


def abs(x: Var) -> Var:  # noqa: A001 - mirrors the primitive's name
    _note_kink(x, 0.0)
    return _unary("abs", x, np.abs(x.value), lambda: np.where(x.value >= 0, 1.0, -1.0))


def relu(x: Var) -> Var:
    _note_kink(x, 0.0)
    keep = x.value > 0
    return _unary("relu", x, np.where(keep, x.value, 0.0), lambda: keep.astype(float))


def smooth_l1(x: Var, beta: float = 1.0) -> Var:
    """Elementwise Huber-style smooth L1 with transition point ``beta``."""
    ax = np.abs(x.value)
    small = ax < beta
    y = np.where(small, 0.5 * x.value ** 2 / beta, ax - 0.5 * beta)
    return _unary("smooth_l1", x, y,
                  lambda: np.where(small, x.value / beta, np.sign(x.value)))


def where(mask, a, b) -> Var:
    """Select ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    mask = np.asarray(mask, dtype=bool)
    va, vb = _binary_shapes("where", a, b)
    return _record("where", np.where(mask, va, vb), (a, b),
                   (lambda g: np.where(mask, g, 0.0), lambda g: np.where(mask, 0.0, g)))


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matvec(W, x) -> Var:
    """``W @ x`` for x of shape (n,) or row-batched ``x @ W.T`` for (B, n)."""
    vW, vx = _val(W), _val(x)
    if vW.ndim != 2 or vx.shape[-1] != vW.shape[1] or vx.ndim not in (1, 2):
        raise ShapeError(f"matvec: {vW.shape} with {vx.shape}")
    if vx.ndim == 1:
        out = vW @ vx
        dW = lambda g: np.outer(g, vx)
    else:
        out = vx @ vW.T
        dW = lambda g: g.T @ vx
    return _record("matvec", out, (W, x), (dW, lambda g: g @ vW))


def vecadd(x, b) -> Var:
    """Add vector ``b`` (n,) to x of shape (n,) or to every row of (B, n)."""
    vx, vb = _val(x), _val(b)
    if vb.ndim != 1 or vx.shape[-1] != vb.shape[0]:
        raise ShapeError(f"vecadd: {vx.shape} with {vb.shape}")
    db = (lambda g: g) if vx.ndim == 1 else (lambda g: g.sum(axis=0))
    return _record("vecadd", vx + vb, (x, b), (lambda g: g, db))


def softmax(x: Var) -> Var:
    """Softmax over the last axis."""
    z = x.value - np.max(x.value, axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return x.tape._record(_check("softmax", y), (x.index,),
                          lambda g: [y * (g - np.sum(g * y, axis=-1, keepdims=True))])


def log_softmax(x: Var) -> Var:
    """Log-softmax over the last axis."""
    z = x.value - np.max(x.value, axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return x.tape._record(_check("log_softmax", y), (x.index,),
                          lambda g: [g - p * np.sum(g, axis=-1, keepdims=True)])


def sum_reduce(x: Var, axis=None) -> Var:
    shape = x.value.shape
    y = np.sum(x.value, axis=axis)

    def vjp(g):
        if axis is None:
            return [np.full(shape, float(g))]
        return [np.broadcast_to(np.expand_dims(g, axis), shape).copy()]

    return x.tape._record(_check("sum", y), (x.index,), vjp)


def mean_reduce(x: Var, axis=None) -> Var:
    n = x.value.size if axis is None else x.value.shape[axis]
    return mul(sum_reduce(x, axis), 1.0 / n)


# ---------------------------------------------------------------------------
# structural ops


def concat(xs: Sequence, axis: int = -1) -> Var:
    vals = [_val(x) for x in xs]
    y = np.concatenate(vals, axis=axis)
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        parts = np.split(g, sizes, axis=axis)
        return [p for p, x in zip(parts, xs) if isinstance(x, Var)]

    tape = _tape_of(*xs)
    parents = tuple(x.index for x in xs if isinstance(x, Var))
    return tape._record(y, parents, vjp)


def stack(xs: Sequence, axis: int = 0) -> Var:
    """Stack Vars (and constants) along a new axis."""
    y = np.stack([_val(x) for x in xs], axis=axis)
    live = [i for i, x in enumerate(xs) if isinstance(x, Var)]

    def vjp(g):
        return [np.take(g, i, axis=axis) for i in live]

    return _tape_of(*xs)._record(y, tuple(xs[i].index for i in live), vjp)


def reshape(x: Var, shape) -> Var:
    old = x.value.shape
    return x.tape._record(x.value.reshape(shape), (x.index,), lambda g: [g.reshape(old)])


def take(x: Var, idx) -> Var:
    """Gather rows ``x[idx]`` along axis 0 (rows may repeat)."""
    idx = np.asarray(idx, dtype=int)
    shape = x.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return [out]

    return x.tape._record(x.value[idx], (x.index,), vjp)


def column(x: Var, k: int) -> Var:
    """``x[:, k]`` of a 2-D Var."""
    shape = x.value.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, k] = g
        return [out]

    return x.tape._record(x.value[:, k].copy(), (x.index,), vjp)


def segment_sum(x: Var, segment_ids, num_segments: int, canonical: bool = False) -> Var:
    """Sum rows of ``x`` that share a segment id.

    With ``canonical`` each segment's rows are added in lexicographic order of
    their values, so the result is bit-identical under any row permutation.
    """
    seg = np.asarray(segment_ids, dtype=int)
    v = x.value
    out = np.zeros((num_segments,) + v.shape[1:])
    if canonical:
        for s in range(num_segments):
            rows = v[seg == s]
            if len(rows):
                flat = rows.reshape(len(rows), -1)
                order = np.lexsort(flat.T[::-1])
                acc = np.zeros(rows.shape[1:])
                for r in rows[order]:
                    acc = acc + r
                out[s] = acc
    else:
        np.add.at(out, seg, v)
    return x.tape._record(_check("segment_sum", out), (x.index,), lambda g: [g[seg]])


def segment_mean(x: Var, segment_ids, num_segments: int, canonical: bool = False) -> Var:
    seg = np.asarray(segment_ids, dtype=int)
    counts = np.bincount(seg, minlength=num_segments).astype(float)
    if np.any(counts == 0):
        raise ShapeError("segment_mean: empty segment")
    total = segment_sum(x, seg, num_segments, canonical)
    inv = (1.0 / counts).reshape((-1,) + (1,) * (x.value.ndim - 1))
    return mul(total, np.broadcast_to(inv, total.value.shape))


def segment_log_softmax(x: Var, segment_ids, num_segments: int) -> Var:
    """Log-softmax of a 1-D Var within each segment."""
    seg = np.asarray(segment_ids, dtype=int)
    v = x.value
    m = np.full(num_segments, -np.inf)
    np.maximum.at(m, seg, v)
    z = v - m[seg]
    s = np.zeros(num_segments)
    np.add.at(s, seg, np.exp(z))
    y = z - np.log(s)[seg]
    p = np.exp(y)

    def vjp(g):
        gs = np.zeros(num_segments)
        np.add.at(gs, seg, g)
        return [g - p * gs[seg]]

    return x.tape._record(_check("segment_log_softmax", y), (x.index,), vjp)


# ---------------------------------------------------------------------------
# parameter checkpoints


def save_parameters(path, params: Iterable[Parameter], meta: dict | None = None) -> None:
    """Write parameters as JSON: name -> {shape, values (flat, row-major)}.

    Floats are written with ``repr`` precision so a reload is bit-exact.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": {p.name: {"shape": list(p.shape),
                            "values": [float(v) for v in p.values.ravel()]}
                   for p in params},
    }
    Path(path).write_text(json.dumps(doc))


def load_parameters(path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a parameter checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    arrays = {name: np.array(entry["values"], dtype=float).reshape(entry["shape"])
              for name, entry in doc["params"].items()}
    return arrays, doc.get("meta", {})
