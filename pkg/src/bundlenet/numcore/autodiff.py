"""Tape-based reverse-mode differentiation over 2-D float64 arrays.

Every value is a 2-D array; scalars are ``(1, 1)``.  A :class:`Tape` records
each differentiable operation as it executes and :meth:`Tape.backward`
replays the records in reverse order, accumulating gradients additively.

    tape = Tape()
    w = tape.param("w", np.zeros((3, 2)))
    loss = total(sigmoid(w))
    tape.backward(loss)["w"]        # 0.25 everywhere
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from bundlenet.errors import ContractError, ShapeError
from bundlenet.numcore import _kernels
from bundlenet.numcore.sparse import CSRMatrix


class Var:
    """A node in the compute graph: a value plus its tape bookkeeping."""

    __slots__ = ("value", "tape", "requires_grad", "name")

    def __init__(self, value, tape: "Tape | None", requires_grad=False, name=None):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Var{tag}(shape={self.value.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed operations.

    ``enabled=False`` gives an inference tape that records nothing; ops then
    behave as plain numpy functions.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.records: list[tuple[Var, tuple[Var, ...], Callable]] = []
        self.params: dict[str, Var] = {}

    def param(self, name: str, value) -> Var:
        value = _as_matrix(value)
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        var = Var(value, self, requires_grad=self.enabled, name=name)
        self.params[name] = var
        return var

    def const(self, value) -> Var:
        return Var(_as_matrix(value), self)

    def record(self, out: Var, inputs: tuple[Var, ...], backward_fn: Callable) -> None:
        self.records.append((out, inputs, backward_fn))

    def backward(self, loss: Var, retain: bool = False) -> dict[str, np.ndarray]:
        """Gradient of a scalar ``loss`` with respect to every registered parameter.

        Records are consumed as they are replayed unless ``retain`` is set,
        which frees intermediates early and breaks the Var/Tape reference
        cycles that would otherwise wait for the cyclic collector.
        """
        if loss.value.shape != (1, 1):
            raise ContractError(f"backward needs a (1, 1) scalar loss, got shape {loss.value.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        records = list(self.records) if retain else self.records
        if not retain:
            self.records = []
        while records:
            out, inputs, backward_fn = records.pop()
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for var, gi in zip(inputs, backward_fn(g)):
                if gi is None or not var.requires_grad:
                    continue
                key = id(var)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return {
            name: grads.get(id(var), np.zeros_like(var.value))
            for name, var in self.params.items()
        }


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {arr.shape}")
    return arr


def _tape_of(*xs) -> "Tape | None":
    for x in xs:
        if isinstance(x, Var) and x.tape is not None:
            return x.tape
    return None


def _lift(x, tape) -> Var:
    if isinstance(x, Var):
        return x
    return Var(_as_matrix(x), tape)


def _emit(value, inputs: Sequence[Var], backward_fn) -> Var:
    tape = _tape_of(*inputs)
    needs = tape is not None and tape.enabled and any(v.requires_grad for v in inputs)
    out = Var(value, tape, requires_grad=needs)
    if needs:
        tape.record(out, tuple(inputs), backward_fn)
    return out


# ---------------------------------------------------------------- products

def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def spmm(s: CSRMatrix, d) -> Var:
    """Sparse @ dense.  The sparse operand is structure, so only ``d`` gets a gradient."""
    d = _lift(d, _tape_of(d))
    if s.shape[1] != d.shape[0]:
        raise ShapeError(f"spmm: sparse {s.shape} x dense {d.shape}")
    value = _kernels.spmm(s.indptr, s.indices, s.data, d.value, s.shape[0])
    return _emit(value, (d,), lambda g: (s.transpose().dot(g),))


# ---------------------------------------------------------------- elementwise

def relu(x) -> Var:
    x = _lift(x, _tape_of(x))
    mask = x.value > 0
    return _emit(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def _stable_sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x) -> Var:
    x = _lift(x, _tape_of(x))
    s = _stable_sigmoid(x.value)
    return _emit(s, (x,), lambda g: (g * s * (1.0 - s),))


def softplus(x) -> Var:
    """ln(1 + e^x); ``softplus(-d)`` is the BPR term ``-ln sigmoid(d)``."""
    x = _lift(x, _tape_of(x))
    value = np.logaddexp(0.0, x.value)
    s = _stable_sigmoid(x.value)
    return _emit(value, (x,), lambda g: (g * s,))


def add(a, b) -> Var:
    """Elementwise sum; ``b`` may also be a ``(1, cols)`` row added to every row."""
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.shape == b.shape:
        return _emit(a.value + b.value, (a, b), lambda g: (g, g))
    if b.shape == (1, a.shape[1]):
        return _emit(a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ShapeError(f"add: {a.shape} + {b.shape}")


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.shape != b.shape:
        raise ShapeError(f"sub: {a.shape} - {b.shape}")
    return _emit(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} * {b.shape}")
    av, bv = a.value, b.value
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(x, c: float) -> Var:
    x = _lift(x, _tape_of(x))
    c = float(c)
    return _emit(x.value * c, (x,), lambda g: (g * c,))


# ---------------------------------------------------------------- structural

def concat_cols(xs: Sequence) -> Var:
    tape = _tape_of(*xs)
    xs = [_lift(x, tape) for x in xs]
    n = xs[0].shape[0]
    for x in xs:
        if x.shape[0] != n:
            raise ShapeError(f"concat_cols: row counts {[x.shape[0] for x in xs]}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])

    def backward(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(xs)))

    return _emit(np.concatenate([x.value for x in xs], axis=1), xs, backward)


def row_select(x, index) -> Var:
    x = _lift(x, _tape_of(x))
    index = np.asarray(index, dtype=np.int64)
    n_rows = x.shape[0]
    if index.ndim != 1 or (index.size and (index.min() < 0 or index.max() >= n_rows)):
        raise ShapeError(f"row_select: index out of range for {n_rows} rows")
    return _emit(x.value[index], (x,), lambda g: (_kernels.scatter_rows(index, g, n_rows),))


# ---------------------------------------------------------------- reductions

def total(x) -> Var:
    x = _lift(x, _tape_of(x))
    shape = x.shape
    return _emit(np.array([[x.value.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),))


def mean(x) -> Var:
    x = _lift(x, _tape_of(x))
    shape, n = x.shape, x.value.size
    return _emit(np.array([[x.value.mean()]]), (x,), lambda g: (np.full(shape, g[0, 0] / n),))


def sum_squares(x) -> Var:
    x = _lift(x, _tape_of(x))
    xv = x.value
    return _emit(np.array([[np.dot(xv.ravel(), xv.ravel())]]), (x,), lambda g: (2.0 * g[0, 0] * xv,))
