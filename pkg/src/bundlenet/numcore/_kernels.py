"""Hot inner loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports cleanly and the environment
variable ``BUNDLENET_NUMBA`` is not set to ``0``.  Both paths are kept
importable so tests and ``benchmarks/bench_kernels.py`` can compare them.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def _env_wants_numba() -> bool:
    return os.environ.get("BUNDLENET_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _env_wants_numba()


def set_backend(name: str) -> None:
    """Select ``"numba"`` or ``"numpy"`` kernels at runtime."""
    global USE_NUMBA
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not importable")
        USE_NUMBA = True
    elif name == "numpy":
        USE_NUMBA = False
    else:
        raise ValueError(f"unknown backend {name!r}")


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------- spmm

def spmm_numpy(indptr, indices, data, dense, n_rows):
    out = np.zeros((n_rows, dense.shape[1]), dtype=np.float64)
    if indices.size == 0:
        return out
    prod = data[:, None] * dense[indices]
    counts = np.diff(indptr)
    nonempty = counts > 0
    out[nonempty] = np.add.reduceat(prod, indptr[:-1][nonempty], axis=0)
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def _spmm_nb(indptr, indices, data, dense, n_rows):
        n_cols = dense.shape[1]
        out = np.zeros((n_rows, n_cols), dtype=np.float64)
        for i in range(n_rows):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                v = data[p]
                for k in range(n_cols):
                    out[i, k] += v * dense[j, k]
        return out


def spmm_numba(indptr, indices, data, dense, n_rows):
    return _spmm_nb(indptr, indices, data, np.ascontiguousarray(dense), n_rows)


def spmm(indptr, indices, data, dense, n_rows):
    if USE_NUMBA:
        return spmm_numba(indptr, indices, data, dense, n_rows)
    return spmm_numpy(indptr, indices, data, dense, n_rows)


# ---------------------------------------------------------------- scatter-add of rows (row-select backward)

def scatter_rows_numpy(index, grad, n_rows):
    out = np.zeros((n_rows, grad.shape[1]), dtype=np.float64)
    np.add.at(out, index, grad)
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def _scatter_rows_nb(index, grad, n_rows):
        n_cols = grad.shape[1]
        out = np.zeros((n_rows, n_cols), dtype=np.float64)
        for p in range(index.shape[0]):
            r = index[p]
            for k in range(n_cols):
                out[r, k] += grad[p, k]
        return out


def scatter_rows_numba(index, grad, n_rows):
    return _scatter_rows_nb(index, np.ascontiguousarray(grad), n_rows)


def scatter_rows(index, grad, n_rows):
    if USE_NUMBA:
        return scatter_rows_numba(index, grad, n_rows)
    return scatter_rows_numpy(index, grad, n_rows)


# ---------------------------------------------------------------- all-pairs two-layer head

def pair_logits_numpy(left, right, w2, b2, chunk=64):
    """relu(left[a] + right[t]) @ w2 + b2 for every (a, t).

    ``left`` and ``right`` are the two halves of the first head layer
    already applied, with the bias folded into ``left``.
    """
    n_left, n_right = left.shape[0], right.shape[0]
    w = w2.reshape(-1)
    logits = np.empty((n_left, n_right), dtype=np.float64)
    for start in range(0, n_left, chunk):
        block = left[start:start + chunk, None, :] + right[None, :, :]
        np.maximum(block, 0.0, out=block)
        logits[start:start + chunk] = block @ w
    logits += b2
    return logits


if HAVE_NUMBA:

    # fastmath lets the relu-dot loop vectorize; it only reorders the sum
    @njit(cache=True, fastmath=True)
    def _pair_logits_nb(left, right, w, b2):
        n_left, n_right, width = left.shape[0], right.shape[0], left.shape[1]
        out = np.empty((n_left, n_right), dtype=np.float64)
        for a in range(n_left):
            for t in range(n_right):
                s = 0.0
                for k in range(width):
                    s += max(left[a, k] + right[t, k], 0.0) * w[k]
                out[a, t] = s + b2
        return out


def pair_logits_numba(left, right, w2, b2):
    return _pair_logits_nb(
        np.ascontiguousarray(left), np.ascontiguousarray(right),
        np.ascontiguousarray(w2.reshape(-1)), float(b2),
    )


def pair_logits(left, right, w2, b2):
    if USE_NUMBA:
        return pair_logits_numba(left, right, w2, b2)
    return pair_logits_numpy(left, right, w2, float(b2))
