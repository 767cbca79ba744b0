"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py            # default sizes
    python benchmarks/bench_kernels.py --scale 4  # bigger problems

Each kernel is checked for agreement first, then timed over several
repeats; the median is reported.  Numba compile time is excluded by a
warm-up call.
"""
import argparse
import time

import numpy as np

from bundlenet.numcore import _kernels as K
from bundlenet.numcore.sparse import CSRMatrix


def median_time(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return float(np.median(times))


def random_csr(rng, n, avg_deg):
    nnz = n * avg_deg
    rows = rng.integers(n, size=nnz)
    cols = rng.integers(n, size=nnz)
    return CSRMatrix.from_coo((n, n), rows, cols, rng.random(nnz))


def cases(scale, rng):
    n = 2500 * scale
    s = random_csr(rng, n, 20)
    dense = rng.normal(size=(n, 64))
    yield "spmm", (
        lambda: K.spmm_numpy(s.indptr, s.indices, s.data, dense, n),
        lambda: K.spmm_numba(s.indptr, s.indices, s.data, dense, n),
    )
    idx = rng.integers(n, size=40000 * scale)
    grad = rng.normal(size=(idx.size, 128))
    yield "scatter_rows", (
        lambda: K.scatter_rows_numpy(idx, grad, n),
        lambda: K.scatter_rows_numba(idx, grad, n),
    )
    left = rng.normal(size=(300 * scale, 256))
    right = rng.normal(size=(150, 256))
    w2 = rng.normal(size=(256, 1))
    yield "pair_logits", (
        lambda: K.pair_logits_numpy(left, right, w2, 0.1),
        lambda: K.pair_logits_numba(left, right, w2, 0.1),
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=int, default=1)
    ap.add_argument("--repeats", type=int, default=7)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, (ref, fast) in cases(args.scale, rng):
        a, b = ref(), fast()
        if not np.allclose(a, b, rtol=1e-12, atol=1e-12):
            raise SystemExit(f"{name}: backends disagree (max diff {np.abs(a - b).max():.3g})")
        t_np = median_time(ref, args.repeats)
        t_nb = median_time(fast, args.repeats)
        print(f"{name:<14}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
