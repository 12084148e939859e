"""Compare the compiled and pure-Python SMO kernels on random Gram matrices.

Usage: ``python benchmarks/bench_smo.py [--sizes 50 100 200] [--repeats 3]``.
Prints one row per size with the best wall time of each backend and the
maximum difference between their dual solutions.
"""
import argparse
import time

import numpy as np

from mtmkl import _smo_py
from mtmkl.kernelbank import KernelSpec, gram

try:
    from mtmkl import _smo
except ImportError:  # extension not built
    _smo = None


def instance(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 5))
    y = np.where(np.sin(X[:, 0] * 2) + 0.3 * rng.normal(size=n) >= 0, 1.0, -1.0)
    y[:2] = [1.0, -1.0]
    return np.ascontiguousarray(gram(KernelSpec.gaussian(1.0), X)), y


def best_time(fn, K, y, C, repeats):
    best, out = np.inf, None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(K, y, C, 1e-3, 10**7, None, False)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[50, 100, 200, 400])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--C", type=float, default=1.0)
    args = p.parse_args()
    if _smo is None:
        print("compiled backend not built; only the pure-Python kernel is available")
    print(f"{'n':>6} {'python_s':>10} {'cython_s':>10} {'speedup':>8} {'iters':>7} {'max|da|':>9}")
    for n in args.sizes:
        K, y = instance(n, n)
        tp, rp = best_time(_smo_py.smo, K, y, args.C, args.repeats)
        if _smo is None:
            print(f"{n:>6} {tp:>10.4f} {'-':>10} {'-':>8} {rp[2]:>7} {'-':>9}")
            continue
        tc, rc = best_time(_smo.smo, K, y, args.C, args.repeats)
        diff = float(np.max(np.abs(rp[0] - rc[0])))
        print(f"{n:>6} {tp:>10.4f} {tc:>10.4f} {tp / tc:>8.1f} {rc[2]:>7} {diff:>9.1e}")


if __name__ == "__main__":
    main()
