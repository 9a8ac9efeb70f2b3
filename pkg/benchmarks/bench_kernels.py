"""Compare the compiled and pure-numpy kernel backends.

Usage: python benchmarks/bench_kernels.py [--rows N]

Times the quantizer PMF forward/backward, categorical sampling, and row
entropies on identical inputs and prints the speedup.  The compiled backend
is warmed up first so compilation cost is not counted.
"""

import argparse
import time

import numpy as np

from sqar._kernels import _numpy as knp

try:
    from sqar._kernels import _numba as knb
except ImportError:
    knb = None


def timeit(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=200_000)
    ap.add_argument("--bins", type=int, default=16)
    ap.add_argument("--alpha", type=float, default=4.0)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    m, n, alpha = args.rows, args.bins, args.alpha
    lo = rng.uniform(-2, 0, m)
    hi = lo + rng.uniform(0.5, 2, m)
    v = lo + rng.random(m) * (hi - lo)
    g = rng.normal(size=(m, n))
    probs = knp.sq_pmf_flat(v, lo, hi, n, alpha)
    u = rng.random(m)

    cases = [
        ("sq_pmf_flat", (v, lo, hi, n, alpha)),
        ("sq_pmf_flat_vjp", (v, lo, hi, n, alpha, g)),
        ("categorical_rows", (probs, u)),
        ("entropy_rows", (probs,)),
    ]

    print(f"rows={m} bins={n} alpha={alpha}")
    print(f"{'kernel':<20} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, call_args in cases:
        t_np = timeit(getattr(knp, name), *call_args)
        if knb is None:
            print(f"{name:<20} {t_np*1e3:9.1f}ms {'n/a':>10} {'n/a':>8}")
            continue
        fn = getattr(knb, name)
        fn(*call_args)                       # warm-up / compile
        t_nb = timeit(fn, *call_args)
        print(f"{name:<20} {t_np*1e3:9.1f}ms {t_nb*1e3:9.1f}ms "
              f"{t_np/t_nb:7.1f}x")


if __name__ == "__main__":
    main()
