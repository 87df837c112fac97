"""Time the compiled and pure-Python flow right-hand sides.

Run ``python3 benchmarks/bench_rhs.py [--repeat R]``.  Prints one line per
grid with the best-of-R wall time per evaluation for each backend, the
speed-up of the compiled kernel and the largest difference between the two
results.  The DeTurck term is taken against a non-constant background so
the kernel exercises its full path.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from rsl import kernels
from rsl.curvature import christoffel
from rsl.grid import GridSpec, MetricField, band_limited_perturbation, coerce_metric

CASES = [(2, 32, 2), (2, 64, 2), (2, 64, 6), (3, 16, 2), (3, 24, 6)]


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"compiled kernel available: {kernels.BACKEND == 'cython'}")
    print(f"{'dim':>3} {'N':>4} {'order':>5} {'python ms':>10} {'cython ms':>10} {'speed-up':>8} {'max diff':>10}")
    for dim, n, order in CASES:
        grid = GridSpec(dim, n, 2 * np.pi, order)
        g = MetricField.flat(grid) + band_limited_perturbation(grid, 0, 2, 1e-2)
        g0 = coerce_metric(MetricField.flat(grid) + band_limited_perturbation(grid, 1, 2, 1e-2))
        gam0 = christoffel(g0)
        py = kernels.flow_rhs(g.data, grid, gam0, True, backend="python")
        t_py = _best(lambda: kernels.flow_rhs(g.data, grid, gam0, True, backend="python"), args.repeat)
        if kernels.BACKEND == "cython":
            cy = kernels.flow_rhs(g.data, grid, gam0, True, backend="cython")
            t_cy = _best(lambda: kernels.flow_rhs(g.data, grid, gam0, True, backend="cython"), args.repeat)
            diff = float(np.max(np.abs(cy - py)))
            print(f"{dim:>3} {n:>4} {order:>5} {1e3 * t_py:>10.2f} {1e3 * t_cy:>10.2f} "
                  f"{t_py / t_cy:>8.1f} {diff:>10.1e}")
        else:
            print(f"{dim:>3} {n:>4} {order:>5} {1e3 * t_py:>10.2f} {'-':>10} {'-':>8} {'-':>10}")


if __name__ == "__main__":
    main()
