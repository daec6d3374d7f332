#!/usr/bin/env python3
"""Compare the numba and numpy paths of the energy/gradient kernel.

Times ``weighted_energy`` on random Hessian fields of the sizes the solver
sees (nodes of an n x n grid) and one full smoothed objective evaluation.

    python benchmarks/bench_kernels.py [--sizes 64 128 256] [--repeat 20]
"""

import argparse
import os
import time

import numpy as np

from airyrelax import _kernels
from airyrelax.airy import BoundaryCurve, BoundaryLoad, boundary_data_from_traction
from airyrelax.grid import Grid2D
from airyrelax.solver import DiscreteProblem


def best_of(fun, repeat):
    fun()  # warm-up, includes the jit compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fun()
        times.append(time.perf_counter() - t0)
    return min(times)


def with_path(disabled, fun):
    old = os.environ.get("AIRYRELAX_DISABLE_NUMBA")
    os.environ["AIRYRELAX_DISABLE_NUMBA"] = "1" if disabled else "0"
    try:
        return fun()
    finally:
        if old is None:
            del os.environ["AIRYRELAX_DISABLE_NUMBA"]
        else:
            os.environ["AIRYRELAX_DISABLE_NUMBA"] = old


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        print("numba is not installed; only the numpy path is available")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<12}{'n':>6}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}{'max rel diff':>15}")
    for n in args.sizes:
        m = (n + 1) ** 2
        a, b, d = 3.0 * rng.standard_normal((3, m))
        w = np.full(m, 1.0 / m)
        for mode, lam in ((_kernels.MODE_FINITE, 100.0), (_kernels.MODE_LIMIT, None)):
            call = lambda: _kernels.weighted_energy(a, b, d, w, lam, 1e-3, mode)  # noqa: E731
            t_np = with_path(True, lambda: best_of(call, args.repeat))
            t_nb = with_path(False, lambda: best_of(call, args.repeat))
            r_np, r_nb = with_path(True, call), with_path(False, call)
            diff = max(abs(r_np[0] - r_nb[0]) / abs(r_np[0]), *(np.abs(x - y).max() / np.abs(x).max() for x, y in zip(r_np[1:], r_nb[1:])))
            name = "finite" if mode == _kernels.MODE_FINITE else "limit"
            print(f"{name:<12}{n:>6}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.2f}{diff:>15.2e}")
        g = Grid2D.rectangle(n)
        load = BoundaryLoad.point_loads([[0, 0], [0.5, 0], [1, 0]], [[0, 1], [0, -2], [0, 1]])
        data = boundary_data_from_traction(load, BoundaryCurve.rectangle(g), project_affine=False)
        prob = DiscreteProblem(g, data, "finite", 100.0)
        z = prob.extension() + 0.01 * rng.standard_normal(prob.n_free)
        call = lambda: prob.smooth(z, 1e-3)  # noqa: E731
        t_np = with_path(True, lambda: best_of(call, args.repeat))
        t_nb = with_path(False, lambda: best_of(call, args.repeat))
        print(f"{'objective':<12}{n:>6}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.2f}{'':>15}")


if __name__ == "__main__":
    main()
