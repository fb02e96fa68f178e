"""Compare the compiled grid kernels with the numpy fallback.

Times ``scatter_multilinear`` and ``interp_multilinear`` on random point
clouds, then an end-to-end stencil assembly under each backend (the
fallback is forced with ``ANISOFRAC_PURE=1`` in a subprocess).

Usage::

    python benchmarks/bench_accel.py [--points 200000] [--repeat 5]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from anisofrac import _accel_py

try:
    from anisofrac import _accel
except ImportError:
    _accel = None

ASSEMBLE = (
    "import time; from anisofrac.aniso_geometry import Anisotropy; "
    "from anisofrac.kernels import KernelSpec; from anisofrac.dirichlet_solver import assemble; "
    "from anisofrac._backend import BACKEND; k = KernelSpec(Anisotropy((1, 2), 0.5)); "
    "t = time.perf_counter(); assemble(1.0, {N}, 0.0, k); "
    "print(BACKEND, time.perf_counter() - t)"
)


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_rows(points, repeat):
    rng = np.random.default_rng(0)
    rows = []
    for n, side in [(1, 4096), (2, 256), (3, 48)]:
        shape = np.full(n, side, dtype=np.intp)
        pts = np.ascontiguousarray(rng.uniform(0, side - 1, (points, n)))
        w = np.ascontiguousarray(rng.random(points))
        vals = np.ascontiguousarray(rng.normal(size=int(np.prod(shape))))
        for name in ("scatter", "interp"):
            def run(mod):
                if name == "scatter":
                    out = np.zeros(int(np.prod(shape)))
                    return lambda: mod.scatter_multilinear(pts, w, out, shape)
                return lambda: mod.interp_multilinear(vals, shape, pts)

            tp = best(run(_accel_py), repeat)
            tc = best(run(_accel), repeat) if _accel is not None else float("nan")
            rows.append((f"{name} n={n}", tp, tc))
    return rows


def assemble_rows(N):
    rows = {}
    for pure in ("1", "0"):
        env = dict(os.environ, ANISOFRAC_PURE=pure)
        out = subprocess.run([sys.executable, "-c", ASSEMBLE.format(N=N)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        rows[out[0]] = float(out[1])
    return [(f"assemble N={N} (1,2)", rows.get("python", float("nan")),
             rows.get("cython", float("nan")))]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--points", type=int, default=200_000)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--N", type=int, default=64, help="grid size for the assembly timing")
    args = p.parse_args(argv)
    if _accel is None:
        print("compiled extension not built; only the fallback is timed")
    rows = kernel_rows(args.points, args.repeat) + assemble_rows(args.N)
    print(f"{'case':<24}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}")
    for name, tp, tc in rows:
        print(f"{name:<24}{tp:12.4f}{tc:12.4f}{tp / tc:10.1f}")


if __name__ == "__main__":
    main()
