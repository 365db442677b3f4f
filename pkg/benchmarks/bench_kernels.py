"""Timing comparison of the monomial-table kernels: compiled core vs numpy.

Usage: python benchmarks/bench_kernels.py [--points N] [--repeat R]

Times monomial_values / monomial_tables for a few (d, p) pairs on N random
points and reports the best of R runs per backend, plus an end-to-end DG
assembly timing through each backend (subprocess, so the import-time backend
selection applies).
"""

from __future__ import annotations

import argparse
import subprocess
import sys
import time
import timeit

import numpy as np

from qtdg._kernels import _py
from qtdg.multiindex import monomial_links

try:
    from qtdg._kernels import _core
except ImportError:
    _core = None


def _links(d, p):
    parent, axis, down, kval = monomial_links(d, p)
    return (
        np.asarray(parent, dtype=np.int64),
        np.asarray(axis, dtype=np.int64),
        np.asarray(down, dtype=np.int64),
        np.asarray(kval, dtype=np.float64),
    )


def bench_tables(n_points, repeat):
    rng = np.random.default_rng(0)
    print(f"{'case':16s} {'numpy':>12s} {'cython':>12s} {'speedup':>9s}")
    for d, p in ((2, 2), (2, 3), (2, 5), (3, 4)):
        pts = np.ascontiguousarray(rng.uniform(-1, 1, size=(n_points, d)))
        parent, axis, down, kval = _links(d, p)
        t_py = min(
            timeit.repeat(
                lambda: _py.monomial_tables(pts, parent, axis, down, kval),
                number=1,
                repeat=repeat,
            )
        )
        if _core is None:
            print(f"d={d} p={p:<10d} {t_py * 1e3:10.3f}ms {'-':>12s} {'-':>9s}")
            continue
        t_c = min(
            timeit.repeat(
                lambda: _core.monomial_tables(pts, parent, axis, down, kval),
                number=1,
                repeat=repeat,
            )
        )
        print(
            f"d={d} p={p:<10d} {t_py * 1e3:10.3f}ms {t_c * 1e3:10.3f}ms "
            f"{t_py / t_c:8.2f}x"
        )


ASSEMBLY_SNIPPET = """
import time
from qtdg import _kernels
from qtdg.dgsolver import BvpConfig, build_space, assemble
from qtdg.mesh2d import unit_square_tri

bvp = BvpConfig("1 + x1 + x2", beta=["sin(x1)", "sin(x2)"],
                sigma="4 / (1 + x1 + x2)", exact="sin(pi * (x1 + x2))",
                k_min=1.0)
mesh = unit_square_tri({n})
space = build_space(mesh, bvp, {p})
t0 = time.time()
assemble(space, bvp)
print(f"{{_kernels.BACKEND}} assemble n={n} p={p}: {{time.time() - t0:.3f}}s")
"""


def bench_assembly(n, p):
    for env in ({}, {"QTDG_PURE_PYTHON": "1"}):
        out = subprocess.run(
            [sys.executable, "-c", ASSEMBLY_SNIPPET.format(n=n, p=p)],
            capture_output=True,
            text=True,
            env={**env, "PATH": "/usr/bin:/bin"},
        )
        sys.stdout.write(out.stdout or out.stderr)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=200000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--mesh-n", type=int, default=32)
    ap.add_argument("--degree", type=int, default=3)
    args = ap.parse_args()
    if _core is None:
        print("compiled core not available; timing the numpy backend only")
    t0 = time.time()
    bench_tables(args.points, args.repeat)
    bench_assembly(args.mesh_n, args.degree)
    print(f"total {time.time() - t0:.1f}s")


if __name__ == "__main__":
    main()
