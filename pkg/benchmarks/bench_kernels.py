"""Time the compiled kernels against the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--rho 2] [--steps 2000] [--repeat 3]

Reports the best wall time per backend for a friction lookup over many
points and for a block of explicit front steps, and checks that both
backends return bitwise-identical results.
"""
from __future__ import annotations

import argparse
import logging
import time

import numpy as np

from depin import kernels
from depin.front_dynamics import FrontState, default_dt, default_dx
from depin.obstacle_field import ObstacleField, ObstacleParams

logger = logging.getLogger("bench_kernels")


def best_time(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_phi(mod, field: ObstacleField, n_points: int, seed: int):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, field.width, n_points)
    y = rng.uniform(0.0, 2.0, n_points)
    tab = field.tables
    return lambda: mod.phi_points(x, y, tab)


def bench_advance(mod, field: ObstacleField, force: float, steps: int):
    dx = default_dx(field.params.rho, field.params.r0)
    st = FrontState.flat(field.width, dx)
    dx = st.dx
    dt = default_dt(dx, 1.0)
    xw = st.node_x(field.width)
    tab = field.tables

    def go():
        u = st.heights.copy()
        v = np.zeros_like(u)
        phi = np.zeros_like(u)
        moved = np.ones(u.size, dtype=np.uint8)
        mod.advance(u, v, phi, xw, dx, dt, force, 0.0, 1.0, steps, tab,
                    tab.y_lo, tab.y_hi, 1e9, 10.0, -1.0, 1, 0, moved)
        return u
    return go


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rho", type=float, default=2.0)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--points", type=int, default=200_000)
    ap.add_argument("--force", type=float, default=0.8)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    if kernels.BACKEND != "cython":
        logger.error("compiled kernels unavailable; build with `pip install -e . --no-build-isolation`")
        return 1
    p = ObstacleParams(rho=args.rho, r0=0.1, r1=0.2, f=2.0, seed=args.seed)
    field = ObstacleField(p, width=24.0 / np.sqrt(args.rho))
    field.ensure_band(-1.0, 3.0)

    cases = [("phi_points", lambda m: bench_phi(m, field, args.points, args.seed)),
             ("advance", lambda m: bench_advance(m, field, args.force, args.steps))]
    logger.info("%-12s %12s %12s %9s  %s", "kernel", "python [s]", "cython [s]", "speedup", "identical")
    for name, make in cases:
        tp, op = best_time(make(kernels.get_backend("python")), args.repeat)
        tc, oc = best_time(make(kernels.get_backend("cython")), args.repeat)
        logger.info("%-12s %12.4f %12.4f %8.1fx  %s", name, tp, tc, tp / tc, np.array_equal(op, oc))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
