"""Time the numba and numpy versions of the hot kernels and check they agree.

    python benchmarks/bench_kernels.py [--n 200] [--repeat 3] [--forward]

``--forward`` additionally times a small forward solve in two subprocesses,
one with ``RRTE_DISABLE_NUMBA=1``.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from rrte import kernels
from rrte.eikonal import MetricField, eikonal_grid, layered_metric, solve_eikonal
from rrte.grid import Domain2D


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def fmm_case(n):
    dom = Domain2D()
    grid = eikonal_grid(dom, 2.1 / n)
    metric = MetricField.from_function(grid, layered_metric)
    X, Y = grid.mesh()
    r = np.hypot(X, Y)
    known = r <= 3 * grid.h + 1e-12
    slow = metric.refractive_index()
    base, bx, by = r, np.where(r > 0, X / np.where(r > 0, r, 1), 0), np.where(r > 0, Y / np.where(r > 0, r, 1), 0)
    t0 = np.zeros_like(r)
    args = (slow, grid.h, grid.h_y, t0, known, base, bx, by)
    return grid, metric, args


def bench(n, repeat):
    rows = []
    grid, metric, args = fmm_case(n)
    kernels.fmm_numba(*args)  # compile
    tn, a = best_of(lambda: kernels.fmm_numba(*args), repeat)
    tp, b = best_of(lambda: kernels.fmm_python(*args), max(1, repeat // 2))
    rows.append(("fast_march", grid.shape, tn, tp, float(np.max(np.abs(a - b)))))

    tt = solve_eikonal(metric, (0.1, 0.0), Domain2D())
    gx, gy = tt.tau_x.values, tt.tau_y.values
    rng = np.random.default_rng(0)
    targets = np.column_stack([rng.uniform(-0.5, 0.5, 200), rng.uniform(1.0, 2.0, 200)])
    step = grid.h / 4

    targs = (np.ascontiguousarray(gx), np.ascontiguousarray(gy), grid.x0, grid.y0, grid.h, grid.h_y,
             grid.x1, grid.y1, 0.1, 0.0, targets[:, 0].copy(), targets[:, 1].copy(), step, grid.h / 2, 4000, 1e-8)

    def run_trace(fn):
        px, py, count, status = fn(*targs)
        return np.array([[px[p, c - 1], py[p, c - 1]] for p, c in enumerate(count)])

    run_trace(kernels.trace_numba)
    tn, a = best_of(lambda: run_trace(kernels.trace_numba), repeat)
    tp, b = best_of(lambda: run_trace(kernels.trace_numpy), max(1, repeat // 2))
    diff = float(np.max(np.abs(a - b)))
    rows.append(("trace x200", grid.shape, tn, tp, diff))

    xs = rng.uniform(grid.x0, grid.x1, 200_000)
    ys = rng.uniform(grid.y0, grid.y1, 200_000)
    v = gx
    kernels.bilinear_numba(v, grid.x0, grid.y0, grid.h, grid.h_y, xs[:10], ys[:10])
    tn, a = best_of(lambda: kernels.bilinear_numba(v, grid.x0, grid.y0, grid.h, grid.h_y, xs, ys), repeat)
    tp, b = best_of(lambda: kernels.bilinear_numpy(v, grid.x0, grid.y0, grid.h, grid.h_y, xs, ys), repeat)
    rows.append(("bilinear 2e5 pts", grid.shape, tn, tp, float(np.max(np.abs(a - b)))))
    return rows


FORWARD_SNIPPET = """
import time, numpy as np
from rrte import backend_name
from rrte.experiments import ExperimentConfig, simulate_data
t = time.perf_counter()
d = simulate_data(ExperimentConfig(m=10, m_alpha=10))
print(backend_name(), time.perf_counter() - t, float(d.u.sum()))
"""


def bench_forward():
    out = []
    for flag in ("0", "1"):
        env = dict(os.environ, RRTE_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", FORWARD_SNIPPET], env=env, capture_output=True, text=True, check=True)
        name, secs, total = res.stdout.split()
        out.append((name, float(secs), float(total)))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=200, help="eikonal cells across the box")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--forward", action="store_true")
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    rows = bench(args.n, args.repeat)
    if args.json:
        print(json.dumps([dict(zip(("kernel", "shape", "numba_s", "numpy_s", "max_diff"), r)) for r in rows]))
    else:
        print(f"{'kernel':<18}{'grid':>12}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max diff':>12}")
        for name, shape, tn, tp, diff in rows:
            print(f"{name:<18}{str(shape):>12}{tn:>12.4f}{tp:>12.4f}{tp / tn:>10.1f}{diff:>12.2e}")
    if args.forward:
        for name, secs, total in bench_forward():
            print(f"forward 11x11 [{name}]: {secs:.2f} s (sum u = {total:.12g})")


if __name__ == "__main__":
    main()
