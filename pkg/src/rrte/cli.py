"""Command line entry point: ``rrte simulate|invert|experiment|basis-check|probe``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import backend_name
from .basis import build_basis
from .config import config_to_ini, load_config
from .experiments import (
    SimulatedData,
    reconstruct,
    reference_metric,
    run_test,
    simulate_data,
    travel_times,
    write_report,
)
from .forward import BoundaryDataSet, PhaseKernel
from .grid import Domain2D, Grid2D, SourceGrid, norm_H1h, read_field_csv
from .inverse import FunctionalConfig, assemble_system, convexity_probe, true_coefficients

log = logging.getLogger("rrte")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI scene file layered over the packaged defaults")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--seed", type=int, help="noise seed (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rrte", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="forward-simulate boundary data for a phantom")
    _common(p)

    p = sub.add_parser("invert", help="reconstruct a(x) from boundary.csv")
    _common(p)
    p.add_argument("boundary", type=Path, help="boundary.csv written by 'simulate'")
    p.add_argument("--truth", type=Path, help="optional a_true.csv for error reporting")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--nbasis", type=int)
    p.add_argument("--optimizer", choices=("gd", "qn"))
    p.add_argument("--grad-tol", type=float)
    p.add_argument("--delta", type=float, help="extra multiplicative noise level")

    p = sub.add_parser("experiment", help="run a numbered test end to end")
    _common(p)
    p.add_argument("--test", type=int, required=True, choices=(1, 2, 3, 4))

    p = sub.add_parser("basis-check", help="structure of the basis derivative matrix")
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--d", type=float, default=0.5)
    p.add_argument("--out", type=Path, help="write the report here as well as to stdout")

    p = sub.add_parser("probe", help="Monte-Carlo convexity probe of the functional")
    _common(p)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--radius-factor", type=float, default=2.0, help="R as a multiple of |V_true|")
    return ap


def cmd_simulate(args) -> dict:
    cfg = load_config(args.config, seed=args.seed)
    t0 = time.perf_counter()
    data = simulate_data(cfg)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    data.boundary.to_csv(out / "boundary.csv")
    ph = cfg.phantom()
    data.grid.field(ph.a(data.grid)).to_csv(out / "a_true.csv", "a")
    X, Y = data.grid.mesh()
    rows = [
        np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, al), data.u[j].ravel()])
        for j, al in enumerate(data.sources.nodes)
    ]
    np.savetxt(out / "u.csv", np.vstack(rows), delimiter=",", header="x,y,alpha,u", comments="", fmt="%.15g")
    (out / "scene.ini").write_text(config_to_ini(cfg))
    rep = {"config": asdict(cfg), "forward": data.forward_meta, "min_boundary_value": float(data.boundary.g.min())}
    write_report(out, rep, timing=time.perf_counter() - t0)
    return rep


def cmd_invert(args) -> dict:
    cfg = load_config(args.config, seed=args.seed, lam=args.lam, N=args.nbasis, optimizer=args.optimizer,
                      grad_tol=args.grad_tol, delta=args.delta)
    t0 = time.perf_counter()
    dom = Domain2D()
    grid = Grid2D(dom, cfg.m, cfg.m)
    bd = BoundaryDataSet.from_csv(args.boundary, grid)
    sources = SourceGrid(dom.d, cfg.m_alpha)
    if bd.alphas.size != len(sources) or not np.allclose(bd.alphas, sources.nodes, atol=1e-9):
        raise ValueError(f"{args.boundary}: source positions do not match m_alpha={cfg.m_alpha}")
    metric = reference_metric(dom, grid.h, cfg.forward_refine)
    res, rep = reconstruct(cfg, SimulatedData(grid, sources, metric, None, bd))
    if args.truth is not None:
        a_true = read_field_csv(args.truth, grid, "a").values
        rep["error_vs_truth"] = float(
            np.linalg.norm((res.a_hat.values - a_true)[1:-1, 1:-1]) / np.linalg.norm(a_true[1:-1, 1:-1])
        )
    write_report(args.out, rep, res, time.perf_counter() - t0)
    return rep


def cmd_experiment(args) -> dict:
    cfg = load_config(args.config, seed=args.seed)
    reports = run_test(args.test, cfg, args.out)
    return {"test": args.test, "runs": len(reports)}


def cmd_basis_check(args) -> dict:
    t0 = time.perf_counter()
    bs = build_basis(args.N, args.d)
    B = bs.B
    rep = {
        "N": args.N,
        "d": args.d,
        "orthonormality_residual": bs.orthonormality_residual(),
        "max_below_diagonal": float(np.max(np.abs(np.tril(B, -1)))) if args.N > 1 else 0.0,
        "max_diagonal_defect": float(np.max(np.abs(np.diag(B) - 1.0))),
        "det_B": float(np.linalg.det(B)),
        "min_singular_value": bs.smallest_singular_value(),
        "frame_gram_condition": bs.gram_cond,
        "Q0_at_0": float(bs.values(0.0)[0]),
    }
    if args.out is not None:
        write_report(args.out, rep, timing=time.perf_counter() - t0)
    return rep


def cmd_probe(args) -> dict:
    cfg = load_config(args.config, seed=args.seed, lam=args.lam)
    t0 = time.perf_counter()
    data = simulate_data(cfg)
    g = data.grid
    tts = travel_times(data)
    bs = build_basis(cfg.N, g.domain.d)
    sc = assemble_system(tts, data.metric, g, bs, g.field(np.full(g.shape, cfg.mu_s)), PhaseKernel(cfg.g, g.domain.d),
                         projection=cfg.projection)
    Vt = true_coefficients(data.u, sc)
    R = args.radius_factor * norm_H1h(Vt, g)
    rep = convexity_probe(sc, FunctionalConfig(lam=cfg.lam), Vt, R, args.trials, cfg.seed)
    rep["config"] = asdict(cfg)
    write_report(args.out, rep, timing=time.perf_counter() - t0)
    return rep


COMMANDS = {
    "simulate": cmd_simulate,
    "invert": cmd_invert,
    "experiment": cmd_experiment,
    "basis-check": cmd_basis_check,
    "probe": cmd_probe,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    log.info("kernel backend: %s", backend_name())
    try:
        rep = COMMANDS[args.command](args)
    except Exception as exc:  # reported as a machine-readable object
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1
    print(json.dumps(rep, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
