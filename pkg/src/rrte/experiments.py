"""Letter phantoms, noise injection and the end-to-end reconstruction runs.

Forward data are always simulated on a grid at least twice as fine as the
inversion grid and sampled at the coarse nodes.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from matplotlib.path import Path as PolyPath
from scipy import ndimage

from .basis import build_basis
from .eikonal import MetricField, eikonal_grid, layered_metric, solve_eikonal
from .forward import BoundaryDataSet, ForwardConfig, OpticalModel, PhaseKernel, extract_boundary, solve_forward
from .grid import Domain2D, Grid2D, ScalarField2D, SourceGrid, write_field_csv
from .inverse import (
    FunctionalConfig,
    assemble_system,
    boundary_coefficients,
    evaluate_J,
    minimize,
    starting_point,
    true_coefficients,
)

__all__ = [
    "Phantom",
    "NoiseSpec",
    "ExperimentConfig",
    "available_glyphs",
    "rasterize_letter",
    "count_components",
    "make_phantom",
    "add_noise",
    "simulate_data",
    "travel_times",
    "reference_metric",
    "reconstruction_metrics",
    "coefficient_norms",
    "reconstruct",
    "run_test",
    "write_report",
]

log = logging.getLogger(__name__)

DEFAULT_PLACEMENT = (-0.3, 0.3, 1.2, 1.8)
COMPOSITES = {"SZ": ("S", "Z")}
LAMBDA_SWEEP = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 20.0)
N_SWEEP = (1, 2, 3, 5, 7, 12)
CA_SWEEP = (10.0, 15.0, 20.0, 30.0)
DELTAS = (0.03, 0.05)


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1)
def _letters() -> dict:
    text = resources.files("rrte").joinpath("data/letters.json").read_text()
    return json.loads(text)


def available_glyphs() -> list[str]:
    return sorted(set(_letters()) | set(COMPOSITES))


def _glyph_mask(name: str, X, Y, box) -> np.ndarray:
    x0, x1, y0, y1 = box
    spec = _letters()[name]
    if x1 <= x0 or y1 <= y0:
        return np.zeros(X.shape, dtype=bool)
    # unit square -> placement box; unit y runs with depth
    pts = np.column_stack([(X.ravel() - x0) / (x1 - x0), (Y.ravel() - y0) / (y1 - y0)])
    inside = np.zeros(pts.shape[0], dtype=bool)
    for poly in spec["fill"]:
        inside |= PolyPath(np.asarray(poly)).contains_points(pts)
    for poly in spec["holes"]:
        inside &= ~PolyPath(np.asarray(poly)).contains_points(pts)
    return inside.reshape(X.shape)


def rasterize_letter(glyph: str, grid: Grid2D, placement=DEFAULT_PLACEMENT) -> np.ndarray:
    """Boolean node mask of a glyph drawn in the box ``(x0, x1, y0, y1)``.

    Composite glyphs such as ``"SZ"`` split the box into equal side-by-side
    cells separated by a gap of one tenth of the box width.
    """
    X, Y = grid.mesh()
    x0, x1, y0, y1 = placement
    dom = grid.domain
    if x1 > x0 and y1 > y0 and not (dom.contains(x0, y0) and dom.contains(x1, y1)):
        raise ValueError(f"placement {placement} is not inside the domain")
    if glyph in COMPOSITES:
        parts = COMPOSITES[glyph]
        gap = 0.1 * (x1 - x0)
        cw = (x1 - x0 - gap * (len(parts) - 1)) / len(parts)
        mask = np.zeros(X.shape, dtype=bool)
        for n, part in enumerate(parts):
            left = x0 + n * (cw + gap)
            mask |= _glyph_mask(part, X, Y, (left, left + cw, y0, y1))
        return mask
    if glyph not in _letters():
        raise KeyError(f"unknown glyph {glyph!r}; available: {', '.join(available_glyphs())}")
    return _glyph_mask(glyph, X, Y, placement)


def count_components(mask: np.ndarray) -> tuple[int, int]:
    """Number of 4-connected pieces of the mask and of enclosed holes."""
    _, n_fg = ndimage.label(mask)
    bg, n_bg = ndimage.label(~np.pad(mask, 1))
    # the padded frame belongs to exactly one background piece; the rest are holes
    return int(n_fg), int(n_bg - 1)


@dataclass(frozen=True)
class Phantom:
    """Absorbing inclusion ``mu_a = c_a`` on a glyph mask over uniform scattering."""

    glyph: str
    c_a: float
    mu_s_level: float = 5.0
    placement: tuple = DEFAULT_PLACEMENT

    def __post_init__(self):
        if self.c_a < 0 or self.mu_s_level <= 0:
            raise ValueError("need c_a >= 0 and mu_s_level > 0")

    def mask(self, grid: Grid2D) -> np.ndarray:
        return rasterize_letter(self.glyph, grid, self.placement)

    def mu_a(self, grid: Grid2D) -> ScalarField2D:
        return grid.field(self.c_a * self.mask(grid))

    def mu_s(self, grid: Grid2D) -> ScalarField2D:
        return grid.field(np.full(grid.shape, self.mu_s_level))

    def a(self, grid: Grid2D) -> np.ndarray:
        return self.mu_s_level + self.c_a * self.mask(grid)

    @property
    def correct_contrast(self) -> float:
        return 1.0 + self.c_a / self.mu_s_level


def make_phantom(glyph: str = "A", c_a: float = 5.0, mu_s_level: float = 5.0, placement=DEFAULT_PLACEMENT) -> Phantom:
    if glyph not in available_glyphs():
        raise KeyError(f"unknown glyph {glyph!r}")
    return Phantom(glyph, float(c_a), float(mu_s_level), tuple(placement))


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"noise level must be nonnegative, got {self.delta}")


def add_noise(bd: BoundaryDataSet, spec: NoiseSpec) -> BoundaryDataSet:
    """``g <- g (1 + delta zeta)``, one ``zeta ~ U[0, 1]`` per boundary node shared by all sources."""
    if spec.delta == 0:
        return bd.with_values(bd.g.copy())
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    zeta = rng.uniform(0.0, 1.0, size=bd.g.shape[0])
    return bd.with_values(bd.g * (1.0 + spec.delta * zeta)[:, None])


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """One forward simulation plus one inversion."""

    glyph: str = "A"
    c_a: float = 5.0
    mu_s: float = 5.0
    placement: tuple = DEFAULT_PLACEMENT
    m: int = 20  # inversion cells per side
    forward_refine: int = 2  # forward grid is this many times finer
    m_alpha: int = 20
    g: float = 0.5
    source_eps: float = 0.05
    N: int = 3
    lam: float = 5.0
    optimizer: str = "qn"
    grad_tol: float = 1e-2
    max_iters: int = 500
    beta: float | None = None
    projection: str = "spline"
    delta: float = 0.0
    seed: int = 7

    def __post_init__(self):
        if self.forward_refine < 2:
            raise ValueError("forward data must come from a finer grid than the inversion grid (forward_refine >= 2)")
        if self.m < 2 or self.m_alpha < 2:
            raise ValueError("grids need at least two cells")

    @property
    def domain(self) -> Domain2D:
        return Domain2D()

    def phantom(self) -> Phantom:
        return make_phantom(self.glyph, self.c_a, self.mu_s, self.placement)

    def functional(self) -> FunctionalConfig:
        return FunctionalConfig(
            lam=self.lam, grad_tol=self.grad_tol, max_iters=self.max_iters, beta=self.beta, optimizer=self.optimizer
        )


@dataclass
class SimulatedData:
    grid: Grid2D  # inversion grid
    sources: SourceGrid
    metric: MetricField
    u: np.ndarray | None = field(repr=False)  # radiance at the inversion nodes; None for measured data
    boundary: BoundaryDataSet = field(repr=False)
    forward_meta: dict = field(default_factory=dict)


def reference_metric(domain: Domain2D, h_inv: float, refine: int) -> MetricField:
    """The layered test metric sampled fine enough for forward runs on an ``h_inv / refine`` grid."""
    # the eikonal step must be at most the forward step divided by ForwardConfig.eikonal_refine
    h_e = h_inv / refine / ForwardConfig().eikonal_refine
    return MetricField.from_function(eikonal_grid(domain, h_e), layered_metric)


def simulate_data(cfg: ExperimentConfig) -> SimulatedData:
    """Forward solve on the fine grid, then sample radiance and boundary data at the inversion nodes."""
    dom = cfg.domain
    coarse = Grid2D(dom, cfg.m, cfg.m)
    fine = Grid2D(dom, cfg.m * cfg.forward_refine, cfg.m * cfg.forward_refine)
    sources = SourceGrid(dom.d, cfg.m_alpha)
    metric = reference_metric(dom, coarse.h, cfg.forward_refine)
    ph = cfg.phantom()
    model = OpticalModel(ph.mu_a(fine), ph.mu_s(fine), metric, PhaseKernel(cfg.g, dom.d), cfg.source_eps)
    sol = solve_forward(model, fine, sources)
    coarse_sol = sol.restrict(coarse)
    return SimulatedData(coarse, sources, metric, coarse_sol.u, extract_boundary(coarse_sol), sol.meta())


def travel_times(data: SimulatedData):
    """One travel-time field per source on the metric grid of ``data``."""
    return [solve_eikonal(data.metric, (al, 0.0), data.grid.domain) for al in data.sources.nodes]


def coefficient_norms(data: SimulatedData, n_terms: int = 12, method: str = "spline") -> dict:
    """L2(Omega) norms of the coefficients of ``w = ln(u) tau_y / sqrt(eps_r)`` and the tail share beyond n = 2."""
    g = data.grid
    tts = travel_times(data)
    bs = build_basis(n_terms, g.domain.d)
    sc = assemble_system(tts, data.metric, g, bs, g.field(np.full(g.shape, 5.0)), PhaseKernel(d=g.domain.d))
    W = true_coefficients(data.u, sc, method)
    wy = np.full(g.m_y + 1, g.h_y)
    wy[[0, -1]] *= 0.5
    wx = np.full(g.m + 1, g.h)
    wx[[0, -1]] *= 0.5
    norms = np.sqrt(np.einsum("nkl,k,l->n", W**2, wy, wx))
    return {"norms": norms.tolist(), "tail_ratio": float(norms[3:].sum() / norms.sum())}


def _centroid(weights: np.ndarray, grid: Grid2D) -> tuple[float, float]:
    X, Y = grid.mesh()
    s = weights.sum()
    if s <= 0:
        return float("nan"), float("nan")
    return float((weights * X).sum() / s), float((weights * Y).sum() / s)


def reconstruction_metrics(a_hat: np.ndarray, ph: Phantom, grid: Grid2D) -> dict:
    """Contrast, relative L2 error and inclusion localization over the interior nodes.

    The recovered inclusion is the set where ``a_hat - mu_s`` exceeds half its
    interior maximum; its centroid is compared with the centroid of the mask.
    """
    inner = (slice(1, -1), slice(1, -1))
    a_true = ph.a(grid)
    mu_hat = np.maximum(a_hat - ph.mu_s_level, 0.0)
    mi = np.zeros_like(mu_hat)
    mi[inner] = mu_hat[inner]
    peak = float(mi.max())
    err = float(np.linalg.norm((a_hat - a_true)[inner]) / np.linalg.norm(a_true[inner]))
    cx, cy = _centroid(ph.mask(grid).astype(float), grid)
    if peak > 0:
        rx, ry = _centroid(np.where(mi >= 0.5 * peak, mi, 0.0), grid)
    else:
        rx, ry = float("nan"), float("nan")
    return {
        "contrast": 1.0 + peak / ph.mu_s_level,
        "correct_contrast": ph.correct_contrast,
        "relative_l2_error": err,
        "true_centroid": [cx, cy],
        "recovered_centroid": [rx, ry],
        "centroid_distance": float(np.hypot(rx - cx, ry - cy)),
    }


def reconstruct(cfg: ExperimentConfig, data: SimulatedData, tts=None):
    """Invert (possibly noisy) boundary data; returns ``(result, report dict)``.

    Error metrics are reported when ``data.u`` holds the simulated radiance.
    """
    g = data.grid
    tts = travel_times(data) if tts is None else tts
    bs = build_basis(cfg.N, g.domain.d)
    kernel = PhaseKernel(cfg.g, g.domain.d)
    sc = assemble_system(tts, data.metric, g, bs, g.field(np.full(g.shape, cfg.mu_s)), kernel, projection=cfg.projection)
    bd = add_noise(data.boundary, NoiseSpec(cfg.delta, cfg.seed))
    P = boundary_coefficients(bd, tts, data.metric, bs, cfg.projection, clip=True)
    V0 = starting_point(P)
    fcfg = cfg.functional()
    res = minimize(V0, sc, fcfg)
    rep = {
        "config": asdict(cfg),
        "iterations": res.iterations,
        "converged": res.converged,
        "line_search_failed": res.line_search_failed,
        "J_start": res.J_history[0],
        "J_final": res.J_history[-1],
        "grad_norm_final": res.grad_norm_history[-1],
        "contrast": res.contrast,
        "max_abs_P": P.max_abs(),
        "forward": data.forward_meta,
    }
    if data.u is not None:
        rep["J_true_coefficients"] = evaluate_J(true_coefficients(data.u, sc), sc, fcfg)
        rep.update(reconstruction_metrics(res.a_hat.values, cfg.phantom(), g))
    return res, rep


def write_report(out_dir, report: dict, result=None, timing: float | None = None) -> None:
    """``report.json`` (sorted keys, no timing), ``timing.json``, and the fields of ``result``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n")
    if timing is not None:
        (out / "timing.json").write_text(json.dumps({"seconds": timing}) + "\n")
    if result is not None:
        g = result.a_hat.grid
        result.a_hat.to_csv(out / "a_hat.csv", "a_hat")
        write_field_csv(out / "v_final.csv", g, {f"w{n}": result.V_final[n] for n in range(result.V_final.shape[0])})
        rows = result.history_rows()
        np.savetxt(
            out / "history.csv", np.array(rows, dtype=float).reshape(-1, 4), delimiter=",",
            header="iter,J,grad_norm,grad_max", comments="", fmt="%.10g",
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


# ---------------------------------------------------------------------------
# tests 1-4
# ---------------------------------------------------------------------------


def _runs_for(test_id: int, base: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    if test_id == 1:
        runs = [(f"lambda_{lam:g}", replace(base, glyph="A", c_a=5.0, lam=lam)) for lam in LAMBDA_SWEEP]
        runs += [(f"N_{n}", replace(base, glyph="A", c_a=5.0, N=n)) for n in N_SWEEP]
        return runs
    if test_id == 2:
        return [(f"ca_{ca:g}", replace(base, glyph="A", c_a=ca)) for ca in CA_SWEEP]
    if test_id == 3:
        return [("SZ", replace(base, glyph="SZ", c_a=5.0))]
    if test_id == 4:
        return [
            (f"{glyph}_delta_{d:g}", replace(base, glyph=glyph, c_a=5.0, delta=d))
            for glyph in ("A", "Omega")
            for d in DELTAS
        ]
    raise ValueError(f"unknown test {test_id}; expected 1, 2, 3 or 4")


def run_test(test_id: int, base: ExperimentConfig | None = None, out_dir=None) -> list[dict]:
    """Run every case of a numbered test; forward data are shared between cases with the same phantom."""
    base = ExperimentConfig() if base is None else base
    runs = _runs_for(test_id, base)
    cache: dict = {}
    reports = []
    for name, cfg in runs:
        t0 = time.perf_counter()
        key = (cfg.glyph, cfg.c_a, cfg.mu_s, cfg.placement, cfg.m, cfg.forward_refine, cfg.m_alpha, cfg.g, cfg.source_eps)
        if key not in cache:
            data = simulate_data(cfg)
            cache[key] = (data, travel_times(data))
        data, tts = cache[key]
        res, rep = reconstruct(cfg, data, tts)
        rep["name"] = name
        rep["test"] = test_id
        if test_id == 1 and cfg.lam == base.lam and cfg.N == base.N:
            rep["coefficient_norms"] = coefficient_norms(data)
        log.info("test %d %s: contrast %.3f (correct %.3f), error %.3f", test_id, name, rep["contrast"],
                 rep["correct_contrast"], rep["relative_l2_error"])
        if out_dir is not None:
            write_report(Path(out_dir) / name, rep, res, time.perf_counter() - t0)
        reports.append(rep)
    if out_dir is not None:
        summary = {"test": test_id, "runs": [_summary(r) for r in reports]}
        write_report(out_dir, summary)
    return reports


def _summary(rep: dict) -> dict:
    keys = ("name", "contrast", "correct_contrast", "relative_l2_error", "centroid_distance", "iterations", "converged")
    return {k: rep[k] for k in keys}
