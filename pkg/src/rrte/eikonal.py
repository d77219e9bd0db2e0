"""Travel times in the metric sqrt(eps_r)|dx|, geodesic tracing and line integrals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .basis import BasisSet, project, synthesize, synthesize_prime
from .grid import Domain2D, Grid2D, ScalarField2D, interp_bilinear, write_field_csv

__all__ = [
    "MetricField",
    "TravelTimeField",
    "GeodesicPolyline",
    "TauCoefficients",
    "eikonal_grid",
    "layered_metric",
    "solve_eikonal",
    "trace_geodesic",
    "trace_geodesics",
    "line_integral",
    "tau_fourier_coeffs",
]

INIT_RADIUS_CELLS = 3.0


def layered_metric(x, y, a: float = 1.0):
    """Test metric: 1 + x^2 ln(y/a) below the far side of the near boundary, 1 above it."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.where(y > a, 1.0 + x * x * np.log(np.maximum(y, a) / a), 1.0)


def eikonal_grid(domain: Domain2D, h: float, margin: float | None = None) -> Grid2D:
    """Square-cell box covering the source line and the closure of the domain.

    The box is ``[-A~ - margin, A~ + margin] x [0, b + margin]`` with
    ``A~ = max(A, d)``; the margin is rounded up to a whole number of cells so
    that nodes of a domain grid with step a multiple of ``h`` are box nodes.
    """
    if margin is None:
        margin = 2.0 * h
    xm = domain.A_tilde + math.ceil(margin / h - 1e-9) * h
    ym = domain.b + math.ceil(margin / h - 1e-9) * h
    return Grid2D.box(domain, h, -xm, xm, 0.0, ym)


@dataclass(frozen=True)
class MetricField:
    """Dielectric constant on an eikonal box."""

    eps_r: ScalarField2D

    def __post_init__(self):
        if np.any(self.eps_r.values <= 0):
            k, i = np.argwhere(self.eps_r.values <= 0)[0]
            x, y = self.eps_r.grid.node(i, k)
            raise ValueError(f"metric must be positive; eps_r({x:.6g}, {y:.6g}) = {self.eps_r.values[k, i]:.6g}")

    @classmethod
    def from_function(cls, grid: Grid2D, func) -> "MetricField":
        return cls(grid.sample(func))

    @classmethod
    def uniform(cls, grid: Grid2D, value: float = 1.0) -> "MetricField":
        return cls(grid.field(np.full(grid.shape, float(value))))

    @property
    def grid(self) -> Grid2D:
        return self.eps_r.grid

    def refractive_index(self) -> np.ndarray:
        return np.sqrt(self.eps_r.values)

    def __call__(self, x, y):
        return self.eps_r(x, y)

    def check_regularity(self, domain: Domain2D, tol: float = 1e-12) -> dict:
        """Report eps_r >= 1, eps_r = 1 outside the slab above the near side, and d eps_r/dy >= 0."""
        g = self.grid
        X, Y = g.mesh()
        v = self.eps_r.values
        outside = ~((Y > domain.a) & (np.abs(X) < domain.A))
        dy = np.diff(v, axis=0)
        return {
            "min_eps_r": float(v.min()),
            "at_least_one": bool(v.min() >= 1.0 - tol),
            "unit_outside_slab": bool(np.all(np.abs(v[outside] - 1.0) <= tol)),
            "depth_monotone": bool(dy.min() >= -tol),
        }


@dataclass(frozen=True)
class TravelTimeField:
    source: tuple[float, float]
    tau: ScalarField2D
    tau_x: ScalarField2D = field(repr=False)
    tau_y: ScalarField2D = field(repr=False)

    @property
    def grid(self) -> Grid2D:
        return self.tau.grid

    def to_csv(self, path) -> None:
        write_field_csv(path, self.grid, {"tau": self.tau.values})


@dataclass(frozen=True)
class GeodesicPolyline:
    """Points ordered from the source to the target, with cumulative Euclidean and Riemannian lengths."""

    points: np.ndarray
    sigma: np.ndarray
    s: np.ndarray

    @classmethod
    def from_points(cls, points, metric: MetricField) -> "GeodesicPolyline":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        seg = np.hypot(*np.diff(pts, axis=0).T)
        sigma = np.concatenate([[0.0], np.cumsum(seg)])
        n = np.sqrt(interp_bilinear(metric.eps_r, (pts[:, 0], pts[:, 1]), tol=1e-9))
        s = np.concatenate([[0.0], np.cumsum(0.5 * (n[1:] + n[:-1]) * seg)])
        return cls(pts, sigma, s)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def length(self) -> float:
        return float(self.sigma[-1])

    def depth_monotone_above(self, a: float) -> bool:
        y = self.points[:, 1]
        sel = y > a
        return bool(np.all(np.diff(y[sel]) > 0)) if sel.sum() > 1 else True

    def to_csv(self, path) -> None:
        data = np.column_stack([self.points, self.sigma, self.s])
        np.savetxt(path, data, delimiter=",", header="x,y,sigma,s", comments="", fmt="%.15g")


def solve_eikonal(metric: MetricField, source, domain: Domain2D | None = None) -> TravelTimeField:
    """First-arrival travel time from ``source`` by first-order fast marching.

    Nodes within ``3h`` of the source get ``sqrt(eps_r(source)) * |x - source|``
    and are frozen before marching.  The march runs on the correction to that
    cone (additive factorization), so a constant metric is reproduced exactly
    and the source singularity does not pollute the far field.

    ``grad tau`` is the exact cone gradient plus central differences of the
    correction (one-sided at the box faces, zero inside the initialization
    disk).
    """
    g = metric.grid
    sx, sy = float(source[0]), float(source[1])
    if not (g.x0 - 1e-12 <= sx <= g.x1 + 1e-12 and g.y0 - 1e-12 <= sy <= g.y1 + 1e-12):
        raise ValueError(f"source ({sx}, {sy}) outside the eikonal box")
    if domain is not None and bool(domain.contains(sx, sy)):
        raise ValueError(f"source ({sx}, {sy}) lies inside the closed domain")
    n0 = math.sqrt(metric(sx, sy))
    X, Y = g.mesh()
    r = np.hypot(X - sx, Y - sy)
    known = r <= INIT_RADIUS_CELLS * max(g.h, g.h_y) + 1e-12
    tau0 = np.where(known, n0 * r, 0.0)
    tip = r <= 1e-9 * g.h
    rs = np.where(tip, 1.0, r)
    base = n0 * r
    bx = np.where(tip, 0.0, n0 * (X - sx) / rs)
    by = np.where(tip, 0.0, n0 * (Y - sy) / rs)
    tau = kernels.fast_march(metric.refractive_index(), g.h, g.h_y, tau0, known, base, bx, by)
    if not np.all(np.isfinite(tau)):
        raise RuntimeError("fast marching left unreached nodes")
    cy, cx = np.gradient(tau - base, g.h_y, g.h)
    tx = bx + np.where(known, 0.0, cx)
    ty = by + np.where(known, 0.0, cy)
    return TravelTimeField((sx, sy), g.field(tau), g.field(tx), g.field(ty))


def _trace_settings(tt: TravelTimeField, metric: MetricField, targets: np.ndarray):
    g = tt.grid
    hmin = min(g.h, g.h_y)
    step = 0.25 * hmin
    nmin = math.sqrt(float(metric.eps_r.values.min()))
    tmax = float(np.max(interp_bilinear(tt.tau, (targets[:, 0], targets[:, 1]))))
    max_steps = int(3.0 * (tmax / nmin) / step) + 100
    return step, 0.5 * hmin, max_steps


def trace_geodesics(tt: TravelTimeField, metric: MetricField, targets) -> list[GeodesicPolyline]:
    """Steepest descent through interpolated ``grad tau`` from each target back to the source."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    g = tt.grid
    step, stop_r, max_steps = _trace_settings(tt, metric, targets)
    sx, sy = tt.source
    px, py, count, status = kernels.trace(
        tt.tau_x.values, tt.tau_y.values, g.x0, g.y0, g.h, g.h_y, g.x1, g.y1,
        sx, sy, targets[:, 0], targets[:, 1], step, stop_r, max_steps,
    )
    out = []
    for p in range(targets.shape[0]):
        c = count[p]
        if status[p] != kernels.TRACE_OK:
            why = "stalled" if status[p] == kernels.TRACE_STALL else "hit the step limit"
            raise RuntimeError(
                f"geodesic descent from ({targets[p, 0]:.6g}, {targets[p, 1]:.6g}) {why} "
                f"at ({px[p, c - 1]:.6g}, {py[p, c - 1]:.6g})"
            )
        pts = np.column_stack([px[p, :c], py[p, :c]])[::-1]
        if np.hypot(pts[0, 0] - sx, pts[0, 1] - sy) > 1e-14:
            pts = np.vstack([[sx, sy], pts])
        out.append(GeodesicPolyline.from_points(pts, metric))
    return out


def trace_geodesic(tt: TravelTimeField, metric: MetricField, target) -> GeodesicPolyline:
    return trace_geodesics(tt, metric, [target])[0]


def line_integral(path: GeodesicPolyline, f, weight: str = "euclidean") -> float:
    """Composite trapezoid of ``f`` over the polyline vertices.

    ``f`` is a ScalarField2D, a callable ``f(x, y)`` or a constant.
    """
    if len(path) == 0:
        raise ValueError("empty path")
    if len(path) == 1:
        return 0.0
    pts = path.points
    if isinstance(f, ScalarField2D):
        fv = interp_bilinear(f, (pts[:, 0], pts[:, 1]), tol=1e-9)
    elif callable(f):
        fv = np.asarray(f(pts[:, 0], pts[:, 1]), dtype=float) * np.ones(len(pts))
    else:
        fv = np.full(len(pts), float(f))
    if weight == "euclidean":
        dl = np.diff(path.sigma)
    elif weight == "riemannian":
        dl = np.diff(path.s)
    else:
        raise ValueError(f"weight must be 'euclidean' or 'riemannian', got {weight!r}")
    return float(np.sum(0.5 * (fv[1:] + fv[:-1]) * dl))


@dataclass(frozen=True)
class TauCoefficients:
    """Basis coefficients of ``tau_x`` and ``tau_y`` at the nodes of ``grid``.

    Arrays have shape ``(N, m_y+1, m+1)``.
    """

    grid: Grid2D
    basis: BasisSet
    cx: np.ndarray = field(repr=False)
    cy: np.ndarray = field(repr=False)

    def values(self, alphas) -> tuple[np.ndarray, np.ndarray]:
        """Synthesized ``(tau_x, tau_y)`` with alpha as the last axis."""
        return synthesize(self.basis, self.cx, alphas), synthesize(self.basis, self.cy, alphas)

    def alpha_derivatives(self, alphas) -> tuple[np.ndarray, np.ndarray]:
        return synthesize_prime(self.basis, self.cx, alphas), synthesize_prime(self.basis, self.cy, alphas)


def sample_gradients(tts, grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    """``tau_x, tau_y`` at the nodes of ``grid`` for every source, alpha as the last axis."""
    X, Y = grid.mesh()
    gx = np.stack([interp_bilinear(t.tau_x, (X, Y)) for t in tts], axis=-1)
    gy = np.stack([interp_bilinear(t.tau_y, (X, Y)) for t in tts], axis=-1)
    return gx, gy


def tau_fourier_coeffs(tts, basis: BasisSet, grid: Grid2D, method: str = "trapezoid") -> TauCoefficients:
    """Project ``grad tau`` sampled at the grid nodes onto the basis in alpha."""
    alphas = np.array([t.source[0] for t in tts])
    if abs(alphas[0] + basis.d) > 1e-9 or abs(alphas[-1] - basis.d) > 1e-9:
        raise ValueError(f"sources span [{alphas[0]:.6g}, {alphas[-1]:.6g}] but the basis lives on (-{basis.d}, {basis.d})")
    gx, gy = sample_gradients(tts, grid)
    cx = project(basis, gx, alphas, method)
    cy = project(basis, gy, alphas, method)
    return TauCoefficients(grid, basis, cx, cy)
