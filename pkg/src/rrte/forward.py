"""Forward transport along geodesics: unscattered part, Neumann iteration, boundary data.

For each source the radiance obeys the integral equation

    u(x, a) = u0(x, a) + p(x)^-1 int_{path in slab} p(xi) mu_s(xi) int K(a, b) u(xi, b) db dsigma,

with ``p = exp(int a dsigma)`` along the geodesic from the source.  Paths
are traced once per source and folded into a sparse matrix that maps nodal
values ``sum_b C[j, b] u(., b)`` to the scattering term at every node.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, sparse

from . import kernels
from .eikonal import (
    GeodesicPolyline,
    MetricField,
    TravelTimeField,
    line_integral,
    solve_eikonal,
    trace_geodesics,
)
from .grid import Grid2D, ScalarField2D, SourceGrid

__all__ = [
    "PhaseKernel",
    "OpticalModel",
    "ForwardConfig",
    "ForwardSolution",
    "BoundaryDataSet",
    "mollifier_constant",
    "source_f",
    "clip_to_slab",
    "attenuation_p",
    "mollifier_path_integral",
    "compute_u0",
    "solve_forward",
    "extract_boundary",
    "dense_volterra_solve",
]

SIDE_NEAR, SIDE_FAR, SIDE_LEFT, SIDE_RIGHT = 1, 2, 3, 4


# ---------------------------------------------------------------------------
# source and kernel
# ---------------------------------------------------------------------------


def _bump(r, eps):
    r = np.asarray(r, dtype=float)
    inside = r < eps
    rr = np.where(inside, r, 0.0)
    return np.where(inside, np.exp(rr * rr / (rr * rr - eps * eps)), 0.0)


@functools.lru_cache(maxsize=32)
def mollifier_constant(eps: float) -> float:
    """C_eps such that the 2D integral of the mollifier is 1."""
    if eps <= 0:
        raise ValueError(f"mollifier radius must be positive, got {eps}")
    val, _ = integrate.quad(lambda r: float(_bump(r, eps)) * r, 0.0, eps, epsabs=0.0, epsrel=1e-13, limit=200)
    return 1.0 / (2.0 * math.pi * val)


def source_f(p, center, eps: float):
    """Smooth bump of radius ``eps`` centred at ``center`` with unit mass."""
    c = mollifier_constant(float(eps))
    p = np.asarray(p, dtype=float)
    r = np.hypot(p[..., 0] - center[0], p[..., 1] - center[1])
    out = c * _bump(r, eps)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PhaseKernel:
    """Henyey-Greenstein phase function on the source line."""

    g: float = 0.5
    d: float = 0.5

    def __post_init__(self):
        if not (-1.0 < self.g < 1.0):
            raise ValueError(f"anisotropy must lie in (-1, 1), got {self.g}")

    def __call__(self, alpha, beta):
        g = self.g
        return (1.0 - g * g) / (2.0 * self.d * (1.0 + g * g - 2.0 * g * np.cos(np.asarray(alpha) - np.asarray(beta))))

    def d_alpha(self, alpha, beta):
        """Partial derivative in the first argument."""
        g = self.g
        den = 1.0 + g * g - 2.0 * g * np.cos(np.asarray(alpha) - np.asarray(beta))
        return -(1.0 - g * g) * 2.0 * g * np.sin(np.asarray(alpha) - np.asarray(beta)) / (2.0 * self.d * den * den)

    def matrix(self, alphas) -> np.ndarray:
        a = np.asarray(alphas, dtype=float)
        return self(a[:, None], a[None, :])

    def max_value(self) -> float:
        # |alpha - beta| <= 2d, maximum at alpha = beta for g > 0
        cands = self(np.array([0.0, 2.0 * self.d]), 0.0)
        return float(np.max(cands))


# ---------------------------------------------------------------------------
# model and paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OpticalModel:
    """Coefficients on a grid over the closed domain; both vanish outside it."""

    mu_a: ScalarField2D
    mu_s: ScalarField2D
    metric: MetricField
    kernel: PhaseKernel = PhaseKernel()
    source_eps: float = 0.05

    def __post_init__(self):
        if self.mu_a.grid != self.mu_s.grid:
            raise ValueError("mu_a and mu_s must share a grid")
        for name in ("mu_a", "mu_s"):
            v = getattr(self, name).values
            if np.any(v < 0):
                raise ValueError(f"{name} must be nonnegative (min {v.min():.6g})")
        if self.source_eps <= 0:
            raise ValueError("mollifier radius must be positive")
        if self.source_eps >= self.grid.domain.a:
            raise ValueError("mollifier support reaches the domain; need eps < a")

    @property
    def grid(self) -> Grid2D:
        return self.mu_a.grid

    @property
    def a(self) -> ScalarField2D:
        return self.grid.field(self.mu_a.values + self.mu_s.values)


def _inside_grid(grid: Grid2D, x, y, tol=1e-12):
    return (x >= grid.x0 - tol) & (x <= grid.x1 + tol) & (y >= grid.y0 - tol) & (y <= grid.y1 + tol)


def _field_on_domain(f: ScalarField2D, x, y) -> np.ndarray:
    """Bilinear values inside the field's grid box, zero outside."""
    g = f.grid
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = _inside_grid(g, x, y)
    out = np.zeros(x.shape)
    if np.any(inside):
        out[inside] = kernels.bilinear(f.values, g.x0, g.y0, g.h, g.h_y, x[inside], y[inside])
    return out


def clip_to_slab(path: GeodesicPolyline, a: float) -> np.ndarray:
    """Points of the path with depth >= a, starting at the crossing of y = a.

    Returns an empty (0, 2) array when the path never reaches the slab.
    """
    pts = path.points
    y = pts[:, 1]
    above = np.flatnonzero(y >= a)
    if above.size == 0:
        return np.empty((0, 2))
    j = above[0]
    if j == 0 or y[j] == a:
        return pts[j:]
    t = (a - y[j - 1]) / (y[j] - y[j - 1])
    cross = pts[j - 1] + t * (pts[j] - pts[j - 1])
    return np.vstack([cross, pts[j:]])


def _resample(pts: np.ndarray, spacing: float):
    """Uniform-in-arclength resampling; returns points and trapezoid weights."""
    if pts.shape[0] < 2:
        return pts.copy(), np.zeros(pts.shape[0])
    seg = np.hypot(*np.diff(pts, axis=0).T)
    sig = np.concatenate([[0.0], np.cumsum(seg)])
    L = sig[-1]
    if L <= 0:
        return pts[:1].copy(), np.zeros(1)
    n = max(1, int(math.ceil(L / spacing)))
    s = np.linspace(0.0, L, n + 1)
    out = np.column_stack([np.interp(s, sig, pts[:, 0]), np.interp(s, sig, pts[:, 1])])
    w = np.full(n + 1, L / n)
    w[0] = w[-1] = 0.5 * L / n
    return out, w


def attenuation_p(path: GeodesicPolyline, a: ScalarField2D) -> float:
    """exp of the Euclidean line integral of ``a`` (zero outside its grid) along the path."""
    return math.exp(line_integral(path, lambda x, y: _field_on_domain(a, x, y), "euclidean"))


def mollifier_path_integral(path: GeodesicPolyline, eps: float, refine: int = 64) -> float:
    """Euclidean integral of the source bump along the part of the path within ``eps`` of its start.

    Every segment touching the bump is split into at least ``refine`` pieces
    and never coarser than ``eps / 10``.
    """
    pts = path.points
    c = pts[0]
    r = np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])
    last = np.flatnonzero(r < eps)
    stop = min(int(last[-1]) + 1, len(pts) - 1) if last.size else 0
    if stop == 0:
        return 0.0
    p0, p1 = pts[:stop], pts[1:stop + 1]
    L = np.hypot(*(p1 - p0).T)
    n = max(refine, int(math.ceil(10.0 * L.max() / eps)))
    t = np.linspace(0.0, 1.0, n + 1)
    seg = p0[:, None, :] + t[None, :, None] * (p1 - p0)[:, None, :]
    vals = source_f(seg, c, eps)
    return float(np.sum(integrate.trapezoid(vals, dx=1.0 / n, axis=1) * L))


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForwardConfig:
    eikonal_refine: int = 2  # eikonal cells per grid cell
    vertex_spacing: float = 0.5  # resampled path spacing, in grid steps
    tol: float = 1e-10  # on max|update| / max(1, max|u|)
    max_iter: int = 100


@dataclass
class _SourceAssembly:
    u0: np.ndarray  # (n_nodes,)
    p: np.ndarray  # (n_nodes,)
    M: sparse.csr_matrix  # (n_nodes, n_nodes)
    path_length: float  # longest in-slab path


def _assemble_source(model: OpticalModel, grid: Grid2D, tt: TravelTimeField, spacing: float) -> _SourceAssembly:
    X, Y = grid.mesh()
    targets = np.column_stack([X.ravel(), Y.ravel()])
    paths = trace_geodesics(tt, model.metric, targets)
    a_field = model.a
    dom = grid.domain
    n = targets.shape[0]
    u0 = np.empty(n)
    pvals = np.empty(n)
    rows, cols, vals = [], [], []
    Lmax = 0.0
    for node, path in enumerate(paths):
        F = mollifier_path_integral(path, model.source_eps)
        slab = clip_to_slab(path, dom.a)
        pts, w = _resample(slab, spacing)
        if pts.shape[0] < 2:
            q = np.zeros(max(pts.shape[0], 1))
        else:
            av = _field_on_domain(a_field, pts[:, 0], pts[:, 1])
            ds = np.hypot(*np.diff(pts, axis=0).T)
            q = np.concatenate([[0.0], np.cumsum(0.5 * (av[1:] + av[:-1]) * ds)])
            Lmax = max(Lmax, float(np.sum(w)))
        q_end = float(q[-1])
        pvals[node] = math.exp(q_end)
        u0[node] = F * math.exp(-q_end)
        if pts.shape[0] < 2:
            continue
        ms = _field_on_domain(model.mu_s, pts[:, 0], pts[:, 1])
        inside = _inside_grid(model.grid, pts[:, 0], pts[:, 1])
        coef = w * np.exp(q - q_end) * ms
        keep = inside & (coef != 0.0)
        if not np.any(keep):
            continue
        idx, bw = kernels.bilinear_stencil(grid.shape, grid.x0, grid.y0, grid.h, grid.h_y, pts[keep, 0], pts[keep, 1])
        rows.append(np.full(idx.size, node))
        cols.append(idx.ravel())
        vals.append((coef[keep][:, None] * bw).ravel())
    if rows:
        M = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()
    else:
        M = sparse.csr_matrix((n, n))
    M.sum_duplicates()
    return _SourceAssembly(u0, pvals, M, Lmax)


@dataclass(frozen=True)
class ForwardSolution:
    """Radiance per source on the nodes of ``grid``; arrays are ``(n_src, m_y+1, m+1)``."""

    grid: Grid2D
    sources: SourceGrid
    u: np.ndarray = field(repr=False)
    u0: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    iterations: int = 0
    updates: tuple = ()
    K0: float = 0.0
    path_length: float = 0.0

    @property
    def m(self) -> float:
        """min u0 over nodes with depth >= a."""
        return float(self.u0.min())

    def restrict(self, grid: Grid2D) -> "ForwardSolution":
        """Sample every array at the nodes of a coarser grid aligned with this one."""
        X, Y = grid.mesh()
        g = self.grid

        def samp(arr):
            return np.stack(
                [kernels.bilinear(a, g.x0, g.y0, g.h, g.h_y, X.ravel(), Y.ravel()).reshape(grid.shape) for a in arr]
            )

        return ForwardSolution(
            grid, self.sources, samp(self.u), samp(self.u0), samp(self.p), self.iterations, self.updates, self.K0,
            self.path_length,
        )

    def meta(self) -> dict:
        return {
            "m": self.m,
            "K0": self.K0,
            "iterations": self.iterations,
            "max_path_length": self.path_length,
            "grid": {"m": self.grid.m, "m_y": self.grid.m_y},
            "n_sources": len(self.sources),
        }

    def write_u_csv(self, path) -> None:
        X, Y = self.grid.mesh()
        alphas = self.sources.nodes
        rows = []
        for j, al in enumerate(alphas):
            rows.append(np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, al), self.u[j].ravel(), self.u0[j].ravel()]))
        np.savetxt(Path(path), np.vstack(rows), delimiter=",", header="x,y,alpha,u,u0", comments="", fmt="%.15g")


def _scattering_weights(kernel: PhaseKernel, sources: SourceGrid) -> np.ndarray:
    """C[j, b] = trapezoid weight of b times K(alpha_j, alpha_b)."""
    return kernel.matrix(sources.nodes) * sources.weights[None, :]


def compute_u0(model: OpticalModel, grid: Grid2D, sources: SourceGrid, config: ForwardConfig = ForwardConfig()):
    """Unscattered radiance ``p^-1 int f dsigma`` per source and node, plus ``p``."""
    asm = _assemble_all(model, grid, sources, config)
    shape = (len(sources),) + grid.shape
    return np.stack([a.u0 for a in asm]).reshape(shape), np.stack([a.p for a in asm]).reshape(shape)


def _assemble_all(model, grid, sources, config):
    dom = grid.domain
    if grid.y0 < dom.a - 1e-12:
        raise ValueError("the forward grid must lie inside the closed domain")
    h_e = min(grid.h, grid.h_y) / config.eikonal_refine
    if model.metric.grid.h > h_e * (1 + 1e-9):
        raise ValueError(f"metric grid step {model.metric.grid.h:.4g} is coarser than the eikonal step {h_e:.4g}")
    spacing = config.vertex_spacing * min(grid.h, grid.h_y)
    out = []
    for al in sources.nodes:
        tt = solve_eikonal(model.metric, (al, 0.0), dom)
        out.append(_assemble_source(model, grid, tt, spacing))
    return out


def solve_forward(
    model: OpticalModel, grid: Grid2D, sources: SourceGrid, config: ForwardConfig = ForwardConfig()
) -> ForwardSolution:
    """Picard iteration of the integral equation on the nodes of ``grid``.

    Stops when the max-norm update drops below ``config.tol`` times
    ``max(1, max|u|)``; raises after ``config.max_iter`` sweeps.
    """
    asm = _assemble_all(model, grid, sources, config)
    return _iterate(asm, model, grid, sources, config)


def _iterate(asm, model, grid, sources, config) -> ForwardSolution:
    C = _scattering_weights(model.kernel, sources)
    U0 = np.stack([a.u0 for a in asm], axis=1)  # (n_nodes, n_src)
    U = U0.copy()
    updates = []
    it = 0
    while True:
        S = U @ C.T  # S[:, j] = sum_b C[j, b] u(., b)
        Unew = U0 + np.column_stack([asm[j].M @ S[:, j] for j in range(len(asm))])
        delta = float(np.max(np.abs(Unew - U)))
        U = Unew
        it += 1
        updates.append(delta)
        if delta < config.tol * max(1.0, float(np.max(np.abs(U)))):
            break
        if it >= config.max_iter:
            raise RuntimeError(f"Neumann iteration did not converge in {config.max_iter} sweeps; last update {delta:.3e}")
    shape = (len(sources),) + grid.shape
    K0 = float(model.mu_s.values.max()) * model.kernel.max_value()
    return ForwardSolution(
        grid,
        sources,
        U.T.reshape(shape),
        U0.T.reshape(shape),
        np.stack([a.p for a in asm]).reshape(shape),
        it,
        tuple(updates),
        K0,
        max(a.path_length for a in asm),
    )


def dense_volterra_solve(
    model: OpticalModel, grid: Grid2D, sources: SourceGrid, config: ForwardConfig = ForwardConfig()
) -> tuple[np.ndarray, np.ndarray]:
    """Assemble the full discrete operator and solve ``(I - V) u = u0`` directly.

    Returns the direct solution and the Picard solution, both ``(n_src, m_y+1, m+1)``.
    Intended for small grids.
    """
    asm = _assemble_all(model, grid, sources, config)
    C = _scattering_weights(model.kernel, sources)
    n = grid.shape[0] * grid.shape[1]
    J = len(sources)
    V = np.zeros((J * n, J * n))
    for j in range(J):
        Mj = asm[j].M.toarray()
        for b in range(J):
            V[j * n:(j + 1) * n, b * n:(b + 1) * n] = C[j, b] * Mj
    u0 = np.concatenate([a.u0 for a in asm])
    u = np.linalg.solve(np.eye(J * n) - V, u0)
    pic = _iterate(asm, model, grid, sources, config)
    return u.reshape((J,) + grid.shape), pic.u


# ---------------------------------------------------------------------------
# boundary data
# ---------------------------------------------------------------------------


def perimeter_nodes(grid: Grid2D):
    """Boundary node indices ``(k, i)`` and side ids, corners assigned to the depth faces."""
    ks, is_, side = [], [], []
    for i in range(grid.m + 1):
        ks.append(0), is_.append(i), side.append(SIDE_NEAR)
    for i in range(grid.m + 1):
        ks.append(grid.m_y), is_.append(i), side.append(SIDE_FAR)
    for k in range(1, grid.m_y):
        ks.append(k), is_.append(0), side.append(SIDE_LEFT)
    for k in range(1, grid.m_y):
        ks.append(k), is_.append(grid.m), side.append(SIDE_RIGHT)
    return np.array(ks), np.array(is_), np.array(side)


@dataclass(frozen=True)
class BoundaryDataSet:
    """Radiance on the perimeter of ``grid``; ``g`` has shape ``(n_perimeter, n_src)``.

    On the near side (depth a) the values are the unscattered radiance ``u0``.
    """

    grid: Grid2D
    alphas: np.ndarray
    side: np.ndarray
    k: np.ndarray
    i: np.ndarray
    g: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.g.shape != (self.side.size, self.alphas.size):
            raise ValueError(f"boundary values shape {self.g.shape} != ({self.side.size}, {self.alphas.size})")

    @property
    def x(self) -> np.ndarray:
        return self.grid.x[self.i]

    @property
    def y(self) -> np.ndarray:
        return self.grid.y[self.k]

    def on_grid(self) -> np.ndarray:
        """``(n_src, m_y+1, m+1)`` array, NaN at interior nodes."""
        out = np.full((self.alphas.size,) + self.grid.shape, np.nan)
        out[:, self.k, self.i] = self.g.T
        return out

    def with_values(self, g) -> "BoundaryDataSet":
        return BoundaryDataSet(self.grid, self.alphas, self.side, self.k, self.i, np.asarray(g, dtype=float))

    def to_csv(self, path) -> None:
        n, J = self.g.shape
        data = np.column_stack(
            [
                np.repeat(self.side, J),
                np.repeat(self.x, J),
                np.repeat(self.y, J),
                np.tile(self.alphas, n),
                self.g.ravel(),
            ]
        )
        np.savetxt(Path(path), data, delimiter=",", header="side,x,y,alpha,g", comments="", fmt="%.15g")

    @classmethod
    def from_csv(cls, path, grid: Grid2D) -> "BoundaryDataSet":
        data = np.genfromtxt(Path(path), delimiter=",", names=True)
        alphas = np.unique(np.round(data["alpha"], 12))
        ks, is_, side = perimeter_nodes(grid)
        pos = {(int(k), int(i)): r for r, (k, i) in enumerate(zip(ks, is_))}
        g = np.full((ks.size, alphas.size), np.nan)
        for s, x, y, al, val in zip(data["side"], data["x"], data["y"], data["alpha"], data["g"]):
            k, i = grid.index_of(x, y, tol=1e-6)
            j = int(np.argmin(np.abs(alphas - al)))
            g[pos[(k, i)], j] = val
        if np.any(np.isnan(g)):
            raise ValueError(f"{path}: boundary data incomplete for the configured grid")
        return cls(grid, alphas, side, ks, is_, g)


def extract_boundary(sol: ForwardSolution) -> BoundaryDataSet:
    """Perimeter radiance: ``u`` on the lateral and far sides, ``u0`` on the near side."""
    grid = sol.grid
    ks, is_, side = perimeter_nodes(grid)
    g = sol.u[:, ks, is_].T.copy()
    near = side == SIDE_NEAR
    g[near] = sol.u0[:, ks[near], is_[near]].T
    if np.any(g <= 0) or not np.all(np.isfinite(g)):
        r, j = np.argwhere(~(g > 0))[0]
        raise ValueError(
            f"non-positive boundary radiance {g[r, j]:.6g} at ({grid.x[is_[r]]:.6g}, {grid.y[ks[r]]:.6g}), "
            f"source {sol.sources.nodes[j]:.6g}"
        )
    return BoundaryDataSet(grid, sol.sources.nodes.copy(), side, ks, is_, g)
