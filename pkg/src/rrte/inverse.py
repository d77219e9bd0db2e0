"""Carleman-weighted Galerkin reconstruction of the attenuation coefficient.

With ``u = exp(v)`` and ``w = (tau_y / sqrt(eps_r)) v`` the log-radiance obeys,
for every source position alpha,

    w_y + c1 w_x + c0 w - mu_s exp(-rho w(alpha)) int K(alpha, b) exp(rho w(b)) db = -a(x),

where ``rho = sqrt(eps_r) / tau_y``, ``c1 = tau_x / tau_y`` and
``c0 = (tau_x / sqrt(eps_r)) rho_x + rho_y / rho``.  The right side does not
depend on alpha, so the alpha-derivative of the left side vanishes.  Writing
``w = sum_n w_n Q_n(alpha)`` and projecting onto ``Q_s`` gives, per node,

    B V_y + A1 V_x + A0 V - Fsc(V) = 0,

which is solved in the least-squares sense with the depth weight
``exp(2 lambda y)``.  Arrays are ``(N, m_y+1, m+1)``; residuals live on the
interior columns ``i = 1..m-1`` and every depth row.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .basis import BasisSet, project, synthesize_prime
from .eikonal import MetricField, TravelTimeField, sample_gradients
from .forward import BoundaryDataSet, PhaseKernel
from .grid import Grid2D, ScalarField2D, depth_weights, diff_x, diff_y, inner_H1h, norm_H1h, trapezoid_weights

__all__ = [
    "FunctionalConfig",
    "SystemCoefficients",
    "BoundaryVector",
    "ReconstructionResult",
    "assemble_system",
    "projection_weights",
    "boundary_coefficients",
    "starting_point",
    "residual",
    "evaluate_J",
    "gradient_J",
    "minimize",
    "recover_a",
    "contrast",
    "convexity_probe",
    "true_coefficients",
]

log = logging.getLogger(__name__)

EXP_LIMIT = 600.0


@dataclass(frozen=True)
class FunctionalConfig:
    lam: float = 5.0
    R: float | None = None  # admissible radius, diagnostic only
    grad_tol: float = 1e-2  # relative to max(1, initial gradient norm)
    max_iters: int = 500
    beta: float | None = None  # fixed step for gradient descent; None picks one by line search
    optimizer: str = "qn"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if self.grad_tol <= 0:
            raise ValueError(f"grad_tol must be positive, got {self.grad_tol}")
        if self.optimizer not in ("qn", "gd"):
            raise ValueError(f"optimizer must be 'qn' or 'gd', got {self.optimizer!r}")


@dataclass(frozen=True)
class SystemCoefficients:
    """Everything the residual needs, precomputed per node and source.

    Per-source arrays are ``(J, m_y+1, m+1)``; ``A1``/``A0`` are
    ``(N, N, m_y+1, m-1)`` on the interior columns.
    """

    grid: Grid2D
    basis: BasisSet
    alphas: np.ndarray
    weights: np.ndarray  # trapezoid weights in alpha
    Qa: np.ndarray  # (J, N) Q_n(alpha_j)
    Qpa: np.ndarray  # (J, N) Q_n'(alpha_j)
    test: np.ndarray  # (J, N) quadrature weights of the projection onto Q_s
    sqrt_eps: np.ndarray = field(repr=False)  # (m_y+1, m+1)
    tau_x: np.ndarray = field(repr=False)
    tau_y: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)
    rho_a: np.ndarray = field(repr=False)
    A1: np.ndarray = field(repr=False)
    A0: np.ndarray = field(repr=False)
    mu_s: np.ndarray = field(repr=False)  # (m_y+1, m+1)
    Kc: np.ndarray = field(repr=False)  # (J, J) K(alpha_j, alpha_b) * weight_b
    Kac: np.ndarray = field(repr=False)  # (J, J) d_alpha K * weight_b
    kernel: PhaseKernel = PhaseKernel()
    projection: str = "trapezoid"

    @property
    def N(self) -> int:
        return self.basis.N


def _alpha_weights(alphas: np.ndarray) -> np.ndarray:
    return trapezoid_weights(alphas.size, alphas[1] - alphas[0])


def projection_weights(basis: BasisSet, alphas: np.ndarray, method: str = "trapezoid") -> np.ndarray:
    """Matrix ``W`` with ``project(basis, f, alphas, method) == f @ W`` for samples ``f`` at ``alphas``."""
    return project(basis, np.eye(alphas.size), alphas, method).T


def assemble_system(
    tts: list[TravelTimeField],
    metric: MetricField,
    grid: Grid2D,
    basis: BasisSet,
    mu_s: ScalarField2D,
    kernel: PhaseKernel,
    tau_basis: BasisSet | None = None,
    projection: str = "trapezoid",
) -> SystemCoefficients:
    """Sample ``grad tau`` at the grid nodes and build the Galerkin coefficients.

    The alpha-derivatives of ``tau_x`` and ``tau_y`` come from their
    projection onto ``tau_basis`` (default: ``basis``) differentiated with
    ``Q_n'``.  Derivatives of the remaining factors follow by the product rule.
    Every alpha-projection uses the quadrature named by ``projection``
    (see :func:`rrte.basis.project`).
    """
    alphas = np.array([t.source[0] for t in tts])
    if abs(alphas[0] + basis.d) > 1e-9 or abs(alphas[-1] - basis.d) > 1e-9:
        raise ValueError("source nodes do not span the basis interval")
    tb = basis if tau_basis is None else tau_basis
    wts = _alpha_weights(alphas)
    X, Y = grid.mesh()
    sq = np.sqrt(metric(X, Y))
    gx, gy = sample_gradients(tts, grid)  # (ny, nx, J)
    if np.any(gy <= 0):
        raise ValueError("tau_y must be positive on the grid")
    gxa = synthesize_prime(tb, project(tb, gx, alphas, projection), alphas)
    gya = synthesize_prime(tb, project(tb, gy, alphas, projection), alphas)
    # alpha first from here on
    tx, ty, txa, tya = (np.moveaxis(a, -1, 0) for a in (gx, gy, gxa, gya))
    rho = sq / ty
    rho_a = -sq * tya / ty**2
    c1 = tx / ty
    c1_a = (txa * ty - tx * tya) / ty**2
    inner = slice(1, -1)
    rho_x = diff_x(rho, grid.h)
    rho_xa = diff_x(rho_a, grid.h)
    rho_y = diff_y(rho, grid.h_y)[..., inner]
    rho_ya = diff_y(rho_a, grid.h_y)[..., inner]
    sqi = sq[None, :, inner]
    ri, rai = rho[..., inner], rho_a[..., inner]
    c0 = tx[..., inner] / sqi * rho_x + rho_y / ri
    c0_a = txa[..., inner] / sqi * rho_x + tx[..., inner] / sqi * rho_xa + (rho_ya * ri - rho_y * rai) / ri**2
    Qa = basis.values(alphas)
    Qpa = basis.derivatives(alphas)
    wQ = projection_weights(basis, alphas, projection)

    def proj(coef_a, coef):
        # M[s, n] = sum_j w_j Q_s(a_j) (coef_a Q_n + coef Q_n')(a_j)
        return np.einsum("js,jn,jkl->snkl", wQ, Qa, coef_a) + np.einsum("js,jn,jkl->snkl", wQ, Qpa, coef)

    A1 = proj(c1_a[..., inner], c1[..., inner])
    A0 = proj(c0_a, c0)
    Kc = kernel.matrix(alphas) * wts[None, :]
    Kac = kernel.d_alpha(alphas[:, None], alphas[None, :]) * wts[None, :]
    return SystemCoefficients(
        grid, basis, alphas, wts, Qa, Qpa, wQ, sq, tx, ty, rho, rho_a, A1, A0,
        np.asarray(mu_s.values, dtype=float), Kc, Kac, kernel, projection,
    )


# ---------------------------------------------------------------------------
# boundary data and starting point
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryVector:
    """Boundary coefficients ``P`` on the perimeter; ``values`` is ``(N, m_y+1, m+1)`` with NaN inside."""

    grid: Grid2D
    values: np.ndarray = field(repr=False)

    @property
    def mask(self) -> np.ndarray:
        return self.grid.boundary_mask()

    def max_abs(self) -> float:
        return float(np.nanmax(np.abs(self.values)))


def boundary_w(bd: BoundaryDataSet, tts, metric: MetricField) -> np.ndarray:
    """``(tau_y / sqrt(eps_r)) ln g_1`` on the perimeter, shape ``(n_perimeter, J)``.

    Non-positive values are clipped to ``1e-6`` times the smallest positive
    value before the logarithm, with a warning.
    """
    g = np.array(bd.g, dtype=float)
    bad = ~(g > 0)
    if np.any(bad):
        pos = g[g > 0]
        if pos.size == 0:
            raise ValueError("boundary data has no positive values")
        r, j = np.argwhere(bad)[0]
        warnings.warn(
            f"{bad.sum()} non-positive boundary values (first at ({bd.x[r]:.4g}, {bd.y[r]:.4g}), "
            f"alpha={bd.alphas[j]:.4g}); clipped before the logarithm",
            RuntimeWarning,
            stacklevel=2,
        )
        g = np.where(bad, 1e-6 * pos.min(), g)
    gy = np.stack([t.tau_y(bd.x, bd.y) for t in tts], axis=-1)
    sq = np.sqrt(metric(bd.x, bd.y))[:, None]
    return gy / sq * np.log(g)


def boundary_coefficients(
    bd: BoundaryDataSet, tts, metric: MetricField, basis: BasisSet, method: str = "trapezoid", clip: bool = False
) -> BoundaryVector:
    """Project the boundary values of ``w`` onto the basis.

    Non-positive radiance raises unless ``clip`` is set.
    """
    if not clip and np.any(~(bd.g > 0)):
        r, j = np.argwhere(~(bd.g > 0))[0]
        raise ValueError(
            f"non-positive boundary radiance {bd.g[r, j]:.6g} at ({bd.x[r]:.6g}, {bd.y[r]:.6g}), alpha={bd.alphas[j]:.6g}"
        )
    wb = boundary_w(bd, tts, metric)
    P = project(basis, wb, bd.alphas, method)  # (N, n_perimeter)
    vals = np.full((basis.N,) + bd.grid.shape, np.nan)
    vals[:, bd.k, bd.i] = P
    return BoundaryVector(bd.grid, vals)


def starting_point(P: BoundaryVector) -> np.ndarray:
    """Average of the transverse and depth linear interpolations of the boundary values."""
    g = P.grid
    V = np.array(P.values)
    X, Y = g.mesh()
    A = 0.5 * (g.x1 - g.x0)
    sx = (X - g.x0) / (2 * A)
    sy = (Y - g.y0) / (g.y1 - g.y0)
    left, right = V[:, :, :1], V[:, :, -1:]
    near, far = V[:, :1, :], V[:, -1:, :]
    interp = 0.5 * ((1 - sx) * left + sx * right) + 0.5 * ((1 - sy) * near + sy * far)
    inside = ~g.boundary_mask()
    V[:, inside] = interp[:, inside]
    return V


# ---------------------------------------------------------------------------
# residual, functional, gradient
# ---------------------------------------------------------------------------


def _local_terms(V: np.ndarray, sc: SystemCoefficients):
    """Per interior node quantities of the scattering term, alpha first."""
    inner = slice(1, -1)
    Vi = V[..., inner]
    w = np.einsum("jn,nkl->jkl", sc.Qa, Vi)
    wa = np.einsum("jn,nkl->jkl", sc.Qpa, Vi)
    rho = sc.rho[..., inner]
    rho_a = sc.rho_a[..., inner]
    v = rho * w
    va = rho_a * w + rho * wa
    if np.max(np.abs(v)) > EXP_LIMIT:
        raise OverflowError(f"log-radiance reached {np.max(np.abs(v)):.3g}; iterate far outside the admissible set")
    vmax = v.max(axis=0, keepdims=True)
    ev = np.exp(v - vmax)  # shifted to avoid overflow; ratios are exact
    I = np.einsum("jb,bkl->jkl", sc.Kc, ev)
    Ia = np.einsum("jb,bkl->jkl", sc.Kac, ev)
    emv = np.exp(vmax - v)
    mus = sc.mu_s[None, :, inner]
    D = mus * emv * (Ia - va * I)  # d/d alpha of the scattering term
    return w, wa, rho, rho_a, v, va, ev, emv, I, Ia, mus, D


def residual(V: np.ndarray, sc: SystemCoefficients) -> np.ndarray:
    """Galerkin residual on the interior columns, shape ``(N, m_y+1, m-1)``."""
    g = sc.grid
    V = np.asarray(V, dtype=float)
    Vy = diff_y(V, g.h_y)[..., 1:-1]
    Vx = diff_x(V, g.h)
    R = np.einsum("sn,nkl->skl", sc.basis.B, Vy)
    R += np.einsum("snkl,nkl->skl", sc.A1, Vx)
    R += np.einsum("snkl,nkl->skl", sc.A0, V[..., 1:-1])
    D = _local_terms(V, sc)[-1]
    R -= np.einsum("js,jkl->skl", sc.test, D)
    return R


def _node_weights(grid: Grid2D, lam: float) -> np.ndarray:
    """``h * trapezoid depth weight * exp(2 lambda y)`` on the interior columns."""
    wy = depth_weights(grid) * np.exp(2.0 * lam * grid.y)
    return np.broadcast_to((grid.h * wy)[:, None], (grid.m_y + 1, grid.m - 1))


def evaluate_J(V: np.ndarray, sc: SystemCoefficients, cfg: FunctionalConfig) -> float:
    R = residual(V, sc)
    return float(np.sum(_node_weights(sc.grid, cfg.lam) * np.sum(R * R, axis=0)))


def _diff_y_adjoint(psi: np.ndarray, h_y: float) -> np.ndarray:
    """Transpose of :func:`rrte.grid.diff_y` along the depth axis."""
    out = np.zeros_like(psi)
    c = 1.0 / (2.0 * h_y)
    mid = psi[..., 1:-1, :]
    out[..., 2:, :] += c * mid
    out[..., :-2, :] -= c * mid
    p0, pl = psi[..., 0, :], psi[..., -1, :]
    out[..., 0, :] += -3.0 * c * p0
    out[..., 1, :] += 4.0 * c * p0
    out[..., 2, :] += -c * p0
    out[..., -1, :] += 3.0 * c * pl
    out[..., -2, :] += -4.0 * c * pl
    out[..., -3, :] += c * pl
    return out


def _J_and_grad(V: np.ndarray, sc: SystemCoefficients, lam: float):
    g = sc.grid
    V = np.asarray(V, dtype=float)
    w, wa, rho, rho_a, v, va, ev, emv, I, Ia, mus, D = _local_terms(V, sc)
    Vy = diff_y(V, g.h_y)[..., 1:-1]
    Vx = diff_x(V, g.h)
    R = np.einsum("sn,nkl->skl", sc.basis.B, Vy)
    R += np.einsum("snkl,nkl->skl", sc.A1, Vx)
    R += np.einsum("snkl,nkl->skl", sc.A0, V[..., 1:-1])
    R -= np.einsum("js,jkl->skl", sc.test, D)
    W = _node_weights(g, lam)
    J = float(np.sum(W * np.sum(R * R, axis=0)))

    phi = 2.0 * W[None] * R  # dJ/dR
    G = np.zeros_like(V)
    # depth derivative term
    psi_y = np.zeros_like(V)
    psi_y[..., 1:-1] = np.einsum("sn,skl->nkl", sc.basis.B, phi)
    G += _diff_y_adjoint(psi_y, g.h_y)
    # transverse derivative term
    psi_x = np.einsum("snkl,skl->nkl", sc.A1, phi) / (2.0 * g.h)
    G[..., 2:] += psi_x
    G[..., :-2] -= psi_x
    # zeroth-order term
    G[..., 1:-1] += np.einsum("snkl,skl->nkl", sc.A0, phi)
    # scattering term: R -= sum_j wt_j Q_s(a_j) D_j
    gD = -np.einsum("js,skl->jkl", sc.test, phi)  # dJ/dD_j
    # D_j = mus * emv_j * (Ia_j - va_j I_j) with emv_j = exp(-v_j) (shift cancels)
    g_va = -gD * mus * emv * I
    g_v = -gD * D  # explicit exp(-v_j)
    coefI = gD * mus * emv * (-va)
    coefIa = gD * mus * emv
    # I_j = sum_b Kc[j,b] e^{v_b}; Ia_j likewise with Kac
    g_v += ev * (np.einsum("jb,jkl->bkl", sc.Kc, coefI) + np.einsum("jb,jkl->bkl", sc.Kac, coefIa))
    g_w = rho * g_v + rho_a * g_va
    g_wa = rho * g_va
    G[..., 1:-1] += np.einsum("jn,jkl->nkl", sc.Qa, g_w) + np.einsum("jn,jkl->nkl", sc.Qpa, g_wa)
    G[..., 0] = 0.0
    G[..., -1] = 0.0
    G[:, 0, :] = 0.0
    G[:, -1, :] = 0.0
    return J, G


def gradient_J(V: np.ndarray, sc: SystemCoefficients, cfg: FunctionalConfig) -> np.ndarray:
    """Exact gradient of the discrete functional in the node values, zero on the boundary."""
    return _J_and_grad(V, sc, cfg.lam)[1]


def gradient_norm(G: np.ndarray, grid: Grid2D) -> float:
    """H1h norm of the gradient representer (gradient divided by the nodal area)."""
    return norm_H1h(G / (grid.h * grid.h_y), grid)


# ---------------------------------------------------------------------------
# minimization
# ---------------------------------------------------------------------------


@dataclass
class ReconstructionResult:
    a_hat: ScalarField2D
    V_final: np.ndarray = field(repr=False)
    J_history: list = field(default_factory=list)
    grad_norm_history: list = field(default_factory=list)
    grad_max_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    line_search_failed: bool = False
    contrast: float = float("nan")
    ball_exits: int = 0

    def history_rows(self):
        return list(zip(range(len(self.J_history)), self.J_history, self.grad_norm_history, self.grad_max_history))


@dataclass
class _Tracker:
    sc: SystemCoefficients
    cfg: FunctionalConfig
    V0: np.ndarray
    free: np.ndarray
    J_history: list = field(default_factory=list)
    gn: list = field(default_factory=list)
    gm: list = field(default_factory=list)
    best: tuple = (math.inf, None)
    ball_exits: int = 0
    ref: float = 1.0

    def full(self, z):
        V = self.V0.copy()
        V[self.free] = z
        return V

    def fg(self, z):
        V = self.full(z)
        J, G = _J_and_grad(V, self.sc, self.cfg.lam)
        if J < self.best[0]:
            self.best = (J, z.copy())
        return J, G[self.free]

    def record(self, z, J, Gf):
        G = np.zeros_like(self.V0)
        G[self.free] = Gf
        n = gradient_norm(G, self.sc.grid)
        self.J_history.append(float(J))
        self.gn.append(n)
        self.gm.append(float(np.max(np.abs(Gf))) if Gf.size else 0.0)
        if self.cfg.R is not None and norm_H1h(self.full(z), self.sc.grid) >= self.cfg.R:
            self.ball_exits += 1
            log.warning("iterate left the ball of radius %g", self.cfg.R)
        return n


def minimize(V0: np.ndarray, sc: SystemCoefficients, cfg: FunctionalConfig) -> ReconstructionResult:
    """Minimize the weighted functional over states sharing the boundary values of ``V0``.

    Stops when the gradient norm falls below ``grad_tol * max(1, initial norm)``.
    """
    V0 = np.array(V0, dtype=float)
    free = np.zeros(V0.shape, dtype=bool)
    free[:, 1:-1, 1:-1] = True
    tr = _Tracker(sc, cfg, V0, free)
    z0 = V0[free].copy()
    J0, G0 = tr.fg(z0)
    n0 = tr.record(z0, J0, G0)
    tr.ref = max(1.0, n0)
    target = cfg.grad_tol * tr.ref
    converged = n0 < target
    failed = False
    z = z0
    if not converged:
        if cfg.optimizer == "qn":
            z, converged, failed = _run_lbfgs(tr, z0, target)
        else:
            z, converged, failed = _run_gd(tr, z0, J0, G0, target)
    if failed and tr.best[1] is not None:
        z = tr.best[1]
    Vf = tr.full(z)
    a = recover_a(Vf, sc)
    return ReconstructionResult(
        a, Vf, tr.J_history, tr.gn, tr.gm, len(tr.J_history) - 1, converged, failed, contrast(a, sc), tr.ball_exits
    )


def _run_lbfgs(tr: _Tracker, z0, target):
    state = {"z": z0, "conv": False}

    def cb(intermediate_result):
        z = intermediate_result.x
        J, G = tr.fg(z)
        n = tr.record(z, J, G)
        state["z"] = z.copy()
        if n < target:
            state["conv"] = True
            raise StopIteration

    res = optimize.minimize(
        tr.fg, z0, jac=True, method="L-BFGS-B", callback=cb,
        options={"maxiter": tr.cfg.max_iters, "maxcor": 10, "ftol": 0.0, "gtol": 0.0, "maxls": 40},
    )
    if state["conv"]:
        return state["z"], True, False
    # status 2 is an abnormal line-search exit
    return res.x, False, res.status == 2


def _run_gd(tr: _Tracker, z, J, G, target, c1=1e-4, shrink=0.5, max_backtracks=60):
    beta = tr.cfg.beta
    if beta is None:
        # one backtracking search from a unit-scale step fixes beta for the run
        gg = float(G @ G)
        beta = 1.0 / math.sqrt(gg) if gg > 0 else 1.0
        for _ in range(max_backtracks):
            if tr.fg(z - beta * G)[0] <= J - c1 * beta * gg:
                break
            beta *= shrink
    for _ in range(tr.cfg.max_iters):
        gg = float(G @ G)
        step = beta
        for _ in range(max_backtracks):
            zn = z - step * G
            Jn, Gn = tr.fg(zn)
            if Jn <= J - c1 * step * gg:
                break
            step *= shrink
        else:
            return z, False, True
        z, J, G = zn, Jn, Gn
        if tr.record(z, J, G) < target:
            return z, True, False
    return z, False, False


# ---------------------------------------------------------------------------
# reconstruction of a
# ---------------------------------------------------------------------------


def recover_a(V: np.ndarray, sc: SystemCoefficients) -> ScalarField2D:
    """Attenuation from the transport equation averaged over alpha.

    ``a = -(1/2d) int (grad tau / sqrt(eps_r)) . grad v dalpha + (1/2d) int mu_s e^{-v} int K e^{v} db dalpha``
    with ``v = rho * sum_n w_n Q_n``; spatial derivatives by central differences
    (one-sided second order on the box faces).
    """
    g = sc.grid
    w = np.einsum("jn,nkl->jkl", sc.Qa, np.asarray(V, dtype=float))
    v = sc.rho * w
    vy, vx = np.gradient(v, g.h_y, g.h, axis=(1, 2), edge_order=2)
    transport = (sc.tau_x * vx + sc.tau_y * vy) / sc.sqrt_eps[None]
    vmax = v.max(axis=0, keepdims=True)
    ev = np.exp(v - vmax)
    I = np.einsum("jb,bkl->jkl", sc.Kc, ev)
    scat = sc.mu_s[None] * np.exp(vmax - v) * I
    two_d = sc.alphas[-1] - sc.alphas[0]
    a = np.tensordot(sc.weights, scat - transport, axes=(0, 0)) / two_d
    return g.field(a)


def contrast(a_hat: ScalarField2D, sc: SystemCoefficients, mu_s_level: float | None = None) -> float:
    """``1 + max(mu_a) / mu_s`` over interior nodes with ``mu_a = max(a_hat - mu_s, 0)``."""
    level = float(np.max(sc.mu_s)) if mu_s_level is None else mu_s_level
    mu_a = np.maximum(a_hat.values - sc.mu_s, 0.0)[1:-1, 1:-1]
    return 1.0 + float(mu_a.max()) / level


def true_coefficients(u: np.ndarray, sc: SystemCoefficients, method: str | None = None) -> np.ndarray:
    """Project ``w = ln(u) / rho`` of a radiance stack ``(J, m_y+1, m+1)`` onto the basis.

    ``method`` defaults to the quadrature the system was assembled with.
    """
    w = np.log(u) / sc.rho
    return project(sc.basis, np.moveaxis(w, 0, -1), sc.alphas, method or sc.projection)


# ---------------------------------------------------------------------------
# convexity probe
# ---------------------------------------------------------------------------


def convexity_probe(
    sc: SystemCoefficients, cfg: FunctionalConfig, center: np.ndarray, R: float, trials: int = 100, rng_seed: int = 0
) -> dict:
    """Bregman gaps of the functional on random pairs sharing the boundary of ``center``.

    Pairs are drawn as ``center + r * z / |z|`` with smooth random interior
    perturbations ``z`` and ``r`` uniform in ``[0, R)``.  The ratio divides the
    gap by ``max(lambda, 1)^2 exp(2 lambda a) |V2 - V1|^2``.
    """
    rng = np.random.default_rng(rng_seed)
    g = sc.grid
    lam = cfg.lam
    scale = max(lam, 1.0) ** 2 * math.exp(2.0 * lam * g.y0)
    gaps, ratios, sym = [], [], []
    for _ in range(trials):
        V1 = center + _random_interior(rng, center.shape, g, R)
        V2 = center + _random_interior(rng, center.shape, g, R)
        J1, G1 = _J_and_grad(V1, sc, lam)
        J2, G2 = _J_and_grad(V2, sc, lam)
        dV = V2 - V1
        D12 = J2 - J1 - float(np.sum(G1 * dV))
        D21 = J1 - J2 + float(np.sum(G2 * dV))
        n2 = inner_H1h(dV, dV, g)
        gaps.append(D12)
        ratios.append(D12 / (scale * n2))
        sym.append(abs(D12 + D21 - float(np.sum((G2 - G1) * dV))) / max(1.0, abs(D12) + abs(D21)))
    carleman = carleman_quotient(sc, lam, rng, trials=min(trials, 20))
    return {
        "lambda": lam,
        "trials": trials,
        "radius": R,
        "gaps_nonnegative": int(np.sum(np.array(gaps) >= 0)),
        "min_gap": float(np.min(gaps)),
        "min_ratio": float(np.min(ratios)),
        "max_symmetry_defect": float(np.max(sym)),
        "carleman_min_quotient": carleman,
    }


def _random_interior(rng, shape, grid: Grid2D, R: float) -> np.ndarray:
    """Smooth random field vanishing on the boundary with H1h norm uniform in [0, R)."""
    N, ny, nx = shape
    X, Y = grid.mesh()
    sx = (X - grid.x0) / (grid.x1 - grid.x0)
    sy = (Y - grid.y0) / (grid.y1 - grid.y0)
    z = np.zeros(shape)
    for p in range(1, 4):
        for q in range(1, 4):
            z += rng.standard_normal((N, 1, 1)) * (np.sin(p * np.pi * sx) * np.sin(q * np.pi * sy))[None] / (p * q)
    z[:, grid.boundary_mask()] = 0.0
    n = norm_H1h(z, grid)
    return z * (rng.uniform(0.0, R) / n if n > 0 else 0.0)


def carleman_quotient(sc: SystemCoefficients, lam: float, rng, trials: int = 20) -> float:
    """min over random fields vanishing on the boundary of the weighted principal-part norm over
    ``lambda exp(2 lambda a) |V|^2``."""
    g = sc.grid
    W = _node_weights(g, lam)
    out = math.inf
    for _ in range(trials):
        z = _random_interior(rng, (sc.N,) + g.shape, g, 1.0)
        Lz = np.einsum("sn,nkl->skl", sc.basis.B, diff_y(z, g.h_y)[..., 1:-1])
        Lz += np.einsum("snkl,nkl->skl", sc.A1, diff_x(z, g.h))
        num = float(np.sum(W * np.sum(Lz * Lz, axis=0)))
        den = max(lam, 1.0) * math.exp(2.0 * lam * g.y0) * inner_H1h(z, z, g)
        if den > 0:
            out = min(out, num / den)
    return out
