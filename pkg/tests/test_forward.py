from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from rrte.eikonal import MetricField, eikonal_grid, layered_metric
from rrte.forward import (
    BoundaryDataSet,
    ForwardConfig,
    OpticalModel,
    PhaseKernel,
    compute_u0,
    dense_volterra_solve,
    extract_boundary,
    mollifier_constant,
    perimeter_nodes,
    solve_forward,
    source_f,
)
from rrte.grid import Domain2D, Grid2D, SourceGrid

DOM = Domain2D()


def small_model(grid, mu_a=0.0, mu_s=1.0, metric=None):
    if metric is None:
        metric = MetricField.from_function(eikonal_grid(DOM, grid.h / 2), layered_metric)
    return OpticalModel(grid.field(np.full(grid.shape, mu_a)), grid.field(np.full(grid.shape, mu_s)), metric)


@pytest.mark.parametrize("eps", [0.02, 0.05, 0.2])
def test_mollifier_has_unit_mass(eps):
    val, _ = integrate.dblquad(
        lambda y, x: source_f(np.array([x, y]), (0.0, 0.0), eps), -eps, eps, -eps, eps, epsabs=1e-10
    )
    assert val == pytest.approx(1.0, abs=1e-6)
    assert source_f(np.array([eps, 0.0]), (0.0, 0.0), eps) == 0.0
    assert source_f(np.array([0.0, 0.0]), (0.0, 0.0), eps) == pytest.approx(mollifier_constant(eps))


def test_phase_kernel():
    K = PhaseKernel(0.5, 0.5)
    assert K(0.2, 0.2) == pytest.approx(0.75 / (2 * 0.5 * 0.25))
    a, b, h = 0.3, -0.1, 1e-6
    assert K.d_alpha(a, b) == pytest.approx((K(a + h, b) - K(a - h, b)) / (2 * h), rel=1e-7)
    M = K.matrix(np.linspace(-0.5, 0.5, 5))
    np.testing.assert_allclose(M, M.T)
    assert K.max_value() == pytest.approx(M.max())
    with pytest.raises(ValueError):
        PhaseKernel(g=1.0)


def test_model_validation():
    g = Grid2D(DOM, 4, 4)
    met = MetricField.uniform(eikonal_grid(DOM, 0.05))
    with pytest.raises(ValueError):
        OpticalModel(g.field(-np.ones(g.shape)), g.zeros(), met)
    with pytest.raises(ValueError):
        OpticalModel(g.zeros(), g.zeros(), met, source_eps=1.5)


def test_coarse_metric_is_rejected():
    g = Grid2D(DOM, 10, 10)
    model = small_model(g, metric=MetricField.uniform(eikonal_grid(DOM, 0.1)))
    with pytest.raises(ValueError, match="coarser"):
        solve_forward(model, g, SourceGrid(0.5, 2))


@settings(max_examples=5, deadline=None)
@given(mu_a=st.floats(0.0, 3.0))
def test_unscattered_radiance_matches_closed_form(mu_a):
    """Constant metric, no scattering: straight rays, exponential attenuation inside the slab."""
    g = Grid2D(DOM, 4, 4)
    met = MetricField.uniform(eikonal_grid(DOM, g.h / 4), 1.0)
    model = small_model(g, mu_a=mu_a, mu_s=0.0, metric=met)
    src = SourceGrid(0.5, 2)
    u0, p = compute_u0(model, g, src, ForwardConfig(eikonal_refine=4))
    eps = model.source_eps
    c = mollifier_constant(eps)
    radial, _ = integrate.quad(lambda r: c * np.exp(r * r / (r * r - eps * eps)), 0.0, eps, epsabs=1e-13)
    X, Y = g.mesh()
    for j, al in enumerate(src.nodes):
        slab = np.hypot(X - al, Y) * (Y - DOM.a) / Y
        np.testing.assert_allclose(u0[j], radial * np.exp(-mu_a * slab), rtol=2e-3)
        np.testing.assert_allclose(p[j], np.exp(mu_a * slab), rtol=1e-5)


def test_dense_oracle_on_small_grid():
    g = Grid2D(DOM, 5, 5)
    ud, up = dense_volterra_solve(small_model(g, mu_a=0.5, mu_s=1.0), g, SourceGrid(0.5, 4))
    assert np.max(np.abs(ud - up)) / np.max(np.abs(ud)) < 1e-8


@pytest.fixture(scope="module")
def solution():
    g = Grid2D(DOM, 10, 10)
    mu_a = np.zeros(g.shape)
    mu_a[4:7, 3:6] = 2.0
    met = MetricField.from_function(eikonal_grid(DOM, g.h / 2), layered_metric)
    model = OpticalModel(g.field(mu_a), g.field(np.full(g.shape, 5.0)), met)
    return solve_forward(model, g, SourceGrid(0.5, 6))


def test_positivity_and_scattering_gain(solution):
    assert solution.m > 0
    assert np.all(solution.u >= solution.m)
    assert np.all(solution.u >= solution.u0 * (1 - 1e-12))
    assert solution.iterations < 100
    upd = np.array(solution.updates)
    assert upd[-1] < upd[0]


def test_mirror_symmetry(solution):
    # symmetric metric and sources; mirror the radiance in x and alpha
    g = Grid2D(DOM, 10, 10)
    met = MetricField.from_function(eikonal_grid(DOM, g.h / 2), layered_metric)
    X, _ = g.mesh()
    mu_a = np.where(np.abs(X) < 0.25, 1.0, 0.0)
    sol = solve_forward(OpticalModel(g.field(mu_a), g.field(np.full(g.shape, 2.0)), met), g, SourceGrid(0.5, 4))
    np.testing.assert_allclose(sol.u, sol.u[::-1, :, ::-1], rtol=1e-10)


def test_restrict_keeps_shared_nodes(solution):
    coarse = Grid2D(DOM, 5, 5)
    r = solution.restrict(coarse)
    np.testing.assert_allclose(r.u, solution.u[:, ::2, ::2], rtol=1e-12)
    assert r.meta()["grid"] == {"m": 5, "m_y": 5}


def test_boundary_extraction_and_csv(solution, tmp_path):
    bd = extract_boundary(solution)
    ks, is_, side = perimeter_nodes(solution.grid)
    assert bd.g.shape == (ks.size, len(solution.sources))
    assert np.all(bd.g > 0)
    near = side == 1
    np.testing.assert_allclose(bd.g[near], solution.u0[:, ks[near], is_[near]].T)
    bd.to_csv(tmp_path / "b.csv")
    back = BoundaryDataSet.from_csv(tmp_path / "b.csv", solution.grid)
    np.testing.assert_allclose(back.g, bd.g, rtol=1e-14)
    grid = bd.on_grid()
    assert np.isnan(grid[:, 1:-1, 1:-1]).all() and not np.isnan(grid[:, 0, :]).any()


def test_truncated_csv_is_rejected(solution, tmp_path):
    bd = extract_boundary(solution)
    bd.to_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    (tmp_path / "short.csv").write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(ValueError, match="incomplete"):
        BoundaryDataSet.from_csv(tmp_path / "short.csv", solution.grid)
