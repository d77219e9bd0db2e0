from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dijkstra_travel_time
from rrte.basis import build_basis
from rrte.eikonal import (
    GeodesicPolyline,
    MetricField,
    eikonal_grid,
    layered_metric,
    line_integral,
    solve_eikonal,
    tau_fourier_coeffs,
    trace_geodesic,
    trace_geodesics,
)
from rrte.grid import Domain2D, Grid2D, SourceGrid

DOM = Domain2D()


@pytest.fixture(scope="module")
def layered():
    return MetricField.from_function(eikonal_grid(DOM, 1 / 40), layered_metric)


def test_layered_metric_values():
    assert layered_metric(0.3, 0.9) == 1.0
    assert layered_metric(0.3, 1.0) == 1.0
    assert layered_metric(0.5, np.e) == pytest.approx(1.25)


def test_eikonal_grid_covers_domain_with_square_cells():
    g = eikonal_grid(DOM, 0.05)
    assert g.h == pytest.approx(g.h_y)
    assert g.x0 < -0.5 and g.x1 > 0.5 and g.y0 == 0.0 and g.y1 > 2.0
    # domain nodes of a grid with step 2h are eikonal nodes
    fine = Grid2D(DOM, 10, 10)
    for x in fine.x:
        assert np.min(np.abs(g.x - x)) < 1e-12


def test_metric_rejects_nonpositive_values():
    g = eikonal_grid(DOM, 0.1)
    with pytest.raises(ValueError):
        MetricField(g.field(np.zeros(g.shape)))


def test_regularity_report(layered):
    rep = layered.check_regularity(DOM)
    assert rep["at_least_one"] and rep["depth_monotone"]
    # the test metric exceeds 1 at |x| >= A inside the slab depth range
    assert not rep["unit_outside_slab"]
    assert MetricField.uniform(layered.grid).check_regularity(DOM)["unit_outside_slab"]


@settings(max_examples=8, deadline=None)
@given(sx=st.floats(-0.5, 0.5), n=st.floats(0.5, 3.0))
def test_constant_metric_is_exact(sx, n):
    g = eikonal_grid(DOM, 1 / 20)
    m = MetricField.uniform(g, n)
    tt = solve_eikonal(m, (sx, 0.0), DOM)
    X, Y = g.mesh()
    exact = np.sqrt(n) * np.hypot(X - sx, Y)
    np.testing.assert_allclose(tt.tau.values, exact, atol=1e-10)


def test_gradient_satisfies_eikonal_equation(layered):
    tt = solve_eikonal(layered, (0.1, 0.0), DOM)
    g = layered.grid
    X, Y = g.mesh()
    inside = DOM.contains(X, Y, closed=False)
    lhs = tt.tau_x.values**2 + tt.tau_y.values**2
    rel = np.abs(lhs - layered.eps_r.values)[inside] / layered.eps_r.values[inside]
    assert np.median(rel) < 0.02
    assert np.all(tt.tau_y.values[inside] > 0)


def test_source_validation(layered):
    with pytest.raises(ValueError, match="inside the closed domain"):
        solve_eikonal(layered, (0.0, 1.5), DOM)
    with pytest.raises(ValueError, match="outside the eikonal box"):
        solve_eikonal(layered, (5.0, 0.0))


def test_dijkstra_oracle_small():
    g = Grid2D(DOM, 79, 79, -1.05, 1.05, 0.0, 2.1)
    m = MetricField.from_function(g, layered_metric)
    i = int(np.argmin(np.abs(g.x)))
    tt = solve_eikonal(m, (g.x[i], 0.0))
    D = dijkstra_travel_time(layered_metric, g.x, g.y, (0, i))
    X, Y = g.mesh()
    sel = np.hypot(X - g.x[i], Y) > 3 * g.h
    assert np.max(np.abs(tt.tau.values - D)[sel] / D[sel]) < 0.02


def test_straight_rays_in_constant_metric():
    g = eikonal_grid(DOM, 1 / 40)
    m = MetricField.uniform(g, 1.0)
    tt = solve_eikonal(m, (0.0, 0.0), DOM)
    path = trace_geodesic(tt, m, (0.3, 1.5))
    assert np.allclose(path.points[0], (0.0, 0.0))
    assert np.allclose(path.points[-1], (0.3, 1.5))
    assert path.length == pytest.approx(np.hypot(0.3, 1.5), rel=1e-3)
    # collinear with the chord
    p = path.points
    cross = p[:, 0] * 1.5 - p[:, 1] * 0.3
    assert np.max(np.abs(cross)) < 1e-2


def test_riemannian_length_matches_travel_time(layered):
    tt = solve_eikonal(layered, (-0.2, 0.0), DOM)
    targets = [(0.4, 1.9), (-0.4, 1.3), (0.0, 1.0)]
    for tgt, path in zip(targets, trace_geodesics(tt, layered, targets)):
        assert path.s[-1] == pytest.approx(tt.tau(*tgt), rel=0.01)
        assert path.depth_monotone_above(DOM.a)


def test_line_integral():
    m = MetricField.uniform(eikonal_grid(DOM, 0.1), 4.0)
    path = GeodesicPolyline.from_points([(0.0, 0.0), (0.0, 1.0), (0.5, 1.0)], m)
    assert line_integral(path, 1.0) == pytest.approx(1.5)
    assert line_integral(path, 1.0, "riemannian") == pytest.approx(3.0)
    assert line_integral(path, lambda x, y: y) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        line_integral(path, 1.0, "other")


def test_tau_coefficients_resynthesize(layered):
    src = SourceGrid(0.5, 10)
    tts = [solve_eikonal(layered, (al, 0.0), DOM) for al in src.nodes]
    grid = Grid2D(DOM, 4, 4)
    tc = tau_fourier_coeffs(tts, build_basis(6, 0.5), grid, "spline")
    gx, gy = tc.values(src.nodes)
    X, Y = grid.mesh()
    ref = np.stack([t.tau_y(X, Y) for t in tts], axis=-1)
    np.testing.assert_allclose(gy, ref, atol=5e-3)
    with pytest.raises(ValueError):
        tau_fourier_coeffs(tts, build_basis(3, 0.4), grid)
