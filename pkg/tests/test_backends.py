"""The numba kernels and their numpy fallbacks give the same answers."""

from __future__ import annotations

import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rrte import kernels
from rrte.eikonal import MetricField, eikonal_grid, layered_metric, solve_eikonal
from rrte.grid import Domain2D

DOM = Domain2D()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 50))
def test_bilinear(seed, n):
    r = np.random.default_rng(seed)
    v = r.standard_normal((7, 9))
    xs = r.uniform(0.0, 8 * 0.1, n)
    ys = r.uniform(1.0, 1.0 + 6 * 0.2, n)
    a = kernels.bilinear_numpy(v, 0.0, 1.0, 0.1, 0.2, xs, ys)
    b = kernels.bilinear_numba(v, 0.0, 1.0, 0.1, 0.2, xs, ys)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)


def fmm_inputs(h):
    g = eikonal_grid(DOM, h)
    m = MetricField.from_function(g, layered_metric)
    X, Y = g.mesh()
    r = np.hypot(X, Y)
    known = r <= 3 * h + 1e-12
    rs = np.where(r > 0, r, 1.0)
    return (m.refractive_index(), g.h, g.h_y, np.zeros_like(r), known, r, np.where(r > 0, X / rs, 0), np.where(r > 0, Y / rs, 0))


@pytest.mark.parametrize("h", [0.05, 0.025])
def test_fast_marching(h):
    args = fmm_inputs(h)
    np.testing.assert_allclose(kernels.fmm_numba(*args), kernels.fmm_python(*args), rtol=1e-13, atol=1e-13)


def test_tracing():
    g = eikonal_grid(DOM, 0.025)
    m = MetricField.from_function(g, layered_metric)
    tt = solve_eikonal(m, (0.2, 0.0), DOM)
    r = np.random.default_rng(0)
    tx, ty = r.uniform(-0.5, 0.5, 30), r.uniform(1.0, 2.0, 30)
    args = (tt.tau_x.values, tt.tau_y.values, g.x0, g.y0, g.h, g.h_y, g.x1, g.y1, 0.2, 0.0, tx, ty, g.h / 4, g.h / 2,
            3000, 1e-8)
    a = kernels.trace_numpy(*args)
    b = kernels.trace_numba(*args)
    np.testing.assert_array_equal(a[2], b[2])
    np.testing.assert_array_equal(a[3], b[3])
    for p in range(30):
        c = a[2][p]
        np.testing.assert_allclose(a[0][p, :c], b[0][p, :c], atol=1e-12)
        np.testing.assert_allclose(a[1][p, :c], b[1][p, :c], atol=1e-12)


SNIPPET = """
import json
from rrte import backend_name
from rrte.experiments import ExperimentConfig, simulate_data
d = simulate_data(ExperimentConfig(m=6, m_alpha=4))
print(json.dumps({"backend": backend_name(), "g": d.boundary.g.ravel().tolist()}))
"""


@pytest.mark.slow
def test_forward_pipeline_same_under_both_backends():
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, RRTE_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", SNIPPET], env=env, capture_output=True, text=True, check=True)
        rec = json.loads(res.stdout)
        out[rec["backend"]] = np.array(rec["g"])
    assert set(out) == {"numba", "numpy"}
    np.testing.assert_allclose(out["numba"], out["numpy"], rtol=1e-12)
