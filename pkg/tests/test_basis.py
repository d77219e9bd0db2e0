from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from rrte.basis import build_basis, eval_Q, eval_Qprime, project, synthesize, synthesize_prime
from rrte.grid import SourceGrid


@settings(max_examples=15, deadline=None)
@given(N=st.integers(1, 9), d=st.floats(0.1, 1.5))
def test_orthonormal_and_unit_upper_triangular(N, d):
    bs = build_basis(N, d)
    assert bs.orthonormality_residual() < 1e-10
    B = bs.B
    assert np.max(np.abs(np.tril(B, -1)), initial=0.0) < 1e-9
    np.testing.assert_allclose(np.diag(B), 1.0, atol=1e-9)
    assert np.prod(np.diag(B)) == pytest.approx(1.0, abs=1e-8)
    if N <= 5:
        assert np.linalg.det(B) == pytest.approx(1.0, abs=1e-8)


def test_orthonormality_by_adaptive_quadrature():
    bs = build_basis(4, 0.5)
    for s in range(4):
        for k in range(s, 4):
            val, _ = integrate.quad(lambda t: eval_Q(bs, s, t) * eval_Q(bs, k, t), -0.5, 0.5, epsabs=1e-13)
            assert val == pytest.approx(float(s == k), abs=1e-10)


def test_B_matches_quadrature_of_derivatives():
    bs = build_basis(5, 0.5)
    for s in range(5):
        for k in range(5):
            val, _ = integrate.quad(lambda t: eval_Qprime(bs, k, t) * eval_Q(bs, s, t), -0.5, 0.5, epsabs=1e-12)
            assert bs.B[s, k] == pytest.approx(val, abs=1e-9)


def test_first_function_is_normalized_exponential():
    bs = build_basis(3, 0.5)
    c = 1.0 / np.sqrt(np.exp(1.0) - np.exp(-1.0)) * np.sqrt(2.0)
    assert eval_Q(bs, 0, 0.0) == pytest.approx(c, rel=1e-12)
    assert eval_Q(bs, 0, 0.3) == pytest.approx(c * np.exp(0.3), rel=1e-12)


@pytest.mark.parametrize("n", [0, 2, 4])
def test_derivative_matches_finite_differences(n):
    bs = build_basis(5, 0.5)
    t = np.linspace(-0.45, 0.45, 7)
    h = 1e-6
    fd = (eval_Q(bs, n, t + h) - eval_Q(bs, n, t - h)) / (2 * h)
    np.testing.assert_allclose(eval_Qprime(bs, n, t), fd, rtol=1e-6, atol=1e-6)


def test_argument_validation():
    with pytest.raises(ValueError):
        build_basis(0, 0.5)
    with pytest.raises(ValueError):
        build_basis(3, -1.0)
    with pytest.warns(RuntimeWarning):
        build_basis(13, 0.5)
    bs = build_basis(3, 0.5)
    with pytest.raises(IndexError):
        eval_Q(bs, 3, 0.0)
    with pytest.raises(ValueError, match="unknown projection"):
        project(bs, np.ones(5), np.linspace(-0.5, 0.5, 5), "simpson")
    with pytest.raises(ValueError, match="samples"):
        project(bs, np.ones(4), np.linspace(-0.5, 0.5, 5))


@settings(max_examples=30, deadline=None)
@given(coef=st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_spline_projection_inverts_synthesis(coef):
    bs = build_basis(4, 0.5)
    alphas = SourceGrid(0.5, 20).nodes
    c = np.array(coef)
    back = project(bs, synthesize(bs, c, alphas), alphas, "spline")
    np.testing.assert_allclose(back, c, atol=1e-4 * (1 + np.abs(c).max()))


def test_projection_is_linear_and_batched():
    bs = build_basis(3, 0.5)
    alphas = SourceGrid(0.5, 20).nodes
    r = np.random.default_rng(0)
    F = r.standard_normal((2, 3, alphas.size))
    for method in ("trapezoid", "spline"):
        P = project(bs, F, alphas, method)
        assert P.shape == (3, 2, 3)
        np.testing.assert_allclose(project(bs, F[1, 2], alphas, method), P[:, 1, 2], atol=1e-13)
        np.testing.assert_allclose(project(bs, 2 * F, alphas, method), 2 * P, atol=1e-12)


def test_synthesize_prime_is_derivative_of_synthesize():
    bs = build_basis(4, 0.5)
    c = np.array([1.0, -2.0, 0.5, 0.25])
    t = np.linspace(-0.4, 0.4, 5)
    h = 1e-6
    fd = (synthesize(bs, c, t + h) - synthesize(bs, c, t - h)) / (2 * h)
    np.testing.assert_allclose(synthesize_prime(bs, c, t), fd, rtol=1e-6)
