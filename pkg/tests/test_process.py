import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ibmtail.process import (MAX_ORDER, ProcessSpec, cross_covariance, kernel_matrix, kernel_value,
                             state_transition, variance)

times = st.floats(0.0, 1.0, allow_nan=False)
orders = st.integers(0, 6)


def test_spec_fields():
    s = ProcessSpec(3)
    assert s.m_fact_sq == 36 and s.two_m_plus_one == 7
    with pytest.raises(ValueError):
        ProcessSpec(-1)
    with pytest.raises(ValueError):
        ProcessSpec(MAX_ORDER + 1)


@pytest.mark.parametrize("m,s,t,expected", [
    (0, 0.3, 0.7, 0.3),
    (1, 0.5, 1.0, 0.25 * (3 * 1 - 0.5) / 6),
    (2, 1.0, 1.0, 0.05),
])
def test_kernel_examples(m, s, t, expected):
    assert kernel_value(ProcessSpec(m), s, t) == pytest.approx(expected, rel=1e-14)


def test_kernel_against_quadrature():
    # K_m(s,t) = int_0^min (s-u)^m (t-u)^m du / (m!)^2, independent oracle
    from scipy.integrate import quad

    for m in range(4):
        for s, t in [(0.2, 0.9), (0.7, 0.4), (1.0, 0.55)]:
            val, _ = quad(lambda u: (s - u) ** m * (t - u) ** m, 0, min(s, t), epsabs=1e-15)
            assert kernel_value(ProcessSpec(m), s, t) == pytest.approx(val / math.factorial(m) ** 2,
                                                                       rel=1e-12)


@pytest.mark.parametrize("m,t,expected", [(0, 1.0, 1.0), (1, 1.0, 1 / 3), (1, 0.5, 0.5**3 / 3)])
def test_variance_examples(m, t, expected):
    assert variance(ProcessSpec(m), t) == pytest.approx(expected, rel=1e-14)
    assert kernel_value(ProcessSpec(m), t, t) == pytest.approx(expected, rel=1e-14)


def test_state_transition_examples():
    st0 = state_transition(ProcessSpec(0), 0.25)
    np.testing.assert_allclose(st0.transition, [[1.0]])
    np.testing.assert_allclose(st0.noise_cov, [[0.25]])
    st1 = state_transition(ProcessSpec(1), 1.0)
    np.testing.assert_allclose(st1.transition, [[1, 0], [1, 1]])
    np.testing.assert_allclose(st1.noise_cov, [[1, 0.5], [0.5, 1 / 3]], rtol=1e-14)
    st2 = state_transition(ProcessSpec(2), 1.0)
    assert st2.noise_cov[2, 2] == pytest.approx(1 / 20, rel=1e-14)
    assert st2.noise_cov[2, 2] == pytest.approx(variance(ProcessSpec(2), 1.0), rel=1e-14)


@pytest.mark.parametrize("m", [0, 3, 8])
@pytest.mark.parametrize("h", [1e-3, 0.1, 1.0])
def test_noise_cholesky(m, h):
    st_ = state_transition(ProcessSpec(m), h)
    L = st_.noise_chol
    assert np.allclose(np.triu(L, 1), 0.0)
    rel = np.abs(L @ L.T - st_.noise_cov).max() / np.abs(st_.noise_cov).max()
    assert rel < 1e-12


def test_state_transition_rejects_bad_step():
    with pytest.raises(ValueError):
        state_transition(ProcessSpec(1), 0.0)


def test_cross_covariance_consistency():
    for j in range(3):
        for k in range(3):
            v = cross_covariance(j, k, 0.4, 0.8)
            assert v == pytest.approx(cross_covariance(k, j, 0.8, 0.4), rel=1e-14)
    assert cross_covariance(2, 2, 0.3, 0.6) == pytest.approx(kernel_value(ProcessSpec(2), 0.3, 0.6))


@settings(max_examples=60, deadline=None)
@given(orders, times, times)
def test_symmetry_and_cauchy_schwarz(m, s, t):
    spec = ProcessSpec(m)
    a, b = kernel_value(spec, s, t), kernel_value(spec, t, s)
    assert a == pytest.approx(b, rel=1e-13, abs=1e-300)
    assert a >= 0
    assert a <= math.sqrt(variance(spec, s)) * math.sqrt(variance(spec, t)) * (1 + 1e-12) + 1e-300


@settings(max_examples=30, deadline=None)
@given(orders, st.lists(times, min_size=12, max_size=12))
def test_psd_on_12_points(m, pts):
    K = kernel_matrix(ProcessSpec(m), np.array(pts))
    assert np.linalg.eigvalsh(K).min() >= -1e-10


def test_variance_matches_kernel_diagonal():
    rng = np.random.default_rng(0)
    for m in range(6):
        spec = ProcessSpec(m)
        for t in rng.uniform(0, 1, 100):
            assert variance(spec, t) == pytest.approx(kernel_value(spec, t, t), rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(orders, st.floats(1e-3, 0.5), st.floats(1e-3, 0.5))
def test_chapman_kolmogorov(m, h1, h2):
    spec = ProcessSpec(m)
    a, b, c = state_transition(spec, h1), state_transition(spec, h2), state_transition(spec, h1 + h2)
    np.testing.assert_allclose(b.transition @ a.transition, c.transition, rtol=1e-12, atol=1e-15)
    composed = b.transition @ a.noise_cov @ b.transition.T + b.noise_cov
    assert np.abs(composed - c.noise_cov).max() <= 1e-12 * max(1.0, np.abs(c.noise_cov).max())


def test_variance_strictly_increasing():
    t = np.linspace(0, 1, 1001)
    for m in range(6):
        v = variance(ProcessSpec(m), t)
        assert np.all(np.diff(v) > 0)
        assert int(np.argmax(v)) == len(t) - 1
