import math

import numpy as np
import pytest
from scipy import stats

from ibmtail.estimators import NormSpec, norm_evaluate
from ibmtail.process import ProcessSpec, kernel_matrix, variance
from ibmtail.rng import RngStream
from ibmtail.simulate import (METHODS, TimeGrid, initial_state_variances, paths_to_csv_rows,
                              sample_kl, sample_path_cholesky, sample_path_exact, sample_path_kl,
                              sample_paths)
from ibmtail.spectrum import brownian_spectrum, nystrom_spectrum


def cov_z(x, K):
    """Entrywise z-scores of the sample covariance (known zero mean) against K."""
    n = len(x)
    prod = x[:, :, None] * x[:, None, :]
    mean = prod.mean(axis=0)
    se = prod.std(axis=0) / math.sqrt(n)
    return np.abs(mean - K) / se


def test_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.5, 0.9]))
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.5, 0.5, 1.0]))
    g = TimeGrid.uniform(4)
    assert np.array_equal(g.points, [0.25, 0.5, 0.75, 1.0])
    # the origin node carries X(0) = 0, so weights integrate f(t) = t exactly
    assert g.trapezoid_weights() @ g.points == pytest.approx(0.5, rel=1e-15)
    assert g.is_dyadic() and not TimeGrid.uniform(6).is_dyadic()


def test_variance_at_one_m1():
    x = sample_path_exact(ProcessSpec(1), TimeGrid(np.array([1.0])), RngStream(2), 10**6).xm[:, 0]
    se = (x**2).std() / math.sqrt(len(x))
    assert abs((x**2).mean() - 1 / 3) < 3 * se


def test_brownian_covariance():
    x = sample_path_exact(ProcessSpec(0), TimeGrid(np.array([0.5, 1.0])), RngStream(3), 10**5).xm
    assert abs(np.mean(x[:, 0] * x[:, 1]) - 0.5) < 4 * np.std(x[:, 0] * x[:, 1]) / math.sqrt(len(x))


def test_full_covariance_m2_16_points():
    spec, grid = ProcessSpec(2), TimeGrid.uniform(16)
    x = sample_path_exact(spec, grid, RngStream(4), 10**5).xm
    assert cov_z(x, kernel_matrix(spec, grid.points)).max() < 4.5


@pytest.mark.parametrize("method", METHODS)
def test_exactness_8_points(method):
    spec, grid = ProcessSpec(3), TimeGrid.uniform(8)
    spectrum = nystrom_spectrum(spec, 128) if method == "karhunen-loeve" else None
    x = sample_paths(spec, grid, RngStream(5), 10**5, method, spectrum).xm
    assert cov_z(x, kernel_matrix(spec, grid.points)).max() < 4.5


def test_initial_state_law():
    spec, grid = ProcessSpec(2), TimeGrid(np.array([0.3, 1.0]))
    s = sample_path_exact(spec, grid, RngStream(6), 10**5).states[:, 0, :]
    want = initial_state_variances(spec, 0.3)
    np.testing.assert_allclose(want, [0.3, 0.3**3 / 3, 0.3**5 / 20], rtol=1e-13)
    se = (s**2).std(axis=0) / math.sqrt(len(s))
    assert np.all(np.abs((s**2).mean(axis=0) - want) < 4 * se)


@pytest.mark.parametrize("method", ["state-stepping", "cholesky"])
def test_determinism(method):
    spec, grid = ProcessSpec(1), TimeGrid.uniform(32)
    a = sample_paths(spec, grid, RngStream(9, 2), 100, method).xm
    b = sample_paths(spec, grid, RngStream(9, 2), 100, method).xm
    assert a.tobytes() == b.tobytes()
    # a block at an offset reproduces the same rows
    c = sample_paths(spec, grid, RngStream(9, 2), 10, method, path_offset=40).xm
    assert np.array_equal(c, a[40:50])


def test_cholesky_vs_exact_sup_ks():
    spec, grid = ProcessSpec(1), TimeGrid.uniform(64)
    sup = NormSpec("sup")
    a = norm_evaluate(sample_path_exact(spec, grid, RngStream(10, 0), 10**5), sup)
    b = norm_evaluate(sample_path_cholesky(spec, grid, RngStream(10, 1), 10**5), sup)
    d = stats.ks_2samp(a, b).statistic
    assert d < 1.628 * math.sqrt(2 / 10**5)  # 1% critical value


def test_cholesky_standard_normal():
    x = sample_path_cholesky(ProcessSpec(0), TimeGrid(np.array([1.0])), RngStream(11), 10**5).xm
    assert abs(x.mean()) < 4 / math.sqrt(len(x))


def test_kl_mean_squared_norm_brownian():
    n_terms = 200
    spectrum = brownian_spectrum(n_terms)
    n = 10**6
    sq = np.concatenate([(sample_kl(spectrum, n_terms, RngStream(12), 10**5, k * 10**5) ** 2).sum(1)
                         for k in range(n // 10**5)])
    truncated = spectrum.eigenvalues.sum()
    assert abs(sq.mean() - truncated) < 4 * sq.std() / math.sqrt(n)
    # the dropped tail is sum_{k>N} lambda_k, about 1/(pi^2 N)
    assert 0.5 - truncated == pytest.approx(1 / (math.pi**2 * n_terms), rel=2e-3)


def test_kl_tail_matches_grid_quadrature():
    spec = ProcessSpec(1)
    spectrum = nystrom_spectrum(spec, 256)
    n = 10**5
    kl = (sample_kl(spectrum, 200, RngStream(13, 0), n) ** 2).sum(1) > 0.3**2
    grid = TimeGrid.uniform(256)
    l2 = norm_evaluate(sample_path_exact(spec, grid, RngStream(13, 1), n), NormSpec("lp", 2.0)) > 0.3
    p1, p2 = kl.mean(), l2.mean()
    se = math.sqrt(p1 * (1 - p1) / n + p2 * (1 - p2) / n)
    assert p1 > 0.01 and abs(p1 - p2) < 3 * se


def test_kl_path_synthesis_matches_kernel():
    spec = ProcessSpec(1)
    spectrum = nystrom_spectrum(spec, 128)
    grid = TimeGrid.uniform(8)
    x = sample_path_kl(spectrum, grid, RngStream(14), n_paths=10**5).xm
    assert cov_z(x, kernel_matrix(spec, grid.points)).max() < 4.5


def test_markov_refinement():
    spec = ProcessSpec(2)
    a = sample_path_exact(spec, TimeGrid.uniform(2), RngStream(15, 0), 10**5).states[:, -1, :]
    b = sample_path_exact(spec, TimeGrid.uniform(256), RngStream(15, 1), 10**5).states[:, -1, :]
    for k in range(3):
        va, vb = (a[:, k] ** 2), (b[:, k] ** 2)
        se = math.sqrt(va.var() / len(va) + vb.var() / len(vb))
        assert abs(va.mean() - vb.mean()) < 4 * se
        assert vb.mean() == pytest.approx(variance(ProcessSpec(k), 1.0), rel=0.02)


def test_stream_independence_paths():
    spec, grid = ProcessSpec(1), TimeGrid.uniform(4)
    n = 10**5
    a = sample_path_exact(spec, grid, RngStream(16, 0), n).xm[:, -1]
    b = sample_path_exact(spec, grid, RngStream(16, 1), n).xm[:, -1]
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(n)


def test_cholesky_size_cap():
    with pytest.raises(ValueError):
        sample_path_cholesky(ProcessSpec(0), TimeGrid.uniform(5000), RngStream(0))


def test_csv_rows():
    s = sample_path_exact(ProcessSpec(1), TimeGrid.uniform(3), RngStream(1), 2)
    rows = list(paths_to_csv_rows(s))
    assert rows[0] == ["t", "x0", "x1"]
    assert len(rows) == 1 + 3 + 1 + 3 and rows[4] == []
    assert float(rows[3][0]) == 1.0


def test_unknown_method():
    with pytest.raises(ValueError):
        sample_paths(ProcessSpec(0), TimeGrid.uniform(2), RngStream(0), 1, "euler")
