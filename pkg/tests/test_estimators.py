import math
import warnings

import numpy as np
import pytest

from ibmtail.estimators import (ISConfig, NormSpec, SpliceError, TailEstimate, fit_small_ball_slope,
                                laplace_estimate, mc_tail, mc_tail_many, sample_norms,
                                small_ball_curve, norm_evaluate)
from ibmtail.formulas import (asymptotic_tail_sup, mean_sup_abs_bm, reflection_small_ball_bm,
                              reflection_tail_bm)
from ibmtail.process import ProcessSpec
from ibmtail.rng import RngStream
from ibmtail.simulate import PathSample, TimeGrid, sample_path_exact

SUP, L2 = NormSpec("sup"), NormSpec("lp", 2.0)


def test_norm_spec():
    assert NormSpec.parse("l2") == L2 and NormSpec.parse("lp", 3).p == 3.0
    assert NormSpec.parse("max").two_sided is False
    with pytest.raises(ValueError):
        NormSpec("lp", 0.5)
    with pytest.raises(ValueError):
        NormSpec.parse("lp")
    with pytest.raises(ValueError):
        ISConfig("endpoint", -1.0)


def test_constant_path_norms():
    grid = TimeGrid.uniform(16)
    states = np.full((1, 16, 1), -0.7)
    path = PathSample(0, grid, states, 0, 0, "state-stepping")
    assert norm_evaluate(path, SUP)[0] == pytest.approx(0.7)
    # the trapezoid rule uses X(0) = 0 on the first cell
    for p in (1.0, 2.0, 3.5):
        want = (0.7**p * (1 - 0.5 / 16)) ** (1 / p)
        assert norm_evaluate(path, NormSpec("lp", p))[0] == pytest.approx(want, rel=1e-12)


def test_brownian_sup_reflection_oracle():
    est = mc_tail(ProcessSpec(0), SUP, 1.0, 200_000, RngStream(21))
    assert est.extra["route"] == "levy"
    assert abs(est.estimate - 0.629223) < 3 * est.stderr
    # the discretely monitored sup sits below the continuous one
    assert est.extra["grid_estimate"] < est.estimate


def test_mean_sup_brownian():
    x = sample_norms(ProcessSpec(0), SUP, 100_000, RngStream(22), grid=TimeGrid.uniform(4096))
    assert x.mean() == pytest.approx(mean_sup_abs_bm(), rel=0.01)


def test_zero_shift_is_plain():
    spec, grid = ProcessSpec(1), TimeGrid.uniform(64)
    a = mc_tail(spec, SUP, 1.0, 20_000, RngStream(23), grid=grid)
    b = mc_tail(spec, SUP, 1.0, 20_000, RngStream(23), ISConfig("endpoint", 0.0), grid=grid)
    assert (a.estimate, a.stderr) == (b.estimate, b.stderr)
    assert b.extra["mean_weight"] == 1.0


def test_is_m1_sup_ratio_window():
    spec = ProcessSpec(1)
    est = mc_tail(spec, SUP, 2.0, 100_000, RngStream(24), ISConfig("endpoint"),
                  grid=TimeGrid.uniform(1024))
    ratio = est.estimate / asymptotic_tail_sup(spec, 2.0).value
    assert 0.5 <= ratio <= 1.5


@pytest.mark.parametrize("norm,kind", [(SUP, "endpoint"), (NormSpec("max"), "endpoint"), (L2, "eigen")])
def test_weight_identity(norm, kind):
    grid = TimeGrid.uniform(128)
    est = mc_tail(ProcessSpec(1), norm, 1.0, 100_000, RngStream(25), ISConfig(kind, 0.8), grid=grid)
    assert abs(est.extra["mean_weight"] - 1) < 3 * est.extra["mean_weight_stderr"]


def test_is_unbiased_at_moderate_r():
    spec, grid = ProcessSpec(1), TimeGrid.uniform(128)
    plain = mc_tail(spec, SUP, 1.2, 100_000, RngStream(26, 0), grid=grid)
    isd = mc_tail(spec, SUP, 1.2, 100_000, RngStream(26, 1), ISConfig("endpoint"), grid=grid)
    assert abs(plain.estimate - isd.estimate) < 3 * math.hypot(plain.stderr, isd.stderr)


def test_norm_ordering_pathwise():
    spec, grid = ProcessSpec(1), TimeGrid.uniform(256)
    path = sample_path_exact(spec, grid, RngStream(27), 2000)
    sup = norm_evaluate(path, SUP)
    for p in (1.0, 2.0, 4.0):
        assert np.all(norm_evaluate(path, NormSpec("lp", p)) <= sup + 1e-15)
    for r in (0.3, 0.6):
        plain_sup = mc_tail(spec, SUP, r, 5000, RngStream(28), grid=grid, route="grid")
        plain_l2 = mc_tail(spec, L2, r, 5000, RngStream(28), grid=grid, route="grid")
        assert plain_l2.estimate <= plain_sup.estimate


def test_grid_refinement_m1():
    # coupled comparison: 4096-point paths against their own 2048-point subsample
    spec, grid = ProcessSpec(1), TimeGrid.uniform(4096)
    fine, coarse = [], []
    for k in range(10):
        x = np.abs(sample_path_exact(spec, grid, RngStream(29), 2000, path_offset=2000 * k).xm)
        fine.append(x.max(axis=1) > 1.0)
        coarse.append(x[:, 1::2].max(axis=1) > 1.0)
    fine, coarse = np.concatenate(fine), np.concatenate(coarse)
    se = math.sqrt(2 * fine.mean() * (1 - fine.mean()) / len(fine))
    assert abs(fine.mean() - coarse.mean()) < se


def test_thread_invariance_and_determinism():
    spec, grid = ProcessSpec(1), TimeGrid.uniform(64)
    kw = dict(grid=grid, block_size=1000)
    a = mc_tail_many(spec, SUP, [0.8, 1.2], 9500, RngStream(30), threads=1, **kw)
    b = mc_tail_many(spec, SUP, [0.8, 1.2], 9500, RngStream(30), threads=3, **kw)
    c = mc_tail_many(spec, SUP, [0.8, 1.2], 9500, RngStream(30), threads=1, **kw)
    for x, y, z in zip(a, b, c):
        assert (x.estimate, x.stderr) == (y.estimate, y.stderr) == (z.estimate, z.stderr)


def test_ess_floor_warning():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        est = mc_tail(ProcessSpec(1), SUP, 1.0, 2000, RngStream(31), ISConfig("endpoint"),
                      grid=TimeGrid.uniform(32), ess_floor=1e9)
    assert est.warning and any("effective sample size" in str(x.message) for x in w)


def test_tail_estimate_serialization():
    e = TailEstimate(1, SUP, 2.0, 0.01, 0.02, 1000, "plain", 1, 0, 1000.0)
    assert e.interval() == pytest.approx((0.0, 0.07))
    assert len(e.csv_row()) == 9 and e.to_dict()["norm"] == "sup"


def test_tail_input_validation():
    with pytest.raises(ValueError):
        mc_tail(ProcessSpec(0), SUP, -1.0, 10_000, RngStream(0))
    with pytest.raises(ValueError):
        mc_tail(ProcessSpec(0), SUP, 1.0, 10, RngStream(0))
    with pytest.raises(ValueError):
        mc_tail(ProcessSpec(1), L2, 1.0, 10_000, RngStream(0), ISConfig("endpoint"))


def test_small_ball_slope_on_oracle_values():
    eps = np.linspace(0.4, 0.25, 7)
    p = np.array([reflection_small_ball_bm(e) for e in eps])
    slope, _ = fit_small_ball_slope(eps, p)
    assert abs(slope + 2) < 0.15


def test_small_ball_curve_brownian():
    eps = np.linspace(0.5, 0.35, 4)
    res = small_ball_curve(ProcessSpec(0), SUP, eps, 200_000, RngStream(32), grid=TimeGrid.uniform(1024))
    assert np.all(np.diff(res.estimates) <= 0)
    oracle = np.array([reflection_small_ball_bm(e) for e in eps])
    assert np.all(np.abs(res.estimates - oracle) < 4 * res.stderr + 1e-12)
    assert abs(res.slope + 2) < 0.3


def test_laplace_zero_and_theta():
    assert laplace_estimate(ProcessSpec(1), SUP, 0.0, 1.0, "direct-mc", 10, RngStream(0)).value == 1.0
    with pytest.raises(ValueError):
        laplace_estimate(ProcessSpec(1), SUP, 1.0, 2.0, "direct-mc", 1000, RngStream(0))


def test_laplace_two_methods_agree():
    kw = dict(grid=TimeGrid.uniform(512))
    a = laplace_estimate(ProcessSpec(0), SUP, 0.1, 1.0, "direct-mc", 50_000, RngStream(33), **kw)
    b = laplace_estimate(ProcessSpec(0), SUP, 0.1, 1.0, "tail-integral", 50_000, RngStream(33), **kw)
    assert abs(a.value - b.value) < 3 * math.hypot(a.stderr, b.stderr)
    assert "swap" in b.extra


def test_laplace_trend_m1():
    spec = ProcessSpec(1)
    ratios = []
    for r in (2.0, 4.0, 6.0):
        est = laplace_estimate(spec, SUP, r, 1.0, "tail-integral", 50_000, RngStream(34),
                               grid=TimeGrid.uniform(256))
        ratios.append(math.log(est.value) / (r * r / 6))
    assert abs(ratios[2] - 1) < abs(ratios[1] - 1) < abs(ratios[0] - 1)


def test_laplace_splice_failure():
    with pytest.raises(SpliceError):
        laplace_estimate(ProcessSpec(1), SUP, 1.0, 1.0, "tail-integral", 1000, RngStream(35),
                         grid=TimeGrid.uniform(64), min_tail_count=2000)
