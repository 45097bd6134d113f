"""Closed-form tail asymptotics and bounds for integrated Brownian motion.

Everything is evaluated in log space. The independent m = 0 oracles at the end
are classical reflection-principle series for the Brownian supremum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from scipy.special import log_ndtr

from .process import ProcessSpec
from .spectrum import Spectrum, ZolotarevConstants, zolotarev_constants

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# prefactor * r^-1 above this means the asymptotic regime has not started
REGIME_THRESHOLD = 0.5


@dataclass(frozen=True)
class AsymptoticValue:
    value: float
    log_value: float
    regime_warning: bool

    def __float__(self):
        return self.value


def _value(log_prefactor: float, log_exp: float, r: float) -> AsymptoticValue:
    log_pre_r = log_prefactor - math.log(r)
    lv = log_pre_r + log_exp
    v = math.exp(lv) if lv < 709.0 else math.inf
    return AsymptoticValue(v, lv, bool(log_pre_r > math.log(REGIME_THRESHOLD)))


def _check_r(r):
    if not r > 0 or not math.isfinite(r):
        raise ValueError(f"r must be positive and finite, got {r}")


def sup_prefactor(spec: ProcessSpec, one_sided: bool = False) -> float:
    """Prefactor c in P{sup|X_m| > r} ~ c r^-1 exp(-r^2 / (2 sigma^2)), sigma^2 = Var X_m(1).

    For m = 0 the whole path contributes (reflection) and the constant is
    twice the m >= 1 value. ``one_sided`` gives the prefactor for sup X_m.
    """
    if spec.m == 0:
        c = 4.0 / math.sqrt(2.0 * math.pi)
    else:
        c = 2.0 / (math.factorial(spec.m) * math.sqrt(2.0 * math.pi * spec.two_m_plus_one))
    return c / 2.0 if one_sided else c


def asymptotic_tail_sup(spec: ProcessSpec, r: float, one_sided: bool = False) -> AsymptoticValue:
    """Sharp asymptotic of P{sup_t |X_m(t)| > r} (or of P{sup_t X_m(t) > r})."""
    _check_r(r)
    log_exp = -spec.m_fact_sq * spec.two_m_plus_one * r * r / 2.0
    return _value(math.log(sup_prefactor(spec, one_sided)), log_exp, r)


def asymptotic_tail_l2(spectrum: Spectrum, zc: ZolotarevConstants | None, r: float) -> AsymptoticValue:
    """c_lambda r^-1 exp(-r^2 / (2 lambda_1)) for P{||X_m||_2 > r}."""
    _check_r(r)
    if zc is None:
        zc = zolotarev_constants(spectrum)
    lam1 = float(spectrum.eigenvalues[0])
    return _value(math.log(zc.c_lambda), -r * r / (2.0 * lam1), r)


@dataclass(frozen=True)
class SigmaP:
    p: float
    sigma: float
    gamma_ratio: float  # Gamma(1/2 + 1/p) / Gamma(1 + 1/p)


def sigma_p(p: float) -> SigmaP:
    """Scale constant of the Brownian L^p tail.

    sigma = (2/(p pi))^(1/2) (1 + p/2)^((p-2)/(2p)) Gamma(1/2+1/p)/Gamma(1+1/p).
    """
    if not p > 0 or not math.isfinite(p):
        raise ValueError(f"p must be positive and finite, got {p}")
    ratio = math.exp(math.lgamma(0.5 + 1.0 / p) - math.lgamma(1.0 + 1.0 / p))
    log_sigma = (0.5 * math.log(2.0 / (p * math.pi))
                 + (p - 2.0) / (2.0 * p) * math.log1p(p / 2.0) + math.log(ratio))
    return SigmaP(p, math.exp(log_sigma), ratio)


def asymptotic_tail_lp_bm(p: float, r: float) -> AsymptoticValue:
    """Sharp asymptotic of P{||W||_p > r} for Brownian motion."""
    sp = sigma_p(p)
    _check_r(r)
    log_pre = math.log(2.0 * sp.sigma) - 0.75 * math.log(math.pi) + 0.5 * math.log(sp.gamma_ratio)
    return _value(log_pre, -r * r / (2.0 * sp.sigma**2), r)


def borell_bound(r: float, mean_norm: float, sigma_sq: float) -> float:
    """2 exp(-(r - E||Y||)^2 / (2 sigma_T^2)), valid for r > E||Y||."""
    if not sigma_sq > 0:
        raise ValueError("sigma_sq must be positive")
    if not r > mean_norm:
        raise ValueError(f"bound is vacuous: r={r} does not exceed the mean norm {mean_norm}")
    return 2.0 * math.exp(-((r - mean_norm) ** 2) / (2.0 * sigma_sq))


def thm3_log_bound(lam: float, alpha: float, beta: float, sigma: float,
                   c1: float = 1.0, c2: float = 1.0) -> float:
    if not (alpha > 0 and sigma > 0 and c1 > 0):
        raise ValueError("alpha, sigma and c1 must be positive")
    if beta != 0 and not lam > 1:
        raise ValueError("lambda must exceed 1 when beta != 0 (log factor)")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    corr = lam ** (alpha / (alpha + 1.0))
    if beta != 0:
        corr *= math.log(lam) ** (beta / (alpha + 1.0))
    return math.log(c1) - lam * lam / (2.0 * sigma * sigma) + c2 * corr


def thm3_bound(lam: float, alpha: float, beta: float, sigma: float,
               c1: float = 1.0, c2: float = 1.0) -> float:
    """c1 exp(-lam^2/(2 sigma^2) + c2 lam^(alpha/(alpha+1)) (log lam)^(beta/(alpha+1)))."""
    return math.exp(thm3_log_bound(lam, alpha, beta, sigma, c1, c2))


def thm2_log_bound(spec: ProcessSpec, p: float, r: float, op_norm: float,
                   c1: float = 1.0, c2: float = 1.0) -> float:
    if p < 1:
        raise ValueError("p must be at least 1")
    _check_r(r)
    # small-ball exponent alpha = 2/(2m+1), no log factor
    return thm3_log_bound(r, 2.0 / spec.two_m_plus_one, 0.0, math.sqrt(op_norm), c1, c2)


def thm2_bound(spec: ProcessSpec, p: float, r: float, op_norm: float,
               c1: float = 1.0, c2: float = 1.0) -> float:
    """c1 exp(-r^2/(2 ||A_m||_p) + c2 r^(2/(2m+3))); c1, c2 are unknown and caller supplied."""
    return math.exp(thm2_log_bound(spec, p, r, op_norm, c1, c2))


def correction_crossover(spec: ProcessSpec, mean_norm: float, op_norm: float, c2: float = 1.0) -> float:
    """r beyond which c2 r^(2/(2m+3)) is below Borell's linear correction r E||X|| / sigma^2."""
    a = 2.0 / (2 * spec.m + 3)
    slope = mean_norm / op_norm
    return (c2 / slope) ** (1.0 / (1.0 - a))


def c3_constant(theta: float, op_norm: float) -> float:
    _check_theta(theta)
    return (2.0 - theta) / (2.0 * theta) * theta ** (2.0 / (2.0 - theta)) * op_norm ** (theta / (2.0 - theta))


def _check_theta(theta):
    if not 1.0 <= theta < 2.0:
        raise ValueError(f"theta must lie in [1, 2), got {theta}")


def laplace_asymptotic(spec: ProcessSpec, norm, theta: float, r: float,
                       spectrum: Spectrum | None = None, zc: ZolotarevConstants | None = None,
                       op_norm: float | None = None, c1: float = 1.0, c2: float = 1.0) -> AsymptoticValue:
    """Leading asymptotic of E exp(r ||X_m||^theta) as r grows.

    ``norm.kind``: 'max' is the one-sided supremum, 'sup' the two-sided one
    (its tail is twice as heavy, which doubles the transform), 'lp' with p = 2
    uses the eigenvalue route, other p return the c3-driven upper bound
    c1 exp(c2 r^(2/((2-theta)(2m+3))) + c3 r^(2/(2-theta))).
    """
    _check_theta(theta)
    _check_r(r)
    kind = norm.kind
    g = 2.0 / (2.0 - theta)
    lead = (2.0 - theta) / (2.0 * theta)
    if kind in ("sup", "max"):
        s2 = spec.sup_variance
        log_exp = lead * s2 ** (theta / (2.0 - theta)) * (r * theta) ** g
        # tail prefactor in units of the Gaussian one sigma/sqrt(2 pi): 1 for the
        # one-sided m >= 1 supremum, 2 two-sided, doubled again for m = 0
        mult = sup_prefactor(spec, one_sided=(kind == "max")) * math.sqrt(2.0 * math.pi / s2)
        lv = math.log(mult) - 0.5 * math.log(2.0 - theta) + log_exp
    elif kind == "lp" and norm.p == 2.0:
        if spectrum is None:
            raise ValueError("the L2 case needs a spectrum")
        zc = zc or zolotarev_constants(spectrum)
        lam1 = float(spectrum.eigenvalues[0])
        log_exp = lead * lam1 ** (theta / (2.0 - theta)) * (r * theta) ** g
        lv = math.log(zc.c_lambda) + 0.5 * math.log(2.0 * math.pi / ((2.0 - theta) * lam1)) + log_exp
    elif kind == "lp":
        if op_norm is None:
            raise ValueError("the L^p bound needs the operator norm")
        lv = (math.log(c1) + c2 * r ** (g / (2 * spec.m + 3)) + c3_constant(theta, op_norm) * r**g)
    else:
        raise ValueError(f"unknown norm kind {kind!r}")
    v = math.exp(lv) if lv < 709.0 else math.inf
    return AsymptoticValue(v, lv, False)


def _log_of(x) -> float:
    if isinstance(x, AsymptoticValue):
        return x.log_value
    x = float(x)
    if not x > 0 or not math.isfinite(x):
        raise ValueError(f"unresolvable input value {x}")
    return math.log(x)


def lifshits_consistency(tail_at: Callable, laplace_at: Callable, sigma_T_sq: float,
                         theta: float, r: float) -> float:
    """Ratio of the two sides of the tail/Laplace transform relation.

    Left: P{sup xi > u} with u = (r theta sigma_T^2)^(1/(2-theta)).
    Right: sqrt(2-theta) E exp(r sup xi^theta) exp(-u^2/(theta sigma_T^2)) sigma_T / (sqrt(2 pi) u).
    ``tail_at(u)`` and ``laplace_at(r)`` may return floats or AsymptoticValue.
    """
    _check_theta(theta)
    _check_r(r)
    if not sigma_T_sq > 0:
        raise ValueError("sigma_T_sq must be positive")
    u = (r * theta * sigma_T_sq) ** (1.0 / (2.0 - theta))
    log_lhs = _log_of(tail_at(u))
    log_rhs = (0.5 * math.log(2.0 - theta) + _log_of(laplace_at(r)) - u * u / (theta * sigma_T_sq)
               + 0.5 * math.log(sigma_T_sq) - LOG_SQRT_2PI - math.log(u))
    return math.exp(log_lhs - log_rhs)


def gaussian_upper_tail(x: float, sigma: float = 1.0) -> AsymptoticValue:
    """P{N(0, sigma^2) > x} in log space (no regime flag: exact)."""
    lv = float(log_ndtr(-x / sigma))
    return AsymptoticValue(math.exp(lv), lv, False)


# ---- m = 0 oracles --------------------------------------------------------

def _log_phic(x):
    return float(log_ndtr(-x))


def reflection_tail_bm(r: float) -> float:
    """P{sup_{[0,1]} |W| > r} = 4 sum_{j>=0} (-1)^j Phi^c((2j+1) r).

    This is the alternating reflection series rearranged to avoid the
    1 - (1 - small) cancellation; for r < 0.75 the complementary theta
    series for the stay probability converges faster and is used instead.
    """
    _check_r(r)
    if r < 0.75:
        return 1.0 - reflection_small_ball_bm(r)
    terms = []
    for j in range(10_000):
        t = math.exp(_log_phic((2 * j + 1) * r))
        terms.append(t if j % 2 == 0 else -t)
        if t < 1e-16 * abs(terms[0]) or t == 0.0:
            break
    return 4.0 * math.fsum(terms)


def reflection_small_ball_bm(eps: float) -> float:
    """P{sup_{[0,1]} |W| <= eps} = (4/pi) sum_k (-1)^k/(2k+1) exp(-(2k+1)^2 pi^2 / (8 eps^2))."""
    _check_r(eps)
    if eps >= 0.75:
        return 1.0 - reflection_tail_bm(eps)
    terms = []
    for k in range(10_000):
        t = math.exp(-((2 * k + 1) ** 2) * math.pi**2 / (8.0 * eps * eps)) / (2 * k + 1)
        terms.append(t if k % 2 == 0 else -t)
        if t < 1e-17 * terms[0] or t == 0.0:
            break
    return 4.0 / math.pi * math.fsum(terms)


def reflection_max_tail_bm(r: float) -> float:
    """P{sup_{[0,1]} W > r} = 2 Phi^c(r)."""
    _check_r(r)
    return 2.0 * math.exp(_log_phic(r))


def mean_sup_abs_bm(upper: float = 12.0) -> float:
    """E sup |W| as the integral of the reflection tail (equals sqrt(pi/2))."""
    from scipy.integrate import quad

    val, _ = quad(lambda x: reflection_tail_bm(x) if x > 0 else 1.0, 0.0, upper, limit=200,
                  epsabs=1e-13, epsrel=1e-12)
    return val
