"""Closed-form second-order structure of the m-times integrated Brownian motion.

X_0 = W and X_m(t) = int_0^t X_{m-1}(s) ds, equivalently
X_m(t) = (1/m!) int_0^t (t - s)^m dW(s). The state vector (X_0, ..., X_m) is a
linear Gaussian Markov process, which gives exact transition laws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_ORDER = 20


@dataclass(frozen=True)
class ProcessSpec:
    """Integration order ``m`` together with its derived constants."""

    m: int
    m_fact_sq: float = field(init=False)
    two_m_plus_one: int = field(init=False)

    def __post_init__(self):
        if isinstance(self.m, bool) or int(self.m) != self.m:
            raise TypeError("m must be an integer")
        if not 0 <= self.m <= MAX_ORDER:
            raise ValueError(f"m must lie in [0, {MAX_ORDER}], got {self.m}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "m_fact_sq", float(math.factorial(self.m) ** 2))
        object.__setattr__(self, "two_m_plus_one", 2 * self.m + 1)

    @property
    def sup_variance(self) -> float:
        """max_t Var X_m(t), attained only at t = 1."""
        return 1.0 / (self.m_fact_sq * self.two_m_plus_one)

    @property
    def trace(self) -> float:
        """int_0^1 Var X_m(t) dt, the trace of the covariance operator."""
        return 1.0 / (self.m_fact_sq * self.two_m_plus_one * (2 * self.m + 2))


def _check_time(*ts):
    for t in ts:
        a = np.asarray(t, dtype=float)
        if np.any(~np.isfinite(a)) or np.any(a < 0.0) or np.any(a > 1.0):
            raise ValueError("times must lie in [0, 1]")


def cross_covariance(j: int, k: int, s, t):
    """Cov(X_j(s), X_k(t)) = int_0^min(s,t) (s-u)^j (t-u)^k du / (j! k!).

    Substituting v = min(s,t) - u turns the integral into a binomial sum of
    nonnegative terms, so there is no cancellation for large orders.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    s, t = np.broadcast_arrays(s, t)
    swap = s < t
    # arrange so that the "a" factor carries the later time
    a_ord = np.where(swap, k, j)
    lo = np.minimum(s, t)
    gap = np.abs(s - t)
    out = np.zeros(s.shape)
    for a_val, b_val in {(j, k), (k, j)}:
        mask = a_ord == a_val
        if not np.any(mask):
            continue
        w = lo[mask]
        d = gap[mask]
        acc = np.zeros(w.shape)
        for i in range(a_val + 1):
            acc += math.comb(a_val, i) * d ** (a_val - i) * w ** (i + b_val + 1) / (i + b_val + 1)
        out[mask] = acc / (math.factorial(j) * math.factorial(k))
    return out if out.ndim else float(out)


def kernel_value(spec: ProcessSpec, s, t):
    """Covariance K_m(s, t) of X_m; vectorized over ``s`` and ``t``."""
    _check_time(s, t)
    return cross_covariance(spec.m, spec.m, s, t)


def kernel_matrix(spec: ProcessSpec, points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return kernel_value(spec, points[:, None], points[None, :])


def variance(spec: ProcessSpec, t):
    """Var X_m(t) = t^(2m+1) / ((m!)^2 (2m+1))."""
    _check_time(t)
    t = np.asarray(t, dtype=float)
    out = t ** spec.two_m_plus_one / (spec.m_fact_sq * spec.two_m_plus_one)
    return out if out.ndim else float(out)


def kernel_row_integral(spec: ProcessSpec, t) -> np.ndarray:
    """int_0^1 K_m(s, t) ds, exact (Gauss-Legendre on each polynomial piece)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x, w = np.polynomial.legendre.leggauss(spec.m + 2)
    x = (x + 1.0) / 2.0
    w = w / 2.0
    left = t[:, None] * x[None, :]
    right = t[:, None] + (1.0 - t[:, None]) * x[None, :]
    kl = kernel_value(spec, left, t[:, None]) @ w * t
    kr = kernel_value(spec, right, t[:, None]) @ w * (1.0 - t)
    return kl + kr


def _hilbert_cholesky(n: int) -> np.ndarray:
    """Exact lower Cholesky factor of the Hilbert matrix 1/(i+j+1).

    Column j is the j-th orthonormal shifted Legendre coordinate of x^i:
    L[i, j] = sqrt(2j+1) (i!)^2 / ((i-j)! (i+j+1)!).
    """
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            num = math.factorial(i) ** 2
            den = math.factorial(i - j) * math.factorial(i + j + 1)
            L[i, j] = math.sqrt(2 * j + 1) * (num / den)
    return L


@dataclass(frozen=True)
class StateTransition:
    """Exact one-step law: state(t+h) = transition @ state(t) + N(0, noise_cov)."""

    h: float
    transition: np.ndarray
    noise_cov: np.ndarray
    noise_chol: np.ndarray


def state_transition(spec: ProcessSpec, h: float) -> StateTransition:
    if not h > 0:
        raise ValueError("step h must be positive")
    n = spec.m + 1
    fact = np.array([math.factorial(k) for k in range(n)], dtype=float)
    T = np.zeros((n, n))
    for k in range(n):
        for j in range(k + 1):
            T[k, j] = h ** (k - j) / fact[k - j]
    idx = np.arange(n)
    jk = idx[:, None] + idx[None, :]
    C = h ** (jk + 1) / (fact[:, None] * fact[None, :] * (jk + 1))
    scale = h ** (idx + 0.5) / fact
    L = scale[:, None] * _hilbert_cholesky(n)
    resid = np.abs(L @ L.T - C) / np.sqrt(np.outer(np.diag(C), np.diag(C)))
    if not np.all(np.isfinite(L)) or resid.max() > 1e-12 or np.any(np.diag(L) <= 0):
        raise np.linalg.LinAlgError(
            f"noise covariance factor inaccurate for m={spec.m}, h={h:g} "
            f"(max scaled residual {resid.max():.2e})")
    return StateTransition(h=float(h), transition=T, noise_cov=C, noise_chol=L)
