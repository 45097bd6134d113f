"""Spectrum of the covariance operator (A f)(t) = int_0^1 K_m(s, t) f(s) ds."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .process import ProcessSpec, kernel_matrix, kernel_row_integral, kernel_value


class SpectralGapError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, last_values):
        super().__init__(msg)
        self.last_values = last_values


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.nodes)


def gauss_legendre(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule mapped to [0, 1]."""
    if n < 1:
        raise ValueError("need at least one node")
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(nodes=(x + 1.0) / 2.0, weights=w / 2.0)


@dataclass(frozen=True)
class Spectrum:
    """Eigenpairs of A_m on a quadrature rule, eigenvalues in decreasing order.

    ``eigenvectors[:, n]`` holds f_n at the nodes, normalized so that
    sum_i w_i f_n(t_i) f_k(t_i) = delta_nk, with sign fixed by f_n(1) >= 0.
    """

    m: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None
    rule: QuadratureRule | None
    row_correction: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.rule) if self.rule is not None else 0

    @property
    def trace_check(self) -> dict:
        exact = ProcessSpec(self.m).trace
        total = float(math.fsum(self.eigenvalues))
        return {"sum": total, "exact": exact, "rel_error": abs(total - exact) / exact}

    @property
    def gap(self) -> float:
        return float(self.eigenvalues[0] - self.eigenvalues[1])

    def eigenfunctions(self, t, n_terms: int | None = None) -> np.ndarray:
        """Nystrom interpolation of the first ``n_terms`` eigenfunctions at ``t``.

        Returns an array of shape ``(len(t), n_terms)``; exact at the nodes.
        """
        if self.rule is None:
            raise ValueError("spectrum carries no eigenfunction samples")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = self.n_nodes if n_terms is None else n_terms
        spec = ProcessSpec(self.m)
        w = self.rule.weights
        Kt = kernel_value(spec, t[:, None], self.rule.nodes[None, :])
        corr = kernel_row_integral(spec, t) - Kt @ w
        if self.row_correction is None or not np.any(self.row_correction):
            corr = np.zeros_like(corr)
        lam = self.eigenvalues[:k]
        return (Kt * w) @ self.eigenvectors[:, :k] / (lam[None, :] - corr[:, None])

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "n_nodes": self.n_nodes,
            "n_terms": len(self.eigenvalues),
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "trace_check": self.trace_check,
            "gap": self.gap,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def nystrom_spectrum(spec: ProcessSpec, n_nodes: int = 256, corrected: bool = True) -> Spectrum:
    """Nystrom discretization of A_m on Gauss-Legendre nodes.

    The symmetric matrix W^(1/2) K W^(1/2) is diagonalized. The kernel has a
    derivative jump on the diagonal, which limits plain Nystrom to O(n^-2)
    accuracy for m = 0; with ``corrected`` the diagonal gets the singularity
    subtraction term int_0^1 K(s, t_i) ds - sum_j w_j K(t_j, t_i), which keeps
    the matrix symmetric and restores O(n^-4) accuracy for the leading
    eigenvalues. The price is a small deficit in the sum of all eigenvalues,
    since the trailing (unresolved) eigenvalues are no longer inflated.
    """
    if n_nodes < 8:
        raise ValueError("n_nodes must be at least 8")
    rule = gauss_legendre(n_nodes)
    K = kernel_matrix(spec, rule.nodes)
    sw = np.sqrt(rule.weights)
    A = sw[:, None] * K * sw[None, :]
    corr = np.zeros(n_nodes)
    if corrected:
        corr = kernel_row_integral(spec, rule.nodes) - K @ rule.weights
        A[np.diag_indices_from(A)] += corr
    vals, vecs = np.linalg.eigh(A)
    if vals[0] < -1e-8 * max(1.0, vals[-1]):
        raise np.linalg.LinAlgError(f"negative eigenvalue {vals[0]:.3e}: kernel is not PSD")
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    f = vecs[:, order] / sw[:, None]
    # f_n(1) via the sign of the value at the last node
    f *= np.where(f[-1] < 0, -1.0, 1.0)[None, :]
    return Spectrum(m=spec.m, eigenvalues=vals, eigenvectors=f, rule=rule, row_correction=corr)


def brownian_spectrum(n_terms: int = 10**6) -> Spectrum:
    """Closed-form eigenvalues of the m = 0 operator, 4 / ((2n-1)^2 pi^2)."""
    n = np.arange(1, n_terms + 1, dtype=float)
    return Spectrum(m=0, eigenvalues=4.0 / ((2.0 * n - 1.0) ** 2 * math.pi**2),
                    eigenvectors=None, rule=None)


@dataclass(frozen=True)
class EigenBoundReport:
    m: int
    lower: float
    upper: float
    lambda1: float
    passed: bool
    margin: float


def check_eigen_bounds(spec: ProcessSpec, spectrum: Spectrum) -> EigenBoundReport:
    """Compare lambda_1 with 1/((m!)^2 (m+1)^2 (2m+3)) <= lambda_1 <= 1/((m!)^2 (2m+1))."""
    if spectrum.m != spec.m:
        raise ValueError("spectrum computed for a different m")
    m = spec.m
    lower = 1.0 / (spec.m_fact_sq * (m + 1) ** 2 * (2 * m + 3))
    upper = 1.0 / (spec.m_fact_sq * (2 * m + 1))
    lam1 = float(spectrum.eigenvalues[0])
    # margin on the normalized scale lambda_1 (m!)^2
    margin = min(lam1 - lower, upper - lam1) * spec.m_fact_sq
    return EigenBoundReport(m, lower, upper, lam1, bool(lower <= lam1 <= upper), margin)


@dataclass(frozen=True)
class ZolotarevConstants:
    c_bar: float
    c_lambda: float
    truncation_error_bound: float
    n_terms: int


def zolotarev_constants(spectrum: Spectrum, tol: float = 1e-6, threshold: float = 1e-14,
                        trace: float | None = None) -> ZolotarevConstants:
    """c_bar = prod_{n>=2} (1 - lambda_n/lambda_1)^(-1/2) and c_lambda = 2 c_bar sqrt(lambda_1/(2 pi)).

    Terms with lambda_n/lambda_1 <= ``threshold`` are dropped; their effect is
    bounded through the unresolved trace mass ``trace - sum(kept)``.
    """
    lam = np.asarray(spectrum.eigenvalues, dtype=float)
    lam1 = lam[0]
    if lam1 <= 0:
        raise SpectralGapError("leading eigenvalue must be positive")
    if len(lam) > 1 and lam1 - lam[1] < tol * lam1:
        raise SpectralGapError(
            f"spectral gap {lam1 - lam[1]:.3e} below {tol:g} * lambda_1")
    ratio = lam[1:] / lam1
    keep = ratio > threshold
    log_c = -0.5 * math.fsum(np.log1p(-ratio[keep]))
    if trace is None:
        trace = ProcessSpec(spectrum.m).trace if spectrum.m <= 20 else float(lam.sum())
    tail = max(trace - math.fsum(lam[:1]) - math.fsum(lam[1:][keep]), 0.0) / lam1
    # -log(1-x) <= x/(1-x) with x <= the largest dropped ratio
    xmax = float(ratio[~keep].max()) if np.any(~keep) else 0.0
    bound = math.expm1(0.5 * tail / (1.0 - xmax)) if tail > 0 else 0.0
    c_bar = math.exp(log_c)
    return ZolotarevConstants(c_bar=c_bar, c_lambda=2.0 * c_bar * math.sqrt(lam1 / (2.0 * math.pi)),
                              truncation_error_bound=bound, n_terms=int(keep.sum()) + 1)


def _lp_norm(v, w, p):
    if math.isinf(p):
        return float(np.max(np.abs(v)))
    return float(np.sum(w * np.abs(v) ** p) ** (1.0 / p))


def _dual(v, w, p):
    """Maximizer of <v, y>_w over ||y||_q <= 1, q the conjugate of p."""
    a = np.abs(v)
    if p == 1.0:
        return np.sign(v)
    y = np.sign(v) * a ** (p - 1.0)
    nrm = _lp_norm(v, w, p)
    return y / nrm ** (p - 1.0) if nrm > 0 else y


def operator_p_norm(spec: ProcessSpec, p: float, rule: QuadratureRule | None = None,
                    tol: float = 1e-12, max_iter: int = 10_000, restarts: int = 5,
                    seed: int = 0) -> float:
    """||A_m||_{q->p} = sup over f, g in the L^q unit ball of <A f, g>.

    Alternating maximization (Boyd's nonlinear power iteration): with f fixed
    the best g is the dual element of A f, and symmetrically. The bilinear
    value increases monotonically; the first start is the constant function,
    the others are random, and the largest limit is returned. ``tol`` is
    relative. For p = 2 this is the power method and returns lambda_1.
    """
    if not p >= 1.0 or math.isinf(p):
        raise ValueError("p must lie in [1, inf)")
    rule = rule or gauss_legendre(256)
    w = rule.weights
    K = kernel_matrix(spec, rule.nodes)
    # same diagonal singularity subtraction as nystrom_spectrum
    corr = kernel_row_integral(spec, rule.nodes) - K @ w

    def apply(f):
        return K @ (w * f) + corr * f

    q = math.inf if p == 1.0 else p / (p - 1.0)
    rng = np.random.default_rng(seed)
    starts = [np.ones(len(w))] + [rng.standard_normal(len(w)) for _ in range(restarts)]
    best = -math.inf
    for f in starts:
        f = f / _lp_norm(f, w, q)
        prev = -math.inf
        history = []
        for _ in range(max_iter):
            g = _dual(apply(f), w, p)
            f = _dual(apply(g), w, p)
            val = _lp_norm(apply(f), w, p)
            history.append(val)
            if abs(val - prev) <= tol * abs(val):
                break
            prev = val
        else:
            raise ConvergenceError(f"no convergence for p={p} after {max_iter} iterations",
                                   history[-2:])
        best = max(best, val)
    return best
