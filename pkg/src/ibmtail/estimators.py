"""Monte Carlo estimators of tail, small-ball and Laplace functionals of norms of X_m.

Paths are processed in fixed blocks of ``block_size`` consecutive path
indices. Each block is a pure function of (seed, stream, block index), and
block sums are merged in block order with exact (``math.fsum``) summation, so
estimates do not depend on the number of worker threads.

Three routes produce the norm of a path:

* ``grid``: exact state stepping on a time grid (sup, one-sided max or
  trapezoid L^p), with early exit once the threshold is crossed;
* ``levy``: m = 0 only, Brownian motion built by midpoint refinement on a
  dyadic grid with the exact Brownian-bridge crossing probability between
  grid points, which removes the discrete-monitoring bias of the grid sup;
* ``kl``: L2 norm through Karhunen-Loeve coefficients.

Importance sampling shifts the path by a Cameron-Martin drift toward the
dominating point t = 1 (``endpoint``) or along the top eigenfunction
(``eigen``). Two-sided norms use the symmetric mixture of the +drift and
-drift measures, whose likelihood ratio is exp(a^2 / 2v) / cosh(a xi / v).
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from . import _kernels
from .formulas import asymptotic_tail_l2, asymptotic_tail_sup
from .process import ProcessSpec, kernel_value, state_transition
from .rng import RngStream
from .simulate import PathSample, TimeGrid, _step_arrays
from .spectrum import Spectrum, brownian_spectrum, nystrom_spectrum, zolotarev_constants

DEFAULT_GRID = 4096
DEFAULT_KL_TERMS = 400
DEFAULT_BLOCK = 8192
DEFAULT_ESS_FLOOR = 100.0
TAIL_CSV_HEADER = ["m", "norm", "p", "r", "method", "estimate", "stderr", "n", "seed"]


@dataclass(frozen=True)
class NormSpec:
    """'sup' is sup |X|, 'max' the one-sided sup max(0, sup X), 'lp' the L^p norm."""

    kind: str = "sup"
    p: float = math.inf

    def __post_init__(self):
        if self.kind not in ("sup", "max", "lp"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.kind == "lp":
            if not (self.p >= 1.0 and math.isfinite(self.p)):
                raise ValueError("L^p norms need a finite p >= 1")
            object.__setattr__(self, "p", float(self.p))
        else:
            object.__setattr__(self, "p", math.inf)

    @classmethod
    def parse(cls, text: str, p: float | None = None) -> "NormSpec":
        text = text.lower()
        if text in ("sup", "max"):
            return cls(text)
        if text == "l2":
            return cls("lp", 2.0)
        if text == "lp":
            if p is None:
                raise ValueError("lp norm needs p")
            return cls("lp", p)
        raise ValueError(f"unknown norm {text!r}")

    @property
    def label(self) -> str:
        if self.kind != "lp":
            return self.kind
        return "l2" if self.p == 2.0 else "lp"

    @property
    def two_sided(self) -> bool:
        return self.kind != "max"


@dataclass(frozen=True)
class ISConfig:
    """Cameron-Martin shift; ``shift_magnitude=None`` means a = r."""

    drift_kind: str = "endpoint"
    shift_magnitude: float | None = None

    def __post_init__(self):
        if self.drift_kind not in ("endpoint", "eigen"):
            raise ValueError(f"unknown drift kind {self.drift_kind!r}")
        if self.shift_magnitude is not None and not self.shift_magnitude >= 0:
            raise ValueError("shift_magnitude must be nonnegative")

    def magnitude(self, r: float) -> float:
        return r if self.shift_magnitude is None else float(self.shift_magnitude)


@dataclass(frozen=True)
class TailEstimate:
    m: int
    norm: NormSpec
    r: float
    estimate: float
    stderr: float
    n_samples: int
    method: str
    seed: int
    stream_id: int
    ess: float
    warning: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def rel_stderr(self) -> float:
        return self.stderr / self.estimate if self.estimate > 0 else math.inf

    def interval(self, z: float = 3.0) -> tuple[float, float]:
        """estimate +- z stderr, clamped to [0, 1]."""
        return max(0.0, self.estimate - z * self.stderr), min(1.0, self.estimate + z * self.stderr)

    def to_dict(self) -> dict:
        return {
            "m": self.m, "norm": self.norm.label, "p": self.norm.p, "r": self.r,
            "estimate": self.estimate, "stderr": self.stderr, "n": self.n_samples,
            "method": self.method, "seed": self.seed, "stream_id": self.stream_id,
            "ess": self.ess, "warning": self.warning, "extra": self.extra,
        }

    def csv_row(self) -> list:
        return [self.m, self.norm.label, self.norm.p, self.r, self.method,
                self.estimate, self.stderr, self.n_samples, self.seed]


# ---- block machinery ------------------------------------------------------

def _blocks(n, block_size):
    return [(s, min(block_size, n - s)) for s in range(0, n, block_size)]


def _map_blocks(fn, n, block_size, threads):
    parts = _blocks(n, block_size)
    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda b: fn(*b), parts))
    return [fn(*b) for b in parts]


def _merge(parts):
    """Exact column sums of a list of 1-d arrays."""
    arr = np.stack(parts)
    return np.array([math.fsum(arr[:, j]) for j in range(arr.shape[1])])


def _log_cosh(x):
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0)


def _weights(xi_shifted, a, v, symmetric):
    """Likelihood ratio of the shifted (or symmetric mixture) measure."""
    if a == 0.0:
        return np.ones_like(xi_shifted)
    if symmetric:
        return np.exp(a * a / (2.0 * v) - _log_cosh(a * xi_shifted / v))
    return np.exp(-a * xi_shifted / v + a * a / (2.0 * v))


_SPECTRA: dict = {}


def default_spectrum(spec: ProcessSpec) -> Spectrum:
    """Spectrum used by the KL route: closed form for m = 0, 512-node Nystrom otherwise."""
    if spec.m not in _SPECTRA:
        _SPECTRA[spec.m] = brownian_spectrum(4096) if spec.m == 0 else nystrom_spectrum(spec, 512)
    return _SPECTRA[spec.m]


class _Sampler:
    """Per-block norm generator for one (process, norm, route, shift) combination."""

    def __init__(self, spec, norm, rng, route, grid, spectrum, n_terms, drift_kind, a):
        self.spec = spec
        self.norm = norm
        self.rng = rng
        self.route = route
        self.grid = grid
        self.a = float(a)
        self.symmetric = norm.two_sided and self.a > 0
        self.k0, self.k1 = rng.key
        if route == "kl":
            if drift_kind not in (None, "eigen"):
                raise ValueError("the KL route supports only the eigenfunction drift")
            self.spectrum = spectrum or default_spectrum(spec)
            lam = np.clip(np.asarray(self.spectrum.eigenvalues[:n_terms], dtype=float), 0.0, None)
            self.sqrt_lam = np.sqrt(lam)
            self.v = float(lam[0])
        else:
            if drift_kind not in (None, "endpoint"):
                raise ValueError("grid routes support only the endpoint drift")
            self.v = spec.sup_variance
        if route == "grid":
            self.init_L, self.T, self.L = _step_arrays(spec, grid)
            self.jump_T, self.jump_L = _jump_arrays(spec, grid)
            pts = grid.points
            self.drift = self.a * kernel_value(spec, pts, np.ones_like(pts)) / self.v
            self.kind = {"sup": _kernels.KIND_SUP, "max": _kernels.KIND_MAX,
                         "lp": _kernels.KIND_LP}[norm.kind]
            self.p = norm.p if norm.kind == "lp" else 1.0
            self.trap_w = grid.trapezoid_weights()
        if route == "levy":
            self.levels = int(round(math.log2(grid.n)))

    def norms(self, offset, size, stop_level=math.inf):
        """(norm values, weights); norms above ``stop_level`` may be partial."""
        w_sign = np.empty(size)
        if self.route == "grid":
            nrm = np.empty(size)
            xend = np.empty(size)
            _kernels.step_norms(self.k0, self.k1, offset, size, self.init_L, self.T, self.L,
                                self.jump_T, self.jump_L, self.drift, self.symmetric, self.kind,
                                self.p, self.trap_w, stop_level, nrm, xend, w_sign)
        elif self.route == "kl":
            sq = np.empty(size)
            xend = np.empty(size)
            _kernels.kl_norms(self.k0, self.k1, offset, size, self.sqrt_lam, self.a, self.symmetric,
                              stop_level * stop_level, sq, xend, w_sign)
            nrm = np.sqrt(sq)
        else:
            raise ValueError("norm values are not available on the levy route")
        w = _weights(xend + w_sign * self.a, self.a, self.v, self.symmetric)
        return nrm, w

    def exceed(self, offset, size, thresholds):
        """(conditional exceedance probabilities (size, k), weights, grid flags or None)."""
        thr = np.asarray(thresholds, dtype=float)
        if self.route == "levy":
            order = np.argsort(thr)
            ts = np.ascontiguousarray(thr[order])
            grid_flag = np.empty((size, len(ts)), np.int8)
            stay = np.empty((size, len(ts)))
            xend = np.empty(size)
            w_sign = np.empty(size)
            _kernels.levy_bm_crossing(self.k0, self.k1, offset, size, self.levels, ts,
                                      self.norm.two_sided, self.a, self.symmetric,
                                      grid_flag, stay, xend, w_sign)
            inv = np.argsort(order)
            w = _weights(xend + w_sign * self.a, self.a, self.v, self.symmetric)
            return 1.0 - stay[:, inv], w, grid_flag[:, inv].astype(float)
        nrm, w = self.norms(offset, size, stop_level=float(thr.max()))
        return (nrm[:, None] > thr[None, :]).astype(float), w, None


_JUMP_CACHE: dict = {}


def _jump_arrays(spec, grid):
    key = (spec.m, grid.points.tobytes())
    if key not in _JUMP_CACHE:
        d = spec.m + 1
        n = grid.n
        jt = np.zeros((n, d, d))
        jl = np.zeros((n, d, d))
        for i in range(n - 1):
            st = state_transition(spec, 1.0 - grid.points[i])
            jt[i] = st.transition
            jl[i] = st.noise_chol
        jt[n - 1] = np.eye(d)
        if len(_JUMP_CACHE) > 16:
            _JUMP_CACHE.clear()
        _JUMP_CACHE[key] = (jt, jl)
    return _JUMP_CACHE[key]


def choose_route(spec: ProcessSpec, norm: NormSpec, grid: TimeGrid, continuous: bool | None = None,
                 route: str | None = None) -> str:
    if route is not None:
        if route not in ("grid", "levy", "kl"):
            raise ValueError(f"unknown route {route!r}")
        if route == "levy" and not (spec.m == 0 and norm.kind != "lp" and grid.is_dyadic()):
            raise ValueError("the levy route needs m = 0, a sup norm and a dyadic uniform grid")
        if route == "kl" and not (norm.kind == "lp" and norm.p == 2.0):
            raise ValueError("the KL route computes L2 norms only")
        return route
    if norm.kind == "lp" and norm.p == 2.0:
        return "kl"
    if spec.m == 0 and norm.kind != "lp" and grid.is_dyadic() and continuous is not False:
        return "levy"
    return "grid"


def _make_sampler(spec, norm, rng, a, is_config, grid, spectrum, n_terms, continuous, route):
    grid = grid or TimeGrid.uniform(DEFAULT_GRID)
    route = choose_route(spec, norm, grid, continuous, route)
    drift = is_config.drift_kind if is_config is not None else None
    if drift is None and a > 0:
        drift = "eigen" if route == "kl" else "endpoint"
    return _Sampler(spec, norm, rng, route, grid, spectrum, n_terms, drift, a)


def _summarize(y_parts, n):
    s1 = _merge([y.sum(axis=0) for y in y_parts])
    s2 = _merge([(y * y).sum(axis=0) for y in y_parts])
    mean = s1 / n
    var = np.maximum(s2 / n - mean * mean, 0.0)
    ess = np.where(s2 > 0, s1 * s1 / np.where(s2 > 0, s2, 1.0), 0.0)
    return mean, np.sqrt(var / n), ess


def mc_tail_many(spec: ProcessSpec, norm: NormSpec, r_list, n: int, rng: RngStream,
                 is_config: ISConfig | None = None, *, grid: TimeGrid | None = None,
                 continuous: bool | None = None, route: str | None = None,
                 spectrum: Spectrum | None = None, n_terms: int = DEFAULT_KL_TERMS,
                 block_size: int = DEFAULT_BLOCK, threads: int = 1,
                 ess_floor: float = DEFAULT_ESS_FLOOR) -> list[TailEstimate]:
    """Estimates of P{||X_m|| > r} for each r.

    Without importance sampling all thresholds share one set of paths. With
    it, each r gets its own shift a (default a = r) and its own pass over the
    same path indices.
    """
    r_arr = np.atleast_1d(np.asarray(r_list, dtype=float))
    if np.any(~(r_arr > 0)):
        raise ValueError("thresholds r must be positive")
    if n < 1000:
        raise ValueError("n must be at least 1000")
    if is_config is None:
        groups = [(0.0, r_arr)]
    else:
        groups = [(is_config.magnitude(r), np.array([r])) for r in r_arr]
    out = []
    for a, rs in groups:
        sampler = _make_sampler(spec, norm, rng, a, is_config, grid, spectrum, n_terms,
                                continuous, route)
        res = _map_blocks(lambda off, size: sampler.exceed(off, size, rs), n, block_size, threads)
        mean, se, ess = _summarize([e * w[:, None] for e, w, _ in res], n)
        extra_common = {"route": sampler.route, "shift": float(a)}
        if sampler.route != "kl":
            extra_common["grid_points"] = sampler.grid.n
        else:
            extra_common["kl_terms"] = len(sampler.sqrt_lam)
        if is_config is not None:
            wm, wse, _ = _summarize([w[:, None] for _, w, _ in res], n)
            extra_common["mean_weight"] = float(wm[0])
            extra_common["mean_weight_stderr"] = float(wse[0])
        if sampler.route == "levy":
            gmean, gse, _ = _summarize([g * w[:, None] for _, w, g in res], n)
        for j, r in enumerate(rs):
            extra = dict(extra_common)
            if sampler.route == "levy":
                extra["grid_estimate"] = float(gmean[j])
                extra["grid_stderr"] = float(gse[j])
            warn = None
            if is_config is not None and a > 0 and ess[j] < ess_floor:
                warn = f"effective sample size {ess[j]:.1f} below floor {ess_floor:g}"
                warnings.warn(warn, RuntimeWarning, stacklevel=2)
            out.append(TailEstimate(spec.m, norm, float(r), float(mean[j]), float(se[j]), n,
                                    "importance" if is_config is not None else "plain",
                                    rng.seed, rng.stream_id, float(ess[j]), warn, extra))
    return out


def mc_tail(spec: ProcessSpec, norm: NormSpec, r: float, n: int, rng: RngStream,
            is_config: ISConfig | None = None, **kw) -> TailEstimate:
    """P{||X_m|| > r} by plain or importance-sampled Monte Carlo (see ``mc_tail_many``)."""
    if not r > 0:
        raise ValueError("r must be positive")
    return mc_tail_many(spec, norm, [r], n, rng, is_config, **kw)[0]


def sample_norms(spec: ProcessSpec, norm: NormSpec, n: int, rng: RngStream, *,
                 grid: TimeGrid | None = None, route: str | None = None,
                 spectrum: Spectrum | None = None, n_terms: int = DEFAULT_KL_TERMS,
                 block_size: int = DEFAULT_BLOCK, threads: int = 1) -> np.ndarray:
    """Plain Monte Carlo sample of norms (full paths, no early exit)."""
    sampler = _make_sampler(spec, norm, rng, 0.0, None, grid, spectrum, n_terms, False, route)
    res = _map_blocks(lambda off, size: sampler.norms(off, size)[0], n, block_size, threads)
    return np.concatenate(res)


def mean_norm(spec: ProcessSpec, norm: NormSpec, n: int, rng: RngStream, **kw) -> tuple[float, float]:
    """(E||X_m||, stderr) by plain Monte Carlo."""
    x = sample_norms(spec, norm, n, rng, **kw)
    return math.fsum(x) / len(x), float(x.std() / math.sqrt(len(x)))


def norm_evaluate(path: PathSample, norm: NormSpec) -> np.ndarray:
    """Norm of each sampled path: grid sup, one-sided max or trapezoid L^p."""
    x = path.xm
    if norm.kind == "sup":
        return np.abs(x).max(axis=-1)
    if norm.kind == "max":
        return np.maximum(x.max(axis=-1), 0.0)
    if path.grid.n < 2:
        raise ValueError("L^p norms need at least two grid points")
    w = path.grid.trapezoid_weights()
    return (np.abs(x) ** norm.p @ w) ** (1.0 / norm.p)


# ---- small-ball ------------------------------------------------------------

@dataclass(frozen=True)
class SmallBallResult:
    eps: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray
    included: np.ndarray
    slope: float
    intercept: float
    n_samples: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"eps": self.eps.tolist(), "estimate": self.estimates.tolist(),
                "stderr": self.stderr.tolist(), "included": self.included.tolist(),
                "slope": self.slope, "intercept": self.intercept, "n": self.n_samples,
                "extra": self.extra}


def fit_small_ball_slope(eps, prob):
    """Least-squares slope and intercept of log(-log P) against log eps."""
    eps = np.asarray(eps, dtype=float)
    prob = np.asarray(prob, dtype=float)
    if len(eps) < 3:
        raise ValueError(f"need at least 3 usable points for the fit, got {len(eps)}")
    slope, intercept = np.polyfit(np.log(eps), np.log(-np.log(prob)), 1)
    return float(slope), float(intercept)


def small_ball_curve(spec: ProcessSpec, norm: NormSpec, eps_list, n: int, rng: RngStream, *,
                     p_min: float = 1e-5, p_max: float = 0.5, grid: TimeGrid | None = None,
                     continuous: bool | None = None, route: str | None = None,
                     spectrum: Spectrum | None = None, n_terms: int = DEFAULT_KL_TERMS,
                     block_size: int = DEFAULT_BLOCK, threads: int = 1) -> SmallBallResult:
    """P{||X_m|| <= eps} on one set of paths and the fitted small-ball slope.

    A point enters the fit when its estimate exceeds both 10/n and ``p_min``
    and does not exceed ``p_max``.
    """
    eps = np.asarray(eps_list, dtype=float)
    if np.any(~(eps > 0)):
        raise ValueError("every eps must be positive")
    sampler = _make_sampler(spec, norm, rng, 0.0, None, grid, spectrum, n_terms, continuous, route)
    res = _map_blocks(lambda off, size: sampler.exceed(off, size, eps), n, block_size, threads)
    mean, se, _ = _summarize([1.0 - e for e, _, _ in res], n)
    inc = (mean > max(10.0 / n, p_min)) & (mean <= p_max)
    slope, icpt = fit_small_ball_slope(eps[inc], mean[inc])
    return SmallBallResult(eps, mean, se, inc, slope, icpt, n,
                           {"route": sampler.route, "seed": rng.seed, "stream_id": rng.stream_id})


# ---- Laplace transform -----------------------------------------------------

class SpliceError(ValueError):
    pass


@dataclass(frozen=True)
class LaplaceEstimate:
    value: float
    stderr: float
    method: str
    r: float
    theta: float
    n_samples: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "method": self.method, "r": self.r,
                "theta": self.theta, "n": self.n_samples, "extra": self.extra}


def tail_asymptotic_for(spec: ProcessSpec, norm: NormSpec, spectrum: Spectrum | None = None):
    """x -> sharp tail asymptotic of P{||X_m|| > x} for the norms where one is known."""
    if norm.kind in ("sup", "max"):
        one = norm.kind == "max"
        return lambda x: asymptotic_tail_sup(spec, x, one_sided=one)
    if norm.p == 2.0:
        spectrum = spectrum or default_spectrum(spec)
        zc = zolotarev_constants(spectrum)
        return lambda x: asymptotic_tail_l2(spectrum, zc, x)
    raise ValueError("no sharp tail asymptotic is known for this norm")


def laplace_estimate(spec: ProcessSpec, norm: NormSpec, r: float, theta: float, method: str,
                     n: int, rng: RngStream, *, splice_window: float = 3.0,
                     min_tail_count: int = 100, spectrum: Spectrum | None = None,
                     **kw) -> LaplaceEstimate:
    """E exp(r ||X_m||^theta) by direct averaging or by the tail integral.

    ``tail-integral`` uses 1 + int_0^inf r theta x^(theta-1) e^(r x^theta) P{||X|| > x} dx.
    Below the crossover x_c (the largest x whose empirical tail still has
    relative stderr under 10%) the empirical tail is integrated exactly,
    which equals the sample mean of exp(r min(||X||, x_c)^theta) - 1; above
    x_c the sharp tail asymptotic is integrated by adaptive quadrature. The
    empirical and asymptotic tails must agree within a factor
    ``splice_window`` at x_c.
    """
    if not 1.0 <= theta < 2.0:
        raise ValueError("theta must lie in [1, 2); the transform is infinite for theta >= 2")
    if r < 0:
        raise ValueError("r must be nonnegative")
    if method not in ("direct-mc", "tail-integral"):
        raise ValueError(f"unknown method {method!r}")
    if r == 0:
        return LaplaceEstimate(1.0, 0.0, method, 0.0, theta, 0)
    x = sample_norms(spec, norm, n, rng, spectrum=spectrum, **kw)
    if method == "direct-mc":
        g = np.exp(r * x**theta)
        return LaplaceEstimate(math.fsum(g) / n, float(g.std() / math.sqrt(n)), method, r, theta, n,
                               {"seed": rng.seed, "stream_id": rng.stream_id})
    xs = np.sort(x)[::-1]
    # smallest count k with relative stderr sqrt((1-p)/(n p)) < 0.1, p = k/n
    k = min_tail_count
    while k < n and (1.0 - k / n) / k >= 0.01:
        k += 1
    if k >= n:
        raise SpliceError("sample too small to resolve any tail")
    x_c = float(xs[k])
    p_c = k / n
    asym = tail_asymptotic_for(spec, norm, spectrum)
    a_c = asym(x_c).value
    ratio = p_c / a_c
    if not 1.0 / splice_window <= ratio <= splice_window:
        raise SpliceError(f"empirical tail {p_c:.3e} and asymptotic {a_c:.3e} do not overlap at "
                          f"crossover x={x_c:.4f} (ratio {ratio:.3f})")
    g = np.exp(r * np.minimum(x, x_c) ** theta)
    body = math.fsum(g) / n

    def integrand(t):
        return math.exp(math.log(r * theta) + (theta - 1.0) * math.log(t) + r * t**theta
                        + asym(t).log_value)

    upper = x_c + 10.0
    while integrand(upper) > 1e-300 and upper < 1e3:
        upper *= 2.0
    tail_mass, _ = quad(integrand, x_c, upper, limit=200, epsrel=1e-10, epsabs=0.0)
    extra = {"crossover": x_c, "empirical_tail_at_crossover": p_c,
             "asymptotic_tail_at_crossover": a_c, "splice_ratio": ratio,
             "asymptotic_mass": tail_mass, "seed": rng.seed, "stream_id": rng.stream_id,
             "swap": f"tail beyond x={x_c:.6g} replaced by the sharp asymptotic"}
    return LaplaceEstimate(body + tail_mass, float(g.std() / math.sqrt(n)), method, r, theta, n, extra)
