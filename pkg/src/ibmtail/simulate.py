"""Exact finite-dimensional sampling of X_m.

Three interchangeable samplers share the draw layout of ``RngStream``: draw 0
of every path is reserved (it is the sign used by symmetric importance
sampling), the path itself uses draws 1, 2, ...
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from . import _kernels
from .process import ProcessSpec, kernel_matrix, state_transition, variance
from .rng import RngStream
from .spectrum import Spectrum

METHODS = ("state-stepping", "cholesky", "karhunen-loeve")
CHOLESKY_MAX_POINTS = 4096


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing times in [0, 1] ending exactly at 1."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size == 0:
            raise ValueError("grid is empty")
        if pts[0] < 0.0 or pts[-1] != 1.0:
            raise ValueError("grid must lie in [0, 1] and end at 1")
        if np.any(np.diff(pts) <= 0.0):
            raise ValueError("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, n: int) -> "TimeGrid":
        """Points k/n, k = 1..n; the origin contributes the zero state implicitly."""
        if n < 1:
            raise ValueError("n must be positive")
        return cls(np.arange(1, n + 1) / n)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def steps(self) -> np.ndarray:
        """Step lengths, starting with t_0 - 0."""
        return np.diff(self.points, prepend=0.0)

    def trapezoid_weights(self) -> np.ndarray:
        """Trapezoid weights on [0, 1]; the segment [0, t_0] uses X(0) = 0."""
        h = self.steps
        w = np.zeros(self.n)
        w[:-1] += 0.5 * h[1:]
        w[1:] += 0.5 * h[1:]
        w[0] += 0.5 * h[0]
        return w

    def is_dyadic(self) -> bool:
        n = self.n
        return n & (n - 1) == 0 and np.array_equal(self.points, np.arange(1, n + 1) / n)


@dataclass(frozen=True)
class PathSample:
    """A batch of sampled paths.

    ``states`` has shape (n_paths, n_points, k): k = m + 1 columns
    (X_0, ..., X_m) for state stepping, a single X_m column otherwise.
    """

    m: int
    grid: TimeGrid
    states: np.ndarray
    seed: int
    stream_id: int
    method: str
    path_offset: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def xm(self) -> np.ndarray:
        """X_m values, shape (n_paths, n_points)."""
        return self.states[..., -1]

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]


# cached per-grid arrays
_STEP_CACHE: dict = {}
_CHOL_CACHE: dict = {}


def _step_arrays(spec: ProcessSpec, grid: TimeGrid):
    key = (spec.m, grid.points.tobytes())
    if key not in _STEP_CACHE:
        d = spec.m + 1
        h = grid.steps
        t0 = grid.points[0]
        init_L = state_transition(spec, t0).noise_chol if t0 > 0 else np.zeros((d, d))
        n = grid.n
        T = np.zeros((max(n - 1, 1), d, d))
        L = np.zeros((max(n - 1, 1), d, d))
        for i in range(1, n):
            st = _cached_transition(spec, h[i])
            T[i - 1] = st.transition
            L[i - 1] = st.noise_chol
        if len(_STEP_CACHE) > 32:
            _STEP_CACHE.clear()
        _STEP_CACHE[key] = (init_L, T, L)
    return _STEP_CACHE[key]


_TRANSITION_CACHE: dict = {}


def _cached_transition(spec, h):
    key = (spec.m, float(h))
    st = _TRANSITION_CACHE.get(key)
    if st is None:
        st = state_transition(spec, h)
        if len(_TRANSITION_CACHE) > 4096:
            _TRANSITION_CACHE.clear()
        _TRANSITION_CACHE[key] = st
    return st


def sample_path_exact(spec: ProcessSpec, grid: TimeGrid, rng: RngStream, n_paths: int = 1,
                      path_offset: int = 0) -> PathSample:
    """State-vector stepping with the exact transition law; no discretization bias."""
    init_L, T, L = _step_arrays(spec, grid)
    out = np.empty((n_paths, grid.n, spec.m + 1))
    k0, k1 = rng.key
    _kernels.step_paths(k0, k1, path_offset, n_paths, init_L, T, L, out)
    return PathSample(spec.m, grid, out, rng.seed, rng.stream_id, "state-stepping", path_offset)


def covariance_factor(spec: ProcessSpec, grid: TimeGrid) -> np.ndarray:
    """Lower Cholesky factor of the kernel matrix on ``grid`` (cached)."""
    if grid.n > CHOLESKY_MAX_POINTS:
        raise ValueError(f"dense factorization capped at {CHOLESKY_MAX_POINTS} points")
    key = (spec.m, grid.points.tobytes())
    if key not in _CHOL_CACHE:
        sigma = kernel_matrix(spec, grid.points)
        c, info = lapack.dpotrf(sigma, lower=1, clean=1)
        if info > 0:
            raise np.linalg.LinAlgError(
                f"covariance not positive definite: pivot {info - 1} "
                f"(t = {grid.points[info - 1]:.6g}) failed")
        if len(_CHOL_CACHE) > 8:
            _CHOL_CACHE.clear()
        _CHOL_CACHE[key] = c
    return _CHOL_CACHE[key]


def sample_path_cholesky(spec: ProcessSpec, grid: TimeGrid, rng: RngStream, n_paths: int = 1,
                         path_offset: int = 0) -> PathSample:
    """X_m on the grid drawn as N(0, Sigma) through a once-per-grid factorization."""
    c = covariance_factor(spec, grid)
    z = rng.normals(n_paths, grid.n, path_offset=path_offset, draw_offset=1)
    x = z @ c.T
    return PathSample(spec.m, grid, x[..., None], rng.seed, rng.stream_id, "cholesky", path_offset)


def sample_kl(spectrum: Spectrum, n_terms: int, rng: RngStream, n_paths: int = 1,
              path_offset: int = 0) -> np.ndarray:
    """Scaled coefficients sqrt(lambda_n) Z_n, shape (n_paths, n_terms).

    The squared Euclidean norm of a row is the truncated squared L2 norm of
    the corresponding path.
    """
    if n_terms > len(spectrum.eigenvalues):
        raise ValueError("n_terms exceeds the number of available eigenvalues")
    z = rng.normals(n_paths, n_terms, path_offset=path_offset, draw_offset=1)
    lam = np.clip(spectrum.eigenvalues[:n_terms], 0.0, None)
    return z * np.sqrt(lam)[None, :]


def sample_path_kl(spectrum: Spectrum, grid: TimeGrid, rng: RngStream, n_terms: int | None = None,
                   n_paths: int = 1, path_offset: int = 0) -> PathSample:
    """Truncated KL synthesis of X_m on ``grid`` from Nystrom eigenfunctions."""
    n_terms = n_terms or spectrum.n_nodes
    coef = sample_kl(spectrum, n_terms, rng, n_paths, path_offset)
    f = spectrum.eigenfunctions(grid.points, n_terms)
    x = coef @ f.T
    return PathSample(spectrum.m, grid, x[..., None], rng.seed, rng.stream_id, "karhunen-loeve",
                      path_offset, {"n_terms": n_terms})


def sample_paths(spec: ProcessSpec, grid: TimeGrid, rng: RngStream, n_paths: int = 1,
                 method: str = "state-stepping", spectrum: Spectrum | None = None,
                 path_offset: int = 0) -> PathSample:
    if method == "state-stepping":
        return sample_path_exact(spec, grid, rng, n_paths, path_offset)
    if method == "cholesky":
        return sample_path_cholesky(spec, grid, rng, n_paths, path_offset)
    if method == "karhunen-loeve":
        if spectrum is None:
            from .spectrum import nystrom_spectrum
            spectrum = nystrom_spectrum(spec, 512)
        return sample_path_kl(spectrum, grid, rng, n_paths=n_paths, path_offset=path_offset)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def initial_state_variances(spec: ProcessSpec, t0: float) -> np.ndarray:
    """Var X_k(t0) for k = 0..m, the law of the first sampled state."""
    return np.array([variance(ProcessSpec(k), t0) for k in range(spec.m + 1)])


def paths_to_csv_rows(sample: PathSample):
    """Rows ``t,x0,...,xm``; one block per path, blocks separated by a blank row."""
    k = sample.states.shape[2]
    header = ["t"] + [f"x{j}" for j in range(sample.m + 1 - k, sample.m + 1)]
    yield header
    for i in range(sample.n_paths):
        if i:
            yield []
        for t, row in zip(sample.grid.points, sample.states[i]):
            yield [repr(float(t))] + [repr(float(v)) for v in row]
