"""Gaussian-process primitives shared by every latent-field model.

Two stationary covariance families are used:

* ``exponential``: C(d) = sigma2 * exp(-phi * d), the workhorse for latent
  intensity fields z.
* ``sq_exponential``: C(d) = exp(-phi * d**2), unit variance by construction,
  used for the smooth fields that drive spatially varying kernels.

Everything downstream funnels through :func:`chol`, which factors a covariance
matrix with an escalating diagonal jitter ladder so that marginally indefinite
matrices (from near-duplicate points) still factor, while genuinely broken
inputs fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import DataError, DimensionError, FactorizationError

__all__ = [
    "CovarianceModel",
    "CholFactor",
    "cov_matrix",
    "cross_cov",
    "chol",
    "mvn_sample",
    "mvn_logpdf",
    "gp_conditional",
    "ExpCorrelationCache",
]

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class CovarianceModel:
    """A stationary isotropic covariance function C(d).

    kind "exponential" has parameters (sigma2, phi); kind "sq_exponential"
    fixes the variance at one and only phi is free.
    """

    kind: str
    sigma2: float = 1.0
    phi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("exponential", "sq_exponential"):
            raise DataError(f"unknown covariance kind {self.kind!r}")
        if not np.isfinite(self.sigma2) or self.sigma2 <= 0:
            raise DataError(f"sigma2 must be positive, got {self.sigma2!r}")
        if not np.isfinite(self.phi) or self.phi < 0:
            raise DataError(f"phi must be nonnegative, got {self.phi!r}")
        if self.kind == "sq_exponential" and self.sigma2 != 1.0:
            raise DataError("sq_exponential covariance has unit variance; sigma2 must be 1")

    def __call__(self, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        if self.kind == "exponential":
            return self.sigma2 * np.exp(-self.phi * d)
        return np.exp(-self.phi * d * d)


def cov_matrix(model: CovarianceModel, points) -> np.ndarray:
    """C evaluated at all pairwise distances of ``points``; (n, n), symmetric."""
    pts = np.asarray(points, dtype=float)
    d = cdist(pts, pts)
    out = model(d)
    # exact symmetry matters for the Cholesky path
    return (out + out.T) / 2.0


def cross_cov(model: CovarianceModel, a, b) -> np.ndarray:
    """C evaluated between two point sets; shape (len(a), len(b))."""
    return model(cdist(np.asarray(a, dtype=float), np.asarray(b, dtype=float)))


@dataclass(frozen=True)
class CholFactor:
    """Lower Cholesky factor of C + jitter * I, remembering the jitter."""

    lower: np.ndarray
    jitter: float

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    def logdet(self) -> float:
        """log det of the factored matrix."""
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def solve(self, b: np.ndarray) -> np.ndarray:
        """(C + jitter I)^{-1} b."""
        return cho_solve((self.lower, True), b)


def chol(mat: np.ndarray) -> CholFactor:
    """Factor a symmetric PSD matrix, escalating jitter until it succeeds.

    The ladder adds {0, 1e-10, 1e-8, 1e-6, 1e-4} times the mean diagonal to
    the diagonal in turn; if none of the rungs produce a valid factorization a
    :class:`FactorizationError` reports the attempts.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise DataError("covariance matrix has non-finite entries")
    scale = float(np.mean(np.diag(mat)))
    for rung in JITTER_LADDER:
        jitter = rung * scale
        try:
            lower = cholesky(mat + jitter * np.eye(len(mat)), lower=True)
        except np.linalg.LinAlgError:
            continue
        except Exception:
            continue
        return CholFactor(lower=lower, jitter=jitter)
    raise FactorizationError(
        f"Cholesky failed at every jitter rung {JITTER_LADDER} (matrix size {len(mat)})"
    )


def mvn_sample(factor: CholFactor, rng: np.random.Generator, mean=None, size: int | None = None):
    """Draw from N(mean, C) given the Cholesky factor of C.

    With ``size`` None a single (n,) draw is returned, otherwise (size, n).
    """
    n = factor.n
    if size is None:
        eps = rng.standard_normal(n)
        draw = factor.lower @ eps
        return draw if mean is None else draw + np.asarray(mean, dtype=float)
    eps = rng.standard_normal((size, n))
    draws = eps @ factor.lower.T
    return draws if mean is None else draws + np.asarray(mean, dtype=float)


def mvn_logpdf(x: np.ndarray, mean, factor: CholFactor) -> float:
    """Log density of N(mean, C) at x, via the Cholesky factor of C."""
    x = np.asarray(x, dtype=float)
    resid = x if mean is None else x - np.asarray(mean, dtype=float)
    if resid.shape != (factor.n,):
        raise DimensionError(f"x has shape {x.shape}, factor is {factor.n}x{factor.n}")
    w = solve_triangular(factor.lower, resid, lower=True)
    return -0.5 * (factor.n * _LOG_2PI + factor.logdet() + float(w @ w))


class ExpCorrelationCache:
    """Cholesky factors of the exponential correlation exp(-phi * d) on a
    fixed point set.

    A field with covariance sigma2 * R(phi) only needs refactoring when phi
    moves; sigma2 rescales a cached factor of R. A small LRU keeps the few
    phi values alive during a Metropolis accept/reject cycle.
    """

    def __init__(self, points, capacity: int = 16):
        from collections import OrderedDict

        self._dist = cdist(np.asarray(points, dtype=float), np.asarray(points, dtype=float))
        self._cache: "OrderedDict[float, CholFactor]" = OrderedDict()
        self._capacity = capacity

    @property
    def n(self) -> int:
        return self._dist.shape[0]

    def correlation_factor(self, phi: float) -> CholFactor:
        key = float(phi)
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        factor = chol(np.exp(-key * self._dist))
        self._cache[key] = factor
        if len(self._cache) > self._capacity:
            self._cache.popitem(last=False)
        return factor

    def field_factor(self, sigma2: float, phi: float) -> CholFactor:
        """Factor of sigma2 * R(phi)."""
        base = self.correlation_factor(phi)
        return CholFactor(lower=base.lower * np.sqrt(sigma2), jitter=base.jitter * sigma2)

    def field_logpdf(self, value, sigma2: float, phi: float) -> float:
        """log N(value; 0, sigma2 * R(phi))."""
        base = self.correlation_factor(phi)
        k = base.n
        w = solve_triangular(base.lower, np.asarray(value, dtype=float), lower=True)
        quad = float(w @ w) / sigma2
        logdet = k * np.log(sigma2) + base.logdet()
        return -0.5 * (k * _LOG_2PI + logdet + quad)


def gp_conditional(
    model: CovarianceModel,
    obs_points,
    obs_values,
    new_points,
    obs_factor: CholFactor | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Kriging: mean and covariance of the zero-mean GP at new points given
    exact observations at ``obs_points``.

    Returns ``(mean, cov)`` with shapes (m,) and (m, m). Passing a
    precomputed ``obs_factor`` skips refactoring the observation covariance.
    """
    obs_points = np.asarray(obs_points, dtype=float)
    obs_values = np.asarray(obs_values, dtype=float)
    if obs_values.shape != (len(obs_points),):
        raise DimensionError("one observed value per observation point is required")
    if obs_factor is None:
        obs_factor = chol(cov_matrix(model, obs_points))
    k_no = cross_cov(model, new_points, obs_points)  # (m, n)
    k_nn = cov_matrix(model, new_points)
    alpha = obs_factor.solve(obs_values)
    mean = k_no @ alpha
    # cov = Knn - Kno C^{-1} Kon, kept symmetric
    v = solve_triangular(obs_factor.lower, k_no.T, lower=True)
    cov = k_nn - v.T @ v
    return mean, (cov + cov.T) / 2.0
