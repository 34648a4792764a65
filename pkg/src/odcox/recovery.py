"""Conditional models of recovery location given theft location.

The recovery displacement d = s_R - s_T has density

    f(d) = (1 / (pi sqrt(det Sigma))) exp(-d' Sigma^{-1} d),

i.e. a Gaussian with covariance Sigma/2 (the exponent carries no 1/2; the
pi-normalization follows). Sigma is either one constant 2x2 SPD matrix, or a
spatially varying kernel built from two latent Gaussian fields (psi_x, psi_y)
following Higdon's process-convolution construction:

    Sigma(s)^{1/2} = M(s) = sigma * diag(a(s), b(s)) * G(alpha(s)),
    a^2 = sqrt(4A^2 + |psi|^4 pi^2)/(2 pi) + |psi|^2 / 2,
    b^2 = a^2 - |psi|^2,           alpha = atan2(psi_y, psi_x),

with G the (cos, sin / -sin, cos) rotation and A fixed at 3.5. Sigma = M'M,
which leaves det Sigma = sigma^4 A^2 / pi^2 for every psi and rotates the
principal axis to alpha. The psi fields carry a unit-variance squared-
exponential prior exp(-phi* d^2) with phi* fixed per fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist

from .errors import DataError, DimensionError
from .geometry import GridSpec, PairedPattern, nearest_cells
from .gp import CovarianceModel, chol, cov_matrix, cross_cov
from .samplers import (
    ChainModel,
    EllipticalSliceBlock,
    InverseGammaPrior,
    LogitTransform,
    LogTransform,
    McmcConfig,
    MetropolisBlock,
    PosteriorChain,
    UniformPrior,
    run_chain,
)

__all__ = [
    "HIGDON_A",
    "KernelConstant",
    "KernelFieldHigdon",
    "higdon_terms",
    "sigma_from_psi",
    "higdon_half_matrix",
    "cond_logdensity",
    "fit_conditional_constant",
    "fit_conditional_spatial",
    "RecoveryPrediction",
    "predict_recovery",
    "bicrps",
]

HIGDON_A = 3.5

_LOG_PI = math.log(math.pi)


# ---------------------------------------------------------------------------
# Kernel algebra
# ---------------------------------------------------------------------------

def higdon_terms(psi_x, psi_y, A: float = HIGDON_A):
    """Eigen-scale and orientation pieces (a2, b2, cos a, sin a) of the kernel.

    Vectorized over psi arrays; at psi = (0,0) the orientation defaults to 0,
    which is immaterial because a2 = b2 there.
    """
    psi_x = np.asarray(psi_x, dtype=float)
    psi_y = np.asarray(psi_y, dtype=float)
    norm2 = psi_x * psi_x + psi_y * psi_y
    root = np.sqrt(4.0 * A * A + norm2 * norm2 * math.pi**2) / (2.0 * math.pi)
    alpha = np.arctan2(psi_y, psi_x)
    return root + norm2 / 2.0, root - norm2 / 2.0, np.cos(alpha), np.sin(alpha)


def sigma_from_psi(psi_x: float, psi_y: float, sigma: float, A: float = HIGDON_A) -> np.ndarray:
    """The 2x2 kernel matrix Sigma = M'M at one location.

    det Sigma = sigma^4 A^2 / pi^2 identically in psi; the principal
    eigenvector sits at angle atan2(psi_y, psi_x).
    """
    if not (np.isfinite(sigma) and sigma > 0):
        raise DataError(f"kernel scale sigma must be positive, got {sigma!r}")
    a2, b2, c, s = higdon_terms(float(psi_x), float(psi_y), A)
    s2 = sigma * sigma
    return np.array(
        [
            [s2 * (a2 * c * c + b2 * s * s), s2 * (a2 - b2) * c * s],
            [s2 * (a2 - b2) * c * s, s2 * (a2 * s * s + b2 * c * c)],
        ]
    )


def higdon_half_matrix(psi_x: float, psi_y: float, sigma: float, A: float = HIGDON_A) -> np.ndarray:
    """The half matrix M with M'M = Sigma; displacement draws are M' eps / sqrt(2)."""
    a2, b2, c, s = higdon_terms(float(psi_x), float(psi_y), A)
    a, b = math.sqrt(a2), math.sqrt(b2)
    return sigma * np.array([[a * c, a * s], [-b * s, b * c]])


def _check_spd(sigma_mat: np.ndarray):
    m = np.asarray(sigma_mat, dtype=float)
    if m.shape != (2, 2):
        raise DimensionError(f"kernel matrix must be 2x2, got {m.shape}")
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if not (np.isfinite(det) and det > 0 and m[0, 0] > 0):
        raise DataError(f"kernel matrix is not positive definite (det {det!r})")
    return m, float(det)


def cond_logdensity(s_r, s_t, sigma_mat) -> float:
    """log f(s_R | s_T) under the pi-normalized Gaussian displacement law."""
    m, det = _check_spd(sigma_mat)
    d = np.asarray(s_r, dtype=float) - np.asarray(s_t, dtype=float)
    quad = (m[1, 1] * d[0] ** 2 - 2.0 * m[0, 1] * d[0] * d[1] + m[0, 0] * d[1] ** 2) / det
    return float(-_LOG_PI - 0.5 * math.log(det) - quad)


@dataclass(frozen=True)
class KernelConstant:
    """One Sigma for every theft location, parameterized (sigma1, sigma2, rho)."""

    sigma1: float
    sigma2: float
    rho: float

    def __post_init__(self):
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise DataError("kernel scales must be positive")
        if not -1.0 < self.rho < 1.0:
            raise DataError(f"rho must lie in (-1, 1), got {self.rho!r}")

    @property
    def matrix(self) -> np.ndarray:
        off = self.rho * self.sigma1 * self.sigma2
        return np.array([[self.sigma1**2, off], [off, self.sigma2**2]])


@dataclass(frozen=True)
class KernelFieldHigdon:
    """Spatially varying kernel: psi fields held at anchor locations.

    A theft location uses the kernel of its nearest anchor (exact when the
    anchors are the theft locations themselves).
    """

    sigma: float
    phi_star: float
    anchors: np.ndarray
    psi_x: np.ndarray
    psi_y: np.ndarray
    A: float = HIGDON_A

    def __post_init__(self):
        anchors = np.asarray(self.anchors, dtype=float)
        psi_x = np.asarray(self.psi_x, dtype=float)
        psi_y = np.asarray(self.psi_y, dtype=float)
        if anchors.ndim != 2 or anchors.shape[1] != 2:
            raise DimensionError("anchors must be an (q, 2) array")
        if psi_x.shape != (len(anchors),) or psi_y.shape != (len(anchors),):
            raise DimensionError("psi fields must have one value per anchor")
        if not (self.sigma > 0 and self.phi_star > 0):
            raise DataError("sigma and phi_star must be positive")
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "psi_x", psi_x)
        object.__setattr__(self, "psi_y", psi_y)

    def anchor_index(self, points) -> np.ndarray:
        _, idx = cKDTree(self.anchors).query(np.asarray(points, dtype=float))
        return np.asarray(idx, dtype=int)

    def matrix_at(self, anchor: int) -> np.ndarray:
        return sigma_from_psi(self.psi_x[anchor], self.psi_y[anchor], self.sigma, self.A)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def _pair_stats(pairs: PairedPattern):
    if pairs.m < 3:
        raise DataError(f"need at least 3 complete pairs, got {pairs.m}")
    thefts, recs = pairs.complete()
    return thefts, recs - thefts


def fit_conditional_constant(
    pairs: PairedPattern, priors=None, mcmc: McmcConfig | None = None
) -> PosteriorChain:
    """Posterior chain over (sigma1, sigma2, rho) for the constant kernel.

    Priors sit on the variances (IG(2, 0.1) each) and on rho (uniform on
    [-1, 1]); the chain itself moves the standard deviations, so each sigma
    target carries the 2*sigma change-of-variable term.
    """
    _, d = _pair_stats(pairs)
    mcmc = mcmc or McmcConfig()
    m = len(d)
    sxx = float(np.sum(d[:, 0] ** 2))
    sxy = float(np.sum(d[:, 0] * d[:, 1]))
    syy = float(np.sum(d[:, 1] ** 2))
    merged = {
        "sigma1_sq": InverseGammaPrior(2.0, 0.1),
        "sigma2_sq": InverseGammaPrior(2.0, 0.1),
        "rho": UniformPrior(-1.0, 1.0),
    }
    if priors:
        merged.update(priors)

    def loglik(state):
        s1, s2, rho = state["sigma1"], state["sigma2"], state["rho"]
        det = (s1 * s2) ** 2 * (1.0 - rho * rho)
        if det <= 0:
            return -np.inf
        quad = (s2 * s2 * sxx - 2.0 * rho * s1 * s2 * sxy + s1 * s1 * syy) / det
        return -m * (_LOG_PI + 0.5 * math.log(det)) - quad

    def sigma_target(which):
        prior = merged[f"{which}_sq"]

        def target(state):
            s = state[which]
            return loglik(state) + prior.logpdf(s * s) + math.log(2.0 * s)

        return target

    def rho_target(state):
        return loglik(state) + merged["rho"].logpdf(state["rho"])

    # moment-based starts: Cov(d) = Sigma/2
    s1_init = math.sqrt(max(2.0 * sxx / m, 1e-6))
    s2_init = math.sqrt(max(2.0 * syy / m, 1e-6))
    rho_init = float(np.clip(2.0 * sxy / m / (s1_init * s2_init), -0.9, 0.9))
    model = ChainModel(
        init={"sigma1": s1_init, "sigma2": s2_init, "rho": rho_init},
        blocks=(
            MetropolisBlock(
                names=("sigma1",), log_target=sigma_target("sigma1"),
                transforms={"sigma1": LogTransform()},
            ),
            MetropolisBlock(
                names=("sigma2",), log_target=sigma_target("sigma2"),
                transforms={"sigma2": LogTransform()},
            ),
            MetropolisBlock(
                names=("rho",), log_target=rho_target,
                transforms={"rho": LogitTransform(-1.0, 1.0)},
            ),
        ),
        derived={"loglik": loglik},
    )
    return run_chain(model, mcmc)


def fit_conditional_spatial(
    pairs: PairedPattern,
    phi_star: float,
    anchors: GridSpec | np.ndarray | None = None,
    priors=None,
    mcmc: McmcConfig | None = None,
    A: float = HIGDON_A,
) -> PosteriorChain:
    """Posterior chain over (sigma, psi_x, psi_y) for the Higdon kernel.

    ``anchors`` may be None (one anchor per complete pair, at the theft
    itself), a GridSpec (each theft mapped to its nearest cell centroid), or
    an explicit (q, 2) array. phi_star stays fixed, so the psi prior factor
    is computed once and shared by both elliptical slice blocks.
    """
    thefts, d = _pair_stats(pairs)
    mcmc = mcmc or McmcConfig()
    if phi_star <= 0:
        raise DataError(f"phi_star must be positive, got {phi_star!r}")
    if anchors is None:
        anchor_pts = thefts
        a_idx = np.arange(len(thefts))
    elif isinstance(anchors, GridSpec):
        anchor_pts = anchors.rep_points
        a_idx = nearest_cells(anchors, thefts)
    else:
        anchor_pts = np.asarray(anchors, dtype=float)
        _, a_idx = cKDTree(anchor_pts).query(thefts)
    q = len(anchor_pts)
    m = len(d)
    sigma_sq_prior = (priors or {}).get("sigma_sq", InverseGammaPrior(2.0, 0.1))
    prior_factor = chol(
        cov_matrix(CovarianceModel("sq_exponential", phi=phi_star), anchor_pts)
    )
    dx, dy = d[:, 0], d[:, 1]
    log_a_over_pi = math.log(A / math.pi)

    def loglik(state):
        a2, b2, c, s = higdon_terms(state["psi_x"][a_idx], state["psi_y"][a_idx], A)
        wx = c * dx + s * dy
        wy = -s * dx + c * dy
        sig = state["sigma"]
        quad = float(np.sum(wx * wx / a2 + wy * wy / b2)) / (sig * sig)
        return -m * (_LOG_PI + log_a_over_pi + 2.0 * math.log(sig)) - quad

    def sigma_target(state):
        sig = state["sigma"]
        return loglik(state) + sigma_sq_prior.logpdf(sig * sig) + math.log(2.0 * sig)

    # moment start: at psi=0, E||d||^2 = sigma^2 A / pi
    sigma_init = math.sqrt(max(float(np.mean(dx * dx + dy * dy)) * math.pi / A, 1e-6))
    model = ChainModel(
        init={"sigma": sigma_init, "psi_x": np.zeros(q), "psi_y": np.zeros(q)},
        blocks=(
            MetropolisBlock(
                names=("sigma",), log_target=sigma_target,
                transforms={"sigma": LogTransform()},
            ),
            EllipticalSliceBlock(
                name="psi_x", prior_factor=lambda s: prior_factor, log_lik=loglik
            ),
            EllipticalSliceBlock(
                name="psi_y", prior_factor=lambda s: prior_factor, log_lik=loglik
            ),
        ),
        derived={"loglik": loglik},
    )
    return run_chain(model, mcmc)


# ---------------------------------------------------------------------------
# Prediction and scoring
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RecoveryPrediction:
    """Per-test-point predictive recovery draws and their density parameters.

    ``samples[h]`` holds L recovery draws for test theft h; ``sigmas[h, l]``
    is the 2x2 kernel matrix behind draw l, so the predictive density at any
    location is the draw-average of pi-normalized Gaussians.
    """

    test_points: np.ndarray
    samples: np.ndarray  # (H, L, 2)
    sigmas: np.ndarray  # (H, L, 2, 2)

    @property
    def n_test(self) -> int:
        return len(self.test_points)

    @property
    def n_draws(self) -> int:
        return self.samples.shape[1]

    def density(self, h: int, points) -> np.ndarray:
        """Predictive density of recovery locations for test point h."""
        pts = np.asarray(points, dtype=float)
        d = pts - self.test_points[h]
        sig = self.sigmas[h]  # (L, 2, 2)
        det = sig[:, 0, 0] * sig[:, 1, 1] - sig[:, 0, 1] ** 2
        quad = (
            np.outer(d[:, 0] ** 2, sig[:, 1, 1])
            - 2.0 * np.outer(d[:, 0] * d[:, 1], sig[:, 0, 1])
            + np.outer(d[:, 1] ** 2, sig[:, 0, 0])
        ) / det
        dens = np.exp(-quad) / (math.pi * np.sqrt(det))
        return dens.mean(axis=1)


def _sample_displacements(sigmas: np.ndarray, rng) -> np.ndarray:
    """One N(0, Sigma/2) draw per leading entry of an (..., 2, 2) stack."""
    lead = sigmas.shape[:-2]
    eps = rng.standard_normal(lead + (2,))
    # lower Cholesky of each Sigma, closed form
    l11 = np.sqrt(sigmas[..., 0, 0])
    l21 = sigmas[..., 1, 0] / l11
    l22 = np.sqrt(np.maximum(sigmas[..., 1, 1] - l21 * l21, 0.0))
    dx = l11 * eps[..., 0]
    dy = l21 * eps[..., 0] + l22 * eps[..., 1]
    return np.stack([dx, dy], axis=-1) / math.sqrt(2.0)


def predict_recovery(
    chain: PosteriorChain,
    test_points,
    rng,
    anchors=None,
    phi_star: float | None = None,
    A: float = HIGDON_A,
) -> RecoveryPrediction:
    """Recovery-location predictive draws at new theft locations.

    Constant-kernel chains need nothing else; spatial chains additionally
    need the training anchors and phi_star so psi can be kriged to the test
    locations (one conditional draw per posterior draw).
    """
    test = np.asarray(test_points, dtype=float)
    if test.ndim != 2 or test.shape[1] != 2:
        raise DimensionError(f"test points must be (H, 2), got {test.shape}")
    h_n = len(test)
    l_n = chain.n_draws
    if l_n == 0:
        raise DataError("cannot predict from an empty chain")

    if "psi_x" in chain.draws:
        if anchors is None or phi_star is None:
            raise DataError("spatial-kernel prediction needs the training anchors and phi_star")
        anchor_pts = anchors.rep_points if isinstance(anchors, GridSpec) else np.asarray(anchors, dtype=float)
        model = CovarianceModel("sq_exponential", phi=phi_star)
        obs_factor = chol(cov_matrix(model, anchor_pts))
        k_no = cross_cov(model, test, anchor_pts)
        weights = obs_factor.solve(k_no.T).T  # (H, q) kriging weights
        cond_cov = cov_matrix(model, test) - k_no @ obs_factor.solve(k_no.T)
        cond_factor = chol((cond_cov + cond_cov.T) / 2.0)
        psi_x_d = chain.get("psi_x")
        psi_y_d = chain.get("psi_y")
        sigma_d = chain.get("sigma")
        sigmas = np.empty((h_n, l_n, 2, 2))
        for l in range(l_n):
            px = weights @ psi_x_d[l] + cond_factor.lower @ rng.standard_normal(h_n)
            py = weights @ psi_y_d[l] + cond_factor.lower @ rng.standard_normal(h_n)
            a2, b2, c, s = higdon_terms(px, py, A)
            s2 = sigma_d[l] ** 2
            sigmas[:, l, 0, 0] = s2 * (a2 * c * c + b2 * s * s)
            sigmas[:, l, 0, 1] = sigmas[:, l, 1, 0] = s2 * (a2 - b2) * c * s
            sigmas[:, l, 1, 1] = s2 * (a2 * s * s + b2 * c * c)
    else:
        s1 = chain.get("sigma1")
        s2_ = chain.get("sigma2")
        rho = chain.get("rho")
        base = np.empty((l_n, 2, 2))
        base[:, 0, 0] = s1 * s1
        base[:, 0, 1] = base[:, 1, 0] = rho * s1 * s2_
        base[:, 1, 1] = s2_ * s2_
        sigmas = np.broadcast_to(base, (h_n, l_n, 2, 2)).copy()

    disp = _sample_displacements(sigmas, rng)
    samples = test[:, None, :] + disp
    return RecoveryPrediction(test_points=test, samples=samples, sigmas=sigmas)


def bicrps(samples, observed) -> float:
    """Bivariate CRPS (energy score) of L location draws against one point.

    mean ||s_l - obs|| - (1/(2 L^2)) sum_{l,l'} ||s_l - s_l'||; smaller is
    better, zero iff all draws sit on the observation.
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim != 2 or s.shape[1] != 2 or len(s) == 0:
        raise DimensionError(f"samples must be a nonempty (L, 2) array, got {s.shape}")
    obs = np.asarray(observed, dtype=float).reshape(2)
    l_n = len(s)
    term1 = float(np.linalg.norm(s - obs, axis=1).mean())
    if l_n == 1:
        return term1
    if l_n <= 4000:
        pair_sum = float(pdist(s).sum())
    else:
        pair_sum = 0.0
        block = 2000
        for i in range(0, l_n, block):
            si = s[i : i + block]
            pair_sum += float(pdist(si).sum())
            for j in range(i + block, l_n, block):
                pair_sum += float(cdist(si, s[j : j + block]).sum())
    return term1 - pair_sum / (l_n * l_n)
