"""Marginal intensity models for a single point pattern on a grid.

The intensity is piecewise constant over grid cells: log lambda(u_k) =
X_k beta + z_k, with z either identically zero (NHPP) or a latent Gaussian
field with exponential covariance (LGCP). The gridded log likelihood is

    l = -sum_k lambda(u_k) dk + sum_k n_k log lambda(u_k)

with standardized cell areas dk summing to one.

Posterior sampling is blockwise: adaptive random-walk MH for beta and (on
transformed scales) for sigma2 and phi, elliptical slice sampling for the
Gaussian components, with beta and z sharing one ellipse in the LGCP. The
reported "loglik" trace is the data term above only; the GP prior density is
part of the target but never folded into that trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DataError, DimensionError
from .geometry import GridSpec, PointPattern, assign_counts
from .gp import CholFactor, ExpCorrelationCache
from .samplers import (
    AdaptiveRWState,
    ChainModel,
    InverseGammaPrior,
    JointEllipticalSliceBlock,
    LogitTransform,
    LogTransform,
    McmcConfig,
    MetropolisBlock,
    NormalPrior,
    PosteriorChain,
    UniformPrior,
    arwmh_step,
    run_chain,
)

__all__ = [
    "IntensityModelSpec",
    "IntensitySurface",
    "default_intensity_priors",
    "loglik_gridded",
    "loglik_gradient",
    "fit_nhpp",
    "fit_lgcp",
    "lambda_draws",
    "posterior_intensity",
    "sample_predictive_counts",
]

MAX_CELLS = 1024


def default_intensity_priors() -> dict:
    """Default priors: beta ~ N(0,100I), sigma2 ~ IG(2,0.1), phi ~ U[0,10]."""
    return {
        "beta": NormalPrior(0.0, 100.0),
        "sigma2": InverseGammaPrior(2.0, 0.1),
        "phi": UniformPrior(0.0, 10.0),
    }


@dataclass(frozen=True)
class IntensityModelSpec:
    """What to fit: NHPP or LGCP, on which covariate columns."""

    kind: str
    covariates: tuple[str, ...] | None = None
    gp: str = "exponential"

    def __post_init__(self):
        if self.kind not in ("nhpp", "lgcp"):
            raise DataError(f"model kind must be 'nhpp' or 'lgcp', got {self.kind!r}")
        if self.kind == "lgcp" and self.gp != "exponential":
            raise DataError("the latent field of an LGCP uses the exponential covariance")
        if self.covariates is not None:
            object.__setattr__(self, "covariates", tuple(self.covariates))


def _check_shapes(beta, z, counts, grid, X):
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    counts = np.asarray(counts)
    X = np.asarray(X, dtype=float)
    k = grid.n_cells
    if k > MAX_CELLS:
        raise DimensionError(f"grid has {k} cells; the gridded likelihood caps at {MAX_CELLS}")
    if X.shape != (k, beta.size):
        raise DimensionError(f"design matrix {X.shape} does not match K={k}, p={beta.size}")
    if counts.shape != (k,):
        raise DimensionError(f"counts have shape {counts.shape}, expected ({k},)")
    if z is None:
        z = np.zeros(k)
    else:
        z = np.asarray(z, dtype=float)
        if z.shape != (k,):
            raise DimensionError(f"latent field has shape {z.shape}, expected ({k},)")
    return beta, z, counts, X


def loglik_gridded(beta, z, counts, grid: GridSpec, X) -> float:
    """Gridded Poisson-process log likelihood; raises on exp overflow."""
    beta, z, counts, X = _check_shapes(beta, z, counts, grid, X)
    eta = X @ beta + z
    with np.errstate(over="ignore"):
        lam = np.exp(eta)
    if np.any(np.isinf(lam)):
        bad = int(np.flatnonzero(np.isinf(lam))[0])
        raise DataError(f"intensity overflow at cell {bad} (log lambda = {eta[bad]:.1f})")
    return float(-(lam * grid.std_areas).sum() + (counts * eta).sum())


def _loglik_guarded(eta, counts, std_areas) -> float:
    """Same data term, returning -inf instead of raising on overflow."""
    with np.errstate(over="ignore"):
        lam = np.exp(eta)
    if np.any(np.isinf(lam)):
        return -np.inf
    return float(-(lam * std_areas).sum() + (counts * eta).sum())


def loglik_gradient(beta, z, counts, grid: GridSpec, X):
    """Analytic gradient of :func:`loglik_gridded` w.r.t. (beta, z).

    Returns (d_beta, d_z); kept for verification since the samplers are
    derivative-free.
    """
    beta, z, counts, X = _check_shapes(beta, z, counts, grid, X)
    lam = np.exp(X @ beta + z)
    resid = counts - lam * grid.std_areas
    return X.T @ resid, resid


def _prepare(pattern, grid, X, priors):
    counts = assign_counts(pattern, grid)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != grid.n_cells:
        raise DimensionError(f"design matrix {X.shape} does not match K={grid.n_cells}")
    if grid.n_cells > MAX_CELLS:
        raise DimensionError(f"grid has {grid.n_cells} cells; cap is {MAX_CELLS}")
    merged = default_intensity_priors()
    if priors:
        merged.update(priors)
    return counts, X, merged


def fit_nhpp(
    pattern: PointPattern, grid: GridSpec, X, priors=None, mcmc: McmcConfig | None = None
) -> PosteriorChain:
    """Posterior chain over beta for the no-latent-field model."""
    counts, X, priors = _prepare(pattern, grid, X, priors)
    mcmc = mcmc or McmcConfig()
    areas = grid.std_areas
    beta_prior = priors["beta"]

    def beta_target(state):
        eta = X @ state["beta"]
        return _loglik_guarded(eta, counts, areas) + beta_prior.logpdf(state["beta"])

    model = ChainModel(
        init={"beta": np.zeros(X.shape[1])},
        blocks=(MetropolisBlock(names=("beta",), log_target=beta_target),),
        derived={"loglik": lambda s: _loglik_guarded(X @ s["beta"], counts, areas)},
    )
    return run_chain(model, mcmc)


@dataclass
class _CenteredHyperBlock:
    """Interweaved (sigma2, phi) move holding the realized field fixed.

    The non-centered hyper update has to drag z = sigma L(phi) w through the
    data term, so once the field has found structure it can barely move. This
    companion move reshapes the hyperparameters against the field prior of
    the realized z and rewhitens w afterward, leaving the likelihood exactly
    unchanged; scanning both parameterizations mixes the hierarchy from
    either end.
    """

    factors: ExpCorrelationCache
    s2_prior: object
    phi_prior: object
    phi_lo: float
    phi_hi: float

    label = "sigma2+phi centered"

    def __post_init__(self):
        self._s2_t = LogTransform()
        self._phi_t = LogitTransform(self.phi_lo, self.phi_hi)
        self._rw = AdaptiveRWState()

    def update(self, state: dict, rng) -> None:
        z = self.factors.field_factor(state["sigma2"], state["phi"]).lower @ state["w"]

        def log_target(y):
            s2 = float(self._s2_t.inverse(y[:1])[0])
            phi = float(self._phi_t.inverse(y[1:])[0])
            lp = self.s2_prior.logpdf(s2) + self.phi_prior.logpdf(phi)
            if lp == -math.inf:
                return lp
            lp += self._s2_t.log_jacobian(y[:1]) + self._phi_t.log_jacobian(y[1:])
            return lp + self.factors.field_logpdf(z, s2, phi)

        y0 = np.concatenate(
            [self._s2_t.forward(state["sigma2"]), self._phi_t.forward(state["phi"])]
        )
        y1, self._rw, accepted = arwmh_step(y0, log_target, self._rw, rng)
        if accepted:
            s2 = float(self._s2_t.inverse(y1[:1])[0])
            phi = float(self._phi_t.inverse(y1[1:])[0])
            state["sigma2"], state["phi"] = s2, phi
            lower = self.factors.field_factor(s2, phi).lower
            state["w"] = solve_triangular(lower, z, lower=True)


@dataclass(frozen=True)
class _SlideBlock:
    """Exact Gibbs translations along the likelihood's flat directions.

    Replacing (beta_j, z) by (beta_j + delta, z - delta X_j) leaves X beta + z
    and hence the data term unchanged, so delta's full conditional under the
    two Gaussian priors is itself Gaussian and can be drawn directly. Without
    these slides the confounded directions (intercept vs field mean, any
    covariate vs the field's projection on it) mix at random-walk speed.
    """

    X: np.ndarray
    factors: "ExpCorrelationCache"
    beta_mean: float
    beta_var: float

    label = "beta|w slide"

    def update(self, state: dict, rng) -> None:
        lower = self.factors.field_factor(state["sigma2"], state["phi"]).lower
        u_cols = solve_triangular(lower, self.X, lower=True)
        beta, w = state["beta"], state["w"]
        for j in range(self.X.shape[1]):
            u = u_cols[:, j]
            var = 1.0 / (1.0 / self.beta_var + u @ u)
            mean = var * (u @ w - (beta[j] - self.beta_mean) / self.beta_var)
            delta = mean + math.sqrt(var) * rng.standard_normal()
            beta[j] += delta
            w -= delta * u


def fit_lgcp(
    pattern: PointPattern, grid: GridSpec, X, priors=None, mcmc: McmcConfig | None = None
) -> PosteriorChain:
    """Posterior chain over (beta, sigma2, phi, z) for the latent-field model.

    Blocks per sweep: random-walk MH on beta; joint MH on (log sigma2,
    logit phi) against the data; a second hyper move against the realized
    field with the whitened coordinates refreshed afterward; one elliptical
    slice update of (beta, w) together; exact Gibbs slides along the
    beta-field directions the likelihood cannot see.
    """
    counts, X, priors = _prepare(pattern, grid, X, priors)
    mcmc = mcmc or McmcConfig()
    areas = grid.std_areas
    k, p = X.shape[0], X.shape[1]
    factors = ExpCorrelationCache(grid.rep_points)
    beta_prior, s2_prior, phi_prior = priors["beta"], priors["sigma2"], priors["phi"]
    phi_lo, phi_hi = getattr(phi_prior, "lo", 0.0), getattr(phi_prior, "hi", 10.0)
    beta_sd = math.sqrt(beta_prior.var)

    # non-centered field: w is white noise a priori and z = sigma L(phi) w,
    # so (sigma2, phi) face the data directly instead of only the field
    # prior; the centered pairing deadlocks with z and sigma2 holding each
    # other near zero when the chain starts from an empty field
    def field(state):
        return factors.field_factor(state["sigma2"], state["phi"]).lower @ state["w"]

    def data_loglik(state):
        return _loglik_guarded(X @ state["beta"] + field(state), counts, areas)

    def beta_target(state):
        return data_loglik(state) + beta_prior.logpdf(state["beta"])

    def hyper_target(state):
        lp = s2_prior.logpdf(state["sigma2"]) + phi_prior.logpdf(state["phi"])
        if lp == -np.inf:
            return lp
        return lp + data_loglik(state)

    def joint_factor(state):
        lower = np.eye(p + k)
        lower[:p, :p] *= beta_sd
        return CholFactor(lower=lower, jitter=0.0)

    # Data-scaled start. From a flat field the centered hyper conditional
    # sees z ~ 0 and diverges toward sigma2 -> 0, phi -> 0, where prior
    # draws are near-constant fields and structure can never grow back.
    rates = np.log((counts + 0.5) / areas)
    beta0 = np.linalg.lstsq(X, rates, rcond=None)[0]
    resid = rates - X @ beta0
    s2_0 = float(np.clip(np.var(resid), 0.05, 5.0))
    phi_0 = 1.0 if phi_lo < 1.0 < phi_hi else 0.5 * (phi_lo + phi_hi)
    w0 = solve_triangular(factors.field_factor(s2_0, phi_0).lower, resid, lower=True)

    model = ChainModel(
        init={
            "beta": beta0,
            "sigma2": s2_0,
            "phi": phi_0,
            "w": w0,
        },
        blocks=(
            MetropolisBlock(names=("beta",), log_target=beta_target),
            MetropolisBlock(
                names=("sigma2", "phi"),
                log_target=hyper_target,
                transforms={
                    "sigma2": LogTransform(),
                    "phi": LogitTransform(phi_lo, phi_hi),
                },
            ),
            _CenteredHyperBlock(
                factors=factors,
                s2_prior=s2_prior,
                phi_prior=phi_prior,
                phi_lo=phi_lo,
                phi_hi=phi_hi,
            ),
            # beta and w share a posterior ridge (the likelihood only sees
            # X beta + z), so they ride one ellipse instead of being scanned
            JointEllipticalSliceBlock(
                names=("beta", "w"),
                prior_factor=joint_factor,
                log_lik=data_loglik,
                shift={"beta": beta_prior.mean},
            ),
            _SlideBlock(X=X, factors=factors, beta_mean=beta_prior.mean, beta_var=beta_prior.var),
        ),
        track=("beta", "sigma2", "phi"),
        derived={"z": field, "loglik": data_loglik},
    )
    return run_chain(model, mcmc)


def lambda_draws(chain: PosteriorChain, X) -> np.ndarray:
    """Per-draw intensity surfaces exp(X beta + z), shape (n_draws, K)."""
    X = np.asarray(X, dtype=float)
    beta = np.atleast_2d(chain.get("beta"))
    if beta.shape[0] != chain.n_draws:
        beta = beta.T
    eta = beta @ X.T
    if "z" in chain.draws:
        eta = eta + chain.get("z")
    return np.exp(eta)


@dataclass(frozen=True)
class IntensitySurface:
    """Per-cell posterior summaries of the intensity lambda(u_k)."""

    mean: np.ndarray
    sd: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray

    def __post_init__(self):
        arrays = {k: np.asarray(getattr(self, k), dtype=float) for k in ("mean", "sd", "lo95", "hi95")}
        k = arrays["mean"].shape
        for name, arr in arrays.items():
            if arr.shape != k:
                raise DimensionError("surface summary arrays must share one length")
            object.__setattr__(self, name, arr)
        if np.any(arrays["mean"] <= 0) or np.any(arrays["lo95"] <= 0):
            raise DataError("intensity summaries must be positive")
        if np.any(arrays["hi95"] < arrays["lo95"]):
            raise DataError("upper credible bound fell below the lower bound")

    @property
    def n_cells(self) -> int:
        return len(self.mean)


def posterior_intensity(chain: PosteriorChain, grid: GridSpec, X) -> IntensitySurface:
    """Summarize lambda(u_k) across draws: mean, sd, central 95% bounds."""
    lam = lambda_draws(chain, X)
    if lam.shape[1] != grid.n_cells:
        raise DimensionError("chain and grid disagree on the number of cells")
    lo, hi = np.quantile(lam, [0.025, 0.975], axis=0)
    sd = lam.std(axis=0, ddof=1) if lam.shape[0] > 1 else np.zeros(grid.n_cells)
    return IntensitySurface(mean=lam.mean(axis=0), sd=sd, lo95=lo, hi95=hi)


def sample_predictive_counts(draw: dict, grid: GridSpec, X, scale: float, rng) -> np.ndarray:
    """Posterior-predictive cell counts: Poisson(scale * lambda_k * dk).

    ``draw`` is one chain record ({"beta": ..., "z": ...} with z optional);
    ``scale`` carries the (1-p)/p train-to-test intensity conversion.
    """
    if scale <= 0:
        raise DataError(f"scale must be positive, got {scale!r}")
    X = np.asarray(X, dtype=float)
    eta = X @ np.atleast_1d(np.asarray(draw["beta"], dtype=float))
    if "z" in draw and draw["z"] is not None:
        eta = eta + np.asarray(draw["z"], dtype=float)
    mu = scale * np.exp(eta) * grid.std_areas
    return rng.poisson(mu)
