"""Estimator-style wrappers around the sampling routines.

These follow the scikit-learn contract: constructor arguments are stored
verbatim, all work happens in ``fit``, fitted state lands in attributes with
a trailing underscore, and ``get_params``/``set_params`` come from
``BaseEstimator``. The functional API underneath (``fit_lgcp`` and friends)
stays the primary interface; these classes exist for pipeline-style code and
for anyone who wants ``get_params`` introspection.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DataError
from .geometry import GridSpec, PairedPattern, PointPattern
from .intensity import fit_lgcp, fit_nhpp, posterior_intensity
from .joint import JointModelSpec, fit_joint, flow_from_chain, quadrant_partition
from .recovery import fit_conditional_constant, fit_conditional_spatial, predict_recovery
from .samplers import McmcConfig


def _as_points(points) -> np.ndarray:
    return check_array(np.asarray(points, dtype=float), ensure_2d=True, ensure_min_features=2)


class _ChainEstimator(BaseEstimator):
    """Shared MCMC plumbing: every estimator here runs one chain in fit."""

    def _mcmc(self) -> McmcConfig:
        return McmcConfig(burn_in=self.burn_in, keep=self.keep, seed=self.seed)

    def summary(self) -> dict:
        check_is_fitted(self, "chain_")
        return self.chain_.summary()


class NhppModel(_ChainEstimator):
    """Gridded Poisson-process intensity with log-linear covariate effects."""

    def __init__(self, burn_in: int = 20_000, keep: int = 20_000, seed: int = 0, priors=None):
        self.burn_in = burn_in
        self.keep = keep
        self.seed = seed
        self.priors = priors

    _fit = staticmethod(fit_nhpp)

    def fit(self, pattern: PointPattern, grid: GridSpec, X=None):
        if X is None:
            X = np.ones((grid.n_cells, 1))
        X = check_array(np.asarray(X, dtype=float))
        self.chain_ = type(self)._fit(pattern, grid, X, priors=self.priors, mcmc=self._mcmc())
        self.grid_ = grid
        self.X_ = X
        return self

    def predict(self, X=None) -> np.ndarray:
        """Posterior mean intensity per cell, on the fitted grid by default."""
        check_is_fitted(self, "chain_")
        return posterior_intensity(self.chain_, self.grid_, self.X_ if X is None else X).mean

    def surface(self):
        check_is_fitted(self, "chain_")
        return posterior_intensity(self.chain_, self.grid_, self.X_)


class LgcpModel(NhppModel):
    """Log-Gaussian Cox process: the Poisson model plus a latent spatial field."""

    _fit = staticmethod(fit_lgcp)


class ConstantRecoveryModel(_ChainEstimator):
    """Recovery-displacement kernel with a single shared covariance."""

    def __init__(self, burn_in: int = 20_000, keep: int = 20_000, seed: int = 0, priors=None):
        self.burn_in = burn_in
        self.keep = keep
        self.seed = seed
        self.priors = priors

    def fit(self, pairs: PairedPattern, y=None):
        self.chain_ = fit_conditional_constant(pairs, priors=self.priors, mcmc=self._mcmc())
        return self

    def predict(self, test_points, seed: int = 0):
        check_is_fitted(self, "chain_")
        rng = np.random.default_rng(seed)
        return predict_recovery(self.chain_, _as_points(test_points), rng)


class SpatialRecoveryModel(_ChainEstimator):
    """Recovery kernel whose shape varies over space through a latent field."""

    def __init__(
        self,
        phi_star: float = 1.0,
        anchors=None,
        burn_in: int = 20_000,
        keep: int = 20_000,
        seed: int = 0,
        priors=None,
    ):
        self.phi_star = phi_star
        self.anchors = anchors
        self.burn_in = burn_in
        self.keep = keep
        self.seed = seed
        self.priors = priors

    def fit(self, pairs: PairedPattern, y=None):
        self.chain_ = fit_conditional_spatial(
            pairs, self.phi_star, anchors=self.anchors, priors=self.priors, mcmc=self._mcmc()
        )
        if self.anchors is None:
            self.anchors_ = pairs.complete()[0]
        elif isinstance(self.anchors, GridSpec):
            self.anchors_ = self.anchors.rep_points
        else:
            self.anchors_ = np.asarray(self.anchors, dtype=float)
        return self

    def predict(self, test_points, seed: int = 0):
        check_is_fitted(self, "chain_")
        rng = np.random.default_rng(seed)
        return predict_recovery(
            self.chain_, _as_points(test_points), rng, anchors=self.anchors_, phi_star=self.phi_star
        )


class JointPairModel(_ChainEstimator):
    """Intensity over origin-destination pairs with optional dependence."""

    def __init__(
        self,
        variant: str = "dep",
        phi_star: float = 1.0,
        burn_in: int = 20_000,
        keep: int = 20_000,
        seed: int = 0,
        priors=None,
    ):
        self.variant = variant
        self.phi_star = phi_star
        self.burn_in = burn_in
        self.keep = keep
        self.seed = seed
        self.priors = priors

    def fit(self, pairs: PairedPattern, grid: GridSpec):
        spec = JointModelSpec(variant=self.variant, phi_star=self.phi_star, priors=self.priors)
        self.chain_ = fit_joint(pairs, grid, spec=spec, mcmc=self._mcmc())
        self.grid_ = grid
        return self

    def flow(self, origin_cells, partition=None, heldout_counts=None):
        """Posterior destination-region proportions for thefts from given cells."""
        check_is_fitted(self, "chain_")
        if partition is None:
            partition = quadrant_partition(self.grid_)
        if not len(origin_cells):
            raise DataError("origin_cells must name at least one cell")
        return flow_from_chain(
            self.chain_, self.grid_, origin_cells, partition, heldout_counts=heldout_counts
        )
