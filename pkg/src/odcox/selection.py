"""Covariate selection for the grid-count Poisson regression.

On a grid the NHPP likelihood is exactly a log-linear Poisson regression of
cell counts on cell covariates with offset log(cell area), so maximum
likelihood goes through IRLS and model search is classic forward-backward
stepwise under BIC. The BIC sample size is the total point count, not the
number of cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DataError, DimensionError
from .geometry import CovariateTable

__all__ = ["GlmFit", "poisson_glm", "StepwiseResult", "stepwise_bic"]

IRLS_MAX_ITER = 100
IRLS_DEV_TOL = 1e-10
SCORE_TOL = 1e-8


@dataclass(frozen=True)
class GlmFit:
    """IRLS solution of a Poisson log-linear model with offset."""

    coefficients: np.ndarray
    loglik: float
    converged: bool
    iterations: int


def _poisson_loglik(counts, mu) -> float:
    # full log pmf including the log n! constant, so fits are comparable
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(counts > 0, counts * np.log(mu), 0.0)
    return float((term - mu - gammaln(counts + 1.0)).sum())


def poisson_glm(counts, X, offset) -> GlmFit:
    """Fit counts ~ Poisson(exp(X beta + offset)) by IRLS.

    Deterministic; flags boundary fits (e.g. all-zero counts driving an
    intercept to -inf) as non-converged instead of raising.
    """
    counts = np.asarray(counts, dtype=float)
    X = np.asarray(X, dtype=float)
    offset = np.asarray(offset, dtype=float)
    k = len(counts)
    if X.ndim != 2 or X.shape[0] != k or offset.shape != (k,):
        raise DimensionError(
            f"shapes disagree: counts {counts.shape}, X {X.shape}, offset {offset.shape}"
        )
    p = X.shape[1]
    if p >= k:
        raise DataError(f"need more cells than coefficients (p={p}, K={k})")
    if np.linalg.matrix_rank(X) < p:
        raise DataError("design matrix is rank deficient")

    beta = np.zeros(p)
    # warm start for the intercept scale: match the total count
    mean_rate = counts.sum() / np.exp(offset).sum()
    if mean_rate > 0 and np.all(X[:, 0] == 1.0):
        beta[0] = np.log(mean_rate)
    eta = np.clip(X @ beta + offset, -500.0, 500.0)
    mu = np.maximum(np.exp(eta), 1e-300)
    dev_old = np.inf
    converged = False
    iterations = 0
    for iterations in range(1, IRLS_MAX_ITER + 1):
        z = eta - offset + (counts - mu) / mu
        wx = X * mu[:, None]
        new_beta, *_ = np.linalg.lstsq(wx.T @ X, wx.T @ z, rcond=None)
        step = float(np.max(np.abs(new_beta - beta)))
        beta = new_beta
        eta = np.clip(X @ beta + offset, -500.0, 500.0)
        mu = np.maximum(np.exp(eta), 1e-300)
        # a boundary MLE (rate -> 0) also drives the score to zero, so an
        # interior optimum additionally needs the iterates to have stopped
        if np.max(np.abs(X.T @ (counts - mu))) <= SCORE_TOL and step <= 1e-6 * (
            1.0 + float(np.max(np.abs(beta)))
        ):
            converged = True
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            dev_terms = np.where(counts > 0, counts * np.log(counts / mu), 0.0)
        dev = 2.0 * float((dev_terms - (counts - mu)).sum())
        if abs(dev_old - dev) < IRLS_DEV_TOL * (abs(dev) + 0.1):
            break  # stalled short of the score tolerance: boundary or ill-conditioned
        dev_old = dev
    if np.max(np.abs(beta)) > 30.0:
        converged = False  # rate drifting to 0 or inf, an MLE on the boundary
    return GlmFit(
        coefficients=np.asarray(beta), loglik=_poisson_loglik(counts, mu), converged=converged,
        iterations=iterations,
    )


@dataclass(frozen=True)
class StepwiseResult:
    """Outcome of the forward-backward search."""

    selected: tuple[str, ...]
    fit: GlmFit
    bic: float
    trace: tuple  # (move, column, bic) triples, starting with ("start", None, bic0)


def _bic(fit: GlmFit, p: int, n: float) -> float:
    return -2.0 * fit.loglik + p * np.log(max(n, 1.0))


def stepwise_bic(counts, table: CovariateTable, offset) -> StepwiseResult:
    """Greedy forward-backward covariate search minimizing BIC.

    The intercept is always included and never a candidate move. Each
    accepted move strictly decreases BIC; ties break by column order; the
    search is deterministic.
    """
    counts = np.asarray(counts, dtype=float)
    n = float(counts.sum())
    candidates = [name for name in table.names if not np.all(table.column(name) == 1.0)]

    def fit_subset(cols):
        X = table.design_matrix(cols, intercept=True)
        fit = poisson_glm(counts, X, offset)
        return fit, _bic(fit, X.shape[1], n)

    current: list[str] = []
    fit, bic = fit_subset(current)
    trace = [("start", None, bic)]
    while True:
        best = None  # (bic, move, column, fit)
        for name in candidates:
            if name in current:
                continue
            trial_fit, trial_bic = fit_subset(current + [name])
            if trial_bic < bic - 1e-10 and (best is None or trial_bic < best[0]):
                best = (trial_bic, "add", name, trial_fit)
        for name in current:
            kept = [c for c in current if c != name]
            trial_fit, trial_bic = fit_subset(kept)
            if trial_bic < bic - 1e-10 and (best is None or trial_bic < best[0]):
                best = (trial_bic, "drop", name, trial_fit)
        if best is None:
            break
        bic, move, name, fit = best
        if move == "add":
            current.append(name)
        else:
            current.remove(name)
        trace.append((move, name, bic))
    return StepwiseResult(selected=tuple(current), fit=fit, bic=bic, trace=tuple(trace))
