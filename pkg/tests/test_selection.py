import math

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import gammaln

from odcox import CovariateTable, DataError, build_regular_grid, poisson_glm, stepwise_bic
from odcox import simulate_lgcp


def _poisson_deviance_loglik(beta, counts, X, offset):
    eta = X @ beta + offset
    return float(np.sum(counts * eta - np.exp(eta) - gammaln(counts + 1)))


def test_intercept_only_closed_form():
    counts = np.array([3.0, 1.0, 0.0, 5.0])
    X = np.ones((4, 1))
    offset = np.log(np.array([0.2, 0.3, 0.1, 0.4]))
    fit = poisson_glm(counts, X, offset)
    expect = math.log(counts.sum() / np.exp(offset).sum())
    assert fit.coefficients[0] == pytest.approx(expect, abs=1e-10)
    assert fit.converged


def test_glm_matches_direct_optimizer():
    rng = np.random.default_rng(0)
    K = 50
    X = np.column_stack([np.ones(K), rng.standard_normal(K), rng.standard_normal(K)])
    offset = np.log(np.full(K, 1.0 / K))
    truth = np.array([4.0, 0.7, -0.3])
    counts = rng.poisson(np.exp(X @ truth + offset)).astype(float)
    fit = poisson_glm(counts, X, offset)
    ref = minimize(
        lambda b: -_poisson_deviance_loglik(b, counts, X, offset),
        np.zeros(3),
        method="BFGS",
        options={"gtol": 1e-10},
    )
    assert fit.coefficients == pytest.approx(ref.x, abs=1e-6)
    assert fit.loglik == pytest.approx(-ref.fun, abs=1e-8)


def test_converged_means_small_score():
    rng = np.random.default_rng(1)
    K = 40
    X = np.column_stack([np.ones(K), rng.standard_normal(K)])
    offset = np.full(K, -math.log(K))
    counts = rng.poisson(5.0, K).astype(float)
    fit = poisson_glm(counts, X, offset)
    assert fit.converged
    mu = np.exp(X @ fit.coefficients + offset)
    assert np.max(np.abs(X.T @ (counts - mu))) <= 1e-8


def test_all_zero_counts_flagged():
    K = 10
    X = np.ones((K, 1))
    fit = poisson_glm(np.zeros(K), X, np.full(K, -math.log(K)))
    assert not fit.converged


def test_glm_rejects_rank_deficiency():
    K = 10
    X = np.column_stack([np.ones(K), np.ones(K)])
    with pytest.raises(DataError):
        poisson_glm(np.ones(K), X, np.zeros(K))


def _selection_setup(beta_active, seed):
    rng = np.random.default_rng(seed)
    grid = build_regular_grid((0.0, 1.0, 0.0, 1.0), 8, 8)
    values = rng.standard_normal((grid.n_cells, 3))
    table = CovariateTable(names=("a", "b", "c"), values=values)
    X = np.column_stack([np.ones(grid.n_cells), values[:, 0]])
    pattern = simulate_lgcp(grid, X, np.array([math.log(1500), beta_active]), rng)
    from odcox import assign_counts

    counts = assign_counts(pattern, grid)
    return counts, table, np.log(grid.std_areas)


def test_stepwise_keeps_active_covariate():
    counts, table, offset = _selection_setup(1.0, seed=2)
    result = stepwise_bic(counts, table, offset)
    assert "a" in result.selected
    assert result.trace[0][0] == "start"
    # accepted BIC values strictly decrease along the trace
    bics = [entry[2] for entry in result.trace]
    assert all(b2 < b1 for b1, b2 in zip(bics, bics[1:]))


def test_stepwise_null_design_prefers_intercept():
    counts, table, offset = _selection_setup(0.0, seed=3)
    result = stepwise_bic(counts, table, offset)
    assert result.selected == ()
    assert len(result.trace) == 1


def test_stepwise_bic_matches_definition():
    counts, table, offset = _selection_setup(1.0, seed=4)
    result = stepwise_bic(counts, table, offset)
    X = table.design_matrix(result.selected)
    fit = poisson_glm(counts.astype(float), X, offset)
    expect = -2.0 * fit.loglik + X.shape[1] * math.log(counts.sum())
    assert result.bic == pytest.approx(expect, abs=1e-8)
