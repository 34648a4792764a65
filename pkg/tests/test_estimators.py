import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from odcox import (
    ConstantRecoveryModel,
    JointPairModel,
    JointTruth,
    KernelConstant,
    LgcpModel,
    NhppModel,
    SpatialRecoveryModel,
    build_regular_grid,
    simulate_joint,
    simulate_lgcp,
    simulate_recoveries,
)


def _theft_data(seed=0):
    rng = np.random.default_rng(seed)
    grid = build_regular_grid((0, 2, 0, 2), 4, 4)
    X = np.ones((grid.n_cells, 1))
    pattern = simulate_lgcp(grid, X, [math.log(300)], rng)
    return pattern, grid, X


def test_get_params_and_clone():
    model = LgcpModel(burn_in=100, keep=50, seed=7)
    params = model.get_params()
    assert params["burn_in"] == 100
    twin = clone(model)
    assert twin.get_params() == params


def test_unfitted_predict_raises():
    with pytest.raises(NotFittedError):
        NhppModel().predict()
    with pytest.raises(NotFittedError):
        ConstantRecoveryModel().summary()


def test_nhpp_fit_predict():
    pattern, grid, X = _theft_data()
    model = NhppModel(burn_in=80, keep=80, seed=0).fit(pattern, grid, X)
    lam = model.predict()
    assert lam.shape == (grid.n_cells,)
    assert np.all(lam > 0)
    assert model.summary()["n_draws"] == 80
    surf = model.surface()
    assert np.all(surf.lo95 <= surf.hi95)


def test_lgcp_fit_has_field():
    pattern, grid, X = _theft_data(seed=1)
    model = LgcpModel(burn_in=60, keep=60, seed=1).fit(pattern, grid, X)
    assert "z" in model.chain_.names
    assert model.predict().shape == (grid.n_cells,)


def _pairs(seed=2):
    rng = np.random.default_rng(seed)
    grid = build_regular_grid((0, 2, 0, 2), 4, 4)
    thefts = simulate_lgcp(grid, np.ones((grid.n_cells, 1)), [math.log(250)], rng)
    return simulate_recoveries(thefts, KernelConstant(0.5, 0.7, 0.2), 1.0, rng), grid


def test_constant_recovery_estimator():
    pairs, _ = _pairs()
    model = ConstantRecoveryModel(burn_in=100, keep=100, seed=0).fit(pairs)
    pred = model.predict([[1.0, 1.0]], seed=1)
    assert pred.samples.shape == (1, 100, 2)


def test_spatial_recovery_estimator_with_grid_anchors():
    pairs, grid = _pairs(seed=3)
    model = SpatialRecoveryModel(phi_star=1.0, anchors=grid, burn_in=60, keep=60, seed=0)
    model.fit(pairs)
    assert model.anchors_.shape == (grid.n_cells, 2)
    pred = model.predict([[0.5, 0.5], [1.5, 1.5]], seed=2)
    assert pred.samples.shape == (2, 60, 2)


def test_joint_pair_estimator_and_flow():
    grid = build_regular_grid((0, 2, 0, 2), 4, 4)
    truth = JointTruth(eta=-0.05, sigma2_R=0.3, sigma2_T=0.3)
    pairs, _ = simulate_joint(grid, truth, np.random.default_rng(4), target_m=600)
    model = JointPairModel(variant="dep", burn_in=40, keep=40, seed=0).fit(pairs, grid)
    flow = model.flow([0, 1])
    assert flow.post_mean.shape == (4,)
    assert math.fsum(flow.post_mean) == pytest.approx(1.0, abs=1e-12)
