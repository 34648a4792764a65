import math

import numpy as np
import pytest

from odcox import (
    DataError,
    EvalRegions,
    McmcConfig,
    PointPattern,
    build_regular_grid,
    p_thin,
    pic,
    random_blocks,
    region_counts,
    rps,
    run_validation,
    simulate_lgcp,
)


def _pattern(n=500, seed=0):
    rng = np.random.default_rng(seed)
    return PointPattern(rng.random((n, 2)))


def test_p_thin_partitions_points():
    pattern = _pattern()
    split = p_thin(pattern, 0.6, np.random.default_rng(1))
    assert len(split.train) + len(split.test) == len(pattern)
    assert split.p == 0.6
    combined = np.vstack([split.train.points, split.test.points])
    assert sorted(map(tuple, combined)) == sorted(map(tuple, pattern.points))


def test_p_thin_seed_reproducible():
    pattern = _pattern()
    a = p_thin(pattern, 0.5, 7)
    b = p_thin(pattern, 0.5, 7)
    assert np.array_equal(a.train.points, b.train.points)
    assert a.seed == 7


def test_p_thin_keep_fraction():
    pattern = _pattern(n=20000, seed=2)
    split = p_thin(pattern, 0.25, np.random.default_rng(3))
    assert len(split.train) / len(pattern) == pytest.approx(0.25, abs=0.02)


def test_p_thin_rejects_bad_p():
    with pytest.raises(DataError):
        p_thin(_pattern(), 0.0, 1)
    with pytest.raises(DataError):
        p_thin(_pattern(), 1.0, 1)


def test_random_blocks_shapes():
    grid = build_regular_grid((0, 1, 0, 1), 5, 5)
    rng = np.random.default_rng(4)
    regions = random_blocks(grid, 30, rng, w=3)
    assert len(regions.sets) == 30
    for s in regions.sets:
        assert len(s) == 3
        assert len(np.unique(s)) == 3
        assert np.all((s >= 0) & (s < 25))
    # q mode takes a fraction of cells
    regions_q = random_blocks(grid, 5, rng, q=0.2)
    assert all(len(s) == 5 for s in regions_q.sets)
    with pytest.raises(DataError):
        random_blocks(grid, 5, rng, w=2, q=0.1)
    with pytest.raises(DataError):
        random_blocks(grid, 5, rng)


def test_region_counts_both_shapes():
    regions = EvalRegions(sets=(np.array([0, 2]), np.array([1])), descriptor="w=?")
    cells = np.array([5.0, 7.0, 1.0])
    assert region_counts(cells, regions).tolist() == [6.0, 7.0]
    stacked = np.array([[5.0, 7.0, 1.0], [1.0, 1.0, 1.0]])
    out = region_counts(stacked, regions)
    assert out.tolist() == [[6.0, 7.0], [2.0, 1.0]]


def test_pic_hand_case():
    # predictive residuals centered on zero cover; shifted ones do not
    L = 500
    rng = np.random.default_rng(5)
    pred = rng.poisson(10.0, (L, 4)).astype(float)
    test = np.array([10.0, 10.0, 200.0, 10.0])
    cover = pic(pred, test, nominal=0.90)
    assert cover == pytest.approx(3 / 4)


def test_pic_requires_enough_draws():
    with pytest.raises(DataError):
        pic(np.zeros((50, 3)), np.zeros(3))


def test_rps_matches_brute_force():
    rng = np.random.default_rng(6)
    samples = rng.poisson(7.0, 400).astype(float)
    obs = 9.0
    term1 = np.mean(np.abs(samples - obs))
    acc = 0.0
    for i in range(400):
        acc += np.abs(samples[i] - samples).sum()
    expect = term1 - acc / (2 * 400**2)
    assert rps(samples, obs) == pytest.approx(expect, abs=1e-10)


def test_rps_rewards_concentration():
    rng = np.random.default_rng(7)
    sharp = rng.poisson(10.0, 600).astype(float)
    shifted = sharp + 6.0
    assert rps(sharp, 10.0) < rps(shifted, 10.0)


def test_run_validation_report_fields():
    rng = np.random.default_rng(8)
    grid = build_regular_grid((0, 1, 0, 1), 5, 5)
    X = np.ones((grid.n_cells, 1))
    pattern = simulate_lgcp(grid, X, [math.log(600)], rng)
    report, chain = run_validation(
        pattern, grid, X, kind="nhpp", p=0.5,
        mcmc=McmcConfig(burn_in=150, keep=150, seed=0),
        w_list=(1, 3), regions_per_w=25, seed=1,
    )
    d = report.as_dict()
    assert d["p"] == 0.5
    assert d["nominal"] == 0.90
    assert d["n_train"] + d["n_test"] == len(pattern)
    assert [row["w"] for row in d["scores"]] == [1, 3]
    for row in d["scores"]:
        assert 0.0 <= row["pic"] <= 1.0
        assert row["mean_rps"] >= 0.0
        assert row["regions"] == 25
    assert chain.n_draws == 150
