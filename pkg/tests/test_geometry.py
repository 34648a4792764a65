import numpy as np
import pytest

from odcox import (
    CovariateTable,
    DataError,
    DimensionError,
    GeometryError,
    PairedPattern,
    PointPattern,
    assign_cells,
    assign_counts,
    build_regular_grid,
    destandardize_covariates,
    grid_from_membership,
    nearest_cells,
    standardize_covariates,
)


def test_regular_grid_invariants():
    grid = build_regular_grid((0.0, 2.0, -1.0, 1.0), 4, 5)
    assert grid.n_cells == 20
    assert grid.kind == "regular"
    assert grid.std_areas.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(grid.raw_areas > 0)
    # raw areas tile the box
    assert grid.raw_areas.sum() == pytest.approx(4.0)
    # representative points are cell centroids, row-major from the lower left
    assert grid.rep_points[0] == pytest.approx([0.25, -0.8])
    assert grid.rep_points[1] == pytest.approx([0.75, -0.8])
    assert grid.rep_points[4] == pytest.approx([0.25, -0.4])


def test_regular_grid_rejects_bad_shapes():
    with pytest.raises(GeometryError):
        build_regular_grid((0, 0, 0, 1), 2, 2)
    with pytest.raises(GeometryError):
        build_regular_grid((0, 1, 0, 1), 0, 2)


def test_large_grids_build_fine():
    # the dense-likelihood cell cap is enforced at fit time, not here
    assert build_regular_grid((0, 1, 0, 1), 40, 40).n_cells == 1600


def test_assign_cells_edges():
    grid = build_regular_grid((0.0, 1.0, 0.0, 1.0), 2, 2)
    pts = PointPattern(np.array([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0], [0.25, 0.75]]))
    ids = assign_cells(pts, grid)
    # interior edges are half open, the outer boundary is closed
    assert ids.tolist() == [0, 3, 3, 2]


def test_assign_cells_outside_names_point():
    grid = build_regular_grid((0.0, 1.0, 0.0, 1.0), 2, 2)
    pts = PointPattern(np.array([[0.5, 0.5], [1.5, 0.5]]))
    with pytest.raises(GeometryError, match="1"):
        assign_cells(pts, grid)


def test_assign_counts_totals():
    rng = np.random.default_rng(3)
    grid = build_regular_grid((0.0, 1.0, 0.0, 1.0), 3, 3)
    pts = PointPattern(rng.random((40, 2)))
    counts = assign_counts(pts, grid)
    assert counts.sum() == 40
    assert counts.shape == (9,)


def test_membership_grid():
    cell_ids = np.array([0, 0, 1, 1, 2])
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [3.0, 2.0], [5.0, 5.0]])
    grid = grid_from_membership(cell_ids, np.array([2.0, 1.0, 1.0]), points=pts)
    assert grid.kind == "membership"
    assert grid.n_cells == 3
    assert grid.std_areas.sum() == pytest.approx(1.0, abs=1e-12)
    assert grid.rep_points[0] == pytest.approx([0.5, 0.0])
    assert grid.rep_points[1] == pytest.approx([3.0, 1.0])


def test_membership_grid_needs_every_cell():
    with pytest.raises(GeometryError):
        grid_from_membership(np.array([0, 2]), np.array([1.0, 1.0, 1.0]),
                             points=np.array([[0.0, 0.0], [1.0, 1.0]]))


def test_nearest_cells():
    grid = build_regular_grid((0.0, 1.0, 0.0, 1.0), 2, 2)
    idx = nearest_cells(grid, np.array([[0.2, 0.2], [0.9, 0.9]]))
    assert idx.tolist() == [0, 3]


def test_point_pattern_rejects_nan():
    with pytest.raises(DataError):
        PointPattern(np.array([[0.0, np.nan]]))


def test_paired_pattern_missing_marks():
    thefts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    recs = np.array([[0.1, 0.1], [np.nan, np.nan], [2.2, 1.9]])
    pairs = PairedPattern(thefts, recs)
    assert pairs.n == 3
    assert pairs.m == 2
    assert pairs.recovered.tolist() == [True, False, True]
    t, r = pairs.complete()
    assert t.shape == (2, 2)
    d = pairs.displacements()
    assert d == pytest.approx(np.array([[0.1, 0.1], [0.2, -0.1]]))


def test_paired_pattern_half_missing_is_error():
    with pytest.raises(DataError):
        PairedPattern(np.array([[0.0, 0.0]]), np.array([[np.nan, 1.0]]))


def test_standardize_matches_frozen_example():
    table = CovariateTable(names=("a",), values=np.array([[1.0], [2.0], [3.0]]))
    out = standardize_covariates(table)
    expect = np.array([-1.224744871391589, 0.0, 1.224744871391589])
    assert out.column("a") == pytest.approx(expect, abs=1e-12)
    assert out.standardized


def test_standardize_round_trip():
    rng = np.random.default_rng(11)
    table = CovariateTable(names=("a", "b"), values=rng.normal(3.0, 2.0, (30, 2)))
    back = destandardize_covariates(standardize_covariates(table))
    assert back.values == pytest.approx(table.values, abs=1e-12)


def test_standardize_zero_variance_errors():
    # constant but not an intercept column
    table = CovariateTable(names=("flat",), values=np.full((5, 1), 2.0))
    with pytest.raises(DataError):
        standardize_covariates(table)


def test_standardize_leaves_intercept_alone():
    table = CovariateTable(names=("one", "a"), values=np.column_stack(
        [np.ones(4), np.arange(4.0)]))
    out = standardize_covariates(table)
    assert np.all(out.column("one") == 1.0)


def test_design_matrix_prepends_intercept():
    table = CovariateTable(names=("a", "b"), values=np.arange(8.0).reshape(4, 2))
    X = table.design_matrix(("b",))
    assert X.shape == (4, 2)
    assert np.all(X[:, 0] == 1.0)
    assert X[:, 1] == pytest.approx(table.column("b"))


def test_design_matrix_unknown_column():
    table = CovariateTable(names=("a",), values=np.zeros((3, 1)))
    with pytest.raises(DataError):
        table.design_matrix(("missing",))


def test_covariate_table_shape_mismatch():
    with pytest.raises(DimensionError):
        CovariateTable(names=("a", "b"), values=np.zeros((4, 3)))
