"""Study-region geometry: point patterns, grids, and covariate preprocessing.

Every likelihood in the package is evaluated on a discretization of the study
region into K cells, each with a representative point and a standardized area
(areas are rescaled so they sum to one, i.e. the region has unit measure).
Two grid kinds are supported: regular nx-by-ny rectangles over a bounding box,
and "membership" grids where an external table assigns each point to one of K
irregular cells (administrative blocks) with known raw areas.

Coordinates are kilometers throughout; ingestion converts meters on the way in.
All containers here are immutable after construction and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError, DimensionError, GeometryError

__all__ = [
    "PointPattern",
    "PairedPattern",
    "GridSpec",
    "CovariateTable",
    "build_regular_grid",
    "grid_from_membership",
    "assign_counts",
    "assign_cells",
    "nearest_cells",
    "standardize_covariates",
    "destandardize_covariates",
]

AREA_TOL = 1e-12


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return pts.reshape(0, 2)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DimensionError(f"expected an (n, 2) array of locations, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
        raise DataError(f"non-finite coordinates at point index {bad}")
    return pts


@dataclass(frozen=True)
class PointPattern:
    """An ordered set of 2-D locations (km) inside a study region.

    ``cell_ids`` is only present for patterns tied to a membership grid; it
    gives the cell index of each point.
    """

    points: np.ndarray
    region_id: str = "region"
    cell_ids: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points))
        if self.cell_ids is not None:
            ids = np.asarray(self.cell_ids, dtype=int)
            if ids.shape != (len(self.points),):
                raise DimensionError("cell_ids must have one entry per point")
            object.__setattr__(self, "cell_ids", ids)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class PairedPattern:
    """Theft locations with their (possibly missing) recovery marks.

    ``recoveries`` has one row per theft; rows of NaN mark thefts whose
    vehicle was never recovered.
    """

    thefts: np.ndarray
    recoveries: np.ndarray
    region_id: str = "region"

    def __post_init__(self):
        thefts = _as_points(self.thefts)
        rec = np.asarray(self.recoveries, dtype=float)
        if rec.size == 0:
            rec = rec.reshape(0, 2)
        if rec.shape != thefts.shape:
            raise DimensionError("recoveries must be one (possibly NaN) row per theft")
        # a mark is either fully present or fully absent
        finite = np.isfinite(rec)
        if np.any(finite[:, 0] != finite[:, 1]):
            bad = int(np.flatnonzero(finite[:, 0] != finite[:, 1])[0])
            raise DataError(f"recovery row {bad} has one finite and one missing coordinate")
        object.__setattr__(self, "thefts", thefts)
        object.__setattr__(self, "recoveries", rec)

    @property
    def recovered(self) -> np.ndarray:
        """Boolean mask of thefts with an observed recovery."""
        return np.isfinite(self.recoveries[:, 0])

    @property
    def n(self) -> int:
        return len(self.thefts)

    @property
    def m(self) -> int:
        return int(self.recovered.sum())

    def complete(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (thefts, recoveries) restricted to complete pairs."""
        mask = self.recovered
        return self.thefts[mask], self.recoveries[mask]

    def displacements(self) -> np.ndarray:
        """recovery - theft for the complete pairs, shape (m, 2)."""
        thefts, rec = self.complete()
        return rec - thefts


@dataclass(frozen=True)
class GridSpec:
    """K cells with representative points and standardized areas.

    ``std_areas`` always sums to one: the discretized likelihoods treat the
    study region as having unit total measure.
    """

    rep_points: np.ndarray
    raw_areas: np.ndarray
    std_areas: np.ndarray
    kind: str  # "regular" | "membership"
    bbox: tuple[float, float, float, float] | None = None
    nx: int | None = None
    ny: int | None = None

    def __post_init__(self):
        reps = _as_points(self.rep_points)
        raw = np.asarray(self.raw_areas, dtype=float)
        std = np.asarray(self.std_areas, dtype=float)
        if not (len(reps) == len(raw) == len(std)):
            raise DimensionError("rep_points, raw_areas and std_areas must agree in length")
        if len(reps) == 0:
            raise GeometryError("a grid needs at least one cell")
        if np.any(raw <= 0):
            raise GeometryError("cell areas must be positive")
        if abs(std.sum() - 1.0) > AREA_TOL:
            raise GeometryError(f"standardized areas sum to {std.sum()!r}, not 1")
        # representative points must be pairwise distinct
        order = np.lexsort(reps.T)
        if len(reps) > 1 and np.any(np.all(np.diff(reps[order], axis=0) == 0, axis=1)):
            raise GeometryError("representative points are not pairwise distinct")
        object.__setattr__(self, "rep_points", reps)
        object.__setattr__(self, "raw_areas", raw)
        object.__setattr__(self, "std_areas", std)

    @property
    def n_cells(self) -> int:
        return len(self.rep_points)


def build_regular_grid(bbox, nx: int, ny: int) -> GridSpec:
    """Partition a bounding box into nx-by-ny equal rectangles.

    Cells are numbered row-major with x varying fastest; the representative
    point of each cell is its centroid and every cell gets std_area 1/(nx*ny).
    """
    xmin, xmax, ymin, ymax = map(float, bbox)
    if not (np.isfinite([xmin, xmax, ymin, ymax]).all()):
        raise GeometryError("bounding box coordinates must be finite")
    if xmax <= xmin or ymax <= ymin:
        raise GeometryError(f"degenerate bounding box {bbox!r}")
    if nx < 1 or ny < 1:
        raise GeometryError("nx and ny must be at least 1")
    xs = xmin + (np.arange(nx) + 0.5) * (xmax - xmin) / nx
    ys = ymin + (np.arange(ny) + 0.5) * (ymax - ymin) / ny
    gx, gy = np.meshgrid(xs, ys)
    reps = np.column_stack([gx.ravel(), gy.ravel()])
    k = nx * ny
    cell_area = (xmax - xmin) * (ymax - ymin) / k
    return GridSpec(
        rep_points=reps,
        raw_areas=np.full(k, cell_area),
        std_areas=np.full(k, 1.0 / k),
        kind="regular",
        bbox=(xmin, xmax, ymin, ymax),
        nx=nx,
        ny=ny,
    )


def grid_from_membership(cell_ids, areas, points=None, rep_points=None) -> GridSpec:
    """Build a grid from a precomputed point-to-cell membership table.

    Parameters
    ----------
    cell_ids : per-point cell indices, dense in 0..K-1.
    areas : raw area of each of the K cells; standardized areas are
        areas / sum(areas).
    points : point coordinates matching ``cell_ids``; used to place each
        cell's representative point at the centroid of its members when
        ``rep_points`` is not given.
    rep_points : explicit (K, 2) representative points, overriding centroids.
    """
    areas = np.asarray(areas, dtype=float)
    if areas.ndim != 1 or len(areas) == 0:
        raise DimensionError("areas must be a nonempty 1-D array")
    if np.any(~np.isfinite(areas)) or np.any(areas <= 0):
        bad = int(np.flatnonzero(~(areas > 0))[0])
        raise GeometryError(f"nonpositive or non-finite area for cell {bad}")
    k = len(areas)
    ids = np.asarray(cell_ids, dtype=int)
    if ids.size and (ids.min() < 0 or ids.max() >= k):
        bad = int(np.flatnonzero((ids < 0) | (ids >= k))[0])
        raise GeometryError(f"point {bad} has cell id {ids[bad]} outside 0..{k - 1}")

    if rep_points is not None:
        reps = _as_points(rep_points)
        if len(reps) != k:
            raise DimensionError("rep_points must have one row per cell")
    else:
        if points is None:
            raise GeometryError("either rep_points or member points are required")
        pts = _as_points(points)
        if len(pts) != len(ids):
            raise DimensionError("points and cell_ids must agree in length")
        reps = np.zeros((k, 2))
        counts = np.bincount(ids, minlength=k)
        if np.any(counts == 0):
            bad = int(np.flatnonzero(counts == 0)[0])
            raise GeometryError(f"cell {bad} has no member points and no representative point")
        reps[:, 0] = np.bincount(ids, weights=pts[:, 0], minlength=k) / counts
        reps[:, 1] = np.bincount(ids, weights=pts[:, 1], minlength=k) / counts

    return GridSpec(
        rep_points=reps,
        raw_areas=areas,
        std_areas=areas / areas.sum(),
        kind="membership",
    )


def assign_cells(pattern: PointPattern, grid: GridSpec) -> np.ndarray:
    """Cell index of each point of the pattern.

    Regular grids use half-open cells [lo, hi) along each axis with the final
    cell closed, so a point on a shared edge belongs to the higher-index cell.
    Membership grids require the pattern to carry ``cell_ids``.
    """
    if grid.kind == "membership":
        if pattern.cell_ids is None:
            raise GeometryError("membership grid requires per-point cell ids")
        ids = pattern.cell_ids
        if ids.size and (ids.min() < 0 or ids.max() >= grid.n_cells):
            bad = int(np.flatnonzero((ids < 0) | (ids >= grid.n_cells))[0])
            raise GeometryError(f"point {bad} has no membership row in the grid")
        return ids.copy()

    xmin, xmax, ymin, ymax = grid.bbox
    pts = pattern.points
    if len(pts) == 0:
        return np.zeros(0, dtype=int)
    inside = (
        (pts[:, 0] >= xmin) & (pts[:, 0] <= xmax) & (pts[:, 1] >= ymin) & (pts[:, 1] <= ymax)
    )
    if not inside.all():
        bad = int(np.flatnonzero(~inside)[0])
        raise GeometryError(f"point {bad} at {tuple(pts[bad])} lies outside the grid bbox")
    ix = np.floor((pts[:, 0] - xmin) / (xmax - xmin) * grid.nx).astype(int)
    iy = np.floor((pts[:, 1] - ymin) / (ymax - ymin) * grid.ny).astype(int)
    np.clip(ix, 0, grid.nx - 1, out=ix)  # closes the final edge
    np.clip(iy, 0, grid.ny - 1, out=iy)
    return iy * grid.nx + ix


def assign_counts(pattern: PointPattern, grid: GridSpec) -> np.ndarray:
    """Per-cell point counts; conserves the total count exactly."""
    ids = assign_cells(pattern, grid)
    return np.bincount(ids, minlength=grid.n_cells)


def nearest_cells(grid: GridSpec, points) -> np.ndarray:
    """Index of the grid cell whose representative point is nearest each point."""
    pts = _as_points(points)
    if len(pts) == 0:
        return np.zeros(0, dtype=int)
    _, idx = cKDTree(grid.rep_points).query(pts)
    return np.asarray(idx, dtype=int)


# ---------------------------------------------------------------------------
# Covariates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovariateTable:
    """Per-cell covariate matrix with names and standardization state.

    Columns that are identically one are treated as an explicit intercept and
    are never rescaled. After :func:`standardize_covariates`, every other
    column has mean 0 and standard deviation 1 (divisor K, see below), and the
    original values are recoverable from the stored means and scales.
    """

    names: tuple[str, ...]
    values: np.ndarray
    standardized: bool = False
    means: np.ndarray | None = None
    scales: np.ndarray | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise DimensionError("covariate values must be a 2-D (cells x columns) array")
        if len(self.names) != vals.shape[1]:
            raise DimensionError("one name per covariate column is required")
        if not np.all(np.isfinite(vals)):
            raise DataError("covariate values must be finite")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", vals)

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        if name not in self.names:
            raise DataError(f"unknown covariate column {name!r}")
        return self.values[:, self.names.index(name)]

    def design_matrix(self, columns=None, intercept: bool = True) -> np.ndarray:
        """Design matrix restricted to ``columns``, with a leading intercept.

        Existing intercept columns are dropped first so the intercept never
        appears twice.
        """
        names = list(self.names) if columns is None else list(columns)
        keep = [n for n in names if not _is_intercept(self.column(n))]
        x = (
            self.values[:, [self.names.index(n) for n in keep]]
            if keep
            else np.zeros((self.n_cells, 0))
        )
        if intercept:
            x = np.column_stack([np.ones(self.n_cells), x])
        return x


def _is_intercept(col: np.ndarray) -> bool:
    return bool(np.all(col == 1.0))


def standardize_covariates(table: CovariateTable) -> CovariateTable:
    """Center and scale every non-intercept column to mean 0, sd 1.

    The scale is the population standard deviation (divisor K); idempotent on
    already standardized tables and invertible through the stored means and
    scales.
    """
    vals = table.values
    means = vals.mean(axis=0)
    scales = vals.std(axis=0)
    for j, name in enumerate(table.names):
        if _is_intercept(vals[:, j]):
            means[j], scales[j] = 0.0, 1.0
        elif scales[j] == 0.0:
            raise DataError(f"covariate {name!r} has zero variance and is not an intercept")
    out = (vals - means) / scales
    if table.standardized:
        base_means = table.means + means * table.scales
        base_scales = table.scales * scales
    else:
        base_means, base_scales = means, scales
    return CovariateTable(
        names=table.names, values=out, standardized=True, means=base_means, scales=base_scales
    )


def destandardize_covariates(table: CovariateTable) -> CovariateTable:
    """Undo :func:`standardize_covariates` using the stored means and scales."""
    if not table.standardized:
        return table
    vals = table.values * table.scales + table.means
    return CovariateTable(names=table.names, values=vals, standardized=False)
