"""Synthetic data generators matching each model class.

These are the ground-truth side of every parameter-recovery test: each
generator draws from exactly the law the corresponding fitter assumes
(piecewise-constant intensity over cells, uniform placement within a cell,
displacement covariance Sigma/2). Everything is deterministic given the
generator passed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, GeometryError
from .geometry import GridSpec, PairedPattern, PointPattern
from .gp import CovarianceModel, chol, cov_matrix, mvn_sample
from .joint import log_lambda_matrix
from .recovery import HIGDON_A, KernelConstant, KernelFieldHigdon, higdon_terms

__all__ = [
    "uniform_in_cells",
    "simulate_lgcp",
    "draw_psi_field",
    "simulate_recoveries",
    "JointTruth",
    "simulate_joint",
]


def uniform_in_cells(grid: GridSpec, cell_ids, rng) -> np.ndarray:
    """One uniform location inside each listed cell (regular grids).

    Membership grids carry no cell geometry, so points land on the
    representative point of their cell instead.
    """
    ids = np.asarray(cell_ids, dtype=int)
    if ids.size and (ids.min() < 0 or ids.max() >= grid.n_cells):
        raise GeometryError("cell index outside the grid")
    if grid.kind != "regular":
        return grid.rep_points[ids].copy()
    xmin, xmax, ymin, ymax = grid.bbox
    wx = (xmax - xmin) / grid.nx
    wy = (ymax - ymin) / grid.ny
    ix = ids % grid.nx
    iy = ids // grid.nx
    u = rng.random((ids.size, 2))
    return np.column_stack(
        [xmin + (ix + u[:, 0]) * wx, ymin + (iy + u[:, 1]) * wy]
    )


def simulate_lgcp(
    grid: GridSpec, X, beta, rng, gp: CovarianceModel | None = None, z=None, scale: float = 1.0
) -> PointPattern:
    """Draw a pattern with log intensity X beta + z on the grid.

    z is sampled from the GP at the representative points when ``gp`` is
    given, taken as-is when passed explicitly, and zero otherwise (NHPP).
    Cell counts are Poisson(scale * lambda_k * dk); points are placed
    uniformly within their cell.
    """
    X = np.asarray(X, dtype=float)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if z is not None:
        z = np.asarray(z, dtype=float)
    elif gp is not None:
        z = mvn_sample(chol(cov_matrix(gp, grid.rep_points)), rng)
    else:
        z = np.zeros(grid.n_cells)
    lam = np.exp(X @ beta + z)
    counts = rng.poisson(scale * lam * grid.std_areas)
    ids = np.repeat(np.arange(grid.n_cells), counts)
    points = uniform_in_cells(grid, ids, rng)
    return PointPattern(points, cell_ids=ids)


def draw_psi_field(anchors, phi_star: float, sigma: float, rng, A: float = HIGDON_A) -> KernelFieldHigdon:
    """Sample (psi_x, psi_y) from their squared-exponential prior at anchors."""
    anchors = np.asarray(anchors, dtype=float)
    factor = chol(cov_matrix(CovarianceModel("sq_exponential", phi=phi_star), anchors))
    return KernelFieldHigdon(
        sigma=sigma,
        phi_star=phi_star,
        anchors=anchors,
        psi_x=mvn_sample(factor, rng),
        psi_y=mvn_sample(factor, rng),
        A=A,
    )


def simulate_recoveries(
    thefts: PointPattern, kernel, recovery_prob: float, rng
) -> PairedPattern:
    """Attach recovery marks: Bernoulli recovery, displacement N(0, Sigma/2)."""
    if not 0.0 < recovery_prob <= 1.0:
        raise DataError(f"recovery probability must lie in (0, 1], got {recovery_prob!r}")
    n = len(thefts)
    recovered = rng.random(n) < recovery_prob
    eps = rng.standard_normal((n, 2))
    if isinstance(kernel, KernelConstant):
        lower = np.linalg.cholesky(kernel.matrix)
        disp = eps @ lower.T / math.sqrt(2.0)  # rows are (L eps)', so Cov = Sigma/2
    elif isinstance(kernel, KernelFieldHigdon):
        idx = kernel.anchor_index(thefts.points)
        a2, b2, c, s = higdon_terms(kernel.psi_x[idx], kernel.psi_y[idx], kernel.A)
        a, b = np.sqrt(a2), np.sqrt(b2)
        dx = kernel.sigma * (a * c * eps[:, 0] - b * s * eps[:, 1]) / math.sqrt(2.0)
        dy = kernel.sigma * (a * s * eps[:, 0] + b * c * eps[:, 1]) / math.sqrt(2.0)
        disp = np.column_stack([dx, dy])
    else:
        raise DataError(f"unsupported kernel type {type(kernel).__name__}")
    recoveries = thefts.points + disp
    recoveries[~recovered] = np.nan
    return PairedPattern(thefts=thefts.points, recoveries=recoveries)


@dataclass(frozen=True)
class JointTruth:
    """Generating parameters of a joint-pair simulation.

    Latent entries left at None are drawn from their priors and filled in on
    the realized copy the simulator returns.
    """

    beta0: float = 0.0
    eta: float = 0.0
    sigma_ker: float = 1.0
    phi_star: float = 1.0
    sigma2_R: float = 1.0
    phi_R: float = 2.0
    sigma2_T: float = 1.0
    phi_T: float = 2.0
    z_R: np.ndarray | None = None
    z_T: np.ndarray | None = None
    psi_x: np.ndarray | None = None
    psi_y: np.ndarray | None = None
    A: float = HIGDON_A

    def as_draw(self) -> dict:
        """The name -> value mapping log_lambda_matrix expects."""
        return {
            "beta0": self.beta0,
            "eta": self.eta,
            "sigma_ker": self.sigma_ker,
            "z_R": self.z_R,
            "z_T": self.z_T,
            "psi_x": self.psi_x,
            "psi_y": self.psi_y,
        }


def simulate_joint(
    grid: GridSpec, truth: JointTruth, rng, target_m: int | None = None
) -> tuple[PairedPattern, JointTruth]:
    """Draw a complete-pair pattern from the joint intensity.

    Returns the pairs and the realized truth (latent fields filled in;
    beta0 recalibrated when ``target_m`` asks for an expected pair count).
    Cell-pair counts are Poisson(lambda * dk * dk'); endpoints are placed
    uniformly in their cells.
    """
    k = grid.n_cells
    reps = grid.rep_points

    def field(value, sigma2, phi):
        if value is not None:
            return np.asarray(value, dtype=float)
        cov = CovarianceModel("exponential", sigma2=sigma2, phi=phi)
        return mvn_sample(chol(cov_matrix(cov, reps)), rng)

    z_r = field(truth.z_R, truth.sigma2_R, truth.phi_R)
    z_t = field(truth.z_T, truth.sigma2_T, truth.phi_T)
    if truth.psi_x is not None and truth.psi_y is not None:
        psi_x, psi_y = np.asarray(truth.psi_x, dtype=float), np.asarray(truth.psi_y, dtype=float)
    else:
        psi_factor = chol(cov_matrix(CovarianceModel("sq_exponential", phi=truth.phi_star), reps))
        psi_x = mvn_sample(psi_factor, rng)
        psi_y = mvn_sample(psi_factor, rng)
    realized = replace(truth, z_R=z_r, z_T=z_t, psi_x=psi_x, psi_y=psi_y)

    weights = np.outer(grid.std_areas, grid.std_areas)
    log_lam = log_lambda_matrix(realized.as_draw(), grid, A=truth.A)
    if target_m is not None:
        total = float((np.exp(log_lam - realized.beta0) * weights).sum())
        realized = replace(realized, beta0=math.log(target_m / total))
        log_lam = log_lam - truth.beta0 + realized.beta0
    counts = rng.poisson(np.exp(log_lam) * weights)
    rows, cols = np.nonzero(counts)
    reps_r = np.repeat(rows, counts[rows, cols])
    reps_t = np.repeat(cols, counts[rows, cols])
    thefts = uniform_in_cells(grid, reps_t, rng)
    recoveries = uniform_in_cells(grid, reps_r, rng)
    return PairedPattern(thefts=thefts, recoveries=recoveries), realized
