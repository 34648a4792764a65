"""Joint model for theft-recovery pairs as a point pattern on D x D.

On a shared K-cell grid the pair intensity at (recovery cell k, theft cell
k') is

    log lambda(u_k, u_k') = beta0 [+ X_R beta_R + X_T beta_T]
                            + eta * d' Sigma(u_k')^{-1} d
                            + z_R(u_k) + z_T(u_k'),    d = u_k - u_k',

with z_R, z_T independent exponential-covariance GPs, Sigma the Higdon
kernel of the theft cell (its psi fields and scale are sampled along with
everything else), and eta the dependence parameter: negative eta pulls
recoveries toward their thefts. The LGCP-Ind variant pins eta = 0, making
the intensity separable. The gridded likelihood is the K x K double sum
analogous to the one-pattern case.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, GeometryError
from .geometry import GridSpec, PairedPattern, PointPattern, assign_cells
from .gp import CovarianceModel, ExpCorrelationCache, chol, cov_matrix
from .recovery import HIGDON_A, KernelFieldHigdon, higdon_terms
from .samplers import (
    ChainModel,
    EllipticalSliceBlock,
    InverseGammaPrior,
    LogitTransform,
    LogTransform,
    McmcConfig,
    MetropolisBlock,
    NormalPrior,
    PosteriorChain,
    UniformPrior,
    run_chain,
)

__all__ = [
    "JointModelSpec",
    "pair_counts",
    "log_lambda_matrix",
    "joint_loglik",
    "fit_joint",
    "FlowSummary",
    "flow_from_counts",
    "flow_from_chain",
    "quadrant_partition",
    "block_partition",
]

MIN_INFORMATIVE_PAIRS = 500


@dataclass(frozen=True)
class JointModelSpec:
    """Variant and fixed settings of the joint fit.

    variant "ind" removes eta from the sampled set (eta = 0); "dep" samples
    it with a N(0, 100) prior. Covariate column names are optional and
    default to none, matching the intercept-only form.
    """

    variant: str = "dep"
    phi_star: float = 1.0
    covariates_r: tuple[str, ...] | None = None
    covariates_t: tuple[str, ...] | None = None
    priors: dict | None = None
    A: float = HIGDON_A

    def __post_init__(self):
        if self.variant not in ("ind", "dep"):
            raise DataError(f"variant must be 'ind' or 'dep', got {self.variant!r}")
        if self.phi_star <= 0:
            raise DataError(f"phi_star must be positive, got {self.phi_star!r}")


def pair_counts(pairs: PairedPattern, grid: GridSpec) -> np.ndarray:
    """K x K histogram of complete pairs: rows recovery cell, columns theft cell."""
    thefts, recs = pairs.complete()
    rows = assign_cells(PointPattern(recs), grid)
    cols = assign_cells(PointPattern(thefts), grid)
    k = grid.n_cells
    counts = np.zeros((k, k), dtype=int)
    np.add.at(counts, (rows, cols), 1)
    return counts


def _rep_displacements(grid: GridSpec):
    reps = grid.rep_points
    dx = reps[:, 0][:, None] - reps[:, 0][None, :]
    dy = reps[:, 1][:, None] - reps[:, 1][None, :]
    return dx, dy


def _quad_matrix(dx, dy, psi_x, psi_y, sigma_ker: float, A: float) -> np.ndarray:
    """d' Sigma(theft cell)^{-1} d for every cell pair; columns share a kernel."""
    a2, b2, c, s = higdon_terms(psi_x, psi_y, A)
    wx = dx * c[None, :] + dy * s[None, :]
    wy = -dx * s[None, :] + dy * c[None, :]
    return (wx * wx / a2[None, :] + wy * wy / b2[None, :]) / (sigma_ker * sigma_ker)


def log_lambda_matrix(
    draw: dict, grid: GridSpec, X_R=None, X_T=None, A: float = HIGDON_A, _disp=None
) -> np.ndarray:
    """K x K log pair intensity for one parameter draw.

    ``draw`` maps names to values as recorded by :func:`fit_joint`; missing
    eta, psi fields, or kernel scale default to the independent model.
    """
    z_r = np.asarray(draw["z_R"], dtype=float)
    z_t = np.asarray(draw["z_T"], dtype=float)
    row = float(draw["beta0"]) + z_r
    col = z_t.copy()
    if X_R is not None and "beta_R" in draw:
        row = row + np.asarray(X_R, dtype=float) @ np.atleast_1d(draw["beta_R"])
    if X_T is not None and "beta_T" in draw:
        col = col + np.asarray(X_T, dtype=float) @ np.atleast_1d(draw["beta_T"])
    out = row[:, None] + col[None, :]
    eta = float(draw.get("eta", 0.0))
    if eta != 0.0:
        dx, dy = _disp if _disp is not None else _rep_displacements(grid)
        out = out + eta * _quad_matrix(
            dx, dy,
            np.asarray(draw["psi_x"], dtype=float),
            np.asarray(draw["psi_y"], dtype=float),
            float(draw.get("sigma_ker", 1.0)),
            A,
        )
    return out


def joint_loglik(
    params: dict, counts: np.ndarray, grid: GridSpec, kernel: KernelFieldHigdon | None = None,
    X_R=None, X_T=None,
) -> float:
    """Gridded pair log likelihood; raises on intensity overflow.

    ``kernel`` supplies the Higdon pieces when params carry a nonzero eta;
    its anchors must be the grid representative points.
    """
    counts = np.asarray(counts)
    k = grid.n_cells
    if counts.shape != (k, k):
        raise DimensionError(f"pair counts have shape {counts.shape}, expected ({k}, {k})")
    draw = dict(params)
    if kernel is not None:
        if len(kernel.anchors) != k:
            raise DimensionError("kernel anchors must be the grid representative points")
        draw.setdefault("psi_x", kernel.psi_x)
        draw.setdefault("psi_y", kernel.psi_y)
        draw.setdefault("sigma_ker", kernel.sigma)
    elif float(draw.get("eta", 0.0)) != 0.0 and "psi_x" not in draw:
        raise DataError("a nonzero eta requires a kernel field")
    log_lam = log_lambda_matrix(draw, grid, X_R=X_R, X_T=X_T)
    with np.errstate(over="ignore"):
        lam = np.exp(log_lam)
    if np.any(np.isinf(lam)):
        r, c = np.unravel_index(int(np.flatnonzero(np.isinf(lam))[0]), lam.shape)
        raise DataError(f"pair intensity overflow at cell pair ({r}, {c})")
    weights = np.outer(grid.std_areas, grid.std_areas)
    return float(-(lam * weights).sum() + (counts * log_lam).sum())


def fit_joint(
    pairs: PairedPattern,
    grid: GridSpec,
    spec: JointModelSpec | None = None,
    mcmc: McmcConfig | None = None,
    covariates=None,
) -> PosteriorChain:
    """Posterior chain for the joint pair-intensity model.

    Sampled state: beta0, eta (dep only), the two latent fields with their
    (sigma2, phi) hyperparameters, the kernel psi fields, and the kernel
    scale sigma_ker (dep only). ``covariates`` is a CovariateTable when the
    spec names covariate columns.
    """
    spec = spec or JointModelSpec()
    mcmc = mcmc or McmcConfig()
    counts = pair_counts(pairs, grid)
    m = int(counts.sum())
    if m < MIN_INFORMATIVE_PAIRS:
        warnings.warn(
            f"only {m} complete pairs; the latent fields are weakly informed below "
            f"{MIN_INFORMATIVE_PAIRS}",
            stacklevel=2,
        )
    k = grid.n_cells
    dx, dy = _rep_displacements(grid)
    weights = np.outer(grid.std_areas, grid.std_areas)
    dep = spec.variant == "dep"

    priors = {
        "beta0": NormalPrior(0.0, 100.0),
        "beta": NormalPrior(0.0, 100.0),
        "eta": NormalPrior(0.0, 100.0),
        "sigma2": InverseGammaPrior(2.0, 0.1),
        "phi": UniformPrior(0.0, 10.0),
        "sigma_ker_sq": InverseGammaPrior(2.0, 0.1),
    }
    if spec.priors:
        priors.update(spec.priors)
    phi_lo = getattr(priors["phi"], "lo", 0.0)
    phi_hi = getattr(priors["phi"], "hi", 10.0)

    X_R = X_T = None
    if spec.covariates_r:
        X_R = covariates.design_matrix(spec.covariates_r, intercept=False)
    if spec.covariates_t:
        X_T = covariates.design_matrix(spec.covariates_t, intercept=False)

    def data_loglik(state):
        log_lam = log_lambda_matrix(state, grid, X_R=X_R, X_T=X_T, A=spec.A, _disp=(dx, dy))
        with np.errstate(over="ignore"):
            lam = np.exp(log_lam)
        if np.any(np.isinf(lam)):
            return -np.inf
        return float(-(lam * weights).sum() + (counts * log_lam).sum())

    field_cache = {"z_R": ExpCorrelationCache(grid.rep_points), "z_T": ExpCorrelationCache(grid.rep_points)}
    psi_factor = chol(cov_matrix(CovarianceModel("sq_exponential", phi=spec.phi_star), grid.rep_points))

    def scalar_target(name, prior):
        def target(state):
            return data_loglik(state) + prior.logpdf(state[name])

        return target

    def hyper_target(which):
        cache = field_cache[which]

        def target(state):
            s2, phi = state[f"sigma2_{which[-1]}"], state[f"phi_{which[-1]}"]
            lp = priors["sigma2"].logpdf(s2) + priors["phi"].logpdf(phi)
            if lp == -np.inf:
                return lp
            return lp + cache.field_logpdf(state[which], s2, phi)

        return target

    def sigma_ker_target(state):
        sig = state["sigma_ker"]
        return data_loglik(state) + priors["sigma_ker_sq"].logpdf(sig * sig) + math.log(2.0 * sig)

    init = {
        "beta0": math.log(max(m, 1)),
        "sigma2_R": 0.1,
        "phi_R": 1.0,
        "sigma2_T": 0.1,
        "phi_T": 1.0,
        "z_R": np.zeros(k),
        "z_T": np.zeros(k),
        "psi_x": np.zeros(k),
        "psi_y": np.zeros(k),
    }
    blocks = [
        MetropolisBlock(names=("beta0",), log_target=scalar_target("beta0", priors["beta0"]))
    ]
    if X_R is not None:
        init["beta_R"] = np.zeros(X_R.shape[1])
        blocks.append(
            MetropolisBlock(names=("beta_R",), log_target=scalar_target("beta_R", priors["beta"]))
        )
    if X_T is not None:
        init["beta_T"] = np.zeros(X_T.shape[1])
        blocks.append(
            MetropolisBlock(names=("beta_T",), log_target=scalar_target("beta_T", priors["beta"]))
        )
    if dep:
        d_all = pairs.displacements()
        sigma_ker_init = math.sqrt(
            max(float(np.mean((d_all**2).sum(axis=1))) * math.pi / spec.A, 1e-6)
        )
        init["eta"] = 0.0
        init["sigma_ker"] = sigma_ker_init
        blocks.append(MetropolisBlock(names=("eta",), log_target=scalar_target("eta", priors["eta"])))
        blocks.append(
            MetropolisBlock(
                names=("sigma_ker",), log_target=sigma_ker_target,
                transforms={"sigma_ker": LogTransform()},
            )
        )
    for which in ("z_R", "z_T"):
        suffix = which[-1]
        blocks.append(
            MetropolisBlock(
                names=(f"sigma2_{suffix}", f"phi_{suffix}"),
                log_target=hyper_target(which),
                transforms={
                    f"sigma2_{suffix}": LogTransform(),
                    f"phi_{suffix}": LogitTransform(phi_lo, phi_hi),
                },
            )
        )
        cache = field_cache[which]
        blocks.append(
            EllipticalSliceBlock(
                name=which,
                prior_factor=(
                    lambda s, c=cache, sx=suffix: c.field_factor(s[f"sigma2_{sx}"], s[f"phi_{sx}"])
                ),
                log_lik=data_loglik,
            )
        )
    psi_loglik = data_loglik if dep else (lambda s: 0.0)
    for psi_name in ("psi_x", "psi_y"):
        blocks.append(
            EllipticalSliceBlock(
                name=psi_name, prior_factor=lambda s: psi_factor, log_lik=psi_loglik
            )
        )

    model = ChainModel(init=init, blocks=tuple(blocks), derived={"loglik": data_loglik})
    return run_chain(model, mcmc)


# ---------------------------------------------------------------------------
# Flow between subregions
# ---------------------------------------------------------------------------

def _check_partition(origin_cells, partition, k: int):
    origin = np.asarray(origin_cells, dtype=int)
    if origin.size == 0:
        raise DataError("the origin cell set is empty")
    if origin.min() < 0 or origin.max() >= k:
        raise GeometryError("origin cells outside the grid")
    sets = [np.asarray(p, dtype=int) for p in partition]
    if any(s.size == 0 for s in sets):
        raise DataError("every partition set must be nonempty")
    combined = np.concatenate(sets)
    if len(np.unique(combined)) != len(combined):
        raise GeometryError("partition sets overlap")
    if len(combined) != k or combined.min() < 0 or combined.max() >= k:
        raise GeometryError("partition must cover every grid cell exactly once")
    return origin, sets


def _closed_proportions(masses: np.ndarray) -> np.ndarray:
    """Normalize so the correctly rounded sum of the shares is exactly one.

    The largest share is replaced by the correctly rounded complement of the
    others, after which math.fsum over the vector returns 1.0 by construction.
    """
    row = masses / masses.sum()
    j = int(np.argmax(row))
    row[j] = math.fsum([1.0] + [-row[i] for i in range(len(row)) if i != j])
    return row


def flow_from_counts(counts: np.ndarray, origin_cells, partition) -> np.ndarray:
    """Observed flow proportions N(B_d, B_o) / N(D, B_o) over the partition."""
    counts = np.asarray(counts)
    origin, sets = _check_partition(origin_cells, partition, counts.shape[0])
    denom = counts[:, origin].sum()
    if denom == 0:
        raise DataError("no pairs originate in the conditioning cells; proportions undefined")
    return _closed_proportions(
        np.array([counts[np.ix_(s, origin)].sum() for s in sets], dtype=float)
    )


@dataclass(frozen=True)
class FlowSummary:
    """Posterior flow proportions into each partition set, for one origin set."""

    proportions: np.ndarray  # (n_draws, n_sets)
    post_mean: np.ndarray
    post_lo95: np.ndarray
    post_hi95: np.ndarray
    heldout: np.ndarray | None = None


def flow_from_chain(
    chain: PosteriorChain,
    grid: GridSpec,
    origin_cells,
    partition,
    X_R=None,
    X_T=None,
    A: float = HIGDON_A,
    heldout_counts: np.ndarray | None = None,
) -> FlowSummary:
    """Posterior distribution of intensity-based flow proportions.

    Per draw, lambda is integrated over B_d x B_o for each destination set
    B_d and normalized by the whole-domain integral; every draw's proportions
    sum to one exactly under correctly rounded (math.fsum) summation.
    """
    origin, sets = _check_partition(origin_cells, partition, grid.n_cells)
    disp = _rep_displacements(grid)
    weights = np.outer(grid.std_areas, grid.std_areas)
    n = chain.n_draws
    if n == 0:
        raise DataError("cannot summarize flow from an empty chain")
    props = np.empty((n, len(sets)))
    for l in range(n):
        draw = chain.record(l)
        lam = np.exp(log_lambda_matrix(draw, grid, X_R=X_R, X_T=X_T, A=A, _disp=disp)) * weights
        masses = np.array([lam[np.ix_(s, origin)].sum() for s in sets])
        props[l] = _closed_proportions(masses)
    lo, hi = np.quantile(props, [0.025, 0.975], axis=0)
    held = None
    if heldout_counts is not None:
        held = flow_from_counts(heldout_counts, origin, sets)
    return FlowSummary(
        proportions=props, post_mean=props.mean(axis=0), post_lo95=lo, post_hi95=hi, heldout=held
    )


def quadrant_partition(grid: GridSpec) -> list[np.ndarray]:
    """Four cell sets split at the median representative point."""
    reps = grid.rep_points
    cx, cy = np.median(reps[:, 0]), np.median(reps[:, 1])
    west, south = reps[:, 0] <= cx, reps[:, 1] <= cy
    quads = [
        np.flatnonzero(west & south),
        np.flatnonzero(~west & south),
        np.flatnonzero(west & ~south),
        np.flatnonzero(~west & ~south),
    ]
    return [q for q in quads if q.size]


def block_partition(grid: GridSpec, block_nx: int, block_ny: int) -> list[np.ndarray]:
    """Partition a regular grid into contiguous blocks of block_nx x block_ny cells."""
    if grid.kind != "regular":
        raise GeometryError("block partitions need a regular grid")
    if grid.nx % block_nx or grid.ny % block_ny:
        raise GeometryError(
            f"{block_nx}x{block_ny} blocks do not tile a {grid.nx}x{grid.ny} grid"
        )
    ids = np.arange(grid.n_cells)
    bx = (ids % grid.nx) // block_nx
    by = (ids // grid.nx) // block_ny
    label = by * (grid.nx // block_nx) + bx
    return [np.flatnonzero(label == v) for v in np.unique(label)]
