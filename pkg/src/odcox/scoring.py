"""Predictive model assessment for gridded intensity fits.

The protocol: p-thin the observed pattern into a training and a test
pattern (independent given the intensity), fit on the training half, sample
posterior-predictive counts at the test intensity (1-p)/p times the training
intensity, and score them over randomly drawn evaluation regions with
predictive interval coverage (PIC) and the rank probability score (RPS).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, GeometryError
from .geometry import GridSpec, PointPattern, assign_counts
from .intensity import fit_lgcp, fit_nhpp, sample_predictive_counts
from .samplers import McmcConfig, PosteriorChain

__all__ = [
    "ThinSplit",
    "p_thin",
    "EvalRegions",
    "random_blocks",
    "region_counts",
    "pic",
    "rps",
    "ValidationReport",
    "run_validation",
]

PIC_MIN_DRAWS = 100


@dataclass(frozen=True)
class ThinSplit:
    """A p-thinning of one pattern into conditionally independent halves."""

    train: PointPattern
    test: PointPattern
    p: float
    seed: int | None = None


def p_thin(pattern: PointPattern, p: float, rng) -> ThinSplit:
    """Independently keep each point in train with probability p.

    The training pattern follows intensity p * lambda, the test pattern
    (1-p) * lambda. ``rng`` may be a Generator or an integer seed; the seed
    is recorded when given.
    """
    if not 0.0 < p < 1.0:
        raise DataError(f"retention probability must lie in (0, 1), got {p!r}")
    seed = None
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    keep = rng.random(len(pattern)) < p

    def subset(mask):
        ids = pattern.cell_ids[mask] if pattern.cell_ids is not None else None
        return PointPattern(pattern.points[mask], region_id=pattern.region_id, cell_ids=ids)

    return ThinSplit(train=subset(keep), test=subset(~keep), p=p, seed=seed)


@dataclass(frozen=True)
class EvalRegions:
    """Evaluation regions: possibly overlapping sets of grid-cell indices."""

    sets: tuple
    descriptor: dict

    def __post_init__(self):
        sets = tuple(np.asarray(s, dtype=int) for s in self.sets)
        if any(s.size == 0 for s in sets):
            raise DataError("evaluation regions must be nonempty")
        object.__setattr__(self, "sets", sets)

    def __len__(self) -> int:
        return len(self.sets)


def random_blocks(grid: GridSpec, count: int, rng, w: int | None = None, q: float | None = None) -> EvalRegions:
    """Draw ``count`` random cell sets, each of w distinct cells.

    Give either w (cells per set) or q (relative size; w = ceil(q K)).
    Sets may overlap each other, matching the evaluation protocol.
    """
    k = grid.n_cells
    if (w is None) == (q is None):
        raise DataError("give exactly one of w (cells per set) or q (relative size)")
    if q is not None:
        if not 0.0 < q < 1.0:
            raise DataError(f"relative size q must lie in (0, 1), got {q!r}")
        w = math.ceil(q * k)
    if not 1 <= w <= k:
        raise GeometryError(f"region size w={w} is outside 1..{k}")
    if count < 1:
        raise DataError("need at least one evaluation region")
    sets = tuple(np.sort(rng.choice(k, size=w, replace=False)) for _ in range(count))
    return EvalRegions(sets=sets, descriptor={"w": int(w), "count": int(count)})


def region_counts(cell_counts, regions: EvalRegions) -> np.ndarray:
    """Aggregate per-cell counts over regions: (K,) -> (R,) or (L, K) -> (L, R)."""
    counts = np.asarray(cell_counts)
    out = [counts[..., s].sum(axis=-1) for s in regions.sets]
    return np.stack(out, axis=-1)


def pic(predictive_counts, test_counts, nominal: float = 0.90) -> float:
    """Predictive interval coverage of zero residuals.

    For each region, the central nominal-level interval of the residuals
    test - predictive across draws is formed; coverage is the fraction of
    regions whose interval contains 0.
    """
    pred = np.asarray(predictive_counts, dtype=float)
    test = np.asarray(test_counts, dtype=float)
    if pred.ndim != 2 or pred.shape[1] != test.shape[0]:
        raise DataError(f"predictive draws {pred.shape} do not match {test.shape[0]} regions")
    if pred.shape[0] < PIC_MIN_DRAWS:
        raise DataError(f"coverage needs at least {PIC_MIN_DRAWS} draws, got {pred.shape[0]}")
    if not 0.0 < nominal < 1.0:
        raise DataError(f"nominal level must lie in (0, 1), got {nominal!r}")
    resid = test[None, :] - pred
    alpha = (1.0 - nominal) / 2.0
    lo, hi = np.quantile(resid, [alpha, 1.0 - alpha], axis=0)
    return float(np.mean((lo <= 0.0) & (0.0 <= hi)))


def rps(samples, observed) -> float:
    """Rank probability score of L predictive counts against one observation.

    mean |N_l - obs| - (1/(2 L^2)) sum_{l,l'} |N_l - N_l'|; the pairwise term
    uses the sorted-prefix identity, which equals the naive double sum.
    """
    x = np.asarray(samples, dtype=float).ravel()
    l_n = x.size
    if l_n == 0:
        raise DataError("need at least one predictive sample")
    term1 = float(np.abs(x - float(observed)).mean())
    if l_n == 1:
        return term1
    xs = np.sort(x)
    coef = 2.0 * np.arange(l_n) - l_n + 1.0
    pair_sum = float((coef * xs).sum())  # sum over unordered pairs of |xi - xj|
    return term1 - pair_sum / (l_n * l_n)


@dataclass(frozen=True)
class ValidationReport:
    """PIC and mean RPS per region size, for one thin-fit-score run."""

    p: float
    nominal: float
    n_train: int
    n_test: int
    rows: tuple  # dicts: {"w": int, "pic": float, "mean_rps": float, "regions": int}

    def as_dict(self) -> dict:
        return {
            "p": self.p,
            "nominal": self.nominal,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "scores": [dict(r) for r in self.rows],
        }


def run_validation(
    pattern: PointPattern,
    grid: GridSpec,
    X,
    kind: str = "lgcp",
    p: float = 0.5,
    mcmc: McmcConfig | None = None,
    nominal: float = 0.90,
    w_list=tuple(range(1, 11)),
    regions_per_w: int = 100,
    seed: int = 0,
) -> tuple[ValidationReport, PosteriorChain]:
    """Full assessment pipeline: thin, fit train, score predictive counts.

    Returns the per-w score table and the training-fit chain. All
    randomness (thinning, region draws, predictive sampling) flows from
    ``seed``; the fit itself uses the mcmc config's own seed.
    """
    rng = np.random.default_rng(seed)
    mcmc = mcmc or McmcConfig()
    split = p_thin(pattern, p, rng)
    fit = fit_lgcp if kind == "lgcp" else fit_nhpp
    chain = fit(split.train, grid, X, mcmc=mcmc)
    scale = (1.0 - p) / p
    pred = np.stack(
        [
            sample_predictive_counts(chain.record(l), grid, X, scale, rng)
            for l in range(chain.n_draws)
        ]
    )
    test_counts = assign_counts(split.test, grid)
    rows = []
    for w in w_list:
        regions = random_blocks(grid, count=regions_per_w, rng=rng, w=int(w))
        pred_r = region_counts(pred, regions)
        test_r = region_counts(test_counts, regions)
        coverage = pic(pred_r, test_r, nominal)
        mean_rps = float(np.mean([rps(pred_r[:, i], test_r[i]) for i in range(len(regions))]))
        rows.append({"w": int(w), "pic": coverage, "mean_rps": mean_rps, "regions": len(regions)})
    report = ValidationReport(
        p=p, nominal=nominal, n_train=len(split.train), n_test=len(split.test), rows=tuple(rows)
    )
    return report, chain
