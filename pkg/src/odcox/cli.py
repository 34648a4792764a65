"""Command-line entry point: one declarative TOML config, one command per run.

Commands: simulate, select-covariates, fit-theft, validate, fit-conditional,
predict-recovery, fit-joint, predict-flow. Every run writes its artifacts
plus a manifest (command, resolved config, input hashes, seed, version) into
--out-dir; with a fixed config and seed, artifacts are byte-identical across
re-runs. Error categories map to distinct exit codes:

    2 config, 3 missing input, 4 data, 5 dimension, 6 geometry,
    7 factorization, 8 sampler, 9 other.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    FactorizationError,
    GeometryError,
    MissingInputError,
    OdcoxError,
    SamplerError,
)
from .geometry import (
    CovariateTable,
    GridSpec,
    assign_counts,
    build_regular_grid,
    grid_from_membership,
    standardize_covariates,
)
from .intensity import fit_lgcp, fit_nhpp, posterior_intensity
from .io import (
    apply_overrides,
    load_config,
    read_chain_jsonl,
    read_covariates_csv,
    read_pairs_csv,
    read_points_csv,
    write_chain_jsonl,
    write_covariates_csv,
    write_flow_csv,
    write_json,
    write_manifest,
    write_pairs_csv,
    write_points_csv,
    write_summary_json,
    write_surface_csv,
)
from .joint import (
    JointModelSpec,
    block_partition,
    fit_joint,
    flow_from_chain,
    pair_counts,
    quadrant_partition,
)
from .gp import CovarianceModel
from .recovery import (
    KernelConstant,
    fit_conditional_constant,
    fit_conditional_spatial,
    predict_recovery,
    bicrps,
)
from .samplers import McmcConfig, parse_prior
from .scoring import run_validation
from .simulate import JointTruth, draw_psi_field, simulate_joint, simulate_lgcp, simulate_recoveries

EXIT_CODES = (
    (ConfigError, 2),
    (MissingInputError, 3),
    (DataError, 4),
    (DimensionError, 5),
    (GeometryError, 6),
    (FactorizationError, 7),
    (SamplerError, 8),
)

COMMANDS = (
    "simulate",
    "select-covariates",
    "fit-theft",
    "validate",
    "fit-conditional",
    "predict-recovery",
    "fit-joint",
    "predict-flow",
)


def _require(config: dict, table: str, key: str | None = None):
    if table not in config:
        raise ConfigError(f"config is missing the [{table}] table")
    if key is None:
        return config[table]
    if key not in config[table]:
        raise ConfigError(f"config is missing {table}.{key}")
    return config[table][key]


def _build_grid(config: dict) -> GridSpec:
    grid_cfg = _require(config, "grid")
    kind = grid_cfg.get("kind", "regular")
    if kind == "regular":
        bbox = _require(config, "grid", "bbox")
        if not (isinstance(bbox, (list, tuple)) and len(bbox) == 4):
            raise ConfigError("grid.bbox must be [xmin, xmax, ymin, ymax]")
        return build_regular_grid(bbox, int(_require(config, "grid", "nx")), int(_require(config, "grid", "ny")))
    if kind == "membership":
        areas_path = _require(config, "grid", "areas")
        areas_table = read_covariates_csv(areas_path)
        if "area" not in areas_table.names:
            raise ConfigError(f"{areas_path}: membership areas file needs an 'area' column")
        points = read_points_csv(_require(config, "data", "points"))
        if points.cell_ids is None:
            raise DataError("membership grids need a cell_id column in the points file")
        return grid_from_membership(points.cell_ids, areas_table.column("area"), points=points.points)
    raise ConfigError(f"unknown grid.kind {kind!r}")


def _covariate_design(config: dict, grid: GridSpec):
    """Returns (table_or_None, X, column_names) for the intensity models."""
    data_cfg = config.get("data", {})
    model_cfg = config.get("model", {})
    path = data_cfg.get("covariates")
    if path is None:
        return None, np.ones((grid.n_cells, 1)), ()
    table = read_covariates_csv(path)
    if table.n_cells != grid.n_cells:
        raise DimensionError(
            f"covariates cover {table.n_cells} cells but the grid has {grid.n_cells}"
        )
    if model_cfg.get("standardize", True):
        table = standardize_covariates(table)
    columns = model_cfg.get("covariates")
    if columns is not None:
        missing = [c for c in columns if c not in table.names]
        if missing:
            raise ConfigError(f"unknown covariate columns {missing}")
        names = tuple(columns)
    else:
        names = table.names
    return table, table.design_matrix(names, intercept=True), names


def _mcmc_config(config: dict, args) -> McmcConfig:
    mcmc = config.get("mcmc", {})
    seed = args.seed if args.seed is not None else int(mcmc.get("seed", 0))
    return McmcConfig(
        burn_in=int(mcmc.get("burn_in", 20_000)), keep=int(mcmc.get("keep", 20_000)), seed=seed
    )


def _intensity_priors(config: dict) -> dict:
    out = {}
    for name, entry in (config.get("priors") or {}).items():
        out[name] = parse_prior(entry)
    return out


def _finish(out: Path, command: str, config: dict, inputs, seed) -> None:
    write_manifest(out, command, config, [p for p in inputs if p], seed, __version__)


# ---------------------------------------------------------------------------
# Command handlers
# ---------------------------------------------------------------------------

def cmd_simulate(config: dict, args, out: Path) -> None:
    sim = _require(config, "simulate")
    kind = sim.get("kind")
    seed = args.seed if args.seed is not None else int(sim.get("seed", 0))
    rng = np.random.default_rng(seed)
    grid = _build_grid(config)
    inputs = []
    truth: dict = {"kind": kind, "seed": seed}

    if kind in ("nhpp", "lgcp"):
        cov_path = config.get("data", {}).get("covariates")
        if cov_path:
            table = read_covariates_csv(cov_path)
            inputs.append(cov_path)
        else:
            n_cov = int(sim.get("n_covariates", 0))
            names = tuple(f"x{i + 1}" for i in range(n_cov))
            values = rng.standard_normal((grid.n_cells, n_cov))
            table = CovariateTable(names=names, values=values) if n_cov else None
            if table is not None:
                write_covariates_csv(out / "covariates.csv", table)
        if table is not None:
            table = standardize_covariates(table)
            X = table.design_matrix(None, intercept=True)
        else:
            X = np.ones((grid.n_cells, 1))
        beta = sim.get("beta")
        if beta is None:
            expected = float(sim.get("n_expected", 1000.0))
            beta = [math.log(expected)] + [0.0] * (X.shape[1] - 1)
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (X.shape[1],):
            raise ConfigError(f"simulate.beta needs {X.shape[1]} entries, got {beta.size}")
        gp = None
        if kind == "lgcp":
            gp = CovarianceModel(
                "exponential", sigma2=float(sim.get("sigma2", 1.0)), phi=float(sim.get("phi", 2.0))
            )
            truth.update({"sigma2": gp.sigma2, "phi": gp.phi})
        pattern = simulate_lgcp(grid, X, beta, rng, gp=gp)
        write_points_csv(out / "points.csv", pattern)
        truth.update({"beta": beta.tolist(), "n": len(pattern)})
    elif kind == "recoveries":
        expected = float(sim.get("n_expected", 1000.0))
        thefts = simulate_lgcp(grid, np.ones((grid.n_cells, 1)), [math.log(expected)], rng)
        kernel_kind = sim.get("kernel", "constant")
        if kernel_kind == "constant":
            kernel = KernelConstant(
                sigma1=float(sim.get("sigma1", 1.0)),
                sigma2=float(sim.get("sigma2", 1.0)),
                rho=float(sim.get("rho", 0.0)),
            )
            truth.update({"sigma1": kernel.sigma1, "sigma2": kernel.sigma2, "rho": kernel.rho})
        elif kernel_kind == "spatial":
            kernel = draw_psi_field(
                grid.rep_points,
                phi_star=float(sim.get("phi_star", 1.0)),
                sigma=float(sim.get("sigma", 1.0)),
                rng=rng,
            )
            truth.update({"sigma": kernel.sigma, "phi_star": kernel.phi_star})
        else:
            raise ConfigError(f"unknown simulate.kernel {kernel_kind!r}")
        pairs = simulate_recoveries(thefts, kernel, float(sim.get("recovery_prob", 1.0)), rng)
        write_pairs_csv(out / "pairs.csv", pairs)
        truth.update({"n": pairs.n, "m": pairs.m, "kernel": kernel_kind})
    elif kind == "joint":
        spec_truth = JointTruth(
            beta0=float(sim.get("beta0", math.log(1000.0))),
            eta=float(sim.get("eta", 0.0)),
            sigma_ker=float(sim.get("sigma_ker", 1.0)),
            phi_star=float(sim.get("phi_star", 1.0)),
            sigma2_R=float(sim.get("sigma2_R", 1.0)),
            phi_R=float(sim.get("phi_R", 2.0)),
            sigma2_T=float(sim.get("sigma2_T", 1.0)),
            phi_T=float(sim.get("phi_T", 2.0)),
        )
        target_m = sim.get("target_m")
        pairs, realized = simulate_joint(
            grid, spec_truth, rng, target_m=None if target_m is None else int(target_m)
        )
        write_pairs_csv(out / "pairs.csv", pairs)
        truth.update(
            {
                "beta0": realized.beta0,
                "eta": realized.eta,
                "sigma_ker": realized.sigma_ker,
                "phi_star": realized.phi_star,
                "m": pairs.m,
            }
        )
    else:
        raise ConfigError(f"unknown simulate.kind {kind!r}")
    write_json(out / "truth.json", truth)
    _finish(out, "simulate", config, inputs, seed)


def cmd_select_covariates(config: dict, args, out: Path) -> None:
    from .selection import stepwise_bic

    grid = _build_grid(config)
    points_path = _require(config, "data", "points")
    cov_path = _require(config, "data", "covariates")
    pattern = read_points_csv(points_path)
    table = read_covariates_csv(cov_path)
    if config.get("model", {}).get("standardize", True):
        table = standardize_covariates(table)
    counts = assign_counts(pattern, grid)
    result = stepwise_bic(counts, table, np.log(grid.std_areas))
    write_json(
        out / "selection.json",
        {
            "selected": list(result.selected),
            "bic": result.bic,
            "converged": result.fit.converged,
            "trace": [[move, col, bic] for move, col, bic in result.trace],
        },
    )
    seed = args.seed if args.seed is not None else 0
    _finish(out, "select-covariates", config, [points_path, cov_path], seed)


def cmd_fit_theft(config: dict, args, out: Path) -> None:
    grid = _build_grid(config)
    points_path = _require(config, "data", "points")
    pattern = read_points_csv(points_path)
    _, X, _ = _covariate_design(config, grid)
    kind = config.get("model", {}).get("kind", "lgcp")
    if kind not in ("nhpp", "lgcp"):
        raise ConfigError(f"model.kind must be 'nhpp' or 'lgcp', got {kind!r}")
    mcmc = _mcmc_config(config, args)
    priors = _intensity_priors(config)
    fit = fit_lgcp if kind == "lgcp" else fit_nhpp
    chain = fit(pattern, grid, X, priors=priors or None, mcmc=mcmc)
    write_chain_jsonl(out / "chain.jsonl", chain)
    write_summary_json(out / "summary.json", chain)
    write_surface_csv(out / "surface.csv", posterior_intensity(chain, grid, X))
    inputs = [points_path, config.get("data", {}).get("covariates")]
    _finish(out, "fit-theft", config, inputs, mcmc.seed)


def cmd_validate(config: dict, args, out: Path) -> None:
    import csv as _csv

    grid = _build_grid(config)
    points_path = _require(config, "data", "points")
    pattern = read_points_csv(points_path)
    _, X, _ = _covariate_design(config, grid)
    val = config.get("validate", {})
    mcmc = _mcmc_config(config, args)
    report, chain = run_validation(
        pattern,
        grid,
        X,
        kind=config.get("model", {}).get("kind", "lgcp"),
        p=float(val.get("p", 0.5)),
        mcmc=mcmc,
        nominal=float(val.get("nominal", 0.90)),
        w_list=tuple(val.get("w", list(range(1, 11)))),
        regions_per_w=int(val.get("regions_per_w", 100)),
        seed=mcmc.seed,
    )
    write_json(out / "report.json", report.as_dict())
    with (out / "scores.csv").open("w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["w", "pic", "mean_rps", "regions"])
        for row in report.rows:
            writer.writerow([row["w"], repr(row["pic"]), repr(row["mean_rps"]), row["regions"]])
    write_summary_json(out / "summary.json", chain)
    inputs = [points_path, config.get("data", {}).get("covariates")]
    _finish(out, "validate", config, inputs, mcmc.seed)


def cmd_fit_conditional(config: dict, args, out: Path) -> None:
    pairs_path = _require(config, "data", "pairs")
    pairs = read_pairs_csv(pairs_path)
    cond = config.get("conditional", {})
    kernel = cond.get("kernel", "constant")
    mcmc = _mcmc_config(config, args)
    meta: dict = {"kernel": kernel}
    if kernel == "constant":
        chain = fit_conditional_constant(pairs, mcmc=mcmc)
    elif kernel == "spatial":
        phi_star = float(cond.get("phi_star", 1.0))
        anchor_mode = cond.get("anchors", "points")
        if anchor_mode == "grid":
            grid = _build_grid(config)
            chain = fit_conditional_spatial(pairs, phi_star, anchors=grid, mcmc=mcmc)
            anchor_pts = grid.rep_points
        elif anchor_mode == "points":
            chain = fit_conditional_spatial(pairs, phi_star, anchors=None, mcmc=mcmc)
            anchor_pts = pairs.complete()[0]
        else:
            raise ConfigError(f"conditional.anchors must be 'points' or 'grid', got {anchor_mode!r}")
        meta.update({"phi_star": phi_star, "anchors": anchor_pts.tolist()})
    else:
        raise ConfigError(f"conditional.kernel must be 'constant' or 'spatial', got {kernel!r}")
    write_chain_jsonl(out / "chain.jsonl", chain)
    write_summary_json(out / "summary.json", chain)
    write_json(out / "kernel.json", meta)
    _finish(out, "fit-conditional", config, [pairs_path], mcmc.seed)


def cmd_predict_recovery(config: dict, args, out: Path) -> None:
    import csv as _csv
    import json as _json

    pred_cfg = _require(config, "predict")
    chain_path = _require(config, "predict", "chain")
    kernel_path = _require(config, "predict", "kernel_meta")
    chain = read_chain_jsonl(chain_path)
    kp = Path(kernel_path)
    if not kp.exists():
        raise MissingInputError(f"kernel metadata not found: {kp}")
    meta = _json.loads(kp.read_text())
    seed = args.seed if args.seed is not None else int(pred_cfg.get("seed", 0))
    rng = np.random.default_rng(seed)

    test_pairs = None
    inputs = [chain_path, kernel_path]
    if "test_pairs" in pred_cfg:
        test_pairs = read_pairs_csv(pred_cfg["test_pairs"])
        test_points = test_pairs.complete()[0]
        inputs.append(pred_cfg["test_pairs"])
    elif "test_points" in pred_cfg:
        test_points = read_points_csv(pred_cfg["test_points"]).points
        inputs.append(pred_cfg["test_points"])
    else:
        raise ConfigError("predict needs test_points or test_pairs")

    max_draws = int(pred_cfg.get("draws", 0))
    if max_draws and chain.n_draws > max_draws:
        chain = chain.thin(max(1, chain.n_draws // max_draws))
    anchors = np.asarray(meta["anchors"], dtype=float) if meta.get("anchors") else None
    prediction = predict_recovery(
        chain, test_points, rng, anchors=anchors, phi_star=meta.get("phi_star")
    )
    with (out / "samples.csv").open("w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["test_id", "draw", "x", "y"])
        for h in range(prediction.n_test):
            for l in range(prediction.n_draws):
                s = prediction.samples[h, l]
                writer.writerow([h, l, repr(float(s[0])), repr(float(s[1]))])
    if test_pairs is not None:
        recs = test_pairs.complete()[1]
        scores = [
            bicrps(prediction.samples[h], recs[h]) for h in range(prediction.n_test)
        ]
        write_json(
            out / "scores.json",
            {"bicrps": scores, "mean_bicrps": float(np.mean(scores)), "n_test": len(scores)},
        )
    grid_n = int(pred_cfg.get("density_grid", 0))
    if grid_n > 0:
        for h in range(prediction.n_test):
            cx, cy = prediction.test_points[h]
            spread = float(np.sqrt(0.5 * prediction.sigmas[h, :, 0, 0].mean()))
            spread = max(spread, float(np.sqrt(0.5 * prediction.sigmas[h, :, 1, 1].mean())))
            hw = 4.0 * spread
            xs = np.linspace(cx - hw, cx + hw, grid_n)
            ys = np.linspace(cy - hw, cy + hw, grid_n)
            gx, gy = np.meshgrid(xs, ys)
            pts = np.column_stack([gx.ravel(), gy.ravel()])
            dens = prediction.density(h, pts)
            with (out / f"density_{h}.csv").open("w", newline="") as fh:
                writer = _csv.writer(fh)
                writer.writerow(["x", "y", "density"])
                for p, d in zip(pts, dens):
                    writer.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(d))])
    _finish(out, "predict-recovery", config, inputs, seed)


def cmd_fit_joint(config: dict, args, out: Path) -> None:
    grid = _build_grid(config)
    pairs_path = _require(config, "data", "pairs")
    pairs = read_pairs_csv(pairs_path)
    joint_cfg = config.get("joint", {})
    spec = JointModelSpec(
        variant=joint_cfg.get("variant", "dep"), phi_star=float(joint_cfg.get("phi_star", 1.0))
    )
    mcmc = _mcmc_config(config, args)
    chain = fit_joint(pairs, grid, spec=spec, mcmc=mcmc)
    write_chain_jsonl(out / "chain.jsonl", chain)
    write_summary_json(out / "summary.json", chain)
    _finish(out, "fit-joint", config, [pairs_path], mcmc.seed)


def cmd_predict_flow(config: dict, args, out: Path) -> None:
    grid = _build_grid(config)
    flow_cfg = _require(config, "flow")
    chain_path = _require(config, "flow", "chain")
    chain = read_chain_jsonl(chain_path)
    origin = flow_cfg.get("origin_cells")
    if not origin:
        raise ConfigError("flow.origin_cells must list at least one cell")
    mode = flow_cfg.get("partition", "quadrants")
    if mode == "quadrants":
        partition = quadrant_partition(grid)
    elif mode == "blocks":
        partition = block_partition(
            grid, int(flow_cfg.get("block_nx", 5)), int(flow_cfg.get("block_ny", 5))
        )
    elif isinstance(mode, list):
        partition = [np.asarray(p, dtype=int) for p in mode]
    else:
        raise ConfigError(f"flow.partition must be 'quadrants', 'blocks', or explicit sets")
    inputs = [chain_path]
    heldout = None
    if "heldout_pairs" in flow_cfg:
        heldout = pair_counts(read_pairs_csv(flow_cfg["heldout_pairs"]), grid)
        inputs.append(flow_cfg["heldout_pairs"])
    summary = flow_from_chain(chain, grid, origin, partition, heldout_counts=heldout)
    write_flow_csv(out / "flow.csv", summary)
    seed = args.seed if args.seed is not None else 0
    _finish(out, "predict-flow", config, inputs, seed)


HANDLERS = {
    "simulate": cmd_simulate,
    "select-covariates": cmd_select_covariates,
    "fit-theft": cmd_fit_theft,
    "validate": cmd_validate,
    "fit-conditional": cmd_fit_conditional,
    "predict-recovery": cmd_predict_recovery,
    "fit-joint": cmd_fit_joint,
    "predict-flow": cmd_predict_flow,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odcox",
        description="Bayesian intensity and origin-destination models for paired point patterns",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        metavar="KEY=VALUE",
        help="override a config entry (dotted keys, TOML literals)",
    )
    parser.add_argument("--seed", type=int, default=None, help="override every configured seed")
    parser.add_argument(
        "--threads", type=int, default=1, help="worker cap (results do not depend on it)"
    )
    parser.add_argument("--out-dir", default="odcox-out", help="artifact directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = apply_overrides(load_config(args.config), args.overrides)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](config, args, out)
    except OdcoxError as exc:
        for category, code in EXIT_CODES:
            if isinstance(exc, category):
                print(f"odcox: {category.__name__}: {exc}", file=sys.stderr)
                return code
        print(f"odcox: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 9
    return 0


if __name__ == "__main__":
    sys.exit(main())
