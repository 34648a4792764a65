"""End-to-end acceptance battery.

Ten fixed-seed correctness properties covering the kernel algebra, the
gridded likelihood, the samplers, parameter recovery at realistic scale,
the validation scores, model selection, and CLI determinism. Each test
prints a single ``[criterion NN] PASS/FAIL`` line with the measured
quantities before asserting, so the battery reads as a checklist.
"""

import json
import math
import time

import numpy as np
from scipy import stats

from odcox import (
    HIGDON_A,
    CovarianceModel,
    CovariateTable,
    JointModelSpec,
    JointTruth,
    KernelConstant,
    McmcConfig,
    PairedPattern,
    PointPattern,
    assign_counts,
    bicrps,
    build_regular_grid,
    chol,
    cond_logdensity,
    cov_matrix,
    draw_psi_field,
    ess_step,
    fit_conditional_constant,
    fit_conditional_spatial,
    fit_joint,
    fit_lgcp,
    fit_nhpp,
    flow_from_chain,
    inefficiency_factor,
    loglik_gridded,
    mvn_sample,
    p_thin,
    pic,
    predict_recovery,
    quadrant_partition,
    random_blocks,
    region_counts,
    rps,
    sigma_from_psi,
    simulate_joint,
    simulate_lgcp,
    simulate_recoveries,
    stepwise_bic,
)
from odcox.cli import main as cli_main


def _report(capfd, num: int, ok: bool, detail: str) -> None:
    with capfd.disabled():
        print(f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {num:02d}: {detail}"


def test_c01_kernel_determinant_identity(capfd):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    want_unit = HIGDON_A**2 / math.pi**2
    worst = 0.0
    for _ in range(1000):
        px, py = rng.normal(scale=2.0, size=2)
        s = math.exp(rng.uniform(-1.5, 1.5))
        mat = sigma_from_psi(px, py, s)
        want = s**4 * want_unit
        worst = max(worst, abs(float(np.linalg.det(mat)) - want) / want)
    dt = time.perf_counter() - t0
    ok = worst < 1e-8 and dt < 1.0
    _report(capfd, 1, ok, f"max relative det error {worst:.2e} over 1000 draws, {dt:.2f}s (< 1s)")


def test_c02_conditional_density_normalizes(capfd):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    nodes, weights = np.polynomial.legendre.leggauss(64)
    origin = np.zeros(2)
    worst = 0.0
    for _ in range(20):
        b = rng.normal(size=(2, 2))
        mat = b @ b.T + 0.05 * np.eye(2)
        vals, vecs = np.linalg.eigh(mat)
        # product Gauss-Legendre rule on a grid aligned with the principal
        # axes (orthogonal change of variables, unit Jacobian) out to 8 sd
        l1, l2 = 8.0 * math.sqrt(vals[0]), 8.0 * math.sqrt(vals[1])
        total = 0.0
        for i in range(64):
            for j in range(64):
                d = vecs @ np.array([nodes[i] * l1, nodes[j] * l2])
                total += weights[i] * l1 * weights[j] * l2 * math.exp(
                    cond_logdensity(d, origin, mat)
                )
        worst = max(worst, abs(total - 1.0))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-4 and dt < 5.0
    _report(capfd, 2, ok, f"max |mass - 1| = {worst:.2e} over 20 random SPD matrices, {dt:.2f}s (< 5s)")


def test_c03_gridded_likelihood_closed_form(capfd):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(200):
        nx, ny = int(rng.integers(2, 25)), int(rng.integers(2, 25))
        k = nx * ny
        grid = build_regular_grid((0.0, float(rng.uniform(1, 20)), 0.0, float(rng.uniform(1, 20))), nx, ny)
        b0 = float(rng.uniform(-1.0, 3.0))
        n = int(rng.integers(0, 500))
        counts = rng.multinomial(n, np.full(k, 1.0 / k))
        got = loglik_gridded([b0], np.zeros(k), counts, grid, np.ones((k, 1)))
        worst = max(worst, abs(got - (-math.exp(b0) + n * b0)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 1.0
    _report(capfd, 3, ok, f"max |error| = {worst:.2e} over 200 random (beta0, n, K), {dt:.2f}s (< 1s)")


def test_c04_elliptical_slice_correctness(capfd):
    t0 = time.perf_counter()
    # conjugate check: theta ~ N(0,1), y | theta ~ N(theta, 0.25), y = 0.7
    y, s = 0.7, 0.5
    post_var = 1.0 / (1.0 + 1.0 / s**2)
    post_mean = post_var * y / s**2
    fac = chol(np.array([[1.0]]))
    rng = np.random.default_rng(4)
    z = np.zeros(1)
    draws = np.empty(100_000)
    for i in range(draws.size):
        z = ess_step(z, fac, lambda v: -0.5 * ((y - v[0]) / s) ** 2, rng)
        draws[i] = z[0]
    iff = inefficiency_factor(draws)
    se_mean = math.sqrt(post_var * iff / draws.size)
    se_var = math.sqrt(2.0 * post_var**2 * iff / draws.size)
    z_mean = abs(draws.mean() - post_mean) / se_mean
    z_var = abs(draws.var() - post_var) / se_var

    # with a flat likelihood the sampler must leave the prior invariant
    pts = np.random.default_rng(1).uniform(0, 5, size=(10, 2))
    cov = cov_matrix(CovarianceModel("exponential", phi=1.5), pts)
    fac10 = chol(cov)
    sds = np.sqrt(np.diag(cov))
    rng = np.random.default_rng(11)
    field = np.zeros(10)
    keep = np.empty((20_000, 10))
    for i in range(keep.shape[0]):
        field = ess_step(field, fac10, lambda v: 0.0, rng)
        keep[i] = field
    pvals = [stats.kstest(keep[::10, j] / sds[j], "norm").pvalue for j in range(10)]
    dt = time.perf_counter() - t0
    ok = z_mean <= 3.0 and z_var <= 3.0 and min(pvals) >= 0.01 and dt < 60.0
    _report(
        capfd,
        4,
        ok,
        f"conjugate |z| mean {z_mean:.2f} var {z_var:.2f} (<= 3), "
        f"prior-invariance min KS p {min(pvals):.3f} (>= 0.01), {dt:.1f}s (< 60s)",
    )


def test_c05_intensity_model_recovery(capfd):
    t0 = time.perf_counter()
    grid = build_regular_grid((0.0, 10.0, 0.0, 10.0), 10, 10)
    gp = CovarianceModel("exponential", sigma2=0.5, phi=1.5)
    factor = chol(cov_matrix(gp, grid.rep_points))
    mcmc = lambda seed: McmcConfig(burn_in=2000, keep=2000, seed=seed)
    covered = 0
    lgcp_wins = 0
    reps = 50
    for rep in range(reps):
        rng = np.random.default_rng(5000 + rep)
        x = rng.normal(size=grid.n_cells)
        X = np.column_stack([np.ones(grid.n_cells), x])
        z = mvn_sample(factor, rng)
        # intercept calibrated so the expected point count is 3000
        b0 = math.log(3000.0) - math.log(float(np.exp(x + z) @ grid.std_areas))
        pattern = simulate_lgcp(grid, X, [b0, 1.0], rng, z=z)
        lg = fit_lgcp(pattern, grid, X, mcmc=mcmc(rep))
        nh = fit_nhpp(pattern, grid, X, mcmc=mcmc(rep))
        lo, hi = lg.interval("beta")[:, 1]
        covered += lo <= 1.0 <= hi
        lgcp_wins += lg.mean("loglik") > nh.mean("loglik")
    dt = time.perf_counter() - t0
    ok = covered >= 0.85 * reps and lgcp_wins >= 0.80 * reps and dt < 1800.0
    _report(
        capfd,
        5,
        ok,
        f"beta CI coverage {covered}/{reps} (>= {int(0.85 * reps)}), "
        f"LGCP loglik wins {lgcp_wins}/{reps} (>= {int(0.80 * reps)}), {dt:.0f}s (< 1800s)",
    )


def test_c06_validation_score_calibration(capfd):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    grid = build_regular_grid((0.0, 10.0, 0.0, 10.0), 10, 10)
    x = rng.normal(size=grid.n_cells)
    X = np.column_stack([np.ones(grid.n_cells), x])
    beta = np.array([math.log(4000.0), 0.6])
    mu_test = 0.5 * np.exp(X @ beta) * grid.std_areas

    # 200 evaluation regions spread over 10 independent patterns, scored
    # against the generating model's own predictive distribution
    obs_parts, pred_parts = [], []
    for _ in range(10):
        pattern = simulate_lgcp(grid, X, beta, rng)
        split = p_thin(pattern, 0.5, rng)
        counts = assign_counts(split.test, grid)
        regions = random_blocks(grid, 20, rng, w=10)
        obs_parts.append(region_counts(counts, regions))
        mu_r = region_counts(mu_test, regions)
        pred_parts.append(rng.poisson(mu_r[None, :], size=(500, 20)))
    coverage = pic(np.concatenate(pred_parts, axis=1), np.concatenate(obs_parts))

    mu_all = region_counts(mu_test, random_blocks(grid, 200, rng, w=10))
    wins = 0
    for _ in range(200):
        mu = mu_all[rng.integers(0, 200)]
        obs = rng.poisson(mu)
        wins += rps(rng.poisson(mu, size=400), obs) <= rps(rng.poisson(1.3 * mu, size=400), obs)
    dt = time.perf_counter() - t0
    ok = 0.83 <= coverage <= 0.97 and wins >= 180 and dt < 600.0
    _report(
        capfd,
        6,
        ok,
        f"PIC {coverage:.3f} (in [0.83, 0.97]), true-model RPS wins {wins}/200 (>= 180), {dt:.0f}s (< 600s)",
    )


def test_c07_conditional_kernel_recovery(capfd):
    t0 = time.perf_counter()
    # constant kernel: posterior within 3 sd of truth on ~1000 pairs
    rng = np.random.default_rng(7)
    grid = build_regular_grid((0.0, 10.0, 0.0, 10.0), 10, 10)
    thefts = simulate_lgcp(grid, np.ones((grid.n_cells, 1)), [math.log(1000.0)], rng)
    pairs = simulate_recoveries(thefts, KernelConstant(0.6, 1.0, 0.4), 1.0, rng)
    chain = fit_conditional_constant(pairs, mcmc=McmcConfig(2000, 2000, seed=7))
    zscores = {
        name: abs(float(chain.mean(name)) - truth) / float(chain.sd(name))
        for name, truth in (("sigma1", 0.6), ("sigma2", 1.0), ("rho", 0.4))
    }

    # spatially varying kernel beats the constant one out of sample
    spatial_wins = 0
    reps = 20
    for rep in range(reps):
        rng = np.random.default_rng(rep)
        g8 = build_regular_grid((0.0, 8.0, 0.0, 8.0), 8, 8)
        thefts = simulate_lgcp(g8, np.ones((g8.n_cells, 1)), [math.log(640.0)], rng)
        field = draw_psi_field(g8.rep_points, phi_star=0.05, sigma=1.0, rng=rng)
        all_pairs = simulate_recoveries(thefts, field, 1.0, rng)
        hold = rng.permutation(all_pairs.n)[:100]
        keep = np.ones(all_pairs.n, bool)
        keep[hold] = False
        train = PairedPattern(all_pairs.thefts[keep], all_pairs.recoveries[keep])
        test_t, test_r = PairedPattern(all_pairs.thefts[hold], all_pairs.recoveries[hold]).complete()
        cc = fit_conditional_constant(train, mcmc=McmcConfig(800, 800, seed=rep))
        sc = fit_conditional_spatial(train, 0.05, anchors=g8, mcmc=McmcConfig(800, 800, seed=rep))
        pred_c = predict_recovery(cc, test_t, np.random.default_rng(rep + 1000))
        pred_s = predict_recovery(
            sc, test_t, np.random.default_rng(rep + 2000), anchors=g8.rep_points, phi_star=0.05
        )
        score_c = np.mean([bicrps(pred_c.samples[h], test_r[h]) for h in range(len(test_t))])
        score_s = np.mean([bicrps(pred_s.samples[h], test_r[h]) for h in range(len(test_t))])
        spatial_wins += score_s < score_c
    dt = time.perf_counter() - t0
    worst_z = max(zscores.values())
    ok = worst_z <= 3.0 and spatial_wins >= 15 and dt < 1800.0
    _report(
        capfd,
        7,
        ok,
        f"constant-kernel |z| sigma1 {zscores['sigma1']:.2f} sigma2 {zscores['sigma2']:.2f} "
        f"rho {zscores['rho']:.2f} (<= 3), spatial held-out wins {spatial_wins}/{reps} (>= 15), "
        f"{dt:.0f}s (< 1800s)",
    )


def test_c08_joint_model_recovery(capfd):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    grid = build_regular_grid((0.0, 10.0, 0.0, 10.0), 10, 10)
    # sigma_ker 0.5 keeps the same eta while making proximity dominate the
    # destination marginal at quadrant scale, so flows are visibly origin-bound
    truth = JointTruth(
        eta=-0.05, sigma_ker=0.5, phi_star=0.5, sigma2_R=0.3, phi_R=0.5, sigma2_T=0.3, phi_T=0.5
    )
    pairs, _ = simulate_joint(grid, truth, rng, target_m=5000)
    dep = fit_joint(
        pairs, grid, JointModelSpec(variant="dep", phi_star=0.5), mcmc=McmcConfig(2000, 2000, seed=8)
    )
    ind = fit_joint(
        pairs, grid, JointModelSpec(variant="ind", phi_star=0.5), mcmc=McmcConfig(2000, 2000, seed=8)
    )
    eta_lo, eta_hi = dep.interval("eta")
    dep_ll, ind_ll = float(dep.mean("loglik")), float(ind.mean("loglik"))

    quads = quadrant_partition(grid)
    theft_counts = assign_counts(PointPattern(pairs.thefts), grid)
    origin = quads[0][np.argsort(theft_counts[quads[0]])[-5:]]
    flow = flow_from_chain(dep.thin(10), grid, origin, quads)
    sums_exact = all(math.fsum(row) == 1.0 for row in flow.proportions)
    concentrated = int(np.argmax(flow.post_mean)) == 0
    dt = time.perf_counter() - t0
    ok = eta_hi < 0.0 and dep_ll > ind_ll and sums_exact and concentrated and dt < 3600.0
    _report(
        capfd,
        8,
        ok,
        f"m={pairs.n}, eta CI [{eta_lo:.3f}, {eta_hi:.3f}] (< 0), "
        f"loglik Dep {dep_ll:.1f} > Ind {ind_ll:.1f}, flow sums exact={sums_exact}, "
        f"origin-quadrant share {flow.post_mean[0]:.3f} is max={concentrated}, {dt:.0f}s (< 3600s)",
    )


def test_c09_stepwise_selection_rates(capfd):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    k = 100
    offset = np.full(k, -math.log(k))
    null_ok = 0
    for _ in range(50):
        table = CovariateTable(("x1", "x2", "x3"), rng.normal(size=(k, 3)))
        counts = rng.poisson(np.exp(math.log(2000.0) + offset))
        null_ok += stepwise_bic(counts, table, offset).selected == ()
    active_ok = 0
    for _ in range(50):
        vals = rng.normal(size=(k, 3))
        table = CovariateTable(("x1", "x2", "x3"), vals)
        counts = rng.poisson(np.exp(math.log(2000.0) + offset + vals[:, 0]))
        active_ok += "x1" in stepwise_bic(counts, table, offset).selected
    dt = time.perf_counter() - t0
    ok = null_ok >= 45 and active_ok >= 48 and dt < 300.0
    _report(
        capfd,
        9,
        ok,
        f"intercept-only under null {null_ok}/50 (>= 45), active covariate kept {active_ok}/50 (>= 48), "
        f"{dt:.1f}s (< 300s)",
    )


GRID_TOML = """
[grid]
bbox = [0.0, 2.0, 0.0, 2.0]
nx = 4
ny = 4
"""


def _cli_pipeline(root):
    """Run every CLI command once under ``root``; return {relpath: bytes}."""
    root.mkdir()

    def write(name, body):
        path = root / name
        path.write_text(body)
        return str(path)

    def run(command, config, out):
        code = cli_main([command, "--config", config, "--out-dir", str(root / out)])
        assert code == 0, f"{command} exited {code}"

    sim = write(
        "sim.toml",
        GRID_TOML
        + """
[simulate]
kind = "lgcp"
n_expected = 250
n_covariates = 1
sigma2 = 0.4
phi = 2.0
seed = 5
""",
    )
    run("simulate", sim, "sim")
    sel = write(
        "sel.toml",
        GRID_TOML + f'\n[data]\npoints = "{root}/sim/points.csv"\ncovariates = "{root}/sim/covariates.csv"\n',
    )
    run("select-covariates", sel, "sel")
    fit = write(
        "fit.toml",
        GRID_TOML
        + f"""
[data]
points = "{root}/sim/points.csv"
covariates = "{root}/sim/covariates.csv"

[model]
kind = "lgcp"

[mcmc]
burn_in = 120
keep = 120
seed = 2
""",
    )
    run("fit-theft", fit, "fit")
    val = write(
        "val.toml",
        GRID_TOML
        + f"""
[data]
points = "{root}/sim/points.csv"

[model]
kind = "nhpp"

[validate]
p = 0.5
w = [1, 2]
regions_per_w = 10
seed = 3

[mcmc]
burn_in = 150
keep = 150
seed = 3
""",
    )
    run("validate", val, "val")
    recsim = write(
        "recsim.toml",
        GRID_TOML
        + """
[simulate]
kind = "recoveries"
n_expected = 150
kernel = "constant"
sigma1 = 0.5
sigma2 = 0.5
rho = 0.1
recovery_prob = 0.8
seed = 9
""",
    )
    run("simulate", recsim, "recsim")
    cond = write(
        "cond.toml",
        GRID_TOML
        + f"""
[data]
pairs = "{root}/recsim/pairs.csv"

[conditional]
kernel = "constant"

[mcmc]
burn_in = 100
keep = 100
seed = 1
""",
    )
    run("fit-conditional", cond, "cond")
    pred = write(
        "pred.toml",
        f"""
[predict]
chain = "{root}/cond/chain.jsonl"
kernel_meta = "{root}/cond/kernel.json"
test_pairs = "{root}/recsim/pairs.csv"
draws = 40
seed = 3
""",
    )
    run("predict-recovery", pred, "pred")
    jsim = write(
        "jsim.toml",
        GRID_TOML
        + """
[simulate]
kind = "joint"
eta = -0.05
target_m = 600
seed = 11
""",
    )
    run("simulate", jsim, "jsim")
    joint = write(
        "joint.toml",
        GRID_TOML
        + f"""
[data]
pairs = "{root}/jsim/pairs.csv"

[joint]
variant = "dep"

[mcmc]
burn_in = 60
keep = 60
seed = 2
""",
    )
    run("fit-joint", joint, "joint")
    flow = write(
        "flow.toml",
        GRID_TOML
        + f"""
[flow]
chain = "{root}/joint/chain.jsonl"
origin_cells = [0]
partition = "quadrants"
heldout_pairs = "{root}/jsim/pairs.csv"
""",
    )
    run("predict-flow", flow, "flow")

    artifacts = {}
    for path in sorted(root.rglob("*")):
        # manifests record absolute input paths, which differ between roots
        if path.is_file() and path.suffix in (".csv", ".json", ".jsonl") and path.name != "manifest.json":
            artifacts[str(path.relative_to(root))] = path.read_bytes()
    return artifacts


def test_c10_cli_determinism(capfd, tmp_path):
    t0 = time.perf_counter()
    first = _cli_pipeline(tmp_path / "run1")
    second = _cli_pipeline(tmp_path / "run2")
    dt = time.perf_counter() - t0
    same_names = sorted(first) == sorted(second)
    diffs = [name for name in first if first[name] != second.get(name)]
    ok = same_names and not diffs and len(first) >= 20 and dt < 120.0
    _report(
        capfd,
        10,
        ok,
        f"{len(first)} artifacts from 8 commands byte-identical across re-runs"
        + (f", differing: {diffs}" if diffs else "")
        + f", {dt:.0f}s (< 120s)",
    )
