import json
import math

import numpy as np
import pytest

from odcox import (
    ConfigError,
    CovariateTable,
    DataError,
    MissingInputError,
    PairedPattern,
    PointPattern,
    PosteriorChain,
)
from odcox.io import (
    apply_overrides,
    load_config,
    read_chain_jsonl,
    read_covariates_csv,
    read_pairs_csv,
    read_points_csv,
    write_chain_jsonl,
    write_covariates_csv,
    write_json,
    write_manifest,
    write_pairs_csv,
    write_points_csv,
)


def test_points_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pattern = PointPattern(rng.random((20, 2)), cell_ids=np.arange(20) % 4)
    path = tmp_path / "pts.csv"
    write_points_csv(path, pattern)
    back = read_points_csv(path)
    assert np.array_equal(back.points, pattern.points)
    assert np.array_equal(back.cell_ids, pattern.cell_ids)


def test_points_write_is_byte_stable(tmp_path):
    pattern = PointPattern(np.array([[0.1, 0.2], [1 / 3, 2 / 3]]))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_points_csv(a, pattern)
    write_points_csv(b, pattern)
    assert a.read_bytes() == b.read_bytes()
    # full precision survives the round trip
    assert read_points_csv(a).points[1, 0] == 1 / 3


def test_points_missing_file():
    with pytest.raises(MissingInputError):
        read_points_csv("no-such-file.csv")


def test_points_malformed_row_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,x,y\n0,0.1,0.2\n1,oops,0.3\n")
    with pytest.raises(DataError, match="line 3"):
        read_points_csv(path)


def test_points_missing_column(tmp_path):
    path = tmp_path / "cols.csv"
    path.write_text("id,x\n0,0.1\n")
    with pytest.raises(DataError, match="y"):
        read_points_csv(path)


def test_pairs_round_trip_with_missing_marks(tmp_path):
    thefts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]])
    recs = np.array([[0.5, 0.5], [np.nan, np.nan], [2.5, 0.0]])
    pairs = PairedPattern(thefts, recs)
    path = tmp_path / "pairs.csv"
    write_pairs_csv(path, pairs)
    back = read_pairs_csv(path)
    assert back.m == 2
    assert np.array_equal(back.thefts, thefts)
    assert np.allclose(back.recoveries[back.recovered], recs[[0, 2]])
    raw = path.read_text().splitlines()
    assert raw[2].endswith(",,")  # unrecovered rows leave recovery fields empty


def test_pairs_one_sided_missing_is_error(tmp_path):
    path = tmp_path / "half.csv"
    path.write_text("id,theft_x,theft_y,recovery_x,recovery_y\n0,0.0,0.0,1.0,\n")
    with pytest.raises(DataError, match="line 2"):
        read_pairs_csv(path)


def test_covariates_round_trip_any_row_order(tmp_path):
    table = CovariateTable(names=("pop", "inc"), values=np.arange(8.0).reshape(4, 2))
    path = tmp_path / "cov.csv"
    write_covariates_csv(path, table)
    # shuffle data rows; the reader sorts by cell id
    lines = path.read_text().splitlines()
    shuffled = [lines[0]] + lines[1:][::-1]
    path.write_text("\n".join(shuffled) + "\n")
    back = read_covariates_csv(path)
    assert back.names == ("pop", "inc")
    assert np.array_equal(back.values, table.values)


def test_covariates_require_dense_ids(tmp_path):
    path = tmp_path / "gap.csv"
    path.write_text("cell_id,a\n0,1.0\n2,2.0\n")
    with pytest.raises(DataError):
        read_covariates_csv(path)


def test_chain_jsonl_round_trip(tmp_path):
    draws = {
        "beta": np.random.default_rng(1).normal(size=(30, 2)),
        "sigma2": np.random.default_rng(2).random(30) + 0.1,
    }
    chain = PosteriorChain(draws=draws, burn_in=10, seed=9, acceptance={"beta": 0.3})
    path = tmp_path / "chain.jsonl"
    write_chain_jsonl(path, chain)
    back = read_chain_jsonl(path)
    assert back.burn_in == 10
    assert back.seed == 9
    assert back.acceptance == {"beta": 0.3}
    assert np.array_equal(back.get("beta"), chain.get("beta"))
    assert np.array_equal(back.get("sigma2"), chain.get("sigma2"))
    meta = json.loads(path.read_text().splitlines()[0])
    assert set(meta["meta"]) >= {"burn_in", "seed", "n_draws", "acceptance"}


def test_write_json_handles_special_values(tmp_path):
    path = tmp_path / "x.json"
    write_json(path, {"a": np.float64(1.5), "b": np.array([1, 2]), "c": math.inf})
    data = json.loads(path.read_text())
    assert data == {"a": 1.5, "b": [1, 2], "c": None}


def test_manifest_contents_and_stability(tmp_path):
    src = tmp_path / "input.csv"
    src.write_text("id,x,y\n0,0.5,0.5\n")
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    out1.mkdir()
    out2.mkdir()
    for out in (out1, out2):
        write_manifest(out, "fit-theft", {"mcmc": {"seed": 3}}, [src], 3, "0.1.0")
    a = (out1 / "manifest.json").read_bytes()
    assert a == (out2 / "manifest.json").read_bytes()
    m = json.loads(a)
    assert m["command"] == "fit-theft"
    assert m["seed"] == 3
    assert m["package_version"] == "0.1.0"
    assert len(next(iter(m["inputs"].values()))) == 64  # sha256 hex


def test_load_config_and_overrides(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('[mcmc]\nburn_in = 100\nseed = 1\n\n[model]\nkind = "lgcp"\n')
    config = load_config(path)
    assert config["mcmc"]["burn_in"] == 100
    out = apply_overrides(config, ["mcmc.burn_in=250", 'model.kind="nhpp"', "model.flag=true"])
    assert out["mcmc"]["burn_in"] == 250
    assert out["model"]["kind"] == "nhpp"
    assert out["model"]["flag"] is True
    # the original is untouched
    assert config["mcmc"]["burn_in"] == 100


def test_load_config_rejects_bad_toml(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("imbalanced = [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_override_needs_equals():
    with pytest.raises(ConfigError):
        apply_overrides({}, ["mcmc.burn_in"])
