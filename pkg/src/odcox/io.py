"""File formats: CSV ingestion with line-accurate errors, chain and report
serialization, run manifests, and TOML run-config handling.

All numeric output goes through Python's shortest round-trip float repr, and
nothing here writes wall-clock timestamps, so re-running a command with the
same inputs and seed reproduces every artifact byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError, DataError, MissingInputError
from .geometry import CovariateTable, PairedPattern, PointPattern
from .intensity import IntensitySurface
from .joint import FlowSummary
from .samplers import PosteriorChain

__all__ = [
    "read_points_csv",
    "write_points_csv",
    "read_covariates_csv",
    "write_covariates_csv",
    "read_pairs_csv",
    "write_pairs_csv",
    "write_chain_jsonl",
    "read_chain_jsonl",
    "write_summary_json",
    "write_surface_csv",
    "write_flow_csv",
    "write_json",
    "write_manifest",
    "load_config",
    "apply_overrides",
]


def _open_rows(path):
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"input file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: file is empty")
    return path, rows


def _parse_float(value: str, path, line: int, column: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise DataError(f"{path}: line {line}: bad value {value!r} for column {column!r}") from None


def read_points_csv(path, region_id: str = "region") -> PointPattern:
    """Read `id,x,y[,cell_id]` rows into a point pattern."""
    path, rows = _open_rows(path)
    header = [h.strip() for h in rows[0]]
    if header[:3] != ["id", "x", "y"]:
        raise DataError(f"{path}: expected header id,x,y[,cell_id], got {','.join(header)}")
    has_cells = len(header) > 3 and header[3] == "cell_id"
    pts, ids = [], []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
        pts.append(
            (_parse_float(row[1], path, line, "x"), _parse_float(row[2], path, line, "y"))
        )
        if has_cells:
            try:
                ids.append(int(row[3]))
            except ValueError:
                raise DataError(f"{path}: line {line}: bad cell_id {row[3]!r}") from None
    return PointPattern(
        np.array(pts, dtype=float).reshape(-1, 2),
        region_id=region_id,
        cell_ids=np.array(ids, dtype=int) if has_cells else None,
    )


def write_points_csv(path, pattern: PointPattern) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        if pattern.cell_ids is not None:
            writer.writerow(["id", "x", "y", "cell_id"])
            for i, (p, c) in enumerate(zip(pattern.points, pattern.cell_ids)):
                writer.writerow([i, repr(float(p[0])), repr(float(p[1])), int(c)])
        else:
            writer.writerow(["id", "x", "y"])
            for i, p in enumerate(pattern.points):
                writer.writerow([i, repr(float(p[0])), repr(float(p[1]))])


def read_covariates_csv(path) -> CovariateTable:
    """Read `cell_id,<names...>`; cell ids must be dense 0..K-1 (any order)."""
    path, rows = _open_rows(path)
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "cell_id" or len(header) < 2:
        raise DataError(f"{path}: expected header cell_id,<name>..., got {','.join(header)}")
    names = header[1:]
    ids, values = [], []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
        try:
            ids.append(int(row[0]))
        except ValueError:
            raise DataError(f"{path}: line {line}: bad cell_id {row[0]!r}") from None
        values.append([_parse_float(v, path, line, names[j]) for j, v in enumerate(row[1:])])
    ids = np.array(ids, dtype=int)
    if sorted(ids) != list(range(len(ids))):
        raise DataError(f"{path}: cell ids must cover 0..{len(ids) - 1} exactly once")
    vals = np.array(values, dtype=float)[np.argsort(ids)]
    return CovariateTable(names=tuple(names), values=vals)


def write_covariates_csv(path, table: CovariateTable) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", *table.names])
        for i, row in enumerate(table.values):
            writer.writerow([i, *[repr(float(v)) for v in row]])


def read_pairs_csv(path, region_id: str = "region") -> PairedPattern:
    """Read `id,theft_x,theft_y,recovery_x,recovery_y`; empty recovery = unrecovered."""
    path, rows = _open_rows(path)
    header = [h.strip() for h in rows[0]]
    expected = ["id", "theft_x", "theft_y", "recovery_x", "recovery_y"]
    if header != expected:
        raise DataError(f"{path}: expected header {','.join(expected)}, got {','.join(header)}")
    thefts, recs = [], []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != 5:
            raise DataError(f"{path}: line {line}: expected 5 fields, got {len(row)}")
        thefts.append(
            (
                _parse_float(row[1], path, line, "theft_x"),
                _parse_float(row[2], path, line, "theft_y"),
            )
        )
        rx, ry = row[3].strip(), row[4].strip()
        if rx == "" and ry == "":
            recs.append((math.nan, math.nan))
        elif rx == "" or ry == "":
            raise DataError(f"{path}: line {line}: recovery coordinates must both be set or both empty")
        else:
            recs.append(
                (
                    _parse_float(rx, path, line, "recovery_x"),
                    _parse_float(ry, path, line, "recovery_y"),
                )
            )
    return PairedPattern(
        thefts=np.array(thefts, dtype=float).reshape(-1, 2),
        recoveries=np.array(recs, dtype=float).reshape(-1, 2),
        region_id=region_id,
    )


def write_pairs_csv(path, pairs: PairedPattern) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "theft_x", "theft_y", "recovery_x", "recovery_y"])
        for i, (t, r) in enumerate(zip(pairs.thefts, pairs.recoveries)):
            rec = ["", ""] if math.isnan(r[0]) else [repr(float(r[0])), repr(float(r[1]))]
            writer.writerow([i, repr(float(t[0])), repr(float(t[1])), *rec])


# ---------------------------------------------------------------------------
# Chains, summaries, reports
# ---------------------------------------------------------------------------

def _jsonable(value):
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_json(path, payload: dict) -> None:
    with Path(path).open("w") as fh:
        json.dump(_jsonable(payload), fh, indent=2)
        fh.write("\n")


def write_chain_jsonl(path, chain: PosteriorChain) -> None:
    """One meta line, then one record per kept draw."""
    with Path(path).open("w") as fh:
        meta = {
            "meta": {
                "burn_in": chain.burn_in,
                "seed": chain.seed,
                "n_draws": chain.n_draws,
                "acceptance": _jsonable(chain.acceptance),
            }
        }
        fh.write(json.dumps(meta) + "\n")
        for i in range(chain.n_draws):
            rec = {"iter": i}
            rec.update({k: _jsonable(v) for k, v in chain.record(i).items()})
            fh.write(json.dumps(rec) + "\n")


def read_chain_jsonl(path) -> PosteriorChain:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"chain file not found: {path}")
    with path.open() as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise DataError(f"{path}: empty chain file")
    head = json.loads(lines[0])
    if "meta" not in head:
        raise DataError(f"{path}: first line must be the chain meta record")
    meta = head["meta"]
    draws: dict[str, list] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        rec = json.loads(line)
        rec.pop("iter", None)
        for k, v in rec.items():
            draws.setdefault(k, []).append(v)
    if len({len(v) for v in draws.values()} or {0}) > 1:
        raise DataError(f"{path}: draws carry inconsistent parameter sets")
    return PosteriorChain(
        draws={k: np.asarray(v, dtype=float) for k, v in draws.items()},
        burn_in=int(meta.get("burn_in", 0)),
        seed=int(meta.get("seed", 0)),
        acceptance={k: float(v) for k, v in (meta.get("acceptance") or {}).items()},
    )


def write_summary_json(path, chain: PosteriorChain) -> None:
    write_json(path, chain.summary())


def write_surface_csv(path, surface: IntensitySurface) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", "mean", "sd", "lo95", "hi95"])
        for i in range(surface.n_cells):
            writer.writerow(
                [
                    i,
                    repr(float(surface.mean[i])),
                    repr(float(surface.sd[i])),
                    repr(float(surface.lo95[i])),
                    repr(float(surface.hi95[i])),
                ]
            )


def write_flow_csv(path, flow: FlowSummary) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["partition_id", "post_mean", "post_lo95", "post_hi95", "heldout_count_prop"])
        for i in range(len(flow.post_mean)):
            held = "" if flow.heldout is None else repr(float(flow.heldout[i]))
            writer.writerow(
                [
                    i,
                    repr(float(flow.post_mean[i])),
                    repr(float(flow.post_lo95[i])),
                    repr(float(flow.post_hi95[i])),
                    held,
                ]
            )


def write_manifest(out_dir, command: str, config: dict, inputs, seed, version: str) -> None:
    """Record what produced the artifacts in out_dir (no timestamps)."""
    digest = {}
    for p in inputs:
        p = Path(p)
        digest[str(p)] = hashlib.sha256(p.read_bytes()).hexdigest()
    write_json(
        Path(out_dir) / "manifest.json",
        {
            "command": command,
            "seed": seed,
            "package_version": version,
            "inputs": digest,
            "config": config,
        },
    )


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def apply_overrides(config: dict, overrides) -> dict:
    """Apply `--set a.b=value` pairs; values parse as TOML literals."""
    out = json.loads(json.dumps(config))  # deep copy of plain data
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw
        node = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-table entry")
        node[parts[-1]] = value
    return out
