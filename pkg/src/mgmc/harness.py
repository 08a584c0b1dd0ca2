"""Batch experiments: config parsing, single solves, Monte-Carlo sweeps,
oracle gap reports and post-hoc checks of saved reports.

Config files are JSON documents.  A single-run config looks like::

    {
      "system": {"M": 3, "N": 10, "G": 4, "P_T_dBW": 20, "eps": 1.0},
      "ccp": {"criterion": "MEE"},
      "seed": 0,
      "channel_seed": 0
    }

``system`` mirrors :class:`SystemConfig` (``P_T`` in Watts, or ``P_T_dBW``),
``ccp`` mirrors :class:`CcpConfig`.  ``seed`` drives the initial-point draws;
``channel_seed`` (default: ``seed``) drives the channel draw, or ``channels``
may hold an inline channel document.

A sweep spec adds ``axis`` (one of ``N``, ``P_T_dBW``, ``M``), ``values``,
``realizations``, ``criteria`` and ``base_seed``; realization ``r`` uses seed
``base_seed + r`` for both channels and initial points.

The environment variables ``MGMC_SEED`` and ``MGMC_OUT`` override the seed
and the output directory.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ccp import CONVERGED, CcpConfig, solve_instance
from .criteria import CRITERIA
from .oracle import TinyInstance, criterion_score, exhaustive_best
from .system import (
    AssignmentState,
    ChannelSet,
    ConfigError,
    SystemConfig,
    dbw_to_watts,
    generate_channels,
    qos_satisfied,
    score,
)

__all__ = [
    "RAW_COLUMNS",
    "AGGREGATE_COLUMNS",
    "METRIC_COLUMNS",
    "RunConfig",
    "ExperimentSpec",
    "load_json",
    "parse_system",
    "parse_run_config",
    "parse_experiment",
    "solve_config",
    "write_solve_outputs",
    "run_sweep",
    "aggregate",
    "rows_to_csv",
    "oracle_report",
    "check_report",
]

SWEEP_AXES = ("N", "P_T_dBW", "M")
METRIC_COLUMNS = ("scheduled_users", "throughput", "consumed_power", "consumed_power_dBW",
                  "mee", "ee", "iterations")
RAW_COLUMNS = ("axis", "value", "criterion", "realization", "seed", "status", "iterations",
               "scheduled_users", "throughput", "consumed_power", "consumed_power_dBW",
               "mee", "ee", "feasible", "error")
AGGREGATE_COLUMNS = (("axis", "value", "criterion", "runs", "failures")
                     + tuple(f"{c}_{s}" for c in METRIC_COLUMNS for s in ("mean", "se"))
                     + ("converged_fraction",))
GAP_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def load_json(path) -> dict:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return d


def _section(d: dict, key: str, path: str) -> dict:
    if key not in d:
        raise ConfigError(f"missing field {path}{key}")
    v = d[key]
    if not isinstance(v, dict):
        raise ConfigError(f"{path}{key} must be an object")
    return v


def parse_system(d: dict, path: str = "system.") -> SystemConfig:
    d = dict(d)
    for key in ("M", "N", "G"):
        if key not in d:
            raise ConfigError(f"missing field {path}{key}")
    if "P_T_dBW" in d:
        if "P_T" in d:
            raise ConfigError(f"give only one of {path}P_T and {path}P_T_dBW")
        d["P_T"] = dbw_to_watts(float(d.pop("P_T_dBW")))
    if "P_T" not in d:
        raise ConfigError(f"missing field {path}P_T")
    try:
        return SystemConfig.from_dict(d)
    except ConfigError as e:
        raise ConfigError(f"{path.rstrip('.')}: {e}") from None
    except TypeError as e:
        raise ConfigError(f"{path.rstrip('.')}: {e}") from None


def _parse_ccp(d: dict | None, path: str = "ccp.") -> CcpConfig:
    try:
        return CcpConfig.from_dict(d)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{path.rstrip('.')}: {e}") from None


def _env_seed(seed):
    v = os.environ.get("MGMC_SEED")
    if v is None:
        return seed
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"MGMC_SEED must be an integer, got {v!r}") from None


def _int_field(d: dict, key: str, default=None) -> int:
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key} must be an integer")
    return v


@dataclass
class RunConfig:
    system: SystemConfig
    ccp: CcpConfig
    seed: int
    channels: ChannelSet

    def to_dict(self) -> dict:
        return {"system": self.system.to_dict(), "ccp": self.ccp.to_dict(), "seed": self.seed,
                "channels": self.channels.to_dict()}


def parse_run_config(d: dict) -> RunConfig:
    system = parse_system(_section(d, "system", ""))
    ccp = _parse_ccp(d.get("ccp"))
    seed = _env_seed(_int_field(d, "seed", 0))
    if "channels" in d:
        try:
            ch = ChannelSet.from_dict(d["channels"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"channels: {e}") from None
        ch.check(system)
    else:
        ch = generate_channels(system, _int_field(d, "channel_seed", seed))
    return RunConfig(system, ccp, seed, ch)


@dataclass
class ExperimentSpec:
    system: dict
    axis: str
    values: list
    realizations: int
    criteria: list[str]
    base_seed: int = 0
    ccp: dict = field(default_factory=dict)

    def config_for(self, value) -> SystemConfig:
        d = dict(self.system)
        if self.axis == "P_T_dBW":
            d.pop("P_T", None)
            d["P_T_dBW"] = value
        else:
            d[self.axis] = value
            if "interest_mask" in d:
                raise ConfigError("sweeps over N or M need the default interest mask")
        return parse_system(d)


def parse_experiment(d: dict) -> ExperimentSpec:
    system = _section(d, "system", "")
    axis = d.get("axis")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = d.get("values")
    if not isinstance(values, list) or not values:
        raise ConfigError("values must be a nonempty list")
    R = _int_field(d, "realizations", 1)
    if R < 1:
        raise ConfigError("realizations must be >= 1")
    crits = [str(c).upper() for c in d.get("criteria", list(CRITERIA))]
    bad = [c for c in crits if c not in CRITERIA]
    if bad or not crits:
        raise ConfigError(f"criteria must be drawn from {CRITERIA}")
    ccp = d.get("ccp", {})
    if "criterion" in ccp:
        raise ConfigError("ccp.criterion is set per row through criteria")
    spec = ExperimentSpec(dict(system), axis, list(values), R, crits,
                          _env_seed(_int_field(d, "base_seed", 0)), dict(ccp))
    for v in spec.values:
        spec.config_for(v)
    for c in crits:
        _parse_ccp({**spec.ccp, "criterion": c})
    return spec


# ---------------------------------------------------------------------------
# single solve
# ---------------------------------------------------------------------------

def solve_config(rc: RunConfig, dump_dir=None):
    return solve_instance(rc.system, rc.channels.H, rc.ccp, seed=rc.seed, dump_dir=dump_dir)


def write_solve_outputs(rc: RunConfig, report, out_dir) -> tuple[Path, Path]:
    """``report.json`` (config, channels and result; no timings) and ``trace.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"config": rc.to_dict(), "report": report.to_dict()}
    rp = out / "report.json"
    rp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    tp = out / "trace.csv"
    tp.write_text(report.trace_csv())
    return rp, tp


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _sweep_job(args):
    system_d, axis, value, criterion, r, seed, ccp_d = args
    row = {"axis": axis, "value": value, "criterion": criterion, "realization": r, "seed": seed}
    try:
        spec = ExperimentSpec(system_d, axis, [value], 1, [criterion])
        cfg = spec.config_for(value)
        ccp = CcpConfig.from_dict({**ccp_d, "criterion": criterion})
        H = generate_channels(cfg, seed).H
        rep = solve_instance(cfg, H, ccp, seed=seed)
        m = rep.metrics
        row.update(status=rep.status, iterations=rep.iterations, scheduled_users=m.scheduled_users,
                   throughput=m.throughput, consumed_power=m.consumed_power,
                   consumed_power_dBW=10.0 * math.log10(m.consumed_power), mee=m.mee, ee=m.ee,
                   feasible=int(rep.verdict.feasible), error="")
    except Exception as e:  # record-and-continue
        row.update(status="Error", error=f"{type(e).__name__}: {e}")
    return row


def run_sweep(spec: ExperimentSpec, workers: int = 1) -> tuple[list[dict], list[dict]]:
    """Run every (value, criterion, realization) cell; returns raw and aggregate rows."""
    jobs = [(spec.system, spec.axis, v, c, r, spec.base_seed + r, spec.ccp)
            for v in spec.values for c in spec.criteria for r in range(spec.realizations)]
    if workers <= 1:
        raw = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_sweep_job, jobs))
    return raw, aggregate(raw)


def _mean_se(x: list[float]) -> tuple[float, float]:
    if not x:
        return math.nan, math.nan
    a = np.asarray(x, dtype=float)
    se = float(np.std(a, ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return float(np.mean(a)), se


def aggregate(raw: list[dict]) -> list[dict]:
    """Mean and standard error per (axis value, criterion) over successful runs."""
    cells: dict = {}
    for row in raw:
        cells.setdefault((row["axis"], _num(row["value"]), row["criterion"]), []).append(row)
    out = []
    for (axis, value, crit), rows in cells.items():
        ok = [r for r in rows if not r.get("error")]
        agg = {"axis": axis, "value": value, "criterion": crit, "runs": len(rows),
               "failures": len(rows) - len(ok)}
        for c in METRIC_COLUMNS:
            agg[f"{c}_mean"], agg[f"{c}_se"] = _mean_se([float(r[c]) for r in ok])
        agg["converged_fraction"] = sum(r["status"] == CONVERGED for r in rows) / len(rows)
        out.append(agg)
    return out


def _num(v):
    if isinstance(v, str):
        f = float(v)
        return int(f) if f.is_integer() and "." not in v and "e" not in v.lower() else f
    return v


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def rows_to_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def read_raw_csv(path) -> list[dict]:
    """Raw rows back from ``raw.csv`` with numeric fields restored."""
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            r = dict(r)
            r["value"] = _num(r["value"])
            r["realization"] = int(r["realization"])
            r["seed"] = int(r["seed"])
            if not r["error"]:
                for c in ("iterations", "scheduled_users", "feasible"):
                    r[c] = int(r[c])
                for c in ("throughput", "consumed_power", "consumed_power_dBW", "mee", "ee"):
                    r[c] = float(r[c])
            rows.append(r)
    return rows


# ---------------------------------------------------------------------------
# oracle gaps
# ---------------------------------------------------------------------------

def oracle_report(rc: RunConfig, criteria=CRITERIA, restarts: int = 8) -> dict:
    """Heuristic against exhaustive search for each criterion on a tiny instance."""
    try:
        inst = TinyInstance(rc.system, rc.channels)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    out = {"config": rc.to_dict(), "criteria": {}}
    for c in criteria:
        ccp = CcpConfig.from_dict({**rc.ccp.to_dict(), "criterion": c})
        rep = solve_instance(rc.system, rc.channels.H, ccp, seed=rc.seed)
        orc = exhaustive_best(inst, c, restarts, incumbents=[(rep.assignment, rep.W)], seed=rc.seed)
        h = criterion_score(c, rep.metrics)
        o = criterion_score(c, orc.metrics)
        gap = 0.0 if o == h else (o - h) / max(o, GAP_FLOOR)
        out["criteria"][c] = {"heuristic": h, "oracle": o, "gap": gap, "status": rep.status,
                              "heuristic_metrics": rep.metrics.to_dict(),
                              "heuristic_assignment": rep.assignment.to_dict(),
                              "oracle_metrics": orc.to_dict(),
                              "assignments": orc.evaluated, "infeasible_assignments": orc.infeasible}
    return out


# ---------------------------------------------------------------------------
# report checks
# ---------------------------------------------------------------------------

def check_report(doc: dict, tol: float = 1e-9) -> list[str]:
    """Invariants of a saved ``report.json``; returns the list of failures."""
    try:
        system = parse_system(doc["config"]["system"], "config.system.")
        ch = ChannelSet.from_dict(doc["config"]["channels"])
        rep = doc["report"]
        a = AssignmentState.from_dict(rep["assignment"])
        W = np.asarray(rep["W_re"], dtype=float) + 1j * np.asarray(rep["W_im"], dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"malformed report: {e}") from None
    bad = []
    n = rep["iterations"]
    for name, tr in rep["traces"].items():
        if len(tr) != n:
            bad.append(f"trace {name} has length {len(tr)}, expected {n}")
    bad += [f"structure: {p}" for p in a.structural_violations(system)]
    if np.sum(np.abs(W) ** 2) > system.P_T * (1 + tol):
        bad.append("total power exceeds P_T")
    if not bad:
        ok, viol = qos_satisfied(system, ch.H, W, a)
        if not ok:
            bad.append(f"QoS violated for {viol}")
        m = score(system, ch.H, W, a).to_dict()
        for k, v in rep["metrics"].items():
            ref = m[k]
            if np.any(np.abs(np.asarray(ref, dtype=float) - np.asarray(v, dtype=float))
                      > tol * (1 + np.abs(np.asarray(ref, dtype=float)))):
                bad.append(f"metric {k} does not match a re-evaluation")
    if rep["status"] == CONVERGED and not rep["verdict"]["feasible"]:
        bad.append("converged run without a feasible verdict")
    return bad
