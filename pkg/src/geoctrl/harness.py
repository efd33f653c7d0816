"""Seeded experiment harness: config -> CSV cells -> summary -> analysis.

A config document is a versioned JSON object; unknown keys are rejected
so typos fail fast. Every (controller, horizon, seed) cell runs
independently (optionally in a process pool), writes one per-step CSV,
and the aggregator writes a summary CSV plus a JSON run record carrying
the config hash, per-cell metadata, and epoch audits for replay and
inspection. Identical config => identical CSV bytes, wall-clock columns
aside.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import math
import os
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bandit import BanditConfig, ZeroOrderOptimizer, run_bandit
from .controllers import (GeometricConfig, WarmupCaseConfig, compute_regret,
                          comparator_minimum, run_etc_baseline, run_geometric,
                          run_warmup_case)
from .costs import make_cost
from .gpc import GpcConfig, run_gpc_baseline
from .lds import LinearSystem, random_system
from .policy import PolicyClassSpec
from .rng import BOOTSTRAP, substream

SCHEMA_VERSION = 1

CONTROLLER_NAMES = ("geometric", "warmup-case", "etc", "bandit", "gpc")


class ConfigError(ValueError):
    """Invalid experiment configuration; message carries the JSON path."""


# ---------------------------------------------------------------------------
# Config validation
# ---------------------------------------------------------------------------

_TOP_KEYS = {"version", "name", "system", "cost", "controller", "controllers",
             "horizons", "seeds", "output_dir", "budget_s", "comparator"}
_SYSTEM_KEYS = {"kind", "A", "B", "d_x", "d_u", "kappa", "gamma", "beta",
                "seed", "unstable"}
_COST_KEYS = {"family", "delta", "radius", "u_weight", "target"}
_COMPARATOR_KEYS = {"n_samples", "seed"}


def _reject_unknown(doc: dict, allowed: set, path: str) -> None:
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown key {path}.{key}")


def validate_config(doc: dict) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    _reject_unknown(doc, _TOP_KEYS, "$")
    if doc.get("version") != SCHEMA_VERSION:
        raise ConfigError(f"$.version must be {SCHEMA_VERSION}")
    for req in ("system", "cost", "horizons", "seeds"):
        if req not in doc:
            raise ConfigError(f"$.{req} is required")
    if ("controller" in doc) == ("controllers" in doc):
        raise ConfigError("exactly one of $.controller / $.controllers")

    sys_doc = doc["system"]
    _reject_unknown(sys_doc, _SYSTEM_KEYS, "$.system")
    kind = sys_doc.get("kind", "explicit")
    if kind not in ("explicit", "random"):
        raise ConfigError("$.system.kind must be explicit|random")
    if kind == "explicit":
        for req in ("A", "B", "d_x", "d_u", "kappa", "gamma", "beta"):
            if req not in sys_doc:
                raise ConfigError(f"$.system.{req} is required for explicit")
    else:
        for req in ("d_x", "d_u", "kappa", "gamma", "beta", "seed"):
            if req not in sys_doc:
                raise ConfigError(f"$.system.{req} is required for random")

    cost_doc = doc["cost"]
    _reject_unknown(cost_doc, _COST_KEYS, "$.cost")
    if "family" not in cost_doc:
        raise ConfigError("$.cost.family is required")

    controllers = doc.get("controllers", None)
    if controllers is None:
        controllers = [doc["controller"]]
    if not isinstance(controllers, list) or not controllers:
        raise ConfigError("$.controllers must be a nonempty list")
    for i, c in enumerate(controllers):
        if not isinstance(c, dict) or "name" not in c:
            raise ConfigError(f"$.controllers[{i}].name is required")
        if c["name"] not in CONTROLLER_NAMES:
            raise ConfigError(f"$.controllers[{i}].name must be one of "
                              f"{CONTROLLER_NAMES}")
    if not isinstance(doc["horizons"], list):
        raise ConfigError("$.horizons must be a list of integers")
    if not isinstance(doc["seeds"], list):
        raise ConfigError("$.seeds must be a list of integers")
    if "comparator" in doc:
        _reject_unknown(doc["comparator"], _COMPARATOR_KEYS, "$.comparator")

    out = dict(doc)
    out["controllers"] = controllers
    out.pop("controller", None)
    return out


def config_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def build_system(sys_doc: dict) -> LinearSystem:
    if sys_doc.get("kind", "explicit") == "random":
        return random_system(int(sys_doc["d_x"]), int(sys_doc["d_u"]),
                             float(sys_doc["kappa"]), float(sys_doc["gamma"]),
                             float(sys_doc["beta"]), int(sys_doc["seed"]))
    return LinearSystem.from_dict(sys_doc)


def build_cost(cost_doc: dict, d_x: int, d_u: int):
    params = {k: v for k, v in cost_doc.items() if k != "family"}
    if "target" in params and params["target"] is not None:
        params["target"] = np.asarray(params["target"], dtype=float)
    return make_cost(cost_doc["family"], d_x, d_u, **params)


# ---------------------------------------------------------------------------
# Cell execution
# ---------------------------------------------------------------------------

_CTRL_DEFAULT_KEYS = {
    "geometric": {"H", "G", "scale_T", "lambda_scale", "n_mc", "warmup_T0"},
    "warmup-case": {"U", "scale_T", "n_mc"},
    "etc": {"H", "G", "explore_coef", "explore_pow", "n_mc"},
    "bandit": {"H", "G", "lambda_scale", "gamma_acc", "probe_radius",
               "sigma_zeta", "sigma_xi", "hp_exponent"},
    "gpc": {"H", "G", "eta"},
}


def _run_controller(name: str, params: dict, sys_: LinearSystem, cost,
                    T: int, seed: int, deadline):
    extra = set(params) - _CTRL_DEFAULT_KEYS[name] - {"name"}
    if extra:
        raise ConfigError(f"unknown controller parameter(s) {sorted(extra)} "
                          f"for {name}")
    p = {k: v for k, v in params.items() if k != "name"}
    if name == "geometric":
        warmup_T0 = p.pop("warmup_T0", None)
        cfg = GeometricConfig(**p)
        return run_geometric(sys_, cost, cfg, seed=seed, T=T,
                             warmup_T0=warmup_T0, deadline=deadline)
    if name == "warmup-case":
        cfg = WarmupCaseConfig(**p)
        return run_warmup_case(sys_, cost, cfg, seed=seed, T=T,
                               deadline=deadline)
    if name == "etc":
        coef = p.pop("explore_coef", 1.0)
        pow_ = p.pop("explore_pow", 2.0 / 3.0)
        explore = max(1, int(coef * T ** pow_))
        return run_etc_baseline(sys_, cost, explore, T, seed=seed,
                                deadline=deadline, **p)
    if name == "bandit":
        gamma_acc = p.pop("gamma_acc", 0.25)
        probe = p.pop("probe_radius", 0.25)
        s_zeta = p.pop("sigma_zeta", 1.0)
        s_xi = p.pop("sigma_xi", 1.0)
        p.pop("hp_exponent", None)
        cfg = BanditConfig(**p)
        spec = PolicyClassSpec(H=cfg.H, G=cfg.G, d_x=sys_.d_x, d_u=sys_.d_u)
        n_budget = max(1, T // (2 * cfg.H + 2))
        opt = ZeroOrderOptimizer(spec, n_budget, sigma_zeta=s_zeta,
                                 sigma_xi=s_xi, gamma_acc=gamma_acc,
                                 probe_radius=probe, seed=seed)
        return run_bandit(sys_, cost, opt, cfg, seed=seed, T=T,
                          deadline=deadline)
    if name == "gpc":
        cfg = GpcConfig(**p)
        K = np.zeros((sys_.d_u, sys_.d_x))
        return run_gpc_baseline(sys_, K, cost, cfg, seed=seed, T=T,
                                deadline=deadline)
    raise ConfigError(f"unknown controller {name!r}")


def _attach_confidence_diagnostic(audit, sys_: LinearSystem) -> None:
    """||Delta^T||_{V_t} at epoch ends; a logged diagnostic, the harness
    knows the true system and the controller does not."""
    truth = np.concatenate([sys_.A, sys_.B], axis=1)
    for e in getattr(audit, "epochs", []):
        if e.estimate is None or e.V is None:
            continue
        A_hat, B_hat = e.estimate
        if A_hat is None:
            continue
        delta = np.concatenate([A_hat, B_hat], axis=1) - truth
        if delta.shape[1] != e.V.shape[0]:
            continue
        e.delta_v_norm = float(np.sqrt(np.trace(delta @ e.V @ delta.T)))


def _cell_name(name: str, T: int, seed: int) -> str:
    return f"{name}_T{T}_seed{seed}"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def run_cell(config: dict, ctrl_doc: dict, T: int, seed: int,
             out_dir: str) -> dict:
    """Execute one cell and write its per-step CSV. Returns summary info."""
    sys_ = build_system(config["system"])
    name = ctrl_doc["name"]
    is_control_space = name == "warmup-case"
    cost = build_cost(config["cost"], sys_.d_x, sys_.d_u)
    budget = float(config.get("budget_s", 900.0))
    deadline = time.monotonic() + budget

    start = time.perf_counter()
    traj, audit = _run_controller(name, ctrl_doc, sys_, cost, T, seed,
                                  deadline)
    _attach_confidence_diagnostic(audit, sys_)
    comp_doc = config.get("comparator", {})
    n_samp = int(comp_doc.get("n_samples", 8192))
    comp_seed = int(comp_doc.get("seed", 0))
    spec = None
    U = None
    if is_control_space:
        U = float(ctrl_doc.get("U", 2.0))
    else:
        spec = PolicyClassSpec(H=int(ctrl_doc.get("H", 3)),
                               G=float(ctrl_doc.get("G", 2.0)),
                               d_x=sys_.d_x, d_u=sys_.d_u)
    stride = 16 if name == "gpc" else 1
    ledger = compute_regret(traj, sys_, cost, audit, spec=spec, U=U,
                            n_samples=n_samp, seed=comp_seed,
                            surrogate_stride=stride)
    wall_ms = (time.perf_counter() - start) * 1000.0

    cum = ledger.cumulative_regret()
    cum_avg = ledger.cumulative_avg_regret()
    rows = ["t,realized_cost,cumulative_regret,cumulative_avg_regret,"
            "epoch,policy_switch_flag"]
    for t in range(traj.T):
        rows.append(",".join([
            str(t + 1), _fmt(traj.costs[t]), _fmt(cum[t]), _fmt(cum_avg[t]),
            str(int(ledger.epoch_id[t])), str(int(ledger.switch_flag[t])),
        ]))
    cell = _cell_name(name, T, seed)
    csv_path = Path(out_dir) / "cells" / f"{cell}.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.write_text("\n".join(rows) + "\n")

    return {
        "controller": name, "T": T, "seed": seed,
        "R_T": ledger.R_T, "R_T_avg": ledger.R_T_avg,
        "R_T_se": ledger.R_T_se, "R_T_avg_se": ledger.R_T_avg_se,
        "comparator_value": ledger.comparator_value,
        "wall_ms": wall_ms, "csv": str(csv_path),
        "epochs": [e.to_dict() for e in audit.epochs],
        "events": list(audit.events),
        "notes": list(ledger.notes),
    }


def run_experiment(config: dict, output_root: str | None = None,
                   workers: int = 1) -> dict:
    """Run all (controller, horizon, seed) cells and write the record.

    Returns the run record (also written as record.json). Cells are
    independent; the summary is assembled afterwards in sorted order so
    outputs do not depend on scheduling.
    """
    config = validate_config(config)
    h = config_hash(config)
    root = output_root or os.environ.get("GEOCTRL_OUTPUT_ROOT", ".")
    out_dir = Path(root) / config.get("output_dir", f"run_{h}")
    out_dir.mkdir(parents=True, exist_ok=True)

    cells = [(ctrl, int(T), int(seed))
             for ctrl in config["controllers"]
             for T in config["horizons"]
             for seed in config["seeds"]]

    results = []
    if workers > 1 and len(cells) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(run_cell, config, ctrl, T, seed, str(out_dir))
                    for ctrl, T, seed in cells]
            for f in futs:
                results.append(f.result())
    else:
        for ctrl, T, seed in cells:
            results.append(run_cell(config, ctrl, T, seed, str(out_dir)))

    results.sort(key=lambda r: (r["controller"], r["T"], r["seed"]))
    summary = ["controller,T,seed,R_T,R_T_avg,wall_ms"]
    for r in results:
        summary.append(",".join([
            r["controller"], str(r["T"]), str(r["seed"]),
            _fmt(r["R_T"]), _fmt(r["R_T_avg"]), _fmt(r["wall_ms"]),
        ]))
    summary_path = out_dir / "summary.csv"
    summary_path.write_text("\n".join(summary) + "\n")

    record = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "config": config,
        "config_hash": h,
        "summary_csv": str(summary_path),
        "cells": results,
    }
    record_path = out_dir / "record.json"
    record_path.write_text(json.dumps(record, indent=2, sort_keys=True))
    record["record_path"] = str(record_path)
    return record


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------

def read_summary(path: str) -> list[dict]:
    rows = []
    with open(path) as f:
        header = f.readline().strip().split(",")
        for line in f:
            if not line.strip():
                continue
            vals = line.strip().split(",")
            row = dict(zip(header, vals))
            row["T"] = int(row["T"])
            row["seed"] = int(row["seed"])
            row["R_T"] = float(row["R_T"])
            row["R_T_avg"] = float(row["R_T_avg"])
            rows.append(row)
    return rows


def fit_slope(summary_path: str, controller: str, n_boot: int = 1000,
              boot_seed: int = 0, use_avg: bool = False):
    """OLS slope of ln(mean R_T) on ln T with a seed-level bootstrap CI.

    Nonpositive mean regrets (possible at tiny horizons) are excluded
    with a warning entry. Requires >= 3 distinct horizons with >= 5
    seeds each.
    """
    rows = [r for r in read_summary(summary_path)
            if r["controller"] == controller]
    if not rows:
        raise ValueError(f"no rows for controller {controller!r}")
    key = "R_T_avg" if use_avg else "R_T"
    by_T: dict[int, dict[int, float]] = {}
    for r in rows:
        by_T.setdefault(r["T"], {})[r["seed"]] = r[key]
    horizons = sorted(by_T)
    if len(horizons) < 3:
        raise ValueError("need >= 3 distinct horizons")
    if min(len(v) for v in by_T.values()) < 5:
        raise ValueError("need >= 5 seeds per horizon")
    seeds = sorted(set.intersection(*(set(v) for v in by_T.values())))

    warnings = []

    def slope_for(seed_sample) -> float | None:
        pts = []
        for T in horizons:
            mean = float(np.mean([by_T[T][s] for s in seed_sample]))
            if mean <= 0:
                continue
            pts.append((math.log(T), math.log(mean)))
        if len(pts) < 3:
            return None
        xs = np.array([p[0] for p in pts])
        ys = np.array([p[1] for p in pts])
        return float(np.polyfit(xs, ys, 1)[0])

    for T in horizons:
        mean = float(np.mean(list(by_T[T].values())))
        if mean <= 0:
            warnings.append(f"T={T}: nonpositive mean regret excluded")

    point = slope_for(seeds)
    if point is None:
        raise ValueError("fewer than 3 horizons with positive mean regret")
    rng = substream(boot_seed, BOOTSTRAP)
    boots = []
    for _ in range(n_boot):
        sample = [seeds[i] for i in rng.integers(0, len(seeds), len(seeds))]
        s = slope_for(sample)
        if s is not None:
            boots.append(s)
    lo, hi = (float(np.percentile(boots, 2.5)),
              float(np.percentile(boots, 97.5))) if boots else (point, point)
    means = {T: float(np.mean(list(by_T[T].values()))) for T in horizons}
    return {"controller": controller, "slope": point, "ci_lo": lo,
            "ci_hi": hi, "horizons": horizons, "means": means,
            "warnings": warnings}


def compare(summary_paths: list[str]):
    """Per-horizon mean +/- stderr per controller and a win-rate matrix."""
    rows = []
    for p in summary_paths:
        rows.extend(read_summary(p))
    if not rows:
        return {"table": [], "win_rate": {}, "controllers": []}
    controllers = sorted({r["controller"] for r in rows})
    horizons = sorted({r["T"] for r in rows})
    table = []
    for T in horizons:
        entry = {"T": T}
        for c in controllers:
            vals = [r["R_T"] for r in rows
                    if r["controller"] == c and r["T"] == T]
            if vals:
                entry[c] = (float(np.mean(vals)),
                            float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
                            if len(vals) > 1 else 0.0)
        table.append(entry)

    win = {a: {b: [0, 0] for b in controllers} for a in controllers}
    index = {(r["controller"], r["T"], r["seed"]): r["R_T"] for r in rows}
    for a in controllers:
        for b in controllers:
            for (c, T, seed), ra in index.items():
                if c != a:
                    continue
                rb = index.get((b, T, seed))
                if rb is None:
                    continue
                win[a][b][1] += 1
                if ra < rb:
                    win[a][b][0] += 1
    win_rate = {a: {b: (w / n if n else math.nan)
                    for b, (w, n) in row.items()}
                for a, row in win.items()}
    return {"table": table, "win_rate": win_rate, "controllers": controllers}


def verify_record(record_path: str, scratch_dir: str | None = None) -> dict:
    """Re-run one deterministically chosen cell and diff its CSV bytes.

    wall_ms lives only in the summary, so cell CSVs must match exactly.
    """
    import tempfile

    record = json.loads(Path(record_path).read_text())
    config = record["config"]
    cells = record["cells"]
    if not cells:
        return {"ok": True, "cell": None, "detail": "no cells to verify"}
    pick = substream(int(record["config_hash"], 16) & ((1 << 62) - 1),
                     "verify").integers(0, len(cells))
    cell = cells[int(pick)]
    ctrl = next(c for c in config["controllers"]
                if c["name"] == cell["controller"])
    scratch = scratch_dir or tempfile.mkdtemp(prefix="geoctrl-verify-")
    redo = run_cell(config, ctrl, cell["T"], cell["seed"], scratch)
    old = Path(cell["csv"]).read_bytes()
    new = Path(redo["csv"]).read_bytes()
    ok = old == new
    return {"ok": ok,
            "cell": _cell_name(cell["controller"], cell["T"], cell["seed"]),
            "detail": "byte-identical" if ok else "MISMATCH"}
