import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from geoctrl.harness import (ConfigError, compare, config_hash, fit_slope,
                             run_experiment, validate_config, verify_record)

BASE_CONFIG = {
    "version": 1,
    "system": {"kind": "random", "d_x": 2, "d_u": 2, "kappa": 1.6,
               "gamma": 0.5, "beta": 1.5, "seed": 100},
    "cost": {"family": "smoothed-l1", "delta": 0.25},
    "controller": {"name": "etc", "H": 2, "G": 1.5},
    "horizons": [256, 512],
    "seeds": [1, 2],
    "budget_s": 300,
}


def cfg(**overrides):
    doc = json.loads(json.dumps(BASE_CONFIG))
    doc.update(overrides)
    return doc


# ---------------------------------------------------------------------------
# Config validation
# ---------------------------------------------------------------------------

def test_unknown_top_level_key_rejected_with_path():
    with pytest.raises(ConfigError, match=r"\$\.bogus"):
        validate_config(cfg(bogus=1))


def test_unknown_system_key_rejected():
    doc = cfg()
    doc["system"] = dict(doc["system"], typo_field=3)
    with pytest.raises(ConfigError, match=r"\$\.system\.typo_field"):
        validate_config(doc)


def test_missing_required_field():
    doc = cfg()
    del doc["horizons"]
    with pytest.raises(ConfigError, match=r"\$\.horizons"):
        validate_config(doc)


def test_exactly_one_controller_block():
    doc = cfg()
    doc["controllers"] = [doc["controller"]]
    with pytest.raises(ConfigError, match="exactly one"):
        validate_config(doc)


def test_unknown_controller_name():
    with pytest.raises(ConfigError, match="name must be one of"):
        validate_config(cfg(controller={"name": "mystery"}))


def test_wrong_version():
    with pytest.raises(ConfigError, match="version"):
        validate_config(cfg(version=99))


def test_unknown_controller_param_rejected(tmp_path):
    doc = cfg(controller={"name": "etc", "H": 2, "explode": True},
              horizons=[64], seeds=[1], output_dir="x")
    with pytest.raises(ConfigError, match="explode"):
        run_experiment(doc, output_root=str(tmp_path))


def test_config_hash_stable():
    assert config_hash(cfg()) == config_hash(cfg())
    assert config_hash(cfg()) != config_hash(cfg(seeds=[3]))


# ---------------------------------------------------------------------------
# run_experiment
# ---------------------------------------------------------------------------

def test_empty_horizons_zero_rows(tmp_path):
    record = run_experiment(cfg(horizons=[], output_dir="empty"),
                            output_root=str(tmp_path))
    text = Path(record["summary_csv"]).read_text().strip().splitlines()
    assert text == ["controller,T,seed,R_T,R_T_avg,wall_ms"]


def test_cell_counts_two_controllers(tmp_path):
    doc = cfg(output_dir="grid", horizons=[128, 256], seeds=[1, 2, 3])
    del doc["controller"]
    doc["controllers"] = [{"name": "etc", "H": 2, "G": 1.5},
                          {"name": "gpc", "H": 2, "G": 1.5}]
    record = run_experiment(doc, output_root=str(tmp_path))
    assert len(record["cells"]) == 12
    rows = Path(record["summary_csv"]).read_text().strip().splitlines()
    assert len(rows) == 13   # header + 12
    cell_files = list((tmp_path / "grid" / "cells").glob("*.csv"))
    assert len(cell_files) == 12


def test_rerun_byte_identical_modulo_wall_ms(tmp_path):
    doc = cfg(output_dir="r1")
    rec1 = run_experiment(doc, output_root=str(tmp_path))
    doc2 = cfg(output_dir="r2")
    rec2 = run_experiment(doc2, output_root=str(tmp_path))
    for c1, c2 in zip(rec1["cells"], rec2["cells"]):
        assert Path(c1["csv"]).read_bytes() == Path(c2["csv"]).read_bytes()
    s1 = Path(rec1["summary_csv"]).read_text().splitlines()
    s2 = Path(rec2["summary_csv"]).read_text().splitlines()
    strip = lambda line: ",".join(line.split(",")[:-1])  # drop wall_ms
    assert [strip(l) for l in s1] == [strip(l) for l in s2]


def test_workers_match_sequential(tmp_path):
    doc = cfg(output_dir="seq", horizons=[128], seeds=[1, 2])
    rec_seq = run_experiment(doc, output_root=str(tmp_path))
    doc2 = cfg(output_dir="par", horizons=[128], seeds=[1, 2])
    rec_par = run_experiment(doc2, output_root=str(tmp_path), workers=2)
    for c1, c2 in zip(rec_seq["cells"], rec_par["cells"]):
        assert Path(c1["csv"]).read_bytes() == Path(c2["csv"]).read_bytes()


def test_cell_csv_header_golden(tmp_path):
    record = run_experiment(cfg(output_dir="hdr", horizons=[64], seeds=[1]),
                            output_root=str(tmp_path))
    first = Path(record["cells"][0]["csv"]).read_text().splitlines()[0]
    assert first == ("t,realized_cost,cumulative_regret,"
                     "cumulative_avg_regret,epoch,policy_switch_flag")


def test_output_root_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("GEOCTRL_OUTPUT_ROOT", str(tmp_path))
    record = run_experiment(cfg(output_dir="enved", horizons=[64], seeds=[1]))
    assert str(tmp_path) in record["summary_csv"]


def test_verify_record(tmp_path):
    record = run_experiment(cfg(output_dir="v", horizons=[128], seeds=[1, 2]),
                            output_root=str(tmp_path))
    res = verify_record(record["record_path"],
                        scratch_dir=str(tmp_path / "scratch"))
    assert res["ok"], res


def test_confidence_diagnostic_logged(tmp_path):
    doc = cfg(output_dir="diag", horizons=[2048], seeds=[1],
              controller={"name": "geometric", "H": 2, "G": 1.5,
                          "scale_T": 0.001, "n_mc": 128})
    record = run_experiment(doc, output_root=str(tmp_path))
    epochs = record["cells"][0]["epochs"]
    vals = [e["delta_v_norm"] for e in epochs
            if e.get("delta_v_norm") is not None]
    assert vals, "expected the confidence diagnostic on completed epochs"
    assert all(np.isfinite(v) for v in vals)


# ---------------------------------------------------------------------------
# Slope fitting
# ---------------------------------------------------------------------------

def _write_summary(path: Path, rows):
    lines = ["controller,T,seed,R_T,R_T_avg,wall_ms"]
    lines += [f"{c},{T},{s},{r},{r},{0.0}" for c, T, s, r in rows]
    path.write_text("\n".join(lines) + "\n")


def test_fit_slope_exact_sqrt(tmp_path):
    rows = [("x", T, s, 7.0 * np.sqrt(T))
            for T in (1024, 2048, 4096, 8192) for s in range(5)]
    p = tmp_path / "s.csv"
    _write_summary(p, rows)
    fit = fit_slope(str(p), "x")
    assert fit["slope"] == pytest.approx(0.5, abs=1e-6)
    assert fit["ci_lo"] == pytest.approx(0.5, abs=1e-6)


def test_fit_slope_exact_linear(tmp_path):
    rows = [("x", T, s, float(T))
            for T in (1024, 2048, 4096) for s in range(5)]
    p = tmp_path / "lin.csv"
    _write_summary(p, rows)
    assert fit_slope(str(p), "x")["slope"] == pytest.approx(1.0, abs=1e-9)


def test_fit_slope_excludes_nonpositive_with_warning(tmp_path):
    rows = [("x", 512, s, -1.0) for s in range(5)]
    rows += [("x", T, s, float(T)) for T in (1024, 2048, 4096)
             for s in range(5)]
    p = tmp_path / "neg.csv"
    _write_summary(p, rows)
    fit = fit_slope(str(p), "x")
    assert any("nonpositive" in w for w in fit["warnings"])
    assert fit["slope"] == pytest.approx(1.0, abs=1e-9)


def test_fit_slope_preconditions(tmp_path):
    p = tmp_path / "few.csv"
    _write_summary(p, [("x", 1024, s, 10.0) for s in range(5)]
                   + [("x", 2048, s, 14.0) for s in range(5)])
    with pytest.raises(ValueError, match="3 distinct horizons"):
        fit_slope(str(p), "x")
    p2 = tmp_path / "fewseeds.csv"
    _write_summary(p2, [("x", T, s, float(T)) for T in (1024, 2048, 4096)
                        for s in range(2)])
    with pytest.raises(ValueError, match="5 seeds"):
        fit_slope(str(p2), "x")


def test_fit_slope_bootstrap_ci_brackets_noisy_slope(tmp_path):
    rng = np.random.default_rng(0)
    rows = [("x", T, s, float(T ** 0.6 * np.exp(0.1 * rng.standard_normal())))
            for T in (1024, 2048, 4096, 8192) for s in range(12)]
    p = tmp_path / "noisy.csv"
    _write_summary(p, rows)
    fit = fit_slope(str(p), "x", n_boot=400)
    assert fit["ci_lo"] <= fit["slope"] <= fit["ci_hi"]
    assert fit["ci_hi"] - fit["ci_lo"] > 0.01
    assert abs(fit["slope"] - 0.6) <= 0.06


# ---------------------------------------------------------------------------
# Comparison tables
# ---------------------------------------------------------------------------

def test_compare_empty():
    out = compare([])
    assert out["table"] == [] and out["controllers"] == []


def test_compare_single_controller(tmp_path):
    p = tmp_path / "one.csv"
    _write_summary(p, [("solo", 1024, s, 10.0 + s) for s in range(4)])
    out = compare([str(p)])
    assert out["controllers"] == ["solo"]
    assert out["win_rate"]["solo"]["solo"] == 0.0  # never strictly below itself


def test_compare_known_ordering(tmp_path):
    rows = []
    for T in (512, 1024):
        for s in range(5):
            rows.append(("fast", T, s, 10.0 + s))
            rows.append(("slow", T, s, 100.0 + s))
    p = tmp_path / "two.csv"
    _write_summary(p, rows)
    out = compare([str(p)])
    assert out["win_rate"]["fast"]["slow"] == 1.0
    assert out["win_rate"]["slow"]["fast"] == 0.0
    for entry in out["table"]:
        assert entry["fast"][0] < entry["slow"][0]


# ---------------------------------------------------------------------------
# CLI surface
# ---------------------------------------------------------------------------

def _cli(*args):
    return subprocess.run([sys.executable, "-m", "geoctrl.cli", *args],
                          capture_output=True, text=True)


def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(cfg(version=7)))
    res = _cli("run", str(bad), "--output-root", str(tmp_path))
    assert res.returncode == 2
    assert "config error" in res.stderr


def test_cli_invalid_json_exit_code(tmp_path):
    bad = tmp_path / "nojson.json"
    bad.write_text("{nope")
    res = _cli("run", str(bad))
    assert res.returncode == 2


def test_cli_run_slope_compare_verify(tmp_path):
    doc = cfg(output_dir="cli", horizons=[128, 256, 512],
              seeds=[1, 2, 3, 4, 5])
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    res = _cli("run", str(path), "--output-root", str(tmp_path))
    assert res.returncode == 0, res.stderr
    summary = tmp_path / "cli" / "summary.csv"
    assert summary.exists()

    res = _cli("slope", str(summary), "--controller", "etc")
    assert res.returncode == 0, res.stderr
    assert "slope=" in res.stdout
    assert (tmp_path / "cli" / "summary_etc_slope.png").exists()

    res = _cli("compare", str(summary))
    assert res.returncode == 0
    assert "win-rate" in res.stdout

    res = _cli("verify", str(tmp_path / "cli" / "record.json"))
    assert res.returncode == 0
    assert "byte-identical" in res.stdout

    res = _cli("spanner-audit", str(tmp_path / "cli" / "record.json"))
    assert res.returncode == 0
