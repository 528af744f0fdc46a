import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from svvlab.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main
from svvlab.config import build_model, load_config, model_to_dict, parse_config
from svvlab.errors import ValidationError
from svvlab.volterra import KernelFamily

CONFIGS = Path(__file__).resolve().parents[1] / "scripts" / "configs"

BASE = {
    "seed": 7,
    "model": {
        "T": 1.0, "n": 32, "y0": 0.3, "rho": -0.7,
        "kernel": {"family": "PowerSum", "alphas": [0.3], "hursts": [0.3]},
        "bounds": {"phi": 0.05, "psi": 1.0},
        "drift": {"theta1": 0.01, "theta2": 0.01, "gamma1": 2.5, "gamma2": 2.5},
    },
    "experiment": {"n_paths": 4},
}


def write_cfg(tmp_path, cfg, name="run.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


def edit(**model):
    cfg = json.loads(json.dumps(BASE))
    for k, v in model.items():
        cfg["model"][k] = v
    return cfg


def run_cli(*argv):
    return main([str(a) for a in argv])


# ---------------------------------------------------------------- config

def test_shipped_configs_parse():
    for p in sorted(CONFIGS.glob("*.yaml")):
        cfg = load_config(p)
        assert cfg.model.grid.n >= 2, p.name


def test_config_documented_fields():
    cfg = parse_config(edit(x0=4.6, r=0.02))
    m = cfg.model
    assert (m.grid.T, m.grid.n, m.y0, m.x0, m.r, m.rho) == (1.0, 32, 0.3, 4.6, 0.02, -0.7)
    assert m.kernel.family is KernelFamily.POWER_SUM
    assert cfg.seed == 7 and cfg.experiment == {"n_paths": 4}


def test_string_numbers_are_accepted():
    cfg = edit()
    cfg["model"]["drift"]["theta1"] = "1e-9"
    assert parse_config(cfg).model.drift.theta1.c0 == 1e-9


def test_model_dict_roundtrip():
    m = parse_config(edit()).model
    again = build_model(model_to_dict(m))
    assert model_to_dict(again) == model_to_dict(m)


@pytest.mark.parametrize(
    "change,label,key",
    [
        ({"drift": {"theta1": 0.01, "theta2": 0.01, "gamma1": 2.0, "gamma2": 2.5}}, "(B1)", "model.drift.gamma1"),
        ({"drift": {"theta1": -0.01, "theta2": 0.01, "gamma1": 2.5, "gamma2": 2.5}}, "(B2)", "model.drift.theta1"),
        ({"kernel": {"family": "PowerSum", "alphas": [0.3], "hursts": [1.2]}}, "(K2)", "model.kernel.hursts"),
        ({"kernel": {"family": "PowerSum", "alphas": [-0.3], "hursts": [0.3]}}, "(K1)", "model.kernel.alphas"),
        ({"drift": {"theta1": 0.01, "theta2": 0.01, "gamma1": 2.5, "gamma2": 2.5, "a": {"kind": "cubic"}}},
         "(B3)", "model.drift.a"),
    ],
)
def test_assumption_violations_cite_their_label(change, label, key):
    with pytest.raises(ValidationError) as info:
        parse_config(edit(**change))
    assert label in str(info.value)
    assert info.value.field == key


@pytest.mark.parametrize(
    "change,key",
    [
        ({"y0": 1.5}, "model.y0"),
        ({"rho": 1.0}, "model.rho"),
        ({"n": 1}, "model.n"),
        ({"n": 2.5}, "model.n"),
        ({"T": -1}, "model.T"),
        ({"bounds": {"phi": 0.5, "psi": 0.4}}, "model.bounds"),
        ({"colour": "red"}, "model"),
        ({"kernel": {"family": "Spline"}}, "model.kernel.family"),
    ],
)
def test_invalid_fields_are_named(change, key):
    with pytest.raises(ValidationError) as info:
        parse_config(edit(**change))
    assert info.value.field == key


def test_step_gate_is_enforced():
    cfg = edit(n=4)
    cfg["model"]["drift"]["a"] = {"kind": "affine", "a0": 0.0, "a1": 8.0}
    with pytest.raises(ValidationError) as info:
        parse_config(cfg)
    assert info.value.field == "model.n"


def test_check_assumptions_off_skips_b1_only():
    cfg = edit(check_assumptions=False)
    cfg["model"]["drift"]["gamma1"] = 1.0
    assert parse_config(cfg).model.drift.gamma1 == 1.0
    cfg["model"]["drift"]["theta1"] = 0.0
    with pytest.raises(ValidationError):
        parse_config(cfg)


def test_tabulated_kernel_path_is_relative_to_config(tmp_path):
    rows = ["t,s,k"]
    h = 1.0 / 8
    for i in range(9):
        for j in range(i + 1):
            rows.append(f"{i * h},{j * h},{1.0 if j < i else 0.0}")
    (tmp_path / "k.csv").write_text("\n".join(rows) + "\n")
    cfg = edit(n=8, kernel={"family": "Tabulated", "csv": "k.csv", "effective_H": 0.5})
    m = load_config(write_cfg(tmp_path, cfg)).model
    assert m.kernel.family is KernelFamily.TABULATED


def test_malformed_yaml_reports_position(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("seed: 1\nmodel: [unclosed\n")
    with pytest.raises(ValidationError) as info:
        load_config(p)
    assert "line" in str(info.value)


# ------------------------------------------------------------------- CLI

def test_simulate_minimal(tmp_path, capsys):
    out = tmp_path / "sim"
    assert run_cli("simulate", "--config", write_cfg(tmp_path, BASE), "--out", out) == EXIT_OK
    rows = list(csv.reader((out / "paths.csv").open()))
    assert len(rows) - 1 == 4 * 33
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"paths.csv", "summary.json"}
    assert json.loads((out / "summary.json").read_text())["sandwich"]["violations"] == 0
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".sim")]


def test_same_seed_same_digests(tmp_path):
    cfg = write_cfg(tmp_path, BASE)
    assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "a") == EXIT_OK
    assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "b", "--threads", 1) == EXIT_OK
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["outputs"] == mb["outputs"]
    assert ma["config_digest"] == mb["config_digest"]
    assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "c", "--seed", 8) == EXIT_OK
    mc = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert mc["outputs"]["paths.csv"] != ma["outputs"]["paths.csv"]


def test_b1_violation_exits_2(tmp_path, capsys):
    cfg = edit(drift={"theta1": 0.01, "theta2": 0.01, "gamma1": 2.0, "gamma2": 2.0})
    out = tmp_path / "o"
    assert run_cli("simulate", "--config", write_cfg(tmp_path, cfg), "--out", out) == EXIT_VALIDATION
    assert "(B1)" in capsys.readouterr().err
    assert not out.exists()


def test_malformed_config_leaves_no_output(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("seed: 1\nmodel: {T: 1.0, n: 8\n")
    out = tmp_path / "o"
    assert run_cli("simulate", "--config", p, "--out", out) != EXIT_OK
    assert list(tmp_path.iterdir()) == [p]


def test_missing_config_is_io_error(tmp_path):
    assert run_cli("simulate", "--config", tmp_path / "nope.yaml", "--out", tmp_path / "o") == EXIT_IO


def test_collision_without_force(tmp_path):
    cfg = write_cfg(tmp_path, BASE)
    out = tmp_path / "o"
    assert run_cli("simulate", "--config", cfg, "--out", out) == EXIT_OK
    before = (out / "manifest.json").read_bytes()
    assert run_cli("simulate", "--config", cfg, "--out", out, "--seed", 9) == EXIT_IO
    assert (out / "manifest.json").read_bytes() == before
    assert run_cli("simulate", "--config", cfg, "--out", out, "--seed", 9, "--force") == EXIT_OK
    assert (out / "manifest.json").read_bytes() != before


def test_bad_threads_is_validation_error(tmp_path):
    assert run_cli("simulate", "--config", write_cfg(tmp_path, BASE), "--out", tmp_path / "o",
                   "--threads", 0) == EXIT_VALIDATION


def test_too_few_statistic_paths_is_refused_without_output(tmp_path):
    cfg = edit(n=32)
    cfg["experiment"] = {"n_pairs": 5, "n_triples": 2, "n_stats_paths": 50, "bump_paths": 2, "min_lag": 1}
    out = tmp_path / "o"
    assert run_cli("malliavin-check", "--config", write_cfg(tmp_path, cfg), "--out", out) == EXIT_VALIDATION
    assert not out.exists()


def test_failed_checks_exit_3_and_keep_outputs(tmp_path):
    cfg = edit(n=32)
    cfg["experiment"] = {"n_pairs": 5, "n_triples": 2, "n_stats_paths": 100, "bump_paths": 2, "min_lag": 1,
                         "tolerances": {"reference": 0.0}}
    out = tmp_path / "o"
    assert run_cli("malliavin-check", "--config", write_cfg(tmp_path, cfg), "--out", out) == EXIT_NUMERICAL
    summary = json.loads((out / "summary.json").read_text())
    assert not summary["all_pass"] and not summary["checks"]["reference"]["pass"]


def test_malliavin_check_drift_disabled(tmp_path):
    cfg = edit(n=64, drift={"enabled": False})
    cfg["experiment"] = {"n_pairs": 30, "n_triples": 10, "n_stats_paths": 100, "bump_paths": 4}
    out = tmp_path / "m"
    assert run_cli("malliavin-check", "--config", write_cfg(tmp_path, cfg), "--out", out) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["all_pass"]
    assert summary["checks"]["first_bump"]["max_rel"] < 1e-10
    for name in ("field.csv", "second.csv", "stats.csv", "bumps.csv"):
        assert (out / name).stat().st_size > 0


def test_malliavin_check_full_model(tmp_path):
    cfg = edit(n=128)
    cfg["experiment"] = {"n_pairs": 40, "n_triples": 10, "n_stats_paths": 200, "bump_paths": 4}
    out = tmp_path / "m"
    assert run_cli("malliavin-check", "--config", write_cfg(tmp_path, cfg), "--out", out) == EXIT_OK
    checks = json.loads((out / "summary.json").read_text())["checks"]
    assert checks["reference"]["max_scaled_deviation"] < 1e-10
    assert checks["first_bump"]["median_rel"] < 0.02


def test_kernel_check(tmp_path):
    cfg = edit(n=256)
    cfg["experiment"] = {"lambda": 0.1, "n_values": [128, 256]}
    out = tmp_path / "k"
    assert run_cli("kernel-check", "--config", write_cfg(tmp_path, cfg), "--out", out) == EXIT_OK
    res = json.loads((out / "kernel_check.json").read_text())
    assert res["limit_rel_error"] < 1e-6
    assert set(res["holder_certificate"]) == {"128", "256"}


def test_skew_constvol_gives_null_fit(tmp_path):
    cfg = {
        "seed": 5,
        "model": {"T": 0.25, "n": 128, "y0": 0.2, "rho": -0.7, "kernel": {"family": "Zero"},
                  "drift": {"enabled": False}},
        "experiment": {"n_paths": 10000, "steps_per_tau": 4, "m_min": 1, "m_max": 4},
    }
    out = tmp_path / "s"
    assert run_cli("skew", "--config", write_cfg(tmp_path, cfg), "--out", out) == EXIT_OK
    fit = json.loads((out / "skew_fit.json").read_text())
    assert fit["slope"] is None
    assert "power-law fit: null" in (out / "summary.txt").read_text()
    rows = list(csv.reader((out / "skew_report.csv").open()))
    assert rows[0] == ["tau", "skew", "stderr", "dkappa"] and len(rows) == 5


def test_console_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, BASE)
    proc = subprocess.run([sys.executable, "-m", "svvlab.cli", "simulate", "--config", str(cfg),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["n_paths"] == 4


def test_usage_error_is_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["simulate"])
    assert info.value.code == 2
