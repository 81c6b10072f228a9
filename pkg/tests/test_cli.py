"""End-to-end command line tests: exit codes, artifacts, determinism."""

import json
import subprocess
import sys

import pytest

from mrhedge.cli import EXIT_CONFIG, EXIT_CRITERIA, EXIT_INVALID, EXIT_OK, main

FAST_VERIFY = {
    "model": {"kind": "constant", "theta": [0.0]},
    "payoff": {"kind": "terminal_smooth", "coeffs": [0.0, 1.0]},
    "grid": {"horizon": 1.0, "steps": 16},
    "sim": {"paths": 64, "seed": 20240811, "antithetic": True},
    "method": {"kind": "regression", "degree": 2},
    "thresholds": {"max_residual_rms": 1e-12},
}

CONST_THETA = {
    "model": {"kind": "constant", "theta": [0.3]},
    "payoff": {"kind": "affine_terminal", "lam1": 0.0, "lam2": 1.0},
    "grid": {"horizon": 1.0, "steps": 16},
    "sim": {"paths": 400, "seed": 20240811},
    "method": {"kind": "regression", "degree": 2},
}

OU_SMALL = {
    "model": {
        "kind": "ou",
        "alpha": 0.0, "mean_reversion": 1.0, "vol": 0.2, "u0": 0.1,
    },
    "payoff": {"kind": "affine_terminal", "lam1": 0.0, "lam2": 1.0},
    "grid": {"horizon": 1.0, "steps": 24},
    "sim": {"paths": 80, "seed": 20240811},
    "method": {"kind": "regression", "degree": 2},
    "truncation": {"levels": [0.9, 1.5, 100.0]},
}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_summary(out_dir):
    return json.loads((out_dir / "summary.json").read_text())


def test_verify_exit_zero_and_artifact_set(tmp_path):
    cfg = write_cfg(tmp_path, FAST_VERIFY)
    out = tmp_path / "out"
    rc = main(["verify", "--config", cfg, "--out", str(out)])
    assert rc == EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert names == ["beta_estimates.csv", "residuals.csv", "summary.json"]
    summary = read_summary(out)
    assert summary["command"] == "verify"
    assert summary["report"]["passed"] is True
    assert summary["report"]["residual_rms"] <= 1e-12
    assert "output" not in summary["config"]
    assert "workers" not in json.dumps(summary)


def test_verify_artifacts_are_lf_and_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, FAST_VERIFY)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["verify", "--config", cfg, "--out", str(out1)]) == EXIT_OK
    assert main(["verify", "--config", cfg, "--out", str(out2), "--workers", "3"]) == EXIT_OK
    for name in ("beta_estimates.csv", "residuals.csv", "summary.json"):
        b1 = (out1 / name).read_bytes()
        b2 = (out2 / name).read_bytes()
        assert b1 == b2, f"{name} differs across runs/workers"
        assert b"\r" not in b1
        assert b1.endswith(b"\n")


def test_verify_criteria_failure_exit_two(tmp_path):
    strict = dict(CONST_THETA)
    strict["thresholds"] = {"max_residual_rms": 1e-300}
    cfg = write_cfg(tmp_path, strict)
    out = tmp_path / "out"
    rc = main(["verify", "--config", cfg, "--out", str(out)])
    assert rc == EXIT_CRITERIA
    # artifacts still written for post-mortem
    assert (out / "summary.json").exists()
    assert read_summary(out)["report"]["passed"] is False


def test_verify_plots_flag_adds_figures(tmp_path):
    cfg = write_cfg(tmp_path, FAST_VERIFY)
    out = tmp_path / "out"
    rc = main(["verify", "--config", cfg, "--out", str(out), "--plots"])
    assert rc == EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert names == [
        "beta_estimates.csv", "beta_estimates.png",
        "residuals.csv", "residuals.png", "summary.json",
    ]


def test_overrides_change_echo_and_results(tmp_path):
    cfg = write_cfg(tmp_path, FAST_VERIFY)
    out = tmp_path / "out"
    rc = main([
        "verify", "--config", cfg, "--out", str(out),
        "--paths", "32", "--steps", "8", "--seed", "7",
    ])
    assert rc == EXIT_OK
    echo = read_summary(out)["config"]
    assert echo["sim"]["paths"] == 32
    assert echo["sim"]["seed"] == 7
    assert echo["grid"]["steps"] == 8
    assert read_summary(out)["seed"] == 7


def test_output_dir_from_env(tmp_path, monkeypatch):
    cfg_dict = dict(FAST_VERIFY)
    cfg = write_cfg(tmp_path, cfg_dict)
    target = tmp_path / "envout"
    monkeypatch.setenv("MRHEDGE_OUT", str(target))
    assert main(["verify", "--config", cfg]) == EXIT_OK
    assert (target / "summary.json").exists()


def test_output_dir_config_beats_env(tmp_path, monkeypatch):
    cfg_dict = dict(FAST_VERIFY)
    cfg_dict["output"] = {"directory": str(tmp_path / "cfgout")}
    cfg = write_cfg(tmp_path, cfg_dict)
    monkeypatch.setenv("MRHEDGE_OUT", str(tmp_path / "envout"))
    assert main(["verify", "--config", cfg]) == EXIT_OK
    assert (tmp_path / "cfgout" / "summary.json").exists()
    assert not (tmp_path / "envout").exists()


def test_hedge_writes_multipliers(tmp_path):
    cfg_dict = dict(CONST_THETA)
    cfg = write_cfg(tmp_path, cfg_dict)
    out = tmp_path / "out"
    rc = main([
        "hedge", "--config", cfg, "--out", str(out),
        "--initial-wealth", "1.0", "--target-mean", "1.1",
    ])
    assert rc == EXIT_OK
    summary = read_summary(out)
    assert summary["command"] == "hedge"
    mult = summary["multipliers"]
    assert mult["lambda2"] < 0.0
    assert mult["lambda1"] == pytest.approx(1.1 - mult["lambda2"])
    assert (out / "beta_estimates.csv").exists()
    assert (out / "residuals.csv").exists()


def test_hedge_missing_target_is_config_error(tmp_path):
    cfg = write_cfg(tmp_path, CONST_THETA)
    rc = main(["hedge", "--config", cfg, "--out", str(tmp_path / "o"),
               "--initial-wealth", "1.0"])
    assert rc == EXIT_CONFIG


def test_hedge_singular_system_is_config_error(tmp_path):
    cfg_dict = dict(FAST_VERIFY)  # zero risk: E[Z(T)] == 1 exactly
    cfg = write_cfg(tmp_path, cfg_dict)
    rc = main(["hedge", "--config", cfg, "--out", str(tmp_path / "o"),
               "--initial-wealth", "1.0", "--target-mean", "1.1"])
    assert rc == EXIT_CONFIG


def test_converge_table_and_summary(tmp_path):
    cfg = write_cfg(tmp_path, OU_SMALL)
    out = tmp_path / "out"
    rc = main(["converge", "--config", cfg, "--out", str(out)])
    assert rc == EXIT_OK
    lines = (out / "truncation.csv").read_text().splitlines()
    assert lines[0] == "k,l2_distance,tau_full_fraction"
    assert len(lines) == 4  # header + three levels
    summary = read_summary(out)
    assert summary["truncation"]["levels"] == [0.9, 1.5, 100.0]
    d = summary["truncation"]["l2_distance"]
    assert d[-1] == 0.0  # level above the ensemble sup


def test_converge_empty_levels_header_only(tmp_path):
    cfg_dict = dict(OU_SMALL)
    cfg_dict["truncation"] = {"levels": []}
    cfg = write_cfg(tmp_path, cfg_dict)
    out = tmp_path / "out"
    rc = main(["converge", "--config", cfg, "--out", str(out)])
    assert rc == EXIT_OK
    assert (out / "truncation.csv").read_text() == "k,l2_distance,tau_full_fraction\n"
    assert read_summary(out)["truncation"]["levels"] == []


def test_novikov_summary_only(tmp_path):
    cfg = write_cfg(tmp_path, CONST_THETA)
    out = tmp_path / "out"
    rc = main(["novikov", "--config", cfg, "--out", str(out)])
    assert rc == EXIT_OK
    assert [p.name for p in out.iterdir()] == ["summary.json"]
    diag = read_summary(out)["novikov"]
    assert diag["novikov_estimate"] > 1.0
    assert diag["blowup_fraction"] == 0.0


def test_simulate_and_export_paths(tmp_path):
    cfg = write_cfg(tmp_path, CONST_THETA)
    out = tmp_path / "out"
    rc = main(["simulate", "--config", cfg, "--out", str(out), "--export-paths",
               "--paths", "5"])
    assert rc == EXIT_OK
    summary = read_summary(out)
    assert summary["ensemble"]["path_count"] == 5
    table = (out / "paths.csv").read_text().splitlines()
    assert table[0] == "path_id,node,t,log_z,w_1,theta_1"
    assert len(table) == 1 + 5 * 17  # header + paths * (steps + 1)


def test_all_paths_invalid_exit_three(tmp_path):
    blowup = dict(OU_SMALL)
    # u0 large enough that the first squared-risk step overflows to inf
    blowup["model"] = {
        "kind": "ou", "alpha": 0.0, "mean_reversion": 1.0, "vol": 0.2, "u0": 1e200,
    }
    blowup["sim"] = {"paths": 8, "seed": 1}
    cfg = write_cfg(tmp_path, blowup)
    rc = main(["verify", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == EXIT_INVALID


def test_config_errors(tmp_path):
    missing = str(tmp_path / "nope.json")
    assert main(["verify", "--config", missing, "--out", str(tmp_path)]) == EXIT_CONFIG

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["verify", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG

    unknown_model = dict(FAST_VERIFY)
    unknown_model["model"] = {"kind": "garch"}
    cfg = write_cfg(tmp_path, unknown_model, "um.json")
    assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG

    bad_method = dict(FAST_VERIFY)
    bad_method["method"] = {"kind": "nested-mc"}  # branches missing
    cfg = write_cfg(tmp_path, bad_method, "bm.json")
    assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_unknown_flag_and_help():
    assert main(["verify", "--bogus"]) == EXIT_CONFIG
    assert main(["--help"]) == EXIT_OK


def test_console_entry_point(tmp_path):
    """The installed script runs and prints nothing to stdout on success."""
    cfg = write_cfg(tmp_path, FAST_VERIFY)
    out = tmp_path / "out"
    proc = subprocess.run(
        [sys.executable, "-m", "mrhedge.cli", "verify", "--config", cfg, "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == EXIT_OK
    assert proc.stdout == ""
    assert (out / "summary.json").exists()
