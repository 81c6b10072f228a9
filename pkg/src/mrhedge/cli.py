"""Configuration-driven command line for the hedging engine.

One JSON document describes a run (model, payoff, grid, sampling, method);
subcommands dispatch it to the library and write deterministic reports
into an output directory.  Exit codes: 0 success, 1 configuration error,
2 failed pass criteria, 3 all paths numerically invalid.  Wall-clock
runtime goes to stderr only, never into report files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import reporting
from .engine import novikov_diagnostic, simulate_paths, ensemble_mean_se
from .errors import AllPathsInvalidError, ConfigError, SingularSystemError
from .grids import SimConfig, TimeGrid
from .hedging import (
    mean_variance_multipliers,
    truncation_convergence,
    verify_representation,
)
from .models import ConstantModel, OrnsteinUhlenbeckModel
from .payoffs import AffineTerminal, IntegralFunctional, TerminalSmooth

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CRITERIA = 2
EXIT_INVALID = 3

OUT_ENV_VAR = "MRHEDGE_OUT"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def apply_overrides(cfg: dict, args) -> None:
    if getattr(args, "paths", None) is not None:
        cfg.setdefault("sim", {})["paths"] = args.paths
    if getattr(args, "seed", None) is not None:
        cfg.setdefault("sim", {})["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        cfg.setdefault("grid", {})["steps"] = args.steps
    if getattr(args, "target_mean", None) is not None:
        cfg["target_mean"] = args.target_mean
    if getattr(args, "initial_wealth", None) is not None:
        cfg["initial_wealth"] = args.initial_wealth


def _block(cfg: dict, key: str) -> dict:
    if key not in cfg:
        raise ConfigError(f"config is missing the '{key}' block")
    block = cfg[key]
    if not isinstance(block, dict):
        raise ConfigError(f"config block '{key}' must be an object")
    return block


def build_model(cfg: dict):
    block = _block(cfg, "model")
    kind = block.get("kind")
    try:
        if kind == "constant":
            theta = block.get("theta", 0.0)
            return ConstantModel(np.atleast_1d(np.asarray(theta, dtype=float)))
        if kind == "ou":
            return OrnsteinUhlenbeckModel(
                alpha=float(block.get("alpha", 0.0)),
                mean_reversion=float(block["mean_reversion"]),
                vol=float(block["vol"]),
                u0=float(block.get("u0", 0.0)),
                drift_constant_mode=block.get("drift_constant_mode", "adjusted"),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model block: {exc}") from exc
    raise ConfigError(f"unknown model kind {kind!r} (expected 'constant' or 'ou')")


def build_payoff(cfg: dict):
    block = _block(cfg, "payoff")
    kind = block.get("kind")
    try:
        if kind == "affine_terminal":
            return AffineTerminal(float(block.get("lam1", 0.0)), float(block.get("lam2", 1.0)))
        if kind == "terminal_smooth":
            return TerminalSmooth.from_coeffs(block["coeffs"])
        if kind == "integral":
            return IntegralFunctional.from_coeffs(block["coeffs"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid payoff block: {exc}") from exc
    raise ConfigError(
        f"unknown payoff kind {kind!r} "
        "(expected 'affine_terminal', 'terminal_smooth' or 'integral')"
    )


def build_grid(cfg: dict) -> TimeGrid:
    block = _block(cfg, "grid")
    try:
        return TimeGrid(horizon=float(block["horizon"]), steps=int(block["steps"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid grid block: {exc}") from exc


def build_sim(cfg: dict) -> SimConfig:
    block = _block(cfg, "sim")
    try:
        return SimConfig(
            path_count=int(block["paths"]),
            master_seed=int(block["seed"]),
            antithetic=bool(block.get("antithetic", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid sim block: {exc}") from exc


def build_method(cfg: dict) -> dict:
    block = cfg.get("method", {"kind": "regression"})
    if not isinstance(block, dict):
        raise ConfigError("config block 'method' must be an object")
    kind = block.get("kind", "regression")
    if kind == "regression":
        degree = int(block.get("degree", 3))
        if degree < 0:
            raise ConfigError("regression degree must be nonnegative")
        return {"method": "regression", "degree": degree, "branches": None}
    if kind == "nested-mc":
        branches = int(block.get("branches", 0))
        if branches < 2:
            raise ConfigError("nested-mc needs at least two branches")
        return {"method": "nested-mc", "degree": 3, "branches": branches}
    raise ConfigError(f"unknown method kind {kind!r}")


def build_levels(cfg: dict) -> list[float]:
    block = cfg.get("truncation", {})
    if not isinstance(block, dict):
        raise ConfigError("config block 'truncation' must be an object")
    levels = block.get("levels", [])
    if not isinstance(levels, list):
        raise ConfigError("truncation levels must be a list")
    out = []
    for k in levels:
        k = float(k)
        if k <= 0:
            raise ConfigError("truncation levels must be positive")
        out.append(k)
    return out


def config_echo(cfg: dict) -> dict:
    """Copy of the effective config that goes into the summary.

    The output block is stripped: where a report lands must not change its
    bytes.
    """
    echo = json.loads(json.dumps(cfg))
    echo.pop("output", None)
    return echo


def resolve_out(args, cfg: dict) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    block = cfg.get("output", {})
    if isinstance(block, dict) and block.get("directory"):
        return Path(block["directory"])
    env = os.environ.get(OUT_ENV_VAR)
    if env:
        return Path(env)
    return Path(".")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _base_summary(command: str, cfg: dict, sim: SimConfig) -> dict:
    return {
        "command": command,
        "config": config_echo(cfg),
        "seed": sim.master_seed,
        "versions": reporting.versions(),
    }


def _write_report_files(report, out_dir: Path, summary: dict, plots: bool) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    reporting.write_csv(out_dir / "beta_estimates.csv", *reporting.beta_table(report))
    reporting.write_csv(out_dir / "residuals.csv", *reporting.residual_table(report))
    reporting.write_summary(out_dir / "summary.json", summary)
    if plots:
        from . import plots as figs

        figs.plot_beta_curve(
            report.beta_times, report.beta_mean, report.beta_se,
            out_dir / "beta_estimates.png",
        )
        figs.plot_residual_hist(
            report.residuals, report.eval_valid, out_dir / "residuals.png"
        )


def cmd_verify(args, cfg: dict) -> int:
    model = build_model(cfg)
    payoff = build_payoff(cfg)
    grid = build_grid(cfg)
    sim = build_sim(cfg)
    method = build_method(cfg)
    thresholds = cfg.get("thresholds", {})
    rms_threshold = thresholds.get("max_residual_rms") if isinstance(thresholds, dict) else None
    out_dir = resolve_out(args, cfg)
    report = verify_representation(
        payoff, model, grid, sim,
        method=method["method"], degree=method["degree"], branches=method["branches"],
        rms_threshold=rms_threshold, workers=args.workers,
    )
    summary = _base_summary("verify", cfg, sim)
    summary["report"] = reporting.report_payload(report)
    _write_report_files(report, out_dir, summary, args.plots)
    return EXIT_OK if report.passed else EXIT_CRITERIA


def cmd_hedge(args, cfg: dict) -> int:
    model = build_model(cfg)
    grid = build_grid(cfg)
    sim = build_sim(cfg)
    method = build_method(cfg)
    if "initial_wealth" not in cfg:
        raise ConfigError("hedge needs 'initial_wealth' (config key or --initial-wealth)")
    if "target_mean" not in cfg:
        raise ConfigError("hedge needs 'target_mean' (config key or --target-mean)")
    budget = float(cfg["initial_wealth"])
    target = float(cfg["target_mean"])
    out_dir = resolve_out(args, cfg)
    sol = mean_variance_multipliers(model, grid, sim, budget, target, workers=args.workers)
    report = verify_representation(
        sol.payoff(), model, grid, sim,
        method=method["method"], degree=method["degree"], branches=method["branches"],
        workers=args.workers,
    )
    summary = _base_summary("hedge", cfg, sim)
    summary["multipliers"] = reporting.multipliers_payload(sol)
    summary["report"] = reporting.report_payload(report)
    _write_report_files(report, out_dir, summary, args.plots)
    return EXIT_OK if report.passed else EXIT_CRITERIA


def cmd_converge(args, cfg: dict) -> int:
    model = build_model(cfg)
    payoff = build_payoff(cfg)
    grid = build_grid(cfg)
    sim = build_sim(cfg)
    levels = build_levels(cfg)
    out_dir = resolve_out(args, cfg)
    study = None
    if levels:
        study = truncation_convergence(
            payoff, model, grid, sim, levels, workers=args.workers
        )
    summary = _base_summary("converge", cfg, sim)
    summary["truncation"] = (
        reporting.truncation_payload(study)
        if study is not None
        else {"levels": [], "l2_distance": [], "tau_full_fraction": []}
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    reporting.write_csv(out_dir / "truncation.csv", *reporting.truncation_table(study))
    reporting.write_summary(out_dir / "summary.json", summary)
    if args.plots and study is not None:
        from . import plots as figs

        figs.plot_truncation(study.levels, study.l2_distance, out_dir / "truncation.png")
    return EXIT_OK


def cmd_novikov(args, cfg: dict) -> int:
    model = build_model(cfg)
    grid = build_grid(cfg)
    sim = build_sim(cfg)
    out_dir = resolve_out(args, cfg)
    diag = novikov_diagnostic(model, grid, sim, workers=args.workers)
    summary = _base_summary("novikov", cfg, sim)
    summary["novikov"] = diag
    out_dir.mkdir(parents=True, exist_ok=True)
    reporting.write_summary(out_dir / "summary.json", summary)
    return EXIT_OK


def cmd_simulate(args, cfg: dict) -> int:
    model = build_model(cfg)
    grid = build_grid(cfg)
    sim = build_sim(cfg)
    out_dir = resolve_out(args, cfg)
    ens = simulate_paths(model, grid, sim, workers=args.workers)
    z_mean, z_se = ensemble_mean_se(ens.z_terminal(), sim.antithetic, ens.valid)
    summary = _base_summary("simulate", cfg, sim)
    summary["ensemble"] = {
        "path_count": ens.path_count,
        "invalid_count": ens.invalid_count,
        "z_terminal_mean": z_mean,
        "z_terminal_mean_se": z_se,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    reporting.write_summary(out_dir / "summary.json", summary)
    if args.export_paths:
        reporting.write_csv(out_dir / "paths.csv", *reporting.paths_table(ens))
    if args.plots:
        from . import plots as figs

        figs.plot_path_fan(ens, out_dir / "paths.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrhedge",
        description="Monte Carlo martingale-representation hedging engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "simulate": "simulate a state ensemble and summarize it",
        "verify": "fit a hedge and verify the representation on held-out paths",
        "hedge": "solve mean-variance multipliers, then fit and verify the hedge",
        "converge": "run the clamp-level convergence study",
        "novikov": "probe the integrability condition under the real-world measure",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the run configuration JSON")
        p.add_argument("--paths", type=int, help="override sim.paths")
        p.add_argument("--steps", type=int, help="override grid.steps")
        p.add_argument("--seed", type=int, help="override sim.seed")
        p.add_argument("--out", help="output directory (default: config, then $MRHEDGE_OUT, then .)")
        p.add_argument("--workers", type=int, default=1, help="worker threads (results do not depend on this)")
        p.add_argument("--plots", action="store_true", help="also render PNG figures")
        if name == "simulate":
            p.add_argument("--export-paths", action="store_true", help="write the full state table to paths.csv")
        if name == "hedge":
            p.add_argument("--target-mean", type=float, help="target real-world mean of terminal wealth")
            p.add_argument("--initial-wealth", type=float, help="budget under the pricing measure")
    return parser


_HANDLERS = {
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "hedge": cmd_hedge,
    "converge": cmd_converge,
    "novikov": cmd_novikov,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    if args.workers is None or args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    start = time.perf_counter()
    try:
        cfg = load_config(args.config)
        apply_overrides(cfg, args)
        code = _HANDLERS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SingularSystemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AllPathsInvalidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"runtime: {time.perf_counter() - start:.3f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
