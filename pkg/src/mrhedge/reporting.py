"""Deterministic report files: CSV tables and a JSON summary.

Identical inputs must produce byte-identical files, so everything here is
plain-text with a fixed convention: UTF-8, LF line endings, comma
separator, '.' decimal point, shortest round-trip float formatting, and
sorted JSON keys.  Nothing time- or host-dependent goes into a report;
wall-clock timing is the caller's business (it goes to stderr).
"""

from __future__ import annotations

import json
import platform
from pathlib import Path

import numpy as np

from ._version import __version__
from .hedging import HedgeReport, MultiplierSolution, TruncationStudy

__all__ = [
    "format_number",
    "write_csv",
    "write_summary",
    "beta_table",
    "residual_table",
    "truncation_table",
    "paths_table",
    "versions",
    "report_payload",
    "multipliers_payload",
    "truncation_payload",
]


def format_number(x) -> str:
    """Shortest exact decimal form of a number (round-trip safe)."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header: list[str], rows) -> None:
    """Write a comma-separated table with LF endings and a header row."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_number(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_summary(path, payload: dict) -> None:
    """Write the JSON summary with sorted keys and a trailing newline."""
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8", newline="\n")


def versions() -> dict:
    return {
        "mrhedge": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


# ---------------------------------------------------------------------------
# table builders
# ---------------------------------------------------------------------------

def beta_table(report: HedgeReport) -> tuple[list[str], list[tuple]]:
    n = report.beta_mean.shape[1]
    header = (
        ["t"]
        + [f"beta_{d + 1}" for d in range(n)]
        + [f"se_{d + 1}" for d in range(n)]
    )
    rows = [
        (report.beta_times[i], *report.beta_mean[i], *report.beta_se[i])
        for i in range(report.beta_times.shape[0])
    ]
    return header, rows


def residual_table(report: HedgeReport) -> tuple[list[str], list[tuple]]:
    header = ["path_id", "residual"]
    rows = [(p, report.residuals[p]) for p in range(report.residuals.shape[0])]
    return header, rows


def truncation_table(study: TruncationStudy | None) -> tuple[list[str], list[tuple]]:
    header = ["k", "l2_distance", "tau_full_fraction"]
    if study is None:
        return header, []
    rows = [
        (study.levels[j], study.l2_distance[j], study.tau_full_fraction[j])
        for j in range(len(study.levels))
    ]
    return header, rows


def paths_table(ensemble) -> tuple[list[str], list[tuple]]:
    """Long-format state dump: one row per (path, node)."""
    n = ensemble.dim
    header = (
        ["path_id", "node", "t", "log_z"]
        + [f"w_{d + 1}" for d in range(n)]
        + [f"theta_{d + 1}" for d in range(n)]
    )
    nodes = ensemble.grid.nodes
    rows = []
    for p in range(ensemble.path_count):
        for i in range(nodes.shape[0]):
            rows.append(
                (p, i, nodes[i], ensemble.log_z[p, i], *ensemble.w[p, i], *ensemble.theta[p, i])
            )
    return header, rows


# ---------------------------------------------------------------------------
# summary payload builders
# ---------------------------------------------------------------------------

def report_payload(report: HedgeReport) -> dict:
    return {
        "payoff_mean": report.payoff_mean,
        "payoff_mean_se": report.payoff_mean_se,
        "residual_mean": report.residual_mean,
        "residual_mean_se": report.residual_mean_se,
        "residual_rms": report.residual_rms,
        "rms_threshold": report.rms_threshold,
        "passed_mean": report.passed_mean,
        "passed_rms": report.passed_rms,
        "passed": report.passed,
        "fit_paths": report.fit_paths,
        "eval_paths": report.eval_paths,
        "fit_invalid": report.fit_invalid,
        "eval_invalid": report.eval_invalid,
        "estimator": report.estimate.descriptor,
    }


def multipliers_payload(sol: MultiplierSolution) -> dict:
    return {
        "lambda1": sol.lam1,
        "lambda2": sol.lam2,
        "lambda2_se": sol.lam2_se,
        "budget": sol.budget,
        "target_mean": sol.target_mean,
        "z_terminal_mean": sol.z_mean,
        "z_terminal_mean_se": sol.z_mean_se,
        "reweight_gap": sol.reweight_gap,
        "reweight_gap_se": sol.reweight_gap_se,
        "condition_number": sol.condition_number,
        "path_count": sol.path_count,
    }


def truncation_payload(study: TruncationStudy) -> dict:
    return {
        "levels": list(study.levels),
        "l2_distance": study.l2_distance,
        "l2_distance_se": study.l2_distance_se,
        "tau_full_fraction": study.tau_full_fraction,
        "ensemble_sup": study.ensemble_sup,
        "sup_moments": study.sup_moments,
        "path_count": study.path_count,
        "invalid_count": study.invalid_count,
    }
