"""Figure rendering for report directories.

Figures are written next to the delimited output when a report run asks
for them.  The Agg backend keeps rendering headless, and the PNG metadata
is pinned so repeated runs of the same configuration produce identical
bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "plot_beta_curve",
    "plot_residual_hist",
    "plot_truncation",
    "plot_path_fan",
]

_SAVE_KW = {"dpi": 120, "metadata": {"Software": "mrhedge"}}


def _finish(fig, out_path) -> Path:
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)
    return out_path


def plot_beta_curve(times, beta_mean, beta_se, out_path) -> Path:
    """Hedge coefficient curve with a two-standard-error band per component."""
    times = np.asarray(times)
    beta_mean = np.atleast_2d(np.asarray(beta_mean).T).T
    beta_se = np.atleast_2d(np.asarray(beta_se).T).T
    fig, ax = plt.subplots(figsize=(7, 4))
    for d in range(beta_mean.shape[1]):
        mean = beta_mean[:, d]
        band = 2.0 * beta_se[:, d]
        line, = ax.plot(times, mean, label=f"beta_{d + 1}")
        ax.fill_between(times, mean - band, mean + band, alpha=0.25, color=line.get_color())
    ax.set_xlabel("t")
    ax.set_ylabel("hedge coefficient")
    ax.legend(loc="best")
    ax.set_title("projected hedge coefficients (mean +/- 2 SE)")
    return _finish(fig, out_path)


def plot_residual_hist(residuals, valid, out_path, bins: int = 60) -> Path:
    """Histogram of per-path representation residuals on valid paths."""
    r = np.asarray(residuals)[np.asarray(valid, dtype=bool)]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(r, bins=bins, color="tab:blue", alpha=0.85)
    ax.set_xlabel("residual")
    ax.set_ylabel("paths")
    ax.set_title("representation residuals")
    return _finish(fig, out_path)


def plot_truncation(levels, distances, out_path) -> Path:
    """Clamp-level convergence on a log-log scale (zeros shown at the floor)."""
    levels = np.asarray(levels, dtype=float)
    dist = np.asarray(distances, dtype=float)
    floor = 1e-18
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(levels, np.maximum(dist, floor), marker="o", color="tab:red")
    ax.set_xlabel("clamp level k")
    ax.set_ylabel("integrated squared gap")
    ax.set_title("truncated-integrand convergence")
    return _finish(fig, out_path)


def plot_path_fan(ensemble, out_path, max_paths: int = 50) -> Path:
    """A few simulated density and risk paths for eyeballing a run."""
    count = min(max_paths, ensemble.path_count)
    nodes = ensemble.grid.nodes
    fig, (ax_z, ax_t) = plt.subplots(1, 2, figsize=(10, 4))
    for p in range(count):
        ax_z.plot(nodes, np.exp(ensemble.log_z[p]), lw=0.7, alpha=0.6)
        ax_t.plot(nodes, ensemble.theta[p, :, 0], lw=0.7, alpha=0.6)
    ax_z.set_xlabel("t")
    ax_z.set_ylabel("density value")
    ax_z.set_title("density paths")
    ax_t.set_xlabel("t")
    ax_t.set_ylabel("risk (first component)")
    ax_t.set_title("market-price-of-risk paths")
    return _finish(fig, out_path)
