r"""Path simulation for the state pair (density, Brownian motion).

The state is :math:`Y = (\tilde Z, W)` where

.. math::
   \tilde Z(t) = \exp\Big\{-\int_0^t \tilde\theta^\top dW
                 - \tfrac12\int_0^t \|\tilde\theta\|^2 du\Big\}

is the stochastic exponential of the market price of risk.  Sampling runs
under the measure with density :math:`\tilde Z(T)`, where
:math:`\tilde W = W + \int \tilde\theta\,du` is Brownian; per step the drawn
increment :math:`\Delta\tilde W_i` yields

* ``W(t_{i+1}) = W(t_i) + \Delta\tilde W_i - \tilde\theta(t_i)\,\Delta t``
* ``log Z(t_{i+1}) = log Z(t_i) + \tfrac12\|\tilde\theta(t_i)\|^2 \Delta t
  - \tilde\theta(t_i)^\top \Delta\tilde W_i``

Stepping the log keeps the density structurally positive, and for constant
risk it reproduces :math:`\log\tilde Z(T) = \tfrac12\theta^2 T - \theta
\tilde W(T)` to accumulation rounding.  The same step kernel, parameterized
by a multiplier p, also drives the smooth-clamp truncation (p = clamp
ratio) and the linearized-flow top row (p = clamp slope), so those
recursions coincide bit for bit with the plain one whenever the clamp is
inactive.  Invalid (non-finite) paths are flagged, never dropped silently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import AllPathsInvalidError
from .grids import SimConfig, TimeGrid
from .models import MarketPriceOfRiskModel
from .rng import STREAM_FIT, STREAM_REAL_WORLD, run_chunked, substream

MEASURE_RISK_NEUTRAL = "risk-neutral"
MEASURE_REAL_WORLD = "real-world"

#: Fixed path-block size for the vectorized state march.  The marching loop
#: feeds path-major slices to shape-sensitive kernels (the OU risk model
#: contracts the path history with a matvec), so the block geometry must not
#: depend on the worker count; workers only decide how the fixed blocks are
#: distributed over threads.
PATH_BLOCK = 4096


# ---------------------------------------------------------------------------
# shared step kernels
# ---------------------------------------------------------------------------

def log_growth(theta: np.ndarray, d_w: np.ndarray, p, dt: float) -> np.ndarray:
    """One-step increment of the log-density under the sampling measure.

    ``(p - p^2/2) \\|theta\\|^2 dt - p theta . d_w`` -- with p == 1 this is the
    plain log-Euler step; the truncated density uses p = phi_k(Z)/Z and the
    flow top row uses p = phi_k'(Z).  The expression is arranged so that
    p == 1.0 reproduces the plain step bit for bit.
    """
    a = np.sum(theta * theta, axis=-1)
    dot = np.sum(theta * d_w, axis=-1)
    return (p - 0.5 * p * p) * a * dt - p * dot


def _log_growth_real_world(theta: np.ndarray, d_w: np.ndarray, dt: float) -> np.ndarray:
    """Log-density step when the drawn increments are P-Brownian."""
    a = np.sum(theta * theta, axis=-1)
    dot = np.sum(theta * d_w, axis=-1)
    return -(0.5 * a * dt) - dot


def smooth_clamp(x: np.ndarray, k: float) -> np.ndarray:
    """C^1 clamp: identity on [-k, k], saturating toward +-2k outside.

    phi_k(x) = sign(x) (k + (|x|-k) / (1 + (|x|-k)/k)) for |x| > k; satisfies
    |phi_k(x)| <= min(|x|, 2k) and slope in (0, 1].  The identity branch
    returns x itself, so inactive clamps are bit-exact pass-throughs.
    """
    if not k > 0:
        raise ValueError(f"clamp level must be positive, got {k}")
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    excess = ax - k
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        tail = np.sign(x) * (k + excess / (1.0 + excess / k))
        return np.where(ax <= k, x, tail)


def smooth_clamp_deriv(x: np.ndarray, k: float) -> np.ndarray:
    """Slope of :func:`smooth_clamp`: exactly 1 inside, 1/(1+(|x|-k)/k)^2 outside."""
    if not k > 0:
        raise ValueError(f"clamp level must be positive, got {k}")
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        denom = 1.0 + (ax - k) / k
        tail = 1.0 / (denom * denom)
        return np.where(ax <= k, 1.0, tail)


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StatePath:
    """One simulated path of (log density, Brownian motion, risk)."""

    path_id: int
    grid: TimeGrid
    d_wtilde: np.ndarray  # (N, n) drawn increments under the sampling measure
    w: np.ndarray         # (N+1, n)
    log_z: np.ndarray     # (N+1,)
    theta: np.ndarray     # (N+1, n)
    valid: bool
    measure: str

    def z(self) -> np.ndarray:
        return np.exp(self.log_z)


class PathEnsemble:
    """Immutable block of simulated paths (planar arrays, path-major)."""

    def __init__(self, grid, config, measure, stream, d_wtilde, w, log_z, theta, valid):
        self.grid = grid
        self.config = config
        self.measure = measure
        self.stream = stream
        self.d_wtilde = d_wtilde
        self.w = w
        self.log_z = log_z
        self.theta = theta
        self.valid = valid
        for arr in (d_wtilde, w, log_z, theta, valid):
            arr.flags.writeable = False

    @property
    def path_count(self) -> int:
        return self.w.shape[0]

    @property
    def dim(self) -> int:
        return self.w.shape[2]

    @property
    def invalid_count(self) -> int:
        return int(self.path_count - np.count_nonzero(self.valid))

    def z(self) -> np.ndarray:
        return np.exp(self.log_z)

    def z_terminal(self) -> np.ndarray:
        return np.exp(self.log_z[:, -1])

    def path(self, p: int) -> StatePath:
        return StatePath(
            path_id=p,
            grid=self.grid,
            d_wtilde=self.d_wtilde[p],
            w=self.w[p],
            log_z=self.log_z[p],
            theta=self.theta[p],
            valid=bool(self.valid[p]),
            measure=self.measure,
        )

    def __iter__(self) -> Iterator[StatePath]:
        return (self.path(p) for p in range(self.path_count))


@dataclass(frozen=True)
class TruncationResult:
    """Clamped density recursion for a whole ensemble at one level k.

    ``tau_index`` is the first grid node where the untruncated density or
    the sup-norm of the risk reaches k (``steps`` when never reached), and
    ``tau`` the corresponding time.  Up to that node the clamped log density
    equals the plain one bit for bit.
    """

    level: float
    grid: TimeGrid
    log_z: np.ndarray     # (P, N+1)
    tau_index: np.ndarray  # (P,)
    tau: np.ndarray        # (P,)

    def path(self, p: int) -> "TruncatedPath":
        return TruncatedPath(self.level, self.grid, self.log_z[p], int(self.tau_index[p]), float(self.tau[p]))


@dataclass(frozen=True)
class TruncatedPath:
    level: float
    grid: TimeGrid
    log_z: np.ndarray  # (N+1,)
    tau_index: int
    tau: float

    def z(self) -> np.ndarray:
        return np.exp(self.log_z)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def _draw_increments(grid: TimeGrid, config: SimConfig, dim: int, stream: int, workers: int) -> np.ndarray:
    P, N = config.path_count, grid.steps
    scale = np.sqrt(grid.dt)
    out = np.empty((P, N, dim))
    if config.antithetic:
        def fill(lo, hi):
            for u in range(lo, hi):
                z = substream(config.master_seed, stream, u).standard_normal((N, dim)) * scale
                out[2 * u] = z
                out[2 * u + 1] = -z
        run_chunked(fill, P // 2, workers)
    else:
        def fill(lo, hi):
            for u in range(lo, hi):
                out[u] = substream(config.master_seed, stream, u).standard_normal((N, dim)) * scale
        run_chunked(fill, P, workers)
    return out


def advance_state(model, grid, w, log_z, theta, d_w, start: int, stop: int, measure: str) -> None:
    """March the state arrays in place over nodes [start, stop).

    Shared by full simulations and nested continuations so both produce
    identical arithmetic on identical prefixes.
    """
    dt = grid.dt
    risk_neutral = measure == MEASURE_RISK_NEUTRAL
    for i in range(start, stop):
        th = model.theta_prefix(w, grid, i)
        theta[:, i] = th
        if risk_neutral:
            w[:, i + 1] = w[:, i] + (d_w[:, i] - th * dt)
            log_z[:, i + 1] = log_z[:, i] + log_growth(th, d_w[:, i], 1.0, dt)
        else:
            w[:, i + 1] = w[:, i] + d_w[:, i]
            log_z[:, i + 1] = log_z[:, i] + _log_growth_real_world(th, d_w[:, i], dt)
    theta[:, stop] = model.theta_prefix(w, grid, stop)


def simulate_paths(
    model: MarketPriceOfRiskModel,
    grid: TimeGrid,
    config: SimConfig,
    *,
    stream: int = STREAM_FIT,
    measure: str = MEASURE_RISK_NEUTRAL,
    workers: int = 1,
) -> PathEnsemble:
    """Simulate an ensemble of state paths on the grid.

    Under the default risk-neutral measure the drawn increments are the
    Brownian increments of :math:`\\tilde W`; under ``MEASURE_REAL_WORLD``
    they drive W directly (used by the Novikov diagnostics).  Path p is a
    pure function of ``(master_seed, stream, p)``, so results do not depend
    on ``workers``.
    """
    if measure not in (MEASURE_RISK_NEUTRAL, MEASURE_REAL_WORLD):
        raise ValueError(f"unknown measure {measure!r}")
    P, N, n = config.path_count, grid.steps, model.dimension
    d_w = _draw_increments(grid, config, n, stream, workers)
    w = np.zeros((P, N + 1, n))
    log_z = np.zeros((P, N + 1))
    theta = np.empty((P, N + 1, n))

    def body(lo, hi):
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            advance_state(model, grid, w[lo:hi], log_z[lo:hi], theta[lo:hi], d_w[lo:hi], 0, N, measure)

    run_chunked(body, P, workers, chunk=PATH_BLOCK)
    valid = (
        np.isfinite(w).all(axis=(1, 2))
        & np.isfinite(log_z).all(axis=1)
        & np.isfinite(theta).all(axis=(1, 2))
    )
    return PathEnsemble(grid, config, measure, stream, d_w, w, log_z, theta, valid)


# ---------------------------------------------------------------------------
# truncation
# ---------------------------------------------------------------------------

def truncate_ensemble(ensemble: PathEnsemble, model: MarketPriceOfRiskModel, k: float) -> TruncationResult:
    """Clamped density recursion at level k over a simulated ensemble.

    The risk entering the density dynamics is clamped componentwise and the
    density slot itself enters through phi_k, applied multiplicatively via
    the step multiplier p = phi_k(Z)/Z; the Brownian component is untouched,
    so W (and the risk path evaluated along it) is shared with the input.
    """
    if not k > 0:
        raise ValueError(f"truncation level must be positive, got {k}")
    grid = ensemble.grid
    P, N = ensemble.path_count, grid.steps
    dt = grid.dt
    log_zk = np.empty((P, N + 1))
    log_zk[:, 0] = 0.0
    theta = ensemble.theta
    d_w = ensemble.d_wtilde
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for i in range(N):
            zk = np.exp(log_zk[:, i])
            ratio = smooth_clamp(zk, k) / zk
            th_c = smooth_clamp(theta[:, i], k)
            log_zk[:, i + 1] = log_zk[:, i] + log_growth(th_c, d_w[:, i], ratio, dt)
        # first node where the plain density or the sup-norm risk reaches k
        z_path = np.exp(ensemble.log_z)
        theta_sup = np.max(np.abs(theta), axis=2)
        crossed = (z_path >= k) | (theta_sup >= k)
    tau_index = np.where(crossed.any(axis=1), crossed.argmax(axis=1), N)
    tau = grid.nodes[tau_index]
    log_zk.flags.writeable = False
    tau_index.flags.writeable = False
    tau = np.array(tau)
    tau.flags.writeable = False
    return TruncationResult(level=float(k), grid=grid, log_z=log_zk, tau_index=tau_index, tau=tau)


def truncate_path(path: StatePath, model: MarketPriceOfRiskModel, k: float, grid: TimeGrid) -> TruncatedPath:
    """Per-path form of :func:`truncate_ensemble`."""
    if grid != path.grid:
        raise ValueError("grid does not match the path's grid")
    ens = PathEnsemble(
        grid,
        SimConfig(path_count=1, master_seed=0),
        MEASURE_RISK_NEUTRAL,
        stream=-1,
        d_wtilde=path.d_wtilde[None].copy(),
        w=path.w[None].copy(),
        log_z=path.log_z[None].copy(),
        theta=path.theta[None].copy(),
        valid=np.array([path.valid]),
    )
    return truncate_ensemble(ens, model, k).path(0)


# ---------------------------------------------------------------------------
# statistics and diagnostics
# ---------------------------------------------------------------------------

def ensemble_mean_se(values: np.ndarray, antithetic: bool = False, valid: np.ndarray | None = None):
    """Mean and standard error of per-path values.

    With antithetic sampling the independent units are mirrored pairs, so
    both statistics are computed over pair averages (pairs containing an
    invalid member are excluded).
    """
    x = np.asarray(values, dtype=float)
    if valid is None:
        valid = np.ones(x.shape[0], dtype=bool)
    if antithetic:
        keep = valid.reshape(-1, 2).all(axis=1)
        units = x.reshape((-1, 2) + x.shape[1:])[keep].mean(axis=1)
    else:
        units = x[valid]
    count = units.shape[0]
    if count == 0:
        raise AllPathsInvalidError("no valid paths to average")
    mean = units.mean(axis=0)
    if count > 1:
        se = units.std(axis=0, ddof=1) / np.sqrt(count)
    else:
        se = np.zeros_like(mean)
    if x.ndim == 1:
        return float(mean), float(se)
    return mean, se


def novikov_diagnostic(
    model: MarketPriceOfRiskModel,
    grid: TimeGrid,
    config: SimConfig,
    *,
    exp_cap: float = 700.0,
    workers: int = 1,
) -> dict:
    """Monte Carlo probe of the Novikov integrability condition.

    Simulates W under the real-world measure and estimates
    ``E[exp(0.5 int ||theta||^2 du)]`` together with the martingale gap
    ``|E[Z(T)] - 1|``.  Running exponents above ``exp_cap`` are capped and
    counted in ``blowup_fraction`` instead of overflowing.
    """
    ens = simulate_paths(model, grid, config, stream=STREAM_REAL_WORLD, measure=MEASURE_REAL_WORLD, workers=workers)
    N = grid.steps
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        s = 0.5 * grid.dt * np.sum(ens.theta[:, :N] ** 2, axis=(1, 2))
        blowup = s > exp_cap
        nov = np.exp(np.minimum(s, exp_cap))
        z_terminal = ens.z_terminal()
    anti = config.antithetic
    if not ens.valid.any():
        raise AllPathsInvalidError("all real-world paths invalid in Novikov diagnostic")
    nov_mean, nov_se = ensemble_mean_se(nov, anti, ens.valid)
    z_mean, z_se = ensemble_mean_se(z_terminal, anti, ens.valid)
    return {
        "novikov_estimate": nov_mean,
        "novikov_se": nov_se,
        "martingale_gap": abs(z_mean - 1.0),
        "martingale_gap_se": z_se,
        "blowup_fraction": float(np.count_nonzero(blowup & ens.valid) / max(1, np.count_nonzero(ens.valid))),
        "invalid_fraction": float(ens.invalid_count / ens.path_count),
        "path_count": ens.path_count,
    }
