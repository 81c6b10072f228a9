"""Hedging integrands, conditional projection, and representation checks.

The martingale representation of a payoff ``L`` under the pricing measure
reads ``L = E[L] + sum_i beta(t_i) . dW(t_i)`` in discrete time, where
``beta(t) = E[lambda(t) | F_t]`` projects the pathwise integrand onto the
information at t.  This module computes ``lambda`` from the payoff's
derivative measure and the state flow, projects it with cross-sectional
regression or nested Monte Carlo, and verifies the representation on a
held-out ensemble.  A clamped variant of everything supports the
truncation convergence study for unbounded risk models.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .engine import (
    MEASURE_RISK_NEUTRAL,
    PathEnsemble,
    StatePath,
    TruncatedPath,
    TruncationResult,
    advance_state,
    ensemble_mean_se,
    log_growth,
    simulate_paths,
    smooth_clamp,
    smooth_clamp_deriv,
    truncate_ensemble,
)
from .errors import AllPathsInvalidError, SingularSystemError
from .flows import KernelTable, lower_block_solve, top_row_sweep
from .grids import SimConfig, TimeGrid
from .models import MarketPriceOfRiskModel
from .payoffs import AffineTerminal, Payoff
from .rng import STREAM_EVAL, STREAM_FIT, STREAM_NESTED, run_chunked, substream

__all__ = [
    "IntegrandPath",
    "IntegrandEngine",
    "compute_integrands",
    "compute_integrand",
    "compute_truncated_integrand",
    "HedgeEstimate",
    "project_integrand",
    "nested_mc_beta",
    "HedgeReport",
    "verify_representation",
    "TruncationStudy",
    "truncation_convergence",
    "MultiplierSolution",
    "mean_variance_multipliers",
]

# Residual-mean pass floor: covers configurations where the representation
# is exact and the standard error collapses to rounding noise.
EXACT_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# pathwise integrand
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntegrandPath:
    """Pathwise hedging integrand ``lambda`` along one path.

    ``values[i]`` is the (n,) integrand at node i; the terminal node is
    zero by convention (no mass strictly after the horizon).  ``level`` is
    the clamp level, ``inf`` for the untruncated integrand.
    """

    path_id: int
    grid: TimeGrid
    values: np.ndarray
    level: float = float("inf")


class IntegrandEngine:
    """Computes pathwise integrands for one ensemble, plain or clamped.

    Two routes share the same step arithmetic:

    * when the risk model has an empty derivative kernel and the payoff's
      measure is a single terminal atom, the flow contraction collapses to
      a closed form in the top-left flow entry and the whole ensemble is
      handled with array sweeps;
    * otherwise the engine solves the deterministic lower flow block once
      per anchor (shared across paths and clamp levels) and marches the
      stochastic top row per anchor, accumulating the measure contraction
      on the fly.
    """

    def __init__(self, payoff: Payoff, model: MarketPriceOfRiskModel, ensemble: PathEnsemble):
        if ensemble.dim != model.dimension:
            raise ValueError("ensemble dimension does not match the model")
        self.payoff = payoff
        self.model = model
        self.ensemble = ensemble
        self.grid = ensemble.grid
        self.fast = model.kernel_is_empty and payoff.terminal_atomic
        self._table: KernelTable | None = None
        self._blocks: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    # -- shared state preparation ------------------------------------------

    def _state(self, truncation: TruncationResult | None) -> dict:
        ens = self.ensemble
        grid = self.grid
        N = grid.steps
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            if truncation is None:
                z_state = np.exp(ens.log_z)
                st = {
                    "z_star": z_state,
                    "theta_star": ens.theta,
                    "slope": 1.0,
                    "p_z": 1.0,
                    "log_flow": ens.log_z,
                }
            else:
                if truncation.grid != grid:
                    raise ValueError("truncation grid does not match the ensemble")
                k = truncation.level
                z_state = np.exp(truncation.log_z)
                p_z = smooth_clamp_deriv(z_state, k)
                st = {
                    "z_star": smooth_clamp(z_state, k),
                    "theta_star": smooth_clamp(ens.theta, k),
                    "slope": smooth_clamp_deriv(ens.theta, k),
                    "p_z": p_z,
                }
                if self.fast:
                    gam = log_growth(
                        st["theta_star"][:, :N], ens.d_wtilde, p_z[:, :N], grid.dt
                    )
                    st["log_flow"] = np.concatenate(
                        [np.zeros((ens.path_count, 1)), np.cumsum(gam, axis=1)], axis=1
                    )
            st["rows_T"] = self.payoff.terminal_rows(z_state, ens.w, grid)
            st["dens"] = self.payoff.density_rows(z_state, ens.w, grid)
        return st

    # -- lower flow blocks (generic route) ---------------------------------

    def _block(self, anchor: int) -> tuple[np.ndarray, np.ndarray]:
        blk = self._blocks.get(anchor)
        if blk is None:
            if self._table is None:
                self._table = KernelTable(self.model, self.grid)
            blk = lower_block_solve(self._table, self.grid, anchor)
            self._blocks[anchor] = blk
        return blk

    def _anchor_values(self, s: int, st: dict) -> np.ndarray:
        """Integrand block ``lambda(t_s)`` of shape (P, n) via one sweep."""
        grid = self.grid
        N = grid.steps
        ens = self.ensemble
        n = ens.dim
        psi, kappa = self._block(s)
        rows_T = st["rows_T"]
        dens = st["dens"]
        acc = np.zeros((ens.path_count, 1 + n))
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            if dens is None:
                top = top_row_sweep(
                    grid, s, kappa, st["z_star"], st["theta_star"],
                    st["slope"], st["p_z"], ens.d_wtilde,
                )
                if rows_T is not None:
                    acc += rows_T[:, :1] * top + rows_T[:, 1:] @ psi[N]
            else:
                dt = grid.dt

                def on_step(i, top):
                    if i < N:
                        np.add(acc, dt * (dens[:, i, :1] * top + dens[:, i, 1:] @ psi[i]), out=acc)
                    elif rows_T is not None:
                        np.add(acc, rows_T[:, :1] * top + rows_T[:, 1:] @ psi[N], out=acc)

                top_row_sweep(
                    grid, s, kappa, st["z_star"], st["theta_star"],
                    st["slope"], st["p_z"], ens.d_wtilde, on_step=on_step,
                )
            out = -acc[:, :1] * (st["z_star"][:, s, None] * st["theta_star"][:, s])
            out += acc[:, 1:]
        return out

    # -- public entry points ------------------------------------------------

    def compute(self, truncation: TruncationResult | None = None, workers: int = 1) -> np.ndarray:
        """Integrand array of shape (P, N + 1, n); terminal node is zero."""
        grid = self.grid
        ens = self.ensemble
        P, N, n = ens.path_count, grid.steps, ens.dim
        st = self._state(truncation)
        lam = np.empty((P, N + 1, n))
        if self.fast:
            rows = st["rows_T"]
            with np.errstate(over="ignore", invalid="ignore", under="ignore"):
                log_flow = st["log_flow"]
                coef = np.exp(log_flow[:, N, None] - log_flow)
                coef *= st["z_star"]
                coef *= rows[:, :1]
                np.multiply(coef[:, :, None], st["theta_star"], out=lam)
                np.negative(lam, out=lam)
                lam += rows[:, None, 1:]
        else:
            for s in range(N):
                self._block(s)

            def body(lo, hi):
                for s in range(lo, hi):
                    lam[:, s, :] = self._anchor_values(s, st)

            run_chunked(body, N, workers)
        lam[:, N, :] = 0.0
        return lam

    def compute_at(self, anchor: int, truncation: TruncationResult | None = None) -> np.ndarray:
        """Integrand block (P, n) at a single anchor node."""
        if anchor == self.grid.steps:
            return np.zeros((self.ensemble.path_count, self.ensemble.dim))
        st = self._state(truncation)
        if self.fast:
            rows = st["rows_T"]
            log_flow = st["log_flow"]
            with np.errstate(over="ignore", invalid="ignore", under="ignore"):
                coef = rows[:, 0] * np.exp(log_flow[:, -1] - log_flow[:, anchor])
                coef = coef * st["z_star"][:, anchor]
                return -coef[:, None] * st["theta_star"][:, anchor] + rows[:, 1:]
        return self._anchor_values(anchor, st)


def compute_integrands(
    payoff: Payoff,
    model: MarketPriceOfRiskModel,
    ensemble: PathEnsemble,
    *,
    truncation: TruncationResult | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Pathwise integrands for a whole ensemble, shape (P, N + 1, n)."""
    return IntegrandEngine(payoff, model, ensemble).compute(truncation, workers=workers)


def _singleton(path: StatePath) -> PathEnsemble:
    return PathEnsemble(
        path.grid,
        SimConfig(path_count=1, master_seed=0),
        MEASURE_RISK_NEUTRAL,
        stream=-1,
        d_wtilde=path.d_wtilde[None].copy(),
        w=path.w[None].copy(),
        log_z=path.log_z[None].copy(),
        theta=path.theta[None].copy(),
        valid=np.array([path.valid]),
    )


def compute_integrand(payoff: Payoff, model: MarketPriceOfRiskModel, path: StatePath) -> IntegrandPath:
    """Pathwise integrand along a single simulated path."""
    lam = IntegrandEngine(payoff, model, _singleton(path)).compute()
    return IntegrandPath(path.path_id, path.grid, lam[0])


def compute_truncated_integrand(
    payoff: Payoff,
    model: MarketPriceOfRiskModel,
    path: StatePath,
    truncated: TruncatedPath,
) -> IntegrandPath:
    """Clamped integrand along a single path at the truncated path's level."""
    if truncated.grid != path.grid:
        raise ValueError("truncated path grid does not match the state path")
    shim = TruncationResult(
        level=truncated.level,
        grid=truncated.grid,
        log_z=truncated.log_z[None],
        tau_index=np.array([truncated.tau_index]),
        tau=np.array([truncated.tau]),
    )
    lam = IntegrandEngine(payoff, model, _singleton(path)).compute(shim)
    return IntegrandPath(path.path_id, path.grid, lam[0], level=truncated.level)


# ---------------------------------------------------------------------------
# conditional projection
# ---------------------------------------------------------------------------

def _monomial_exponents(nvars: int, degree: int) -> list[tuple[int, ...]]:
    """All exponent tuples with total degree <= degree, intercept first."""
    exps: list[tuple[int, ...]] = []

    def rec(prefix: tuple[int, ...], remaining: int, budget: int) -> None:
        if remaining == 0:
            exps.append(prefix)
            return
        for e in range(budget + 1):
            rec(prefix + (e,), remaining - 1, budget - e)

    rec((), nvars, degree)
    exps.sort(key=lambda e: (sum(e), e))
    return exps


def _design_matrix(ensemble: PathEnsemble, node: int, exps: list[tuple[int, ...]]) -> np.ndarray:
    """Monomial features of the time-``node`` state, shape (P, len(exps)).

    Variables are the density value followed by the risk components; both
    are F_t-measurable, so the fitted projection is adapted.
    """
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        cols = [np.exp(ensemble.log_z[:, node])]
        cols.extend(ensemble.theta[:, node, d] for d in range(ensemble.dim))
        X = np.empty((ensemble.path_count, len(exps)))
        for j, e in enumerate(exps):
            col = np.ones(ensemble.path_count)
            for v, p in zip(cols, e):
                if p:
                    col = col * v**p
            X[:, j] = col
    return X


def _select_columns(X: np.ndarray) -> list[int]:
    """Drop near-constant and duplicated feature columns, keeping the intercept.

    A column is near-constant when its spread is at rounding scale, and a
    duplicate when its centered correlation with an already kept column is
    numerically one; both would otherwise make the normal equations
    rank-deficient node after node.
    """
    keep = [0]
    kept_centered: list[np.ndarray] = []
    kept_norms: list[float] = []
    for j in range(1, X.shape[1]):
        col = X[:, j]
        mean = col.mean()
        spread = col.std()
        if spread <= 1e-12 * (1.0 + abs(mean)):
            continue
        centered = col - mean
        norm = float(np.linalg.norm(centered))
        dup = any(
            abs(float(centered @ prev)) >= (1.0 - 1e-10) * norm * pnorm
            for prev, pnorm in zip(kept_centered, kept_norms)
        )
        if dup:
            continue
        keep.append(j)
        kept_centered.append(centered)
        kept_norms.append(norm)
    return keep


@dataclass
class HedgeEstimate:
    """Fitted conditional projection ``beta(t) ~ E[lambda(t) | F_t]``.

    ``predict(ensemble)`` evaluates the projection on any ensemble sharing
    the grid, returning (P, N, n) adapted coefficient paths.  ``descriptor``
    records the estimator so reports can reproduce it.
    """

    method: str
    grid: TimeGrid
    descriptor: dict
    _predict: Callable[[PathEnsemble], np.ndarray] = field(repr=False)

    def predict(self, ensemble: PathEnsemble) -> np.ndarray:
        if ensemble.grid != self.grid:
            raise ValueError("ensemble grid does not match the fitted projection")
        return self._predict(ensemble)


def _fit_regression(
    ensemble: PathEnsemble, integrands: np.ndarray, degree: int
) -> HedgeEstimate:
    grid = ensemble.grid
    N, n = grid.steps, ensemble.dim
    exps = _monomial_exponents(1 + n, degree)
    valid = ensemble.valid
    if not valid.any():
        raise AllPathsInvalidError("no valid paths to fit the projection on")
    fits: list[tuple[list[int], np.ndarray]] = []
    deficient = 0
    for i in range(N):
        X = _design_matrix(ensemble, i, exps)[valid]
        y = integrands[valid, i, :]
        keep = _select_columns(X)
        if len(keep) == 1:
            # intercept-only least squares is the plain mean, exactly
            coef = y.mean(axis=0)[None, :]
        else:
            Xk = X[:, keep]
            coef, _, rank, _ = np.linalg.lstsq(Xk, y, rcond=None)
            if rank < len(keep):
                deficient += 1
        fits.append((keep, coef))

    variables = ["z"] + [f"theta_{d + 1}" for d in range(n)]
    descriptor = {
        "method": "regression",
        "degree": degree,
        "variables": variables,
        "monomials": [list(e) for e in exps],
        "rank_deficient_nodes": deficient,
        "coefficients": [
            {"columns": list(keep), "values": coef.tolist()} for keep, coef in fits
        ],
    }

    def predict(ens: PathEnsemble) -> np.ndarray:
        beta = np.empty((ens.path_count, N, n))
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            for i in range(N):
                X = _design_matrix(ens, i, exps)
                keep, coef = fits[i]
                beta[:, i, :] = X[:, keep] @ coef
        return beta

    return HedgeEstimate("regression", grid, descriptor, predict)


def nested_mc_beta(
    payoff: Payoff,
    model: MarketPriceOfRiskModel,
    ensemble: PathEnsemble,
    probes: Sequence[tuple[int, int]],
    branches: int,
    *,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Conditional expectation of the integrand by nested resimulation.

    For each probe ``(path, node)`` the state prefix is frozen and
    ``branches`` independent continuations are drawn from a dedicated
    substream keyed on (path, node); the returned values and standard
    errors are branch statistics of the recomputed integrand at the probe
    node.  Requires at least two branches.
    """
    if branches < 2:
        raise ValueError("nested Monte Carlo needs at least two branches")
    grid = ensemble.grid
    N, n = grid.steps, ensemble.dim
    B = branches
    seed = ensemble.config.master_seed
    dt = grid.dt
    values = np.empty((len(probes), n))
    ses = np.empty((len(probes), n))

    def body(lo, hi):
        for q in range(lo, hi):
            p, i = probes[q]
            if not 0 <= i < N:
                raise ValueError(f"probe node {i} outside 0..{N - 1}")
            gen = substream(seed, STREAM_NESTED, p, node=i)
            d_w = np.zeros((B, N, n))
            d_w[:, i:] = gen.standard_normal((B, N - i, n)) * np.sqrt(dt)
            w = np.zeros((B, N + 1, n))
            log_z = np.zeros((B, N + 1))
            theta = np.empty((B, N + 1, n))
            w[:, : i + 1] = ensemble.w[p, : i + 1]
            log_z[:, : i + 1] = ensemble.log_z[p, : i + 1]
            theta[:, : i + 1] = ensemble.theta[p, : i + 1]
            with np.errstate(over="ignore", invalid="ignore", under="ignore"):
                advance_state(model, grid, w, log_z, theta, d_w, i, N, MEASURE_RISK_NEUTRAL)
            valid = (
                np.isfinite(w).all(axis=(1, 2))
                & np.isfinite(log_z).all(axis=1)
                & np.isfinite(theta).all(axis=(1, 2))
            )
            cont = PathEnsemble(
                grid, SimConfig(path_count=B, master_seed=seed), MEASURE_RISK_NEUTRAL,
                STREAM_NESTED, d_w, w, log_z, theta, valid,
            )
            lam = IntegrandEngine(payoff, model, cont).compute_at(i)
            values[q], ses[q] = ensemble_mean_se(lam, valid=valid)

    run_chunked(body, len(probes), workers)
    return values, ses


def project_integrand(
    ensemble: PathEnsemble,
    integrands: np.ndarray,
    method: str = "regression",
    *,
    degree: int = 3,
    payoff: Payoff | None = None,
    model: MarketPriceOfRiskModel | None = None,
    branches: int | None = None,
    workers: int = 1,
) -> HedgeEstimate:
    """Project pathwise integrands onto the filtration.

    ``method="regression"`` fits per-node least squares on monomials of the
    current state (degree ``degree``).  ``method="nested-mc"`` averages
    ``branches`` resimulated continuations per (path, node); it needs the
    payoff and model to recompute integrands and is meant for spot checks
    at small scale.
    """
    if method == "regression":
        return _fit_regression(ensemble, integrands, degree)
    if method == "nested-mc":
        if payoff is None or model is None:
            raise ValueError("nested-mc projection needs the payoff and the model")
        if branches is None or branches < 2:
            raise ValueError("nested-mc projection needs branches >= 2")
        grid = ensemble.grid
        N, n = grid.steps, ensemble.dim

        def predict(ens: PathEnsemble) -> np.ndarray:
            beta = np.full((ens.path_count, N, n), np.nan)
            probes = [(p, i) for p in range(ens.path_count) if ens.valid[p] for i in range(N)]
            vals, _ = nested_mc_beta(payoff, model, ens, probes, branches, workers=workers)
            for (p, i), v in zip(probes, vals):
                beta[p, i, :] = v
            return beta

        descriptor = {"method": "nested-mc", "branches": int(branches)}
        return HedgeEstimate("nested-mc", grid, descriptor, predict)
    raise ValueError(f"unknown projection method {method!r}")


# ---------------------------------------------------------------------------
# representation verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HedgeReport:
    """Outcome of a martingale-representation check on held-out paths.

    The sampling error attached to the residual mean is the standard error
    of the hedge leg's mean: with the payoff mean estimated on the same
    ensemble, the mean residual is identically minus the mean hedge leg, so
    that is the honest scale to test it against.
    """

    payoff_mean: float
    payoff_mean_se: float
    residual_mean: float
    residual_mean_se: float
    residual_rms: float
    rms_threshold: float | None
    passed_mean: bool
    passed_rms: bool | None
    passed: bool
    residuals: np.ndarray
    eval_valid: np.ndarray
    beta_times: np.ndarray
    beta_mean: np.ndarray
    beta_se: np.ndarray
    estimate: HedgeEstimate
    fit_paths: int
    eval_paths: int
    fit_invalid: int
    eval_invalid: int


def verify_representation(
    payoff: Payoff,
    model: MarketPriceOfRiskModel,
    grid: TimeGrid,
    config: SimConfig,
    *,
    method: str = "regression",
    degree: int = 3,
    branches: int | None = None,
    rms_threshold: float | None = None,
    workers: int = 1,
) -> HedgeReport:
    """Fit the hedge on one ensemble and test it on an independent one.

    The fit ensemble provides pathwise integrands and the projection; the
    evaluation ensemble, drawn from a disjoint substream, provides the
    residuals ``r_p = L_p - mean(L) - sum_i beta(t_i) . dW_i``.  The check
    passes when the residual mean is within three standard errors of zero
    (plus a rounding floor) and, if requested, the residual RMS is below
    ``rms_threshold``.
    """
    fit_ens = simulate_paths(model, grid, config, stream=STREAM_FIT, workers=workers)
    if not fit_ens.valid.any():
        raise AllPathsInvalidError("all fit paths diverged")
    lam = compute_integrands(payoff, model, fit_ens, workers=workers)
    estimate = project_integrand(
        fit_ens, lam, method, degree=degree, payoff=payoff, model=model,
        branches=branches, workers=workers,
    )

    eval_ens = simulate_paths(model, grid, config, stream=STREAM_EVAL, workers=workers)
    if not eval_ens.valid.any():
        raise AllPathsInvalidError("all evaluation paths diverged")
    anti = config.antithetic
    valid = eval_ens.valid
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        L = payoff.value(eval_ens.z(), eval_ens.w, grid)
        beta = estimate.predict(eval_ens)
        hedge_leg = np.einsum("pid,pid->p", beta, eval_ens.d_wtilde)
        payoff_mean, payoff_mean_se = ensemble_mean_se(L, anti, valid)
        residuals = L - payoff_mean - hedge_leg
        residual_mean, _ = ensemble_mean_se(residuals, anti, valid)
        _, hedge_se = ensemble_mean_se(hedge_leg, anti, valid)
        residual_rms = float(np.sqrt(np.mean(residuals[valid] ** 2)))
        beta_mean, beta_se = ensemble_mean_se(beta, anti, valid)

    passed_mean = bool(abs(residual_mean) <= 3.0 * hedge_se + EXACT_FLOOR)
    passed_rms = None if rms_threshold is None else bool(residual_rms <= rms_threshold)
    return HedgeReport(
        payoff_mean=payoff_mean,
        payoff_mean_se=payoff_mean_se,
        residual_mean=residual_mean,
        residual_mean_se=hedge_se,
        residual_rms=residual_rms,
        rms_threshold=rms_threshold,
        passed_mean=passed_mean,
        passed_rms=passed_rms,
        passed=passed_mean and passed_rms is not False,
        residuals=residuals,
        eval_valid=valid,
        beta_times=grid.nodes[: grid.steps].copy(),
        beta_mean=beta_mean,
        beta_se=beta_se,
        estimate=estimate,
        fit_paths=fit_ens.path_count,
        eval_paths=eval_ens.path_count,
        fit_invalid=fit_ens.invalid_count,
        eval_invalid=eval_ens.invalid_count,
    )


# ---------------------------------------------------------------------------
# truncation convergence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncationStudy:
    """Distance between clamped and plain integrands across clamp levels.

    ``l2_distance[j]`` estimates the time-integrated mean squared gap
    ``int_0^T E||lambda_k - lambda||^2 dt`` at level ``levels[j]``;
    ``tau_full_fraction[j]`` is the share of paths whose exit time reaches
    the horizon.  ``ensemble_sup`` is the largest running sup of density
    and risk over valid paths: at any level beyond it the clamp never
    activates and the gap vanishes identically.
    """

    levels: tuple[float, ...]
    l2_distance: np.ndarray
    l2_distance_se: np.ndarray
    tau_full_fraction: np.ndarray
    per_path: np.ndarray
    ensemble_sup: float
    sup_moments: dict
    path_count: int
    invalid_count: int


def truncation_convergence(
    payoff: Payoff,
    model: MarketPriceOfRiskModel,
    grid: TimeGrid,
    config: SimConfig,
    levels: Sequence[float],
    *,
    ensemble: PathEnsemble | None = None,
    workers: int = 1,
) -> TruncationStudy:
    """Run the clamp-level convergence study on a shared ensemble.

    All levels reuse one simulated ensemble and one set of lower flow
    blocks, so the per-level integrands differ only through the clamp.
    """
    if not levels:
        raise ValueError("need at least one truncation level")
    lv = [float(k) for k in levels]
    if any(k <= 0 for k in lv):
        raise ValueError("truncation levels must be positive")
    ens = ensemble if ensemble is not None else simulate_paths(
        model, grid, config, stream=STREAM_FIT, workers=workers
    )
    if not ens.valid.any():
        raise AllPathsInvalidError("all paths diverged")
    anti = ens.config.antithetic
    valid = ens.valid
    N = grid.steps
    engine = IntegrandEngine(payoff, model, ens)
    lam = engine.compute(workers=workers)

    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        z = ens.z()
        z_sup = z.max(axis=1)
        z_inf = z.min(axis=1)
        theta_sup = np.max(np.abs(ens.theta), axis=(1, 2))
        running = np.maximum(z_sup, theta_sup)
        ensemble_sup = float(running[valid].max())
        mom_z2, mom_z2_se = ensemble_mean_se(z_sup**2, anti, valid)
        mom_inv2, mom_inv2_se = ensemble_mean_se(z_inf**-2.0, anti, valid)

    dist = np.empty(len(lv))
    dist_se = np.empty(len(lv))
    frac = np.empty(len(lv))
    per_path = np.empty((len(lv), ens.path_count))
    for j, k in enumerate(lv):
        trunc = truncate_ensemble(ens, model, k)
        lam_k = engine.compute(trunc, workers=workers)
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            diff = lam_k - lam
            q = np.einsum("pid,pid->p", diff[:, :N], diff[:, :N]) * grid.dt
        per_path[j] = q
        dist[j], dist_se[j] = ensemble_mean_se(q, anti, valid)
        frac[j] = float(np.mean(trunc.tau_index[valid] == N))

    return TruncationStudy(
        levels=tuple(lv),
        l2_distance=dist,
        l2_distance_se=dist_se,
        tau_full_fraction=frac,
        per_path=per_path,
        ensemble_sup=ensemble_sup,
        sup_moments={
            "sup_z_squared_mean": mom_z2,
            "sup_z_squared_se": mom_z2_se,
            "sup_inv_z_squared_mean": mom_inv2,
            "sup_inv_z_squared_se": mom_inv2_se,
        },
        path_count=ens.path_count,
        invalid_count=ens.invalid_count,
    )


# ---------------------------------------------------------------------------
# mean-variance multipliers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiplierSolution:
    """Lagrange multipliers of the quadratic hedging problem with a mean target.

    The optimal terminal claim is affine in the terminal density,
    ``X(T) = lam1 + lam2 Z(T)``, pinned down by the budget under the pricing
    measure and the mean target under the real-world measure.  The latter
    uses the reweighting identity ``E[1/Z(T)] = 1`` under pricing, whose
    sampled gap is reported as a health check.
    """

    lam1: float
    lam2: float
    lam2_se: float
    budget: float
    target_mean: float
    z_mean: float
    z_mean_se: float
    reweight_gap: float
    reweight_gap_se: float
    condition_number: float
    path_count: int

    def payoff(self) -> AffineTerminal:
        """The optimal claim as a payoff object."""
        return AffineTerminal(self.lam1, self.lam2)


def mean_variance_multipliers(
    model: MarketPriceOfRiskModel,
    grid: TimeGrid,
    config: SimConfig,
    budget: float,
    target_mean: float,
    *,
    ensemble: PathEnsemble | None = None,
    workers: int = 1,
) -> MultiplierSolution:
    """Solve the two-constraint system for the affine optimal claim.

    The linear system couples ``E[Z(T)]`` under pricing with the identity
    row from the reweighting relation; it degenerates as the risk vanishes
    (``E[Z(T)] -> 1``), in which case a :class:`SingularSystemError` carries
    the condition number instead of returning meaningless multipliers.
    """
    ens = ensemble if ensemble is not None else simulate_paths(
        model, grid, config, stream=STREAM_FIT, workers=workers
    )
    anti = ens.config.antithetic
    valid = ens.valid
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        zT = ens.z_terminal()
        z_mean, z_mean_se = ensemble_mean_se(zT, anti, valid)
        inv_mean, inv_se = ensemble_mean_se(1.0 / zT, anti, valid)
    system = np.array([[1.0, z_mean], [1.0, 1.0]])
    cond = float(np.linalg.cond(system))
    denom = z_mean - 1.0
    if abs(denom) <= max(3.0 * z_mean_se, EXACT_FLOOR):
        raise SingularSystemError(
            "mean-variance system is singular: E[Z(T)] - 1 = "
            f"{denom:.6e} is indistinguishable from zero "
            f"(se {z_mean_se:.3e}, condition number {cond:.3e})"
        )
    lam2 = (budget - target_mean) / denom
    lam1 = target_mean - lam2
    lam2_se = abs(budget - target_mean) * z_mean_se / denom**2
    return MultiplierSolution(
        lam1=lam1,
        lam2=lam2,
        lam2_se=lam2_se,
        budget=float(budget),
        target_mean=float(target_mean),
        z_mean=z_mean,
        z_mean_se=z_mean_se,
        reweight_gap=inv_mean - 1.0,
        reweight_gap_se=inv_se,
        condition_number=cond,
        path_count=ens.path_count,
    )
