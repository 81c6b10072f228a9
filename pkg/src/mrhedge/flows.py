r"""Linearized state flow :math:`\Phi(t, s)` along simulated paths.

Perturbing the initial state of :math:`Y = (\tilde Z, W)` at an anchor time
s propagates through the (n+1)-square matrix flow :math:`\Phi(t, s)`,
:math:`\Phi(s, s) = I`, :math:`\Phi(t, s) = 0` for t < s.  Its blocks obey

* lower block (rows 2..n+1): a deterministic linear Volterra equation
  driven by the risk functional's derivative kernel,
  :math:`d\Phi^{2,j}(t,s)/dt = -[\bar\Theta'(W)\,\Phi^{2,j}(\cdot,s)](t)`,
  integrated with explicit Euler and left-rectangle memory sums over
  [s, t] (the flow vanishes before s, so the kernel's [0, t] form agrees);
* top row: a linear scalar SDE per column,
  :math:`d\Phi^{1,j} = (\|\tilde\theta\|^2\Phi^{1,j}
  + 2\tilde Z\tilde\theta^\top\kappa_j)dt
  - (\tilde\theta^\top\Phi^{1,j}\,d\tilde W + \tilde Z\,\kappa_j^\top d\tilde W)`
  with :math:`\kappa_j = [\bar\Theta'(W)\Phi^{2,j}(\cdot,s)]`.  The
  homogeneous part is integrated with the same log-space factor
  :math:`\exp(\tfrac12\|\tilde\theta\|^2\Delta t - \tilde\theta^\top
  \Delta\tilde W)` as the density recursion (source terms explicit Euler),
  which is what makes :math:`\Phi^{1,1}(T, t) = \tilde Z(T)/\tilde Z(t)`
  hold node-exactly when the kernel is empty.

The truncated flow replaces the density by its clamp with slope factor
``phi_k'`` and the risk inside clamp derivatives by componentwise clamps,
while the lower block is untouched (the Brownian drift slot of the clamped
dynamics keeps the raw risk, so its linearization is kernel-only).

Shipped kernels do not depend on the evaluated path, so lower blocks and
memory terms are shared across a whole ensemble; the solver refuses
path-dependent kernels rather than silently mis-sharing them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import StatePath, TruncatedPath, log_growth, smooth_clamp, smooth_clamp_deriv
from .grids import TimeGrid
from .models import MarketPriceOfRiskModel


@dataclass(frozen=True)
class FlowMatrix:
    """Flow trajectory for one path and one anchor node.

    ``values[i]`` is the (n+1, n+1) matrix :math:`\\Phi(t_i, s)`; rows/
    columns 0 are the density slot, 1..n the Brownian slots.  Entries for
    t_i < s are exactly zero and the anchor entry is exactly the identity.
    """

    anchor_index: int
    anchor_time: float
    grid: TimeGrid
    path_id: int
    values: np.ndarray


class KernelTable:
    """Grid-sampled derivative kernel: atom weight per node plus density.

    ``atom[i]`` is the weight of the kernel's atom at node i (the shipped
    kernels carry a single atom at the evaluation time itself) and
    ``density[i, l]`` the (n, n) density block at left node l < i.
    """

    def __init__(self, model: MarketPriceOfRiskModel, grid: TimeGrid):
        if model.path_dependent_kernel:
            raise NotImplementedError("flow solving with path-dependent kernels is out of scope")
        N, n = grid.steps, model.dimension
        self.grid = grid
        self.dimension = n
        self.empty = model.kernel_is_empty
        self.atom = np.zeros((N + 1, n, n))
        self.density = None if self.empty else np.zeros((N + 1, N + 1, n, n))
        if self.empty:
            return
        for i in range(N + 1):
            ker = model.derivative_kernel(grid.nodes[i], grid)
            for loc, weight in ker.atoms:
                if grid.index_of(loc) != i:
                    raise NotImplementedError(
                        "flow solving supports kernels whose atom sits at the evaluation time"
                    )
                self.atom[i] += weight
            self.density[i, :i] = ker.density


def lower_block_solve(table: KernelTable, grid: TimeGrid, anchor: int):
    """Deterministic lower block and its kernel contractions from one anchor.

    Returns ``(psi, kappa)`` where ``psi[i]`` is the (n, n+1) lower block
    :math:`\\Phi^{2,\\cdot}(t_i, s)` (zero before the anchor) and
    ``kappa[i]`` the kernel applied to its history, used by the top-row
    drift and shock terms.  Column 0 stays exactly zero, which is the
    bit-level structural identity the tests assert.
    """
    N, n = grid.steps, table.dimension
    dt = grid.dt
    psi = np.zeros((N + 1, n, n + 1))
    psi[anchor, :, 1:] = np.eye(n)
    kappa = np.zeros((N + 1, n, n + 1))
    if table.empty:
        psi[anchor:] = psi[anchor]
        return psi, kappa
    for i in range(anchor, N):
        kap = table.atom[i] @ psi[i]
        if i > anchor:
            kap = kap + dt * np.einsum("lab,lbc->ac", table.density[i, anchor:i], psi[anchor:i])
        kappa[i] = kap
        psi[i + 1] = psi[i] - kap * dt
    kappa[N] = table.atom[N] @ psi[N] + dt * np.einsum(
        "lab,lbc->ac", table.density[N, anchor:N], psi[anchor:N]
    )
    return psi, kappa


def top_row_sweep(grid, anchor, kappa, z_star, theta_star, theta_slope, p_z, d_w, on_step=None):
    """March the flow top row from ``anchor`` to the horizon for a path block.

    ``z_star``/``theta_star`` are the (possibly clamped) density values and
    risk entering the linearized coefficients; ``theta_slope`` and ``p_z``
    are the clamp slopes (scalar 1.0 for the plain flow, which reproduces
    the clamped arithmetic bit for bit when clamps are inactive).
    ``on_step(i, top)`` is called at every node i in [anchor, N] with the
    current (P, n+1) top-row block before stepping.  Returns the final block.
    """
    N = grid.steps
    dt = grid.dt
    P = z_star.shape[0]
    ncols = kappa.shape[-1]
    top = np.zeros((P, ncols))
    top[:, 0] = 1.0
    scalar_pz = np.isscalar(p_z)
    scalar_slope = np.isscalar(theta_slope)
    for i in range(anchor, N):
        if on_step is not None:
            on_step(i, top)
        pz_i = p_z if scalar_pz else p_z[:, i]
        slope_i = theta_slope if scalar_slope else theta_slope[:, i]
        gamma = log_growth(theta_star[:, i], d_w[:, i], pz_i, dt)
        kap = kappa[i]
        drift = (2.0 * dt) * z_star[:, i, None] * ((theta_star[:, i] * slope_i) @ kap)
        shock = z_star[:, i, None] * ((slope_i * d_w[:, i]) @ kap)
        top = np.exp(gamma)[:, None] * top + (drift - shock)
    if on_step is not None:
        on_step(N, top)
    return top


def _anchor_index(grid: TimeGrid, s) -> int:
    if isinstance(s, (int, np.integer)):
        if not 0 <= int(s) <= grid.steps:
            raise ValueError(f"anchor node {s} outside 0..{grid.steps}")
        return int(s)
    return grid.index_of(float(s))


def _assemble(grid, anchor, psi, tops) -> np.ndarray:
    N = grid.steps
    n = psi.shape[1]
    values = np.zeros((N + 1, n + 1, n + 1))
    for i in range(anchor, N + 1):
        values[i, 0, :] = tops[i - anchor]
        values[i, 1:, :] = psi[i]
    values[anchor] = np.eye(n + 1)
    return values


def solve_flow(model: MarketPriceOfRiskModel, path: StatePath, s, grid: TimeGrid) -> FlowMatrix:
    """Full flow trajectory :math:`\\Phi(\\cdot, s)` along one path.

    ``s`` is a grid node: ints are node indices, floats are times (which
    must lie on the grid).
    """
    if grid != path.grid:
        raise ValueError("grid does not match the path's grid")
    anchor = _anchor_index(grid, s)
    table = KernelTable(model, grid)
    psi, kappa = lower_block_solve(table, grid, anchor)
    tops = []
    top_row_sweep(
        grid,
        anchor,
        kappa,
        z_star=path.z()[None],
        theta_star=path.theta[None],
        theta_slope=1.0,
        p_z=1.0,
        d_w=path.d_wtilde[None],
        on_step=lambda i, t: tops.append(t[0].copy()),
    )
    return FlowMatrix(anchor, grid.nodes[anchor], grid, path.path_id, _assemble(grid, anchor, psi, tops))


def solve_flow_ensemble(model: MarketPriceOfRiskModel, ensemble, s) -> list[FlowMatrix]:
    """Flow trajectories for every path of an ensemble at one anchor.

    The deterministic lower block is solved once and shared; the
    stochastic top rows are marched for all paths in one vectorized sweep.
    Produces the same matrices as :func:`solve_flow` path by path.
    """
    grid = ensemble.grid
    anchor = _anchor_index(grid, s)
    table = KernelTable(model, grid)
    psi, kappa = lower_block_solve(table, grid, anchor)
    tops: list[np.ndarray] = []
    top_row_sweep(
        grid,
        anchor,
        kappa,
        z_star=np.exp(ensemble.log_z),
        theta_star=ensemble.theta,
        theta_slope=1.0,
        p_z=1.0,
        d_w=ensemble.d_wtilde,
        on_step=lambda i, t: tops.append(t.copy()),
    )
    flows = []
    for p in range(ensemble.path_count):
        per_path = [t[p] for t in tops]
        flows.append(
            FlowMatrix(anchor, grid.nodes[anchor], grid, p, _assemble(grid, anchor, psi, per_path))
        )
    return flows


def solve_truncated_flow(
    model: MarketPriceOfRiskModel,
    path: StatePath,
    truncated: TruncatedPath,
    s,
    k: float,
    grid: TimeGrid,
) -> FlowMatrix:
    """Flow of the clamped dynamics at level ``k`` along one path.

    Density values go through the clamp with slope factor ``phi_k'`` and
    the risk is clamped componentwise inside the kernel contractions; the
    lower block is shared with the plain flow.  Above the path's running
    sup the result equals :func:`solve_flow` bit for bit.
    """
    if grid != path.grid:
        raise ValueError("grid does not match the path's grid")
    if truncated.level != k:
        raise ValueError(f"truncated path was built at level {truncated.level}, not {k}")
    anchor = _anchor_index(grid, s)
    table = KernelTable(model, grid)
    psi, kappa = lower_block_solve(table, grid, anchor)
    zk = truncated.z()
    tops = []
    top_row_sweep(
        grid,
        anchor,
        kappa,
        z_star=smooth_clamp(zk, k)[None],
        theta_star=smooth_clamp(path.theta, k)[None],
        theta_slope=smooth_clamp_deriv(path.theta, k)[None],
        p_z=smooth_clamp_deriv(zk, k)[None],
        d_w=path.d_wtilde[None],
        on_step=lambda i, t: tops.append(t[0].copy()),
    )
    return FlowMatrix(anchor, grid.nodes[anchor], grid, path.path_id, _assemble(grid, anchor, psi, tops))


def gronwall_check(flow: FlowMatrix, bound: float, tolerance: float = 1e-6) -> dict:
    """Check the lower block against its exponential a-priori envelope.

    Verifies ``||Phi^{2,j}(v, s)|| <= exp(bound (v - s))`` for all columns
    and nodes v >= s, within ``tolerance`` (the discrete scheme actually
    undershoots the envelope, so the default allowance is generous).
    """
    s = flow.anchor_index
    nodes = flow.grid.nodes
    lower = flow.values[s:, 1:, :]
    norms = np.linalg.norm(lower, axis=1)  # (m, n+1) column norms
    envelope = np.exp(bound * (nodes[s:] - nodes[s]))
    max_ratio = float((norms / envelope[:, None]).max())
    return {
        "passed": bool(max_ratio <= 1.0 + tolerance),
        "max_ratio": max_ratio,
        "bound": float(bound),
        "tolerance": float(tolerance),
    }
