r"""Market price of risk models as nonanticipative path functionals.

A model maps a Brownian path w on [0, t] to the market price of risk
:math:`\tilde\theta(t) = \bar\Theta(w)(t)`, together with the Frechet
derivative of that functional, represented as a matrix-valued measure with
a finite atom list plus a density sampled on the time grid.  Two variants
ship:

* ``ConstantModel`` -- :math:`\bar\Theta(w)(t) \equiv \theta` with an empty
  derivative kernel.
* ``OrnsteinUhlenbeckModel`` -- the pathwise solution of
  :math:`dU = (\alpha - \beta U)\,dt + v\,dW`, written with integration by
  parts so it is a functional of the Brownian path itself:

  .. math::
     U(t) = e^{-\beta t}U(0) + c\,(1 - e^{-\beta t})
            + v\Big[w(t) - \beta\int_0^t e^{\beta(u-t)} w(u)\,du\Big].

  The drift constant is :math:`c = \alpha/\beta + v^2/(2\beta)` in mode
  ``"adjusted"`` (default, carrying the volatility correction) and
  :math:`c = \alpha/\beta` in mode ``"standard"``; both are exposed because
  the two conventions circulate.  The Frechet
  derivative in direction :math:`\gamma` is
  :math:`v[\gamma(t) - \beta\int_0^t e^{\beta(u-t)}\gamma(u)\,du]`, i.e. an
  atom of weight v at t plus the density :math:`-v\beta e^{\beta(s-t)}`
  on [0, t].

All integrals are left-endpoint rectangle sums on the model's grid, and
evaluation at node i reads the path strictly through index i, which is the
nonanticipativity guarantee the tests pin down at the bit level.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grids import TimeGrid


@dataclass(frozen=True)
class DerivativeKernel:
    """Frechet derivative of the risk functional at one evaluation time.

    atoms
        Tuple of ``(location, weight)`` pairs with (n, n) weight matrices.
    density
        Array of shape (i_t, n, n): samples of the kernel density at the
        left nodes 0..i_t-1 of the grid, where i_t is the node index of
        ``t``.  Pairing with a path uses a left rectangle sum.
    """

    t: float
    grid: TimeGrid
    atoms: tuple
    density: np.ndarray

    def apply(self, gamma: np.ndarray) -> np.ndarray:
        """Pair the kernel with a direction path sampled on the grid.

        ``gamma`` has shape (m+1, n) (or (m+1,) when n == 1) and must cover
        [0, t].  Returns the n-vector of the directional derivative.
        """
        gamma = np.asarray(gamma, dtype=float)
        if gamma.ndim == 1:
            gamma = gamma[:, None]
        i_t = self.grid.index_of(self.t)
        if gamma.shape[0] < i_t + 1:
            raise ValueError(
                f"direction path has {gamma.shape[0]} nodes but the kernel at t={self.t} needs {i_t + 1}"
            )
        n = self.density.shape[1] if self.density.size else gamma.shape[1]
        out = np.zeros(n)
        for loc, weight in self.atoms:
            out += weight @ gamma[self.grid.index_of(loc)]
        if i_t > 0 and self.density.size:
            out += self.grid.dt * np.einsum("lab,lb->a", self.density[:i_t], gamma[:i_t])
        return out

    def total_variation(self) -> float:
        """Atom operator norms plus the left-sum of density norms."""
        tv = sum(np.linalg.norm(w, 2) for _, w in self.atoms)
        if self.density.size:
            tv += self.grid.dt * sum(np.linalg.norm(d, 2) for d in self.density)
        return float(tv)


def apply_kernel(kernel: DerivativeKernel, gamma: np.ndarray) -> np.ndarray:
    """Functional form of :meth:`DerivativeKernel.apply`."""
    return kernel.apply(gamma)


class MarketPriceOfRiskModel(ABC):
    """Nonanticipative market-price-of-risk functional on Brownian paths."""

    #: driving Brownian dimension n
    dimension: int = 1
    #: True when the derivative kernel vanishes identically (constant risk).
    kernel_is_empty: bool = False
    #: Shipped kernels do not depend on the evaluated path; downstream
    #: solvers rely on this to share flow memory terms across an ensemble.
    path_dependent_kernel: bool = False

    def evaluate_theta(self, t: float, w: np.ndarray, grid: TimeGrid) -> np.ndarray:
        """Risk vector at time ``t`` given the Brownian path ``w`` on [0, t].

        ``w`` holds node values (m+1, n) (or (m+1,) for n == 1), starting at
        zero, with m at least the node index of ``t``.
        """
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if w.shape[1] != self.dimension:
            raise ValueError(f"path dimension {w.shape[1]} != model dimension {self.dimension}")
        i = grid.index_of(t)
        if w.shape[0] < i + 1:
            raise ValueError(f"path covers {w.shape[0]} nodes; evaluation at t={t} needs {i + 1}")
        if not np.all(w[0] == 0.0):
            raise ValueError("Brownian paths start at zero")
        return self.theta_prefix(w, grid, i)

    @abstractmethod
    def theta_prefix(self, w: np.ndarray, grid: TimeGrid, i: int) -> np.ndarray:
        """Vectorized risk at node ``i``: w is (m+1, n) or (P, m+1, n) and only
        entries with node index <= i may be read.  Returns (n,) or (P, n)."""

    @abstractmethod
    def derivative_kernel(self, t: float, grid: TimeGrid) -> DerivativeKernel:
        """Frechet derivative of the functional at time ``t``."""

    @abstractmethod
    def variation_bound(self, horizon: float) -> float:
        """Uniform bound on the kernel total variation over [0, horizon]."""


class ConstantModel(MarketPriceOfRiskModel):
    """Constant market price of risk; the baseline bounded case."""

    kernel_is_empty = True

    def __init__(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.ndim != 1 or theta.size < 1 or not np.all(np.isfinite(theta)):
            raise ValueError(f"theta must be a finite vector, got {theta!r}")
        theta.flags.writeable = False
        self.theta = theta
        self.dimension = theta.size

    def __repr__(self):
        return f"ConstantModel(theta={self.theta.tolist()})"

    def theta_prefix(self, w, grid, i):
        w = np.asarray(w, dtype=float)
        if w.ndim == 2:
            return self.theta.copy()
        return np.broadcast_to(self.theta, (w.shape[0], self.dimension)).copy()

    def derivative_kernel(self, t, grid):
        i = grid.index_of(t)
        n = self.dimension
        return DerivativeKernel(t=float(t), grid=grid, atoms=(), density=np.zeros((i, n, n)))

    def variation_bound(self, horizon):
        return 0.0


@lru_cache(maxsize=32)
def _exp_weights(beta: float, horizon: float, steps: int) -> np.ndarray:
    """Strictly lower-triangular matrix E[i, l] = exp(beta (t_l - t_i)), l < i.

    Every entry is <= 1 for beta >= 0, so the table is overflow-safe for any
    horizon.  Cached per (beta, grid) since flow solvers hit it per node.
    """
    nodes = np.linspace(0.0, horizon, steps + 1)
    mat = np.exp(beta * (nodes[None, :] - nodes[:, None]))
    mat = np.tril(mat, k=-1)
    mat.flags.writeable = False
    return mat


class OrnsteinUhlenbeckModel(MarketPriceOfRiskModel):
    """Mean-reverting, unbounded market price of risk (dimension 1).

    Parameters
    ----------
    alpha, mean_reversion, vol : floats
        Drift level, mean-reversion rate (> 0) and diffusion coefficient of
        ``dU = (alpha - mean_reversion * U) dt + vol dW``.
    u0 : float
        Initial risk level U(0).
    drift_constant_mode : {"adjusted", "standard"}
        Long-run constant convention; see the module docstring.
    """

    def __init__(self, alpha, mean_reversion, vol, u0, drift_constant_mode="adjusted"):
        if not (np.isfinite(mean_reversion) and mean_reversion > 0):
            raise ValueError(f"mean_reversion must be > 0, got {mean_reversion}")
        if not (np.isfinite(vol) and vol >= 0):
            raise ValueError(f"vol must be >= 0, got {vol}")
        if not np.isfinite(alpha) or not np.isfinite(u0):
            raise ValueError("alpha and u0 must be finite")
        if drift_constant_mode not in ("adjusted", "standard"):
            raise ValueError(
                f"drift_constant_mode must be 'adjusted' or 'standard', got {drift_constant_mode!r}"
            )
        self.alpha = float(alpha)
        self.mean_reversion = float(mean_reversion)
        self.vol = float(vol)
        self.u0 = float(u0)
        self.drift_constant_mode = drift_constant_mode
        self.dimension = 1

    def __repr__(self):
        return (
            f"OrnsteinUhlenbeckModel(alpha={self.alpha}, mean_reversion={self.mean_reversion}, "
            f"vol={self.vol}, u0={self.u0}, drift_constant_mode={self.drift_constant_mode!r})"
        )

    @property
    def drift_constant(self) -> float:
        c = self.alpha / self.mean_reversion
        if self.drift_constant_mode == "adjusted":
            c += self.vol**2 / (2.0 * self.mean_reversion)
        return c

    def _deterministic(self, t: float) -> float:
        decay = np.exp(-self.mean_reversion * t)
        return self.u0 * decay + self.drift_constant * (1.0 - decay)

    def theta_prefix(self, w, grid, i):
        w = np.asarray(w, dtype=float)
        single = w.ndim == 2
        wp = w[None, ...] if single else w
        weights = _exp_weights(self.mean_reversion, grid.horizon, grid.steps)
        # left-rectangle integral of exp(beta (u - t_i)) w(u) over [0, t_i]
        quad = wp[:, :i, 0] @ weights[i, :i] * grid.dt if i > 0 else np.zeros(wp.shape[0])
        val = self._deterministic(grid.nodes[i]) + self.vol * (wp[:, i, 0] - self.mean_reversion * quad)
        out = val[:, None]
        return out[0] if single else out

    def derivative_kernel(self, t, grid):
        i = grid.index_of(t)
        weights = _exp_weights(self.mean_reversion, grid.horizon, grid.steps)
        atom = np.array([[self.vol]])
        density = (-self.vol * self.mean_reversion * weights[i, :i]).reshape(i, 1, 1)
        return DerivativeKernel(t=float(t), grid=grid, atoms=((float(t), atom),), density=density)

    def variation_bound(self, horizon):
        # atom mass + integral of |density|: v + v (1 - exp(-beta T))
        return self.vol * (2.0 - np.exp(-self.mean_reversion * horizon))
