"""Payoff functionals and their pathwise derivative measures.

A payoff is a scalar functional of the joint state path ``(Z, W)`` on a
fixed time grid.  Each payoff exposes its derivative as a vector measure on
``[0, T]`` with two kinds of mass:

* point atoms ``(u, row)`` where ``row`` is a ``(1 + n,)`` covector pairing
  with a state perturbation ``(dZ(u), dW(u))``, and
* an absolutely continuous part given by covector rows at the grid nodes,
  integrated with the left rule.

The hedging engine never needs the measure as an object on the hot path; it
asks for the terminal atom rows or the density rows directly, batched over
an ensemble.  The measure object is still exposed for tests and one-off
diagnostics.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grids import TimeGrid

__all__ = [
    "PayoffMeasure",
    "Payoff",
    "AffineTerminal",
    "TerminalSmooth",
    "IntegralFunctional",
    "evaluate_payoff",
    "payoff_derivative_measure",
]

MAX_POLY_DEGREE = 4


@dataclass(frozen=True)
class PayoffMeasure:
    """Derivative of a payoff along one path, as a measure on the grid.

    ``atoms`` holds ``(time, row)`` point masses and ``density`` holds
    per-node rows for the absolutely continuous part (``None`` when there
    is no such part).  Rows have shape ``(1 + n,)``: the leading entry
    pairs with a density-process perturbation, the rest with the driver.
    """

    grid: TimeGrid
    atoms: tuple[tuple[float, np.ndarray], ...] = ()
    density: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.density is not None:
            dens = np.asarray(self.density, dtype=float)
            if dens.ndim != 2 or dens.shape[0] != self.grid.steps + 1:
                raise ValueError(
                    "density rows must have shape (steps + 1, 1 + n), got "
                    f"{dens.shape}"
                )
            object.__setattr__(self, "density", dens)

    def apply(self, delta_z: np.ndarray, delta_w: np.ndarray) -> float:
        """Pair the measure with a perturbation path ``(delta_z, delta_w)``.

        ``delta_z`` has shape ``(N + 1,)`` and ``delta_w`` shape
        ``(N + 1, n)`` on the same grid.  The density part uses the left
        rule, matching how the engine discretises time integrals.
        """
        delta_z = np.asarray(delta_z, dtype=float)
        delta_w = np.atleast_2d(np.asarray(delta_w, dtype=float))
        if delta_w.shape[0] == 1 and delta_z.shape[0] != 1:
            delta_w = delta_w.T
        total = 0.0
        for loc, row in self.atoms:
            i = self.grid.index_of(loc)
            total += row[0] * delta_z[i] + float(row[1:] @ delta_w[i])
        if self.density is not None:
            steps = self.grid.steps
            left = self.density[:steps]
            total += self.grid.dt * float(
                left[:, 0] @ delta_z[:steps]
                + np.einsum("ia,ia->", left[:, 1:], delta_w[:steps])
            )
        return total


class Payoff(ABC):
    """Scalar functional of the joint path with a known derivative measure.

    Subclasses advertise where their derivative measure lives so the
    integrand engine can pick a fast contraction:

    * ``terminal_atomic`` payoffs carry a single atom at the horizon,
    * otherwise the measure may have density rows on the grid (and, for
      custom subclasses, interior atoms through ``derivative_measure``).
    """

    #: single point mass at the horizon (enables the closed-form flow route)
    terminal_atomic: bool = False

    @abstractmethod
    def value(self, z: np.ndarray, w: np.ndarray, grid: TimeGrid) -> np.ndarray:
        """Evaluate the payoff on an ensemble.

        ``z`` has shape ``(P, N + 1)``, ``w`` shape ``(P, N + 1, n)``;
        returns shape ``(P,)``.
        """

    @abstractmethod
    def derivative_measure(
        self, z: np.ndarray, w: np.ndarray, grid: TimeGrid
    ) -> PayoffMeasure:
        """Derivative measure along a single path ``(N + 1,)`` / ``(N + 1, n)``."""

    def terminal_rows(
        self, z: np.ndarray, w: np.ndarray, grid: TimeGrid
    ) -> np.ndarray | None:
        """Atom rows at the horizon for an ensemble, or ``None``.

        Shape ``(P, 1 + n)`` when the payoff is terminal-atomic.
        """
        return None

    def density_rows(
        self, z: np.ndarray, w: np.ndarray, grid: TimeGrid
    ) -> np.ndarray | None:
        """Density rows at every node for an ensemble, or ``None``.

        Shape ``(P, N + 1, 1 + n)`` when the measure has a density part.
        """
        return None

    def growth_constants(self) -> tuple[float, float, float]:
        """Constants ``(K, beta, rho)`` bounding the measure's modulus of
        continuity in the state; used only by diagnostics."""
        return (1.0, 1.0, 1.0)


def _as_ensemble(z: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    if z.ndim == 1:
        z = z[None, :]
    if w.ndim == 2:
        w = w[None, :, :]
    return z, w


class AffineTerminal(Payoff):
    """Affine function ``lam1 + lam2 * Z(T)`` of the terminal density value.

    This is the payoff produced by quadratic hedging with a mean constraint;
    its derivative measure is a single atom of mass ``lam2`` at the horizon
    in the density coordinate (empty when ``lam2 == 0``).
    """

    terminal_atomic = True

    def __init__(self, lam1: float, lam2: float) -> None:
        self.lam1 = float(lam1)
        self.lam2 = float(lam2)

    def __repr__(self) -> str:
        return f"AffineTerminal(lam1={self.lam1!r}, lam2={self.lam2!r})"

    def value(self, z, w, grid):
        z, _ = _as_ensemble(z, w)
        return self.lam1 + self.lam2 * z[:, -1]

    def terminal_rows(self, z, w, grid):
        z, w = _as_ensemble(z, w)
        rows = np.zeros((z.shape[0], 1 + w.shape[2]))
        rows[:, 0] = self.lam2
        return rows

    def derivative_measure(self, z, w, grid):
        z, w = _as_ensemble(z, w)
        if self.lam2 == 0.0:
            return PayoffMeasure(grid=grid)
        row = np.zeros(1 + w.shape[2])
        row[0] = self.lam2
        return PayoffMeasure(grid=grid, atoms=((grid.horizon, row),))


class TerminalSmooth(Payoff):
    """Smooth function ``h(W(T))`` of the terminal driver value.

    ``h`` maps ``(..., n)`` arrays to ``(...)`` and ``grad`` to ``(..., n)``.
    The derivative measure is the single atom ``(T, (0, grad h(W(T))))``.
    ``growth`` should bound the Lipschitz modulus of ``grad`` as
    ``(K, beta, rho)``; the polynomial constructor fills it in.
    """

    terminal_atomic = True

    def __init__(
        self,
        h: Callable[[np.ndarray], np.ndarray],
        grad: Callable[[np.ndarray], np.ndarray],
        growth: tuple[float, float, float] = (1.0, 1.0, 1.0),
        label: str = "terminal-smooth",
    ) -> None:
        self.h = h
        self.grad = grad
        self.growth = (float(growth[0]), float(growth[1]), float(growth[2]))
        self.label = label

    @classmethod
    def from_coeffs(cls, coeffs) -> "TerminalSmooth":
        """Polynomial in the first driver component, degree at most 4.

        ``coeffs[k]`` multiplies ``x**k``.  The growth triple is derived
        from the second-derivative coefficients.
        """
        c = np.asarray(coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coeffs must be a non-empty 1-d sequence")
        if c.size - 1 > MAX_POLY_DEGREE:
            raise ValueError(
                f"polynomial payoffs are limited to degree {MAX_POLY_DEGREE}, "
                f"got degree {c.size - 1}"
            )
        dc = np.polynomial.polynomial.polyder(c) if c.size > 1 else np.zeros(1)

        def h(x: np.ndarray) -> np.ndarray:
            return np.polynomial.polynomial.polyval(x[..., 0], c)

        def grad(x: np.ndarray) -> np.ndarray:
            g = np.zeros_like(x)
            g[..., 0] = np.polynomial.polynomial.polyval(x[..., 0], dc)
            return g

        degree = c.size - 1
        curvature = sum(
            k * (k - 1) * abs(c[k]) for k in range(2, c.size)
        )
        growth = (max(1.0, curvature), max(1.0, degree - 2.0), 1.0)
        return cls(h, grad, growth, label=f"poly-deg-{degree}")

    def __repr__(self) -> str:
        return f"TerminalSmooth({self.label})"

    def value(self, z, w, grid):
        z, w = _as_ensemble(z, w)
        return np.asarray(self.h(w[:, -1, :]), dtype=float)

    def terminal_rows(self, z, w, grid):
        z, w = _as_ensemble(z, w)
        rows = np.zeros((z.shape[0], 1 + w.shape[2]))
        rows[:, 1:] = self.grad(w[:, -1, :])
        return rows

    def derivative_measure(self, z, w, grid):
        z, w = _as_ensemble(z, w)
        row = np.concatenate([[0.0], np.asarray(self.grad(w[0, -1, :]), float)])
        return PayoffMeasure(grid=grid, atoms=((grid.horizon, row),))

    def growth_constants(self):
        return self.growth


class IntegralFunctional(Payoff):
    """Running-cost payoff ``integral of phi(W(t)) dt`` over the horizon.

    Discretised with the left rule on the grid, matching the engine's
    treatment of time integrals.  The derivative measure is absolutely
    continuous with rows ``(0, grad phi(W(t)))``.
    """

    terminal_atomic = False

    def __init__(
        self,
        phi: Callable[[np.ndarray], np.ndarray],
        grad: Callable[[np.ndarray], np.ndarray],
        growth: tuple[float, float, float] = (1.0, 1.0, 1.0),
        label: str = "integral",
    ) -> None:
        self.phi = phi
        self.grad = grad
        self.growth = (float(growth[0]), float(growth[1]), float(growth[2]))
        self.label = label

    @classmethod
    def from_coeffs(cls, coeffs) -> "IntegralFunctional":
        """Running polynomial cost in the first driver component (degree <= 4)."""
        c = np.asarray(coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coeffs must be a non-empty 1-d sequence")
        if c.size - 1 > MAX_POLY_DEGREE:
            raise ValueError(
                f"polynomial payoffs are limited to degree {MAX_POLY_DEGREE}, "
                f"got degree {c.size - 1}"
            )
        dc = np.polynomial.polynomial.polyder(c) if c.size > 1 else np.zeros(1)

        def phi(x: np.ndarray) -> np.ndarray:
            return np.polynomial.polynomial.polyval(x[..., 0], c)

        def grad(x: np.ndarray) -> np.ndarray:
            g = np.zeros_like(x)
            g[..., 0] = np.polynomial.polynomial.polyval(x[..., 0], dc)
            return g

        degree = c.size - 1
        curvature = sum(k * (k - 1) * abs(c[k]) for k in range(2, c.size))
        growth = (max(1.0, curvature), max(1.0, degree - 2.0), 1.0)
        return cls(phi, grad, growth, label=f"poly-deg-{degree}")

    def __repr__(self) -> str:
        return f"IntegralFunctional({self.label})"

    def value(self, z, w, grid):
        z, w = _as_ensemble(z, w)
        vals = np.asarray(self.phi(w[:, :-1, :]), dtype=float)
        return vals.sum(axis=1) * grid.dt

    def density_rows(self, z, w, grid):
        z, w = _as_ensemble(z, w)
        rows = np.zeros((z.shape[0], grid.steps + 1, 1 + w.shape[2]))
        rows[:, :, 1:] = self.grad(w)
        return rows

    def derivative_measure(self, z, w, grid):
        rows = self.density_rows(z, w, grid)
        return PayoffMeasure(grid=grid, density=rows[0])

    def growth_constants(self):
        return self.growth


def evaluate_payoff(
    payoff: Payoff, z: np.ndarray, w: np.ndarray, grid: TimeGrid
) -> float | np.ndarray:
    """Evaluate a payoff on one path or an ensemble.

    Single-path inputs (``(N + 1,)`` / ``(N + 1, n)``) return a scalar;
    ensemble inputs return a ``(P,)`` array.
    """
    single = np.asarray(z).ndim == 1
    vals = payoff.value(z, w, grid)
    return float(vals[0]) if single else vals


def payoff_derivative_measure(
    payoff: Payoff, z: np.ndarray, w: np.ndarray, grid: TimeGrid
) -> PayoffMeasure:
    """Derivative measure of ``payoff`` along a single path."""
    return payoff.derivative_measure(z, w, grid)
