"""Time discretization and simulation configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: The only stepping scheme shipped: Euler in the log of the state density,
#: which keeps the stochastic exponential structurally positive.
SCHEME_LOG_EULER = "log-euler"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, horizon] with ``steps`` intervals.

    Node i sits at ``i * horizon / steps``; all quadratures in the package
    use left-endpoint rectangle sums on this grid.
    """

    horizon: float
    steps: int
    _nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (float(self.horizon) > 0.0 and np.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")
        if int(self.steps) < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "steps", int(self.steps))
        nodes = np.linspace(0.0, self.horizon, self.steps + 1)
        nodes.flags.writeable = False
        object.__setattr__(self, "_nodes", nodes)

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        """Read-only array of the steps+1 grid nodes."""
        return self._nodes

    def index_of(self, t: float) -> int:
        """Node index of time ``t``; raises if ``t`` is not (close to) a node."""
        if not np.isfinite(t):
            raise ValueError(f"time {t} is not finite")
        i = int(round(float(t) / self.dt))
        if i < 0 or i > self.steps or abs(self._nodes[i] - t) > 1e-9 * max(1.0, self.horizon):
            raise ValueError(f"time {t} is not a node of the grid (horizon={self.horizon}, steps={self.steps})")
        return i


@dataclass(frozen=True)
class SimConfig:
    """Ensemble size, seeding and variance-reduction switches."""

    path_count: int
    master_seed: int
    scheme: str = SCHEME_LOG_EULER
    antithetic: bool = False

    def __post_init__(self):
        if int(self.path_count) < 1:
            raise ValueError(f"path_count must be >= 1, got {self.path_count}")
        if self.scheme != SCHEME_LOG_EULER:
            raise ValueError(f"unknown scheme {self.scheme!r}; supported: {SCHEME_LOG_EULER!r}")
        if self.antithetic and int(self.path_count) % 2 != 0:
            raise ValueError("antithetic sampling needs an even path_count")
        object.__setattr__(self, "path_count", int(self.path_count))
        object.__setattr__(self, "master_seed", int(self.master_seed))
