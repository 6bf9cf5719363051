from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform stepping grid; every ``sample_every``-th step is recorded.

    The number of steps is ``round((t_end - t_start) / dt)`` and must match
    the span to within 1e-9 relative, so sample times land exactly on steps.
    """

    t_start: float = 0.0
    t_end: float = 1.0
    dt: float = 1e-3
    sample_every: int = 1

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError(f"t_end ({self.t_end}) must exceed t_start ({self.t_start})")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            raise ValueError(f"sample_every must be a positive integer, got {self.sample_every}")
        span = self.t_end - self.t_start
        if span / self.dt < 1 - 1e-12:
            raise ValueError("grid must contain at least one step")
        n = round(span / self.dt)
        if abs(n * self.dt - span) > 1e-9 * max(span, 1.0):
            raise ValueError(f"(t_end - t_start) = {span} is not a whole number of steps of {self.dt}")

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t_start) / self.dt))

    @property
    def sample_steps(self) -> np.ndarray:
        """Step indices at which the state is recorded (always includes step 0)."""
        return np.arange(0, self.n_steps + 1, self.sample_every)

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.sample_steps * self.dt

    def step_time(self, k) -> np.ndarray | float:
        return self.t_start + np.asarray(k) * self.dt
