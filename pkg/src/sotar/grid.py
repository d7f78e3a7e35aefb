"""Uniform time discretization shared by kernels and reliability tables.

Travel-time cell ``l`` (``l >= 1``) covers ``((l - 1) * dt, l * dt]``; a link
traversal that lands in cell ``l`` consumes ``l * dt`` of budget, which never
overstates reliability.  Budgets are indexed at cell lower edges, ``t_n = n * dt``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    horizon: float

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise GridError(f"time step must be positive, got {self.dt}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise GridError(f"horizon must be positive, got {self.horizon}")
        ratio = self.horizon / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise GridError(f"horizon {self.horizon} is not a multiple of dt {self.dt}")

    @property
    def n_cells(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def size(self) -> int:
        """Number of budget grid points, ``0 .. n_cells`` inclusive."""
        return self.n_cells + 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.size) * self.dt

    @property
    def midpoints(self) -> np.ndarray:
        """Midpoints of travel-time cells 1..n_cells (index 0 is cell 1)."""
        return (np.arange(1, self.size) - 0.5) * self.dt

    def budget_index(self, t: float) -> int:
        """Floor a budget onto the grid."""
        if t < 0 or t > self.horizon + 1e-9 * self.horizon:
            raise GridError(f"budget {t} outside [0, {self.horizon}]")
        return min(int(math.floor(t / self.dt + 1e-9)), self.n_cells)

    def cell_index(self, y: float) -> int:
        """Index of the travel-time cell containing ``y``; 0 only for ``y == 0``."""
        if y < 0 or y > self.horizon + 1e-9 * self.horizon:
            raise GridError(f"travel time {y} outside [0, {self.horizon}]")
        return min(int(math.ceil(y / self.dt - 1e-9)), self.n_cells)
