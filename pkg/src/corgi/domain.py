"""Axis-aligned simulation box with per-axis periodicity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    periodic: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.bounds_min, dtype=np.float64)
        hi = np.asarray(self.bounds_max, dtype=np.float64)
        per = np.asarray(self.periodic, dtype=bool)
        if lo.shape != hi.shape or lo.shape != per.shape or lo.ndim != 1:
            raise ValueError("bounds_min, bounds_max and periodic must be 1-D of equal length")
        if np.any(hi <= lo):
            raise ValueError(f"bounds_max {hi} must exceed bounds_min {lo} componentwise")
        object.__setattr__(self, "bounds_min", lo)
        object.__setattr__(self, "bounds_max", hi)
        object.__setattr__(self, "periodic", per)

    @property
    def dim(self) -> int:
        return self.bounds_min.shape[0]

    @property
    def lengths(self) -> np.ndarray:
        return self.bounds_max - self.bounds_min

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.lengths))

    def minimum_image(self, delta: np.ndarray) -> np.ndarray:
        """Map displacements on periodic axes into (-L/2, L/2]."""
        delta = np.array(delta, dtype=np.float64, copy=True)
        if not self.periodic.any():
            return delta
        L = self.lengths[self.periodic]
        sub = delta[..., self.periodic]
        sub = sub - L * np.ceil(sub / L - 0.5)
        delta[..., self.periodic] = sub
        return delta

    def wrap(self, positions: np.ndarray) -> np.ndarray:
        """Fold periodic coordinates into [bounds_min, bounds_max)."""
        positions = np.array(positions, dtype=np.float64, copy=True)
        if not self.periodic.any():
            return positions
        lo = self.bounds_min[self.periodic]
        L = self.lengths[self.periodic]
        sub = np.mod(positions[..., self.periodic] - lo, L)
        # mod can round up to exactly L for tiny negative inputs
        sub = np.where(sub >= L, 0.0, sub)
        positions[..., self.periodic] = lo + sub
        return positions
