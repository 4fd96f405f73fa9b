"""Information-propagation analysis and the named benchmark presets."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    lengths: tuple[float, ...]
    radius: float
    dt: float
    particles: int
    resolution: tuple[int, ...]
    periodic: tuple[bool, ...]


_TWO_PI = 2.0 * math.pi

PRESETS: dict[str, DatasetPreset] = {p.name: p for p in [
    DatasetPreset("DAM-2D", (5.586, 2.22), 0.029, 0.03, 5740, (80, 32), (False, False)),
    DatasetPreset("LDC-2D", (1.12, 1.12), 0.029, 0.04, 2708, (32, 32), (False, False)),
    DatasetPreset("RPF-2D", (1.0, 2.0), 0.036, 0.04, 3200, (32, 64), (True, True)),
    DatasetPreset("TGV-2D", (1.0, 1.0), 0.029, 0.04, 2500, (32, 32), (True, True)),
    DatasetPreset("LDC-3D", (1.25, 1.25, 0.5), 0.06, 0.09, 8160, (40, 40, 16), (False, False, True)),
    DatasetPreset("RPF-3D", (1.0, 2.0, 0.5), 0.072, 0.1, 8000, (32, 64, 16), (True, True, True)),
    DatasetPreset("TGV-3D", (_TWO_PI,) * 3, 0.46, 0.5, 8000, (32, 32, 32), (True, True, True)),
]}


@dataclass(frozen=True)
class PropagationReport:
    diagonal: float
    radius: float
    layers: int
    courant: float
    min_levels: int


def courant_number(lengths, r: float, L: int) -> float:
    """||b_max - b_min||_2 / (r L): the worst-case travel distance per step over the GNN reach."""
    if r <= 0 or L <= 0:
        raise ValueError("radius and layer count must be positive")
    return float(np.linalg.norm(np.asarray(lengths, dtype=np.float64))) / (r * L)


def min_cnn_levels(courant: float) -> int:
    """max(0, ceil(log2 courant))."""
    if courant <= 0:
        raise ValueError("Courant number must be positive")
    return max(0, math.ceil(math.log2(courant)))


def analyze(lengths, r: float, L: int) -> PropagationReport:
    c = courant_number(lengths, r, L)
    return PropagationReport(float(np.linalg.norm(lengths)), r, L, c, min_cnn_levels(c))
