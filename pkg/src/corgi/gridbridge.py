"""Particle <-> grid transfer with NGP, CIC and TSC kernels.

Grid values are channel-last, ``(n_1, ..., n_d, C)``. A particle at ``x`` has
continuous cell coordinate ``u = (x - b_min) / cell_size``; cell ``c`` has its
centre at ``u = c + 1/2`` and receives weight ``prod_a w(u_a - c_a - 1/2)``.
Gradients flow through features only.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .domain import Box

KINDS = ("ngp", "cic", "tsc")
_SUPPORT = {"ngp": 1, "cic": 2, "tsc": 3}


@dataclass(frozen=True)
class GridGeometry:
    resolution: tuple[int, ...]
    bounds_min: tuple[float, ...]
    bounds_max: tuple[float, ...]
    periodic: tuple[bool, ...]

    def __post_init__(self):
        res = tuple(int(n) for n in self.resolution)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "bounds_min", tuple(float(v) for v in self.bounds_min))
        object.__setattr__(self, "bounds_max", tuple(float(v) for v in self.bounds_max))
        object.__setattr__(self, "periodic", tuple(bool(v) for v in self.periodic))
        if not (len(res) == len(self.bounds_min) == len(self.bounds_max) == len(self.periodic)):
            raise ValueError("resolution, bounds and periodic flags must have equal length")
        if min(res) < 1:
            raise ValueError(f"resolution must be >= 1 per axis, got {res}")
        if np.any(self.cell_size <= 0):
            raise ValueError("grid bounds must satisfy bounds_max > bounds_min")

    @classmethod
    def from_box(cls, box: Box, resolution) -> "GridGeometry":
        return cls(tuple(resolution), tuple(box.bounds_min), tuple(box.bounds_max), tuple(box.periodic))

    @property
    def dim(self) -> int:
        return len(self.resolution)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def cell_size(self) -> np.ndarray:
        return (np.asarray(self.bounds_max) - np.asarray(self.bounds_min)) / np.asarray(self.resolution)

    @property
    def box(self) -> Box:
        return Box(np.asarray(self.bounds_min), np.asarray(self.bounds_max), np.asarray(self.periodic))

    def to_dict(self) -> dict:
        return {"resolution": list(self.resolution), "bounds_min": list(self.bounds_min),
                "bounds_max": list(self.bounds_max), "periodic": list(self.periodic)}

    @classmethod
    def from_dict(cls, data: dict) -> "GridGeometry":
        return cls(tuple(data["resolution"]), tuple(data["bounds_min"]), tuple(data["bounds_max"]),
                   tuple(data["periodic"]))


def _check_kind(kind: str) -> str:
    kind = kind.lower()
    if kind not in KINDS:
        raise ValueError(f"unknown kernel {kind!r}; expected one of {KINDS}")
    return kind


def kernel_weight(kind: str, r):
    """1-D assignment weight at offset ``r`` (in cells) from a cell centre."""
    kind = _check_kind(kind)
    r = np.asarray(r, dtype=np.float64)
    if kind == "ngp":
        # ties at |r| = 1/2 go to the lower-index cell, i.e. the one at r = +1/2
        w = ((r > -0.5) & (r <= 0.5)).astype(np.float64)
    elif kind == "cic":
        w = np.maximum(0.0, 1.0 - np.abs(r))
    else:
        a = np.abs(r)
        w = np.where(a <= 0.5, 0.75 - a * a, np.where(a <= 1.5, 0.5 * (1.5 - a) ** 2, 0.0))
    return w if w.ndim else float(w)


def _first_cell(kind: str, u: np.ndarray) -> np.ndarray:
    if kind == "ngp":
        return np.ceil(u).astype(np.int64) - 1
    if kind == "cic":
        return np.floor(u - 0.5).astype(np.int64)
    return np.floor(u).astype(np.int64) - 1


def stencil(positions: np.ndarray, geometry: GridGeometry, kind: str = "cic",
            renormalize: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Flat cell indices and weights, each ``(N, support**d)``."""
    kind = _check_kind(kind)
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != geometry.dim:
        raise ValueError(f"positions must be (N, {geometry.dim}), got {positions.shape}")
    if not np.all(np.isfinite(positions)):
        raise ValueError("positions contain NaN or inf")
    positions = geometry.box.wrap(positions)
    u = (positions - np.asarray(geometry.bounds_min)) / geometry.cell_size
    first = _first_cell(kind, u)
    support = _SUPPORT[kind]
    n = positions.shape[0]
    res = np.asarray(geometry.resolution)
    strides = np.cumprod(np.concatenate([[1], res[::-1][:-1]]))[::-1]

    per_axis_idx, per_axis_w = [], []
    for a in range(geometry.dim):
        cells = first[:, a:a + 1] + np.arange(support)[None, :]
        w = kernel_weight(kind, u[:, a:a + 1] - cells - 0.5)
        if geometry.periodic[a]:
            cells = cells % res[a]
        else:
            outside = (cells < 0) | (cells >= res[a])
            w = np.where(outside, 0.0, w)
            cells = np.clip(cells, 0, res[a] - 1)
        per_axis_idx.append(cells)
        per_axis_w.append(w)

    index = np.zeros((n, support ** geometry.dim), dtype=np.int64)
    weight = np.ones((n, support ** geometry.dim))
    for k, combo in enumerate(itertools.product(range(support), repeat=geometry.dim)):
        for a, s in enumerate(combo):
            index[:, k] += per_axis_idx[a][:, s] * strides[a]
            weight[:, k] *= per_axis_w[a][:, s]
    if renormalize:
        total = weight.sum(axis=1, keepdims=True)
        weight = np.where(total > 0, weight / np.where(total > 0, total, 1.0), 0.0)
    return index, weight


def scatter_with(h, index, weight, geometry: GridGeometry):
    h = tc.as_tensor(h)
    flat = tc.scatter_add(h, index, weight, size=geometry.n_cells)
    return tc.reshape(flat, tuple(geometry.resolution) + (h.shape[1],))


def gather_with(grid, index, weight, geometry: GridGeometry):
    grid = tc.as_tensor(grid)
    flat = tc.reshape(grid, (geometry.n_cells, grid.shape[-1]))
    return tc.gather_weighted(flat, index, weight)


def scatter(h, positions, geometry: GridGeometry, kind: str = "cic", renormalize: bool = False):
    """G_c = sum_p K(x_p, c) h_p as a ``(*resolution, C)`` tensor."""
    index, weight = stencil(positions, geometry, kind, renormalize)
    return scatter_with(h, index, weight, geometry)


def gather(grid, positions, geometry: GridGeometry, kind: str = "cic", renormalize: bool = False):
    """h_p = sum_c K(x_p, c) G_c as an ``(N, C)`` tensor."""
    index, weight = stencil(positions, geometry, kind, renormalize)
    return gather_with(grid, index, weight, geometry)
