"""Raw particle/edge features from a position-history window, and their latent encoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .dataio import Trajectory
from .domain import Box
from .neighbors import ParticleGraph

SPEED_EPS = 1e-12


@dataclass
class FeatureConfig:
    use_absolute_positions: bool = False
    use_external_force: bool = True
    normalize_edges: bool = True
    type_embedding_dim: int = 16


@dataclass
class HistoryWindow:
    positions: np.ndarray  # (history, N, d), most recent last
    dt: float
    box: Box
    external_force: np.ndarray
    types: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[0] < 2:
            raise ValueError(f"window must be (history>=2, N, d), got {self.positions.shape}")
        self.external_force = np.asarray(self.external_force, dtype=np.float64)
        self.types = np.asarray(self.types, dtype=np.int64)

    @property
    def history(self) -> int:
        return self.positions.shape[0]

    @property
    def current(self) -> np.ndarray:
        return self.positions[-1]

    @classmethod
    def from_trajectory(cls, traj: Trajectory, end: int, history: int) -> "HistoryWindow":
        return cls(traj.window(end, history), traj.dt, traj.box, traj.external_force, traj.types)


def velocity_history(window: HistoryWindow) -> np.ndarray:
    """(history-1, N, d) minimum-image finite-difference velocities."""
    return window.box.minimum_image(np.diff(window.positions, axis=0)) / window.dt


def node_feature_width(dim: int, history: int, n_bounded_axes: int, config: FeatureConfig) -> int:
    width = (history - 1) * dim + (history - 1) + n_bounded_axes
    if config.use_absolute_positions:
        width += history * dim
    if config.use_external_force:
        width += dim
    return width


def edge_feature_width(dim: int) -> int:
    return dim + 1


def build_node_features(window: HistoryWindow, r: float, config: FeatureConfig) -> np.ndarray:
    """(N, F_n) raw node features, excluding the learned type embedding."""
    if not np.all(np.isfinite(window.positions)):
        raise ValueError("history window contains NaN or inf")
    n = window.positions.shape[1]
    box = window.box
    vel = velocity_history(window)
    speed = np.linalg.norm(vel, axis=-1)
    safe = np.where(speed < SPEED_EPS, 1.0, speed)
    direction = np.where(speed[..., None] < SPEED_EPS, 0.0, vel / safe[..., None])
    parts = []
    if config.use_absolute_positions:
        parts.append(window.positions.transpose(1, 0, 2).reshape(n, -1))
    parts.append(direction.transpose(1, 0, 2).reshape(n, -1))
    parts.append(speed.T)
    bounded = np.flatnonzero(~box.periodic)
    if bounded.size:
        x = window.current[:, bounded]
        wall = np.minimum(x - box.bounds_min[bounded], box.bounds_max[bounded] - x)
        parts.append(np.clip(wall, 0.0, r) / r)
    if config.use_external_force:
        parts.append(np.broadcast_to(window.external_force, (n, box.dim)))
    return np.concatenate(parts, axis=1)


def build_edge_features(graph: ParticleGraph, r: float, config: FeatureConfig | None = None) -> np.ndarray:
    """(E, d+1): displacement and distance, divided by r unless disabled."""
    config = config or FeatureConfig()
    scale = 1.0 / r if config.normalize_edges else 1.0
    return np.concatenate([graph.displacement, graph.distance[:, None]], axis=1) * scale


def encode(node_raw, edge_raw, phi_n: tc.MLP, phi_e: tc.MLP):
    """Latent node and edge embeddings."""
    for raw, mlp, name in ((node_raw, phi_n, "node"), (edge_raw, phi_e, "edge")):
        expected = mlp.linears[0].weight.shape[0]
        if raw.shape[-1] != expected:
            raise ValueError(f"{name} features have width {raw.shape[-1]}, encoder expects {expected}")
    return phi_n(node_raw), phi_e(edge_raw)
