"""Full hybrid model: GNS encoder -> grid U-Net -> fused GNS decoder -> acceleration head."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .config import ModelConfig, to_dict
from .dataio import DatasetStats, Trajectory
from .domain import Box
from .encoding import (
    HistoryWindow,
    build_edge_features,
    build_node_features,
    edge_feature_width,
    encode,
    node_feature_width,
)
from .gns import GnsStack
from .gridbridge import GridGeometry, gather_with, scatter_with, stencil
from .neighbors import ParticleGraph, build_graph
from .propagation import PRESETS
from .unet import UNet

PARTICLES_PER_CELL = 1.5
RADIUS_PER_SPACING = 1.5


def default_resolution(lengths, n_particles: int, levels: int, per_cell: float = PARTICLES_PER_CELL):
    """About ``per_cell`` particles per cell, each axis a multiple of 2**(levels-1)."""
    lengths = np.asarray(lengths, dtype=np.float64)
    step = 2 ** max(levels - 1, 0)
    cells = max(n_particles / per_cell, 1.0)
    spacing = (np.prod(lengths) / cells) ** (1.0 / lengths.size)
    return tuple(int(max(step, step * round(L / spacing / step))) for L in lengths)


def default_radius(lengths, n_particles: int, per_spacing: float = RADIUS_PER_SPACING) -> float:
    """``per_spacing`` times the mean inter-particle spacing of a uniform fill."""
    lengths = np.asarray(lengths, dtype=np.float64)
    return float(per_spacing * (np.prod(lengths) / max(n_particles, 1)) ** (1.0 / lengths.size))


def configure(cfg: ModelConfig, traj: Trajectory, dataset: str | None = None) -> ModelConfig:
    """Fill the domain-dependent fields of ``cfg`` from a trajectory."""
    box = traj.box
    updates = dict(dim=traj.dim, bounds_min=tuple(box.bounds_min), bounds_max=tuple(box.bounds_max),
                   periodic=tuple(box.periodic), n_types=traj.n_types)
    if not cfg.radius:
        updates["radius"] = (PRESETS[dataset].radius if dataset is not None
                             else default_radius(box.lengths, traj.n_particles))
    if not cfg.resolution:
        if dataset is not None:
            updates["resolution"] = PRESETS[dataset].resolution
        else:
            updates["resolution"] = default_resolution(box.lengths, traj.n_particles, len(cfg.widths))
    return dataclasses.replace(cfg, **updates)


@dataclass
class PreparedInput:
    """Everything a forward pass needs that does not depend on parameters."""

    graph: ParticleGraph
    node_raw: np.ndarray
    edge_raw: np.ndarray
    type_index: np.ndarray
    scatter_stencil: tuple[np.ndarray, np.ndarray]
    gather_stencil: tuple[np.ndarray, np.ndarray]
    positions: np.ndarray

    @property
    def n_particles(self) -> int:
        return self.node_raw.shape[0]


class CorgiModel(tc.Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, stats: DatasetStats | None = None):
        if not (cfg.bounds_min and cfg.bounds_max and cfg.periodic and cfg.resolution and cfg.radius > 0):
            raise ValueError("model config needs bounds, periodic flags, radius and grid resolution "
                             "(see configure)")
        self.cfg = cfg
        self.stats = stats or DatasetStats.identity(cfg.dim)
        dt = cfg.dtype
        H = cfg.hidden
        self.geometry = GridGeometry(cfg.resolution, cfg.bounds_min, cfg.bounds_max, cfg.periodic)
        if self.geometry.dim != cfg.dim:
            raise ValueError(f"grid geometry is {self.geometry.dim}-D but the model is {cfg.dim}-D")
        cfg.plan.check_resolution(cfg.resolution)
        n_bounded = int(sum(not p for p in cfg.periodic))
        self.node_width = node_feature_width(cfg.dim, cfg.history, n_bounded, cfg.features)
        in_width = self.node_width + (cfg.type_dim if cfg.n_types > 1 else 0)
        self.type_embedding = tc.Embedding(cfg.n_types, cfg.type_dim, rng, dt) if cfg.n_types > 1 else None
        self.phi_n = tc.MLP(in_width, H, H, cfg.mlp_layers, rng, layer_norm=True, dtype=dt)
        self.phi_e = tc.MLP(edge_feature_width(cfg.dim), H, H, cfg.mlp_layers, rng, layer_norm=True, dtype=dt)
        self.encoder = GnsStack(cfg.layers, H, rng, cfg.mlp_layers, dt)
        self.unet = UNet(cfg.plan, H, cfg.periodic, rng, dt)
        self.fuse = tc.Linear(2 * H, H, rng, bias=False, dtype=dt)
        self.decoder = GnsStack(cfg.layers, H, rng, cfg.mlp_layers, dt)
        self.head = tc.MLP(H, H, cfg.dim, cfg.mlp_layers, rng, layer_norm=False, dtype=dt)

    @property
    def box(self) -> Box:
        return self.geometry.box

    def prepare(self, window: HistoryWindow, graph: ParticleGraph | None = None) -> PreparedInput:
        cfg = self.cfg
        if window.history != cfg.history:
            raise ValueError(f"window has {window.history} frames, model expects {cfg.history}")
        if window.positions.shape[2] != cfg.dim:
            raise ValueError(f"window is {window.positions.shape[2]}-D, model is {cfg.dim}-D")
        current = window.current
        if graph is None:
            graph = build_graph(current, cfg.radius, cfg.bounds_min, cfg.bounds_max, cfg.periodic)
        node_raw = build_node_features(window, cfg.radius, cfg.features).astype(cfg.dtype)
        edge_raw = build_edge_features(graph, cfg.radius, cfg.features).astype(cfg.dtype)
        types = np.asarray(window.types, dtype=np.int64)
        if types.size and (types.min() < 1 or types.max() > cfg.n_types):
            raise ValueError(f"particle types must lie in 1..{cfg.n_types}")
        s = stencil(current, self.geometry, cfg.scatter_kind, cfg.renormalize)
        g = s if cfg.gather_kind == cfg.scatter_kind else stencil(current, self.geometry, cfg.gather_kind,
                                                                  cfg.renormalize)
        return PreparedInput(graph, node_raw, edge_raw, types - 1, s, g, current)

    def _encode(self, prep: PreparedInput):
        node = prep.node_raw
        if self.type_embedding is not None:
            node = tc.concat([tc.as_tensor(node), self.type_embedding(prep.type_index)], axis=1)
        return encode(node, prep.edge_raw, self.phi_n, self.phi_e)

    def _as_prepared(self, inputs) -> PreparedInput:
        return inputs if isinstance(inputs, PreparedInput) else self.prepare(inputs)

    def forward(self, inputs) -> tc.DiffTensor:
        """Normalized acceleration prediction, (N, d)."""
        prep = self._as_prepared(inputs)
        h, e = self._encode(prep)
        h_down, e_down = self.encoder(h, e, prep.graph)
        grid = scatter_with(h_down, *prep.scatter_stencil, self.geometry)
        grid = self.unet(grid)
        h_grid = gather_with(grid, *prep.gather_stencil, self.geometry)
        h_fused = self.fuse(tc.concat([h_down, h_grid], axis=1))
        e_dec = e_down if self.cfg.decoder_edges == "inherit" else self.phi_e(prep.edge_raw)
        h_up, _ = self.decoder(h_fused, e_dec, prep.graph)
        return self.head(h_up)

    def forward_gns_baseline(self, inputs) -> tc.DiffTensor:
        """The same encoder, decoder and head as a plain 2L-layer GNS, without the grid stage."""
        prep = self._as_prepared(inputs)
        h, e = self._encode(prep)
        h, e = self.encoder(h, e, prep.graph)
        h, _ = self.decoder(h, e, prep.graph)
        return self.head(h)

    def denormalize(self, accel_norm: np.ndarray) -> np.ndarray:
        return np.asarray(accel_norm, dtype=np.float64) * self.stats.acc_std + self.stats.acc_mean

    def normalize(self, accel: np.ndarray) -> np.ndarray:
        return (np.asarray(accel, dtype=np.float64) - self.stats.acc_mean) / self.stats.acc_std

    def predict_acceleration(self, inputs, baseline: bool = False) -> np.ndarray:
        with tc.no_grad():
            out = self.forward_gns_baseline(inputs) if baseline else self.forward(inputs)
        return self.denormalize(out.data)

    def manifest(self) -> dict:
        return {"model": to_dict(self.cfg), "stats": self.stats.to_dict(),
                "geometry": self.geometry.to_dict(), "parameters": self.num_parameters()}

