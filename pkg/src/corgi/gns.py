"""Residual edge-then-node message passing."""
from __future__ import annotations

import numpy as np

from . import tensorcore as tc
from .neighbors import ParticleGraph


class GnsLayer(tc.Module):
    def __init__(self, width: int, rng: np.random.Generator, mlp_layers: int = 2, dtype=None):
        self.phi_e = tc.MLP(3 * width, width, width, mlp_layers, rng, layer_norm=True, dtype=dtype)
        self.phi_n = tc.MLP(2 * width, width, width, mlp_layers, rng, layer_norm=True, dtype=dtype)

    def forward(self, h, e, graph: ParticleGraph):
        h_recv = tc.take_rows(h, graph.receivers)
        h_send = tc.take_rows(h, graph.senders)
        e_new = tc.add(e, self.phi_e(tc.concat([h_recv, h_send, e], axis=1)))
        agg = tc.scatter_add(e_new, graph.receivers, None, size=h.shape[0])
        h_new = tc.add(h, self.phi_n(tc.concat([h, agg], axis=1)))
        return h_new, e_new


class GnsStack(tc.Module):
    def __init__(self, n_layers: int, width: int, rng: np.random.Generator, mlp_layers: int = 2, dtype=None):
        self.width = width
        self.layers = [GnsLayer(width, rng, mlp_layers, dtype) for _ in range(n_layers)]

    def __len__(self) -> int:
        return len(self.layers)

    def forward(self, h, e, graph: ParticleGraph):
        for layer in self.layers:
            h, e = layer(h, e, graph)
        return h, e


def step(layer: GnsLayer, h, e, graph: ParticleGraph):
    return layer(h, e, graph)


def run(stack: GnsStack, h, e, graph: ParticleGraph):
    return stack(h, e, graph)
