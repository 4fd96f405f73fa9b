"""Fixed-radius neighbour graphs via cell lists with minimum-image distances."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .domain import Box


@dataclass
class ParticleGraph:
    senders: np.ndarray  # (E,) int64
    receivers: np.ndarray  # (E,) int64
    displacement: np.ndarray  # (E, d) minimum-image x_receiver - x_sender
    distance: np.ndarray  # (E,)
    n_nodes: int

    @property
    def n_edges(self) -> int:
        return int(self.senders.shape[0])

    def permuted(self, perm: np.ndarray) -> "ParticleGraph":
        """Relabel nodes so that new node k is old node perm[k]; edges re-sorted canonically."""
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        return _canonical(inv[self.senders], inv[self.receivers], self.displacement, self.distance,
                          self.n_nodes)


def _canonical(senders, receivers, displacement, distance, n_nodes) -> ParticleGraph:
    order = np.lexsort((senders, receivers))
    return ParticleGraph(senders[order].astype(np.int64), receivers[order].astype(np.int64),
                         displacement[order], distance[order], int(n_nodes))


def _check_radius(r: float, box: Box) -> None:
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    half = box.lengths[box.periodic] / 2
    if half.size and r >= half.min():
        raise ValueError(f"radius {r} must be below half the smallest periodic extent ({half.min()})")


def _pairs_within(positions, r, box, receivers, senders) -> ParticleGraph:
    keep = receivers != senders
    receivers, senders = receivers[keep], senders[keep]
    disp = box.minimum_image(positions[receivers] - positions[senders])
    dist = np.sqrt(np.sum(disp * disp, axis=1))
    hit = dist <= r
    return _canonical(senders[hit], receivers[hit], disp[hit], dist[hit], positions.shape[0])


def build_graph(positions: np.ndarray, r: float, bounds_min, bounds_max, periodic) -> ParticleGraph:
    """All ordered pairs (receiver, sender) with minimum-image distance <= r."""
    box = Box(bounds_min, bounds_max, periodic)
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != box.dim:
        raise ValueError(f"positions must be (N, {box.dim}), got {positions.shape}")
    if not np.all(np.isfinite(positions)):
        raise ValueError("positions contain NaN or inf")
    _check_radius(r, box)
    n = positions.shape[0]
    d = box.dim
    empty = ParticleGraph(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, d)), np.zeros(0), n)
    if n < 2:
        return empty

    n_cells = np.maximum(np.floor(box.lengths / r).astype(np.int64), 1)
    cell_size = box.lengths / n_cells
    rel = (box.wrap(positions) - box.bounds_min) / cell_size
    coords = np.floor(rel).astype(np.int64)
    for a in range(d):
        if box.periodic[a]:
            coords[:, a] %= n_cells[a]
        else:
            np.clip(coords[:, a], 0, n_cells[a] - 1, out=coords[:, a])
    strides = np.cumprod(np.concatenate([[1], n_cells[::-1][:-1]]))[::-1]
    cell_id = coords @ strides
    order = np.argsort(cell_id, kind="stable")
    counts = np.bincount(cell_id, minlength=int(np.prod(n_cells)))
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])

    offsets = []
    for a in range(d):
        if box.periodic[a] and n_cells[a] == 1:
            offsets.append((0,))
        elif box.periodic[a] and n_cells[a] == 2:
            offsets.append((0, 1))
        else:
            offsets.append((-1, 0, 1))

    recv_parts, send_parts = [], []
    for off in itertools.product(*offsets):
        nb = coords + np.asarray(off)
        valid = np.ones(n, dtype=bool)
        for a in range(d):
            if box.periodic[a]:
                nb[:, a] %= n_cells[a]
            else:
                valid &= (nb[:, a] >= 0) & (nb[:, a] < n_cells[a])
        rows = np.flatnonzero(valid)
        nb_id = nb[rows] @ strides
        cnt = counts[nb_id]
        recv = np.repeat(rows, cnt)
        # position of each generated pair within its neighbour cell
        within = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        send = order[np.repeat(starts[nb_id], cnt) + within]
        recv_parts.append(recv)
        send_parts.append(send)
    return _pairs_within(positions, r, box, np.concatenate(recv_parts), np.concatenate(send_parts))


def build_graph_brute(positions: np.ndarray, r: float, bounds_min, bounds_max, periodic) -> ParticleGraph:
    """O(N^2) reference implementation."""
    box = Box(bounds_min, bounds_max, periodic)
    positions = np.asarray(positions, dtype=np.float64)
    _check_radius(r, box)
    n = positions.shape[0]
    recv, send = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return _pairs_within(positions, r, box, recv.reshape(-1), send.reshape(-1))


def average_degree(graph: ParticleGraph, n_nodes: int | None = None) -> float:
    n = graph.n_nodes if n_nodes is None else n_nodes
    return graph.n_edges / n if n else 0.0


def hop_distances(graph: ParticleGraph) -> np.ndarray:
    """All-pairs unweighted graph distance (inf when disconnected)."""
    adj = csr_matrix((np.ones(graph.n_edges), (graph.receivers, graph.senders)),
                     shape=(graph.n_nodes, graph.n_nodes))
    return shortest_path(adj, unweighted=True, directed=False)
