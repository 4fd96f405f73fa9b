"""Trajectory container, the CORG1 binary format, and a Taylor-Green generator.

CORG1 layout (little-endian, row-major ``[t][i][axis]``)::

    magic            6 bytes  b"CORG1\\0"
    version          u32      1
    d                u32
    N                u64
    T                u64
    dt               f64
    bounds_min       f64[d]
    bounds_max       f64[d]
    periodic         u8[d]
    external_force   f64[d]
    n_types          u32
    types            i32[N]   values in 1..n_types
    positions        f32[T*N*d]
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .domain import Box

MAGIC = b"CORG1\x00"
VERSION = 1
STD_FLOOR = 1e-12


class TrajectoryFormatError(ValueError):
    """Base class for CORG1 decoding failures."""


class MagicMismatchError(TrajectoryFormatError):
    pass


class TruncatedPayloadError(TrajectoryFormatError):
    pass


class NonFinitePositionsError(TrajectoryFormatError):
    pass


def wrap_float32(positions: np.ndarray, box: Box) -> np.ndarray:
    """Cast to float32 keeping periodic coordinates strictly below the upper bound."""
    out = box.wrap(positions).astype(np.float32)
    for axis in np.flatnonzero(box.periodic):
        col = out[..., axis]
        col[col.astype(np.float64) >= box.bounds_max[axis]] = np.float32(box.bounds_min[axis])
    return out


@dataclass
class Trajectory:
    positions: np.ndarray  # (T, N, d) float32
    types: np.ndarray  # (N,) int32, 1-based
    dt: float
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    periodic: np.ndarray
    external_force: np.ndarray
    n_types: int = 1

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float32)
        if self.positions.ndim != 3:
            raise ValueError(f"positions must be (T, N, d), got {self.positions.shape}")
        d = self.positions.shape[2]
        self.types = np.ascontiguousarray(self.types, dtype=np.int32).reshape(-1)
        self.bounds_min = np.asarray(self.bounds_min, dtype=np.float64).reshape(d)
        self.bounds_max = np.asarray(self.bounds_max, dtype=np.float64).reshape(d)
        self.periodic = np.asarray(self.periodic, dtype=bool).reshape(d)
        self.external_force = np.asarray(self.external_force, dtype=np.float64).reshape(d)
        self.dt = float(self.dt)
        self.n_types = int(self.n_types)
        if self.types.shape[0] != self.positions.shape[1]:
            raise ValueError("types length must equal the particle count")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.types.size and (self.types.min() < 1 or self.types.max() > self.n_types):
            raise ValueError(f"particle types must lie in 1..{self.n_types}")
        if not np.all(np.isfinite(self.positions)):
            raise NonFinitePositionsError("positions contain NaN or inf")
        Box(self.bounds_min, self.bounds_max, self.periodic)  # validates bounds

    @property
    def box(self) -> Box:
        return Box(self.bounds_min, self.bounds_max, self.periodic)

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_particles(self) -> int:
        return self.positions.shape[1]

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    def window(self, end: int, history: int) -> np.ndarray:
        """The ``history`` frames ending at (and including) frame ``end``."""
        start = end - history + 1
        if start < 0 or end >= self.n_frames:
            raise IndexError(f"window ending at {end} with history {history} outside 0..{self.n_frames - 1}")
        return self.positions[start:end + 1].astype(np.float64)

    def with_positions(self, positions: np.ndarray) -> "Trajectory":
        return Trajectory(positions, self.types, self.dt, self.bounds_min, self.bounds_max,
                          self.periodic, self.external_force, self.n_types)


def write_trajectory(traj: Trajectory, path) -> None:
    T, N, d = traj.positions.shape
    parts = [
        MAGIC,
        struct.pack("<IIQQd", VERSION, d, N, T, traj.dt),
        traj.bounds_min.astype("<f8").tobytes(),
        traj.bounds_max.astype("<f8").tobytes(),
        traj.periodic.astype("u1").tobytes(),
        traj.external_force.astype("<f8").tobytes(),
        struct.pack("<I", traj.n_types),
        traj.types.astype("<i4").tobytes(),
        traj.positions.astype("<f4").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedPayloadError(
                f"truncated CORG1 payload while reading {what}: need {n} bytes at offset {self.pos}, "
                f"file has {len(self.buf)}"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def array(self, dtype: str, count: int, what: str) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count, what), dtype=dt, count=count)


def read_trajectory(path) -> Trajectory:
    r = _Reader(Path(path).read_bytes())
    magic = r.take(len(MAGIC), "magic") if len(r.buf) >= len(MAGIC) else r.buf
    if magic != MAGIC:
        raise MagicMismatchError(f"not a CORG1 file: magic {magic!r}")
    version, d, N, T, dt = struct.unpack("<IIQQd", r.take(struct.calcsize("<IIQQd"), "header"))
    if version != VERSION:
        raise TrajectoryFormatError(f"unsupported CORG1 version {version}")
    if d < 1:
        raise TrajectoryFormatError(f"invalid dimension {d}")
    bmin = r.array("<f8", d, "bounds_min")
    bmax = r.array("<f8", d, "bounds_max")
    periodic = r.array("u1", d, "periodic").astype(bool)
    force = r.array("<f8", d, "external_force")
    (n_types,) = struct.unpack("<I", r.take(4, "n_types"))
    types = r.array("<i4", N, "types")
    positions = r.array("<f4", T * N * d, "positions").reshape(T, N, d)
    if r.pos != len(r.buf):
        raise TrajectoryFormatError(f"{len(r.buf) - r.pos} trailing bytes after positions")
    if not np.all(np.isfinite(positions)):
        raise NonFinitePositionsError("positions contain NaN or inf")
    return Trajectory(positions.astype(np.float32), types.astype(np.int32), dt, bmin, bmax,
                      periodic, force, n_types)


def tgv_velocity(xy: np.ndarray, t: float, nu: float) -> np.ndarray:
    """Decaying Taylor-Green field u = (-cos x sin y, sin x cos y) exp(-2 nu t)."""
    x, y = xy[..., 0], xy[..., 1]
    decay = np.exp(-2.0 * nu * t)
    return np.stack([-np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)], axis=-1) * decay


def generate_tgv(n_side: int, nu: float, dt: float, T: int, seed: int, substeps: int = 8) -> Trajectory:
    """Advect a jittered lattice through the analytic 2-D Taylor-Green vortex."""
    if n_side < 1 or T < 1 or substeps < 1:
        raise ValueError("n_side, T and substeps must be positive")
    if dt <= 0 or nu < 0:
        raise ValueError("dt must be positive and nu non-negative")
    L = 2.0 * np.pi
    box = Box(np.zeros(2), np.full(2, L), np.ones(2, dtype=bool))
    spacing = L / n_side
    rng = np.random.default_rng(seed)
    grid = (np.stack(np.meshgrid(np.arange(n_side), np.arange(n_side), indexing="ij"), -1)
            .reshape(-1, 2) + 0.5) * spacing
    x = box.wrap(grid + rng.uniform(-0.2 * spacing, 0.2 * spacing, size=grid.shape))

    frames = np.empty((T, n_side * n_side, 2))
    frames[0] = x
    h = dt / substeps
    t = 0.0
    for k in range(1, T):
        for _ in range(substeps):
            k1 = tgv_velocity(x, t, nu)
            k2 = tgv_velocity(x + 0.5 * h * k1, t + 0.5 * h, nu)
            k3 = tgv_velocity(x + 0.5 * h * k2, t + 0.5 * h, nu)
            k4 = tgv_velocity(x + h * k3, t + h, nu)
            x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        x = box.wrap(x)
        frames[k] = x
    return Trajectory(wrap_float32(frames, box), np.ones(n_side * n_side, dtype=np.int32), dt,
                      box.bounds_min, box.bounds_max, box.periodic, np.zeros(2), 1)


@dataclass
class DatasetStats:
    vel_mean: np.ndarray
    vel_std: np.ndarray
    acc_mean: np.ndarray
    acc_std: np.ndarray

    def to_dict(self) -> dict:
        return {k: np.asarray(v, dtype=np.float64).tolist() for k, v in vars(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetStats":
        return cls(**{k: np.asarray(data[k], dtype=np.float64) for k in ("vel_mean", "vel_std", "acc_mean", "acc_std")})

    @classmethod
    def identity(cls, dim: int) -> "DatasetStats":
        return cls(np.zeros(dim), np.ones(dim), np.zeros(dim), np.ones(dim))


def finite_differences(positions: np.ndarray, box: Box, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-image velocities (T-1 frames) and accelerations (T-2 frames)."""
    pos = np.asarray(positions, dtype=np.float64)
    vel = box.minimum_image(np.diff(pos, axis=0)) / dt
    acc = np.diff(vel, axis=0) / dt
    return vel, acc


def compute_stats(trajectories: Sequence[Trajectory] | Iterable[Trajectory], history: int = 2) -> DatasetStats:
    """Per-axis mean/std of finite-difference velocities and accelerations.

    Accelerations are counted only where a full ``history``-frame window ends,
    i.e. for the frames a training sample can use as its target.
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("compute_stats needs at least one trajectory")
    vels, accs = [], []
    for traj in trajectories:
        vel, acc = finite_differences(traj.positions, traj.box, traj.dt)
        vels.append(vel.reshape(-1, traj.dim))
        # acc[k] is the acceleration at frame k+1; windows end at frames >= history-1
        accs.append(acc[max(history - 2, 0):].reshape(-1, traj.dim))
    vel = np.concatenate(vels)
    acc = np.concatenate(accs)
    if vel.size == 0 or acc.size == 0:
        raise ValueError("trajectories too short to estimate velocity and acceleration statistics")
    return DatasetStats(vel.mean(0), np.maximum(vel.std(0), STD_FLOOR),
                        acc.mean(0), np.maximum(acc.std(0), STD_FLOOR))
