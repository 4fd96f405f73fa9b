"""Symplectic-Euler integration and autoregressive rollouts."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .dataio import Trajectory, wrap_float32, write_trajectory
from .domain import Box
from .encoding import HistoryWindow

AccelFn = Callable[[HistoryWindow], np.ndarray]


def symplectic_step(x, v, a, dt: float, box: Box | None = None):
    """v' = v + dt a, x' = x + dt v', then wrap periodic axes."""
    x, v, a = (np.asarray(t, dtype=np.float64) for t in (x, v, a))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v)) and np.all(np.isfinite(a))):
        raise FloatingPointError("non-finite state entering symplectic_step")
    v_new = v + dt * a
    x_new = x + dt * v_new
    if box is not None:
        x_new = box.wrap(x_new)
    return x_new, v_new


class RolloutState:
    """Sliding buffer of the most recent ``history`` frames."""

    def __init__(self, frames: np.ndarray, dt: float, box: Box):
        self.frames = np.array(frames, dtype=np.float64)
        self.dt = dt
        self.box = box
        self.step = 0

    @property
    def velocity(self) -> np.ndarray:
        return self.box.minimum_image(self.frames[-1] - self.frames[-2]) / self.dt

    def push(self, x: np.ndarray) -> None:
        self.frames = np.concatenate([self.frames[1:], x[None]], axis=0)
        self.step += 1


def zero_acceleration(window: HistoryWindow) -> np.ndarray:
    return np.zeros_like(window.current)


def _check_compatible(model, traj: Trajectory) -> None:
    cfg = model.cfg
    if traj.dim != cfg.dim:
        raise ValueError(f"trajectory is {traj.dim}-D, model is {cfg.dim}-D")
    same = (np.allclose(traj.bounds_min, cfg.bounds_min) and np.allclose(traj.bounds_max, cfg.bounds_max)
            and tuple(bool(p) for p in traj.periodic) == tuple(cfg.periodic))
    if not same:
        raise ValueError("trajectory domain does not match the model manifest")
    if traj.n_types > cfg.n_types:
        raise ValueError(f"trajectory has {traj.n_types} particle types, model supports {cfg.n_types}")


def rollout(model, traj: Trajectory, start: int, n_steps: int, accel_fn: AccelFn | None = None,
            history: int | None = None) -> np.ndarray:
    """Predict frames start+history .. start+history+n_steps-1, shape (n_steps, N, d).

    ``accel_fn`` overrides the model (e.g. ``zero_acceleration``); ``model``
    may then be None, in which case ``history`` must be given.
    """
    if model is not None:
        _check_compatible(model, traj)
        history = model.cfg.history
        accel_fn = accel_fn or model.predict_acceleration
    if history is None or accel_fn is None:
        raise ValueError("need a model or both accel_fn and history")
    if n_steps < 0 or start < 0:
        raise ValueError("start and n_steps must be non-negative")
    if start + history + n_steps > traj.n_frames:
        raise ValueError(f"start {start} + history {history} + steps {n_steps} exceeds {traj.n_frames} frames")
    box = traj.box
    state = RolloutState(traj.positions[start:start + history], traj.dt, box)
    out = np.empty((n_steps, traj.n_particles, traj.dim))
    for k in range(n_steps):
        window = HistoryWindow(state.frames, traj.dt, box, traj.external_force, traj.types)
        accel = np.asarray(accel_fn(window), dtype=np.float64)
        x, _ = symplectic_step(state.frames[-1], state.velocity, accel, traj.dt, box)
        state.push(x)
        out[k] = x
    return out


def out_of_domain(positions: np.ndarray, box: Box) -> int:
    """Number of particle-frames outside the box on bounded axes."""
    bounded = ~box.periodic
    if not bounded.any():
        return 0
    p = np.asarray(positions)[..., bounded]
    outside = (p < box.bounds_min[bounded]) | (p > box.bounds_max[bounded])
    return int(np.any(outside, axis=-1).sum())


def rollout_trajectory(traj: Trajectory, start: int, history: int, predicted: np.ndarray) -> Trajectory:
    """History frames followed by predicted frames, as a trajectory."""
    frames = np.concatenate([traj.positions[start:start + history].astype(np.float64), predicted], axis=0)
    return traj.with_positions(wrap_float32(frames, traj.box))


def write_rollout(traj: Trajectory, start: int, history: int, predicted: np.ndarray, path) -> Trajectory:
    out = rollout_trajectory(traj, start, history, predicted)
    write_trajectory(out, path)
    return out
