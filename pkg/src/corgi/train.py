"""One-step training loop, learning-rate schedule, Adam and checkpoints."""
from __future__ import annotations

import csv
import json
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensorcore as tc
from .config import ModelConfig, TrainConfig, to_dict
from .dataio import DatasetStats, Trajectory
from .encoding import HistoryWindow
from .metrics import mse_n
from .model import CorgiModel, PreparedInput
from .rollout import rollout

PARAMS_FILE = "params.npz"
OPTIMIZER_FILE = "optimizer.npz"
MANIFEST_FILE = "manifest.json"


class TrainingDiverged(RuntimeError):
    pass


def lr_at(step: float, cfg: TrainConfig) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    return max(cfg.lr_final, cfg.lr_init * cfg.decay_rate ** (step / cfg.decay_steps))


class Adam:
    def __init__(self, params: Sequence[tc.DiffTensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype, copy=False)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {"t": np.array(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            state[f"m.{i}"], state[f"v.{i}"] = m.copy(), v.copy()
        return state

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for i, p in enumerate(self.params):
            m, v = np.asarray(state[f"m.{i}"]), np.asarray(state[f"v.{i}"])
            if m.shape != p.shape or v.shape != p.shape:
                raise ValueError(f"optimizer state {i} does not match parameter shape {p.shape}")
            self.m[i], self.v[i] = m.astype(p.dtype), v.astype(p.dtype)


# ---------------------------------------------------------------- samples and loss

@dataclass(frozen=True)
class Sample:
    traj: int
    end: int  # index of the current frame; the target is frame end + 1


def enumerate_samples(trajs: Sequence[Trajectory], history: int) -> list[Sample]:
    return [Sample(k, t) for k, traj in enumerate(trajs) for t in range(history - 1, traj.n_frames - 1)]


def position_error(pred_next, true_next, box=None) -> float:
    """Mean over particles of the squared (minimum-image) position error."""
    d = np.asarray(pred_next, dtype=np.float64) - np.asarray(true_next, dtype=np.float64)
    if box is not None:
        d = box.minimum_image(d)
    return float(np.mean(np.sum(d * d, axis=-1)))


def random_walk_noise(history: int, shape, std: float, rng: np.random.Generator) -> np.ndarray:
    """Position noise whose frame-to-frame increments have total std ``std`` over the window."""
    steps = rng.normal(scale=std / math.sqrt(max(history - 1, 1)), size=(history - 1,) + tuple(shape))
    return np.concatenate([np.zeros((1,) + tuple(shape)), np.cumsum(steps, axis=0)])


@dataclass
class LossTarget:
    mode: str
    value: np.ndarray  # position mode: x_t + dt v_t - x_{t+1}; acceleration mode: normalized target
    dt: float


def make_target(model: CorgiModel, window: HistoryWindow, next_frame: np.ndarray, mode: str) -> LossTarget:
    box = window.box
    x_t, x_prev = window.positions[-1], window.positions[-2]
    v_t = box.minimum_image(x_t - x_prev) / window.dt
    if mode == "position":
        residual = box.minimum_image(x_t + window.dt * v_t - np.asarray(next_frame, dtype=np.float64))
        return LossTarget(mode, residual, window.dt)
    accel = box.minimum_image(np.asarray(next_frame, dtype=np.float64) - x_t) / window.dt ** 2 - v_t / window.dt
    return LossTarget(mode, model.normalize(accel), window.dt)


def sample_loss(model: CorgiModel, prep: PreparedInput, target: LossTarget) -> tc.DiffTensor:
    """Scalar loss for one sample, differentiable in the model parameters."""
    out = model.forward(prep)
    dtype = out.dtype
    if target.mode == "position":
        scale = (target.dt ** 2 * model.stats.acc_std).astype(dtype)
        offset = (target.value + target.dt ** 2 * model.stats.acc_mean).astype(dtype)
        err = tc.add(tc.mul(out, scale), offset)
        return tc.mul(tc.reduce_sum(tc.mul(err, err)), 1.0 / prep.n_particles)
    err = tc.sub(out, target.value.astype(dtype))
    return tc.mean(tc.mul(err, err))


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    params: dict
    optimizer: dict
    manifest: dict
    step: int = 0
    val_mse: float = float("nan")


def snapshot(model: CorgiModel, opt: Adam | None, step: int, val_mse: float,
             train_cfg: TrainConfig | None = None) -> Checkpoint:
    manifest = model.manifest()
    manifest["step"], manifest["val_mse"] = int(step), float(val_mse)
    if train_cfg is not None:
        manifest["train"] = to_dict(train_cfg)
    return Checkpoint(model.state_dict(), opt.state_dict() if opt is not None else {}, manifest, step, val_mse)


def save_npz(path, arrays: dict) -> None:
    """Like np.savez, but with fixed zip timestamps so equal arrays give equal bytes."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asarray(arrays[name]), allow_pickle=False)


def save_checkpoint(ckpt: Checkpoint, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_npz(directory / PARAMS_FILE, ckpt.params)
    save_npz(directory / OPTIMIZER_FILE, ckpt.optimizer)
    (directory / MANIFEST_FILE).write_text(json.dumps(ckpt.manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory) -> tuple[CorgiModel, Checkpoint]:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if not manifest_path.exists():
        raise FileNotFoundError(f"no {MANIFEST_FILE} in {directory}")
    manifest = json.loads(manifest_path.read_text())
    cfg = ModelConfig(**manifest["model"])
    model = CorgiModel(cfg, np.random.default_rng(0), DatasetStats.from_dict(manifest["stats"]))
    with np.load(directory / PARAMS_FILE) as data:
        params = {k: data[k] for k in data.files}
    model.load_state_dict(params)
    optimizer = {}
    if (directory / OPTIMIZER_FILE).exists():
        with np.load(directory / OPTIMIZER_FILE) as data:
            optimizer = {k: data[k] for k in data.files}
    ckpt = Checkpoint(params, optimizer, manifest, int(manifest.get("step", 0)),
                      float(manifest.get("val_mse", float("nan"))))
    return model, ckpt


# ---------------------------------------------------------------- validation

def validation_windows(trajs: Sequence[Trajectory], history: int, steps: int, count: int) -> list[tuple[int, int]]:
    """``count`` evenly spaced (trajectory, start) pairs with room for ``steps`` rollout frames."""
    pool = [(k, s) for k, traj in enumerate(trajs) for s in range(traj.n_frames - history - steps + 1)]
    if not pool:
        raise ValueError(f"no validation window fits history {history} + {steps} rollout steps")
    picks = np.unique(np.linspace(0, len(pool) - 1, min(count, len(pool))).round().astype(int))
    return [pool[i] for i in picks]


def rollout_mse(model, trajs: Sequence[Trajectory], windows, steps: int, accel_fn=None, history=None) -> float:
    """Mean MSE_n over the given rollout windows."""
    values = []
    for k, start in windows:
        traj = trajs[k]
        h = model.cfg.history if model is not None else history
        pred = rollout(model, traj, start, steps, accel_fn=accel_fn, history=history)
        truth = traj.positions[start + h:start + h + steps]
        values.append(mse_n(pred, truth, box=traj.box))
    return float(np.mean(values))


# ---------------------------------------------------------------- loop

@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    losses: list = field(default_factory=list)  # (step, lr, loss)
    validation: list = field(default_factory=list)  # (step, val_mse)


def train(model: CorgiModel, trajs: Sequence[Trajectory], cfg: TrainConfig,
          val_trajs: Sequence[Trajectory] | None = None, log: Callable[[str], None] | None = None,
          loss_csv=None) -> TrainResult:
    """Adam on the one-step loss, keeping the parameters with the lowest validation MSE."""
    history = model.cfg.history
    samples = enumerate_samples(trajs, history)
    if not samples:
        raise ValueError(f"trajectories are too short for history {history}")
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam(model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    cache: dict[Sample, tuple[PreparedInput, LossTarget]] = {}
    windows = (validation_windows(val_trajs, history, cfg.rollout_steps, cfg.eval_windows)
               if val_trajs else [])

    def prepared(sample: Sample):
        if sample in cache:
            return cache[sample]
        traj = trajs[sample.traj]
        window = HistoryWindow.from_trajectory(traj, sample.end, history)
        if cfg.noise_std > 0:
            noise = random_walk_noise(history, window.current.shape, cfg.noise_std, rng)
            window = HistoryWindow(window.box.wrap(window.positions + noise), window.dt, window.box,
                                   window.external_force, window.types)
        item = (model.prepare(window),
                make_target(model, window, traj.positions[sample.end + 1], cfg.loss_mode))
        if cfg.noise_std == 0:
            cache[sample] = item
        return item

    result = TrainResult(best=None, final=None)

    def evaluate(step: int) -> None:
        if not windows:
            return
        val = rollout_mse(model, val_trajs, windows, cfg.rollout_steps)
        result.validation.append((step, val))
        if log:
            log(f"step {step} val_mse{cfg.rollout_steps} {val:.6g}")
        if result.best is None or val < result.best.val_mse:
            result.best = snapshot(model, opt, step, val, cfg)

    evaluate(0)
    for step in range(1, cfg.steps + 1):
        lr = lr_at(step - 1, cfg)
        batch = rng.integers(0, len(samples), size=cfg.batch_size)
        model.zero_grad()
        total = None
        for idx in batch:
            prep, target = prepared(samples[idx])
            loss = sample_loss(model, prep, target)
            total = loss if total is None else tc.add(total, loss)
        total = tc.mul(total, 1.0 / cfg.batch_size)
        value = float(total.item())
        if not math.isfinite(value) or value > cfg.max_loss:
            raise TrainingDiverged(f"loss {value} at step {step} (lr {lr:.3g}, batch {batch.tolist()})")
        total.backward()
        opt.step(lr)
        result.losses.append((step, lr, value))
        if log and (step % cfg.log_interval == 0 or step == cfg.steps):
            log(f"step {step} lr {lr:.3g} loss {value:.6g}")
        if step % cfg.eval_interval == 0 and step != cfg.steps:
            evaluate(step)
    if cfg.steps > 0:
        evaluate(cfg.steps)
    result.final = snapshot(model, opt, cfg.steps, result.validation[-1][1] if result.validation else float("nan"),
                            cfg)
    if result.best is None:
        result.best = result.final
    if loss_csv is not None:
        write_loss_csv(result, loss_csv)
    return result


def write_loss_csv(result: TrainResult, path) -> None:
    val = dict(result.validation)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "lr", "loss", "val_mse"])
        for step, lr, loss in result.losses:
            w.writerow([step, repr(lr), repr(loss), repr(val[step]) if step in val else ""])


def smoothed(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < window:
        raise ValueError(f"need at least {window} values")
    c = np.concatenate([[0.0], np.cumsum(v)])
    return (c[window:] - c[:-window]) / window
