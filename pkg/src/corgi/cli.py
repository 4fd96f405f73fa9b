"""Command-line entry point: gen-tgv, train, rollout, eval, courant, inspect."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import ModelConfig, TrainConfig, build, load_config
from .dataio import compute_stats, generate_tgv, read_trajectory, write_trajectory
from .metrics import MetricReport, evaluate_rollout
from .model import CorgiModel, configure
from .propagation import PRESETS, analyze
from .rollout import out_of_domain, rollout, write_rollout, zero_acceleration
from .train import TrainingDiverged, load_checkpoint, save_checkpoint, train

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class ArgParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _say(text: str) -> None:
    print(text, flush=True)


# ---------------------------------------------------------------- gen-tgv

def cmd_gen_tgv(args) -> int:
    traj = generate_tgv(args.n_side, args.nu, args.dt, args.frames, args.seed, args.substeps)
    write_trajectory(traj, args.out)
    _say(f"wrote {args.out}: {traj.n_frames} frames, {traj.n_particles} particles")
    return 0


# ---------------------------------------------------------------- train

CONFIG_FIELDS = [(ModelConfig, f.name) for f in fields(ModelConfig)] + \
                [(TrainConfig, f.name) for f in fields(TrainConfig) if f.name != "seed"]


def _collect_config(args):
    model_vals, train_vals = load_config(args.config) if args.config else ({}, {})
    for cls, name in CONFIG_FIELDS:
        value = getattr(args, name)
        if value is not None:
            (model_vals if cls is ModelConfig else train_vals)[name] = value
    train_vals["seed"] = args.seed
    return build(ModelConfig, model_vals), build(TrainConfig, train_vals)


def cmd_train(args) -> int:
    model_cfg, train_cfg = _collect_config(args)
    trajs = [read_trajectory(p) for p in args.data]
    val = [read_trajectory(p) for p in args.val] if args.val else []
    if args.dataset and args.dataset not in PRESETS:
        raise UsageError(f"unknown dataset preset {args.dataset!r}; choose from {sorted(PRESETS)}")
    model_cfg = configure(model_cfg, trajs[0], args.dataset)
    for t in trajs[1:] + val:
        if t.dim != trajs[0].dim or not np.allclose(t.bounds_max, trajs[0].bounds_max):
            raise UsageError("all trajectories must share one domain")
    stats = compute_stats(trajs, model_cfg.history)
    model = CorgiModel(model_cfg, np.random.default_rng(args.seed), stats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _say(f"model parameters: {model.num_parameters()}, grid {model_cfg.resolution}")
    result = train(model, trajs, train_cfg, val or None, log=_say, loss_csv=out / "loss.csv")
    save_checkpoint(result.best, out / "best")
    save_checkpoint(result.final, out / "final")
    _say(f"best checkpoint at step {result.best.step} (val_mse {result.best.val_mse:.6g}) -> {out / 'best'}")
    return 0


# ---------------------------------------------------------------- rollout

def cmd_rollout(args) -> int:
    traj = read_trajectory(args.data)
    if args.baseline == "zero":
        if args.history is None:
            raise UsageError("--baseline zero needs --history")
        pred = rollout(None, traj, args.start, args.steps, accel_fn=zero_acceleration, history=args.history)
        history = args.history
    else:
        if args.checkpoint is None:
            raise UsageError("--checkpoint is required unless --baseline zero")
        model, _ = load_checkpoint(args.checkpoint)
        history = model.cfg.history
        fn = (lambda w: model.predict_acceleration(w, baseline=True)) if args.baseline == "gns" else None
        pred = rollout(model, traj, args.start, args.steps, accel_fn=fn)
    write_rollout(traj, args.start, history, pred, args.out)
    _say(f"wrote {args.out}: {history} history + {args.steps} predicted frames; "
         f"out-of-domain particle-frames {out_of_domain(pred, traj.box)}")
    return 0


# ---------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    if len(args.pred) != len(args.truth):
        raise UsageError("--pred and --truth must be given the same number of times")
    report = MetricReport()
    for k, (p, t) in enumerate(zip(args.pred, args.truth)):
        pred_traj, truth_traj = read_trajectory(p), read_trajectory(t)
        if pred_traj.n_particles != truth_traj.n_particles or pred_traj.dim != truth_traj.dim:
            raise UsageError(f"{p} and {t} hold different particle sets")
        h = args.history
        pred = pred_traj.positions[h:]
        first = args.start + h
        truth = truth_traj.positions[first:first + pred.shape[0]]
        if truth.shape != pred.shape:
            raise UsageError(f"{t} has too few frames after {first} to match {pred.shape[0]} predicted frames")
        metrics = evaluate_rollout(pred, truth, truth_traj.dt, truth_traj.box, n=args.n, eps=args.eps,
                                   sph=not args.no_sph, sinkhorn_stride=args.sinkhorn_stride,
                                   sinkhorn_mode=args.sinkhorn)
        report.add(f"{k}:{Path(p).name}", metrics)
    if args.out_csv:
        report.write_csv(args.out_csv)
    if args.out_json:
        report.write_json(args.out_json)
    for name, s in report.summary().items():
        _say(f"{name:16s} {s['mean']:.6g} +- {s['std']:.3g} (n={s['n']})")
    return 0


# ---------------------------------------------------------------- courant

def cmd_courant(args) -> int:
    rows = []
    if args.preset:
        names = sorted(PRESETS) if args.preset == "all" else [args.preset]
        for name in names:
            if name not in PRESETS:
                raise UsageError(f"unknown preset {name!r}; choose from {sorted(PRESETS)} or 'all'")
            p = PRESETS[name]
            rows.append((name, p.lengths, p.radius))
    else:
        if args.bounds is None or args.r is None:
            raise UsageError("give --bounds and --r, or --preset")
        rows.append(("custom", args.bounds, args.r))
    _say(f"{'dataset':8s} {'bounds':>24s} {'r':>7s} {'L':>3s} {'courant':>8s} {'min_levels':>10s}")
    for name, lengths, r in rows:
        rep = analyze(lengths, r, args.L)
        bounds = "x".join(f"{v:g}" for v in lengths)
        _say(f"{name:8s} {bounds:>24s} {r:7.3f} {args.L:3d} {rep.courant:8.2f} {rep.min_levels:10d}")
    return 0


# ---------------------------------------------------------------- inspect

def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        manifest = json.loads((path / "manifest.json").read_text())
        m = manifest["model"]
        _say(f"checkpoint {path}")
        _say(f"  step {manifest.get('step')}  val_mse {manifest.get('val_mse')}  "
             f"parameters {manifest.get('parameters')}")
        _say(f"  dim {m['dim']} hidden {m['hidden']} layers {m['layers']}x2 radius {m['radius']} "
             f"history {m['history']}")
        _say(f"  widths {m['widths']} resolution {m['resolution']} periodic {m['periodic']}")
        _say(f"  scatter {m['scatter_kind']} gather {m['gather_kind']} precision {m['precision']}")
        _say(f"  acc_std {manifest['stats']['acc_std']}")
    else:
        traj = read_trajectory(path)
        _say(f"trajectory {path}")
        _say(f"  frames {traj.n_frames} particles {traj.n_particles} dim {traj.dim} dt {traj.dt:g}")
        _say(f"  bounds {traj.bounds_min.tolist()} .. {traj.bounds_max.tolist()} "
             f"periodic {traj.periodic.astype(bool).tolist()}")
        _say(f"  types {traj.n_types} external_force {traj.external_force.tolist()}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> ArgParser:
    parser = ArgParser(prog="corgi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgParser)

    p = sub.add_parser("gen-tgv", help="generate a synthetic 2-D Taylor-Green trajectory")
    p.add_argument("--out", required=True, help="output CORG1 file")
    p.add_argument("--n-side", type=int, default=20, help="particles per side (default 20)")
    p.add_argument("--frames", type=int, default=60, help="stored frames (default 60)")
    p.add_argument("--dt", type=float, default=0.1, help="time between frames (default 0.1)")
    p.add_argument("--nu", type=float, default=0.05, help="viscosity of the decay factor (default 0.05)")
    p.add_argument("--substeps", type=int, default=8, help="RK4 substeps per frame (default 8)")
    p.add_argument("--seed", type=int, default=0, help="lattice jitter seed (default 0)")
    p.set_defaults(func=cmd_gen_tgv)

    p = sub.add_parser("train", help="train a model on CORG1 trajectories")
    p.add_argument("--data", nargs="+", required=True, help="training trajectories")
    p.add_argument("--val", nargs="*", default=[], help="validation trajectories for MSE-based selection")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True, help="seed for initialization and sampling")
    p.add_argument("--config", help="TOML file with [model] and [train] tables")
    p.add_argument("--dataset", help="preset name supplying the grid resolution")
    group = p.add_argument_group("config overrides")
    for cls, name in CONFIG_FIELDS:
        default = getattr(cls(), name)
        shown = ",".join(str(v) for v in default) if isinstance(default, tuple) else default
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, metavar="V",
                           help=f"{cls.__name__}.{name} (default {shown!s})")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout", help="autoregressive rollout from a trajectory's initial frames")
    p.add_argument("--data", required=True, help="ground-truth trajectory supplying the history window")
    p.add_argument("--out", required=True, help="output CORG1 file (history + predicted frames)")
    p.add_argument("--checkpoint", help="checkpoint directory")
    p.add_argument("--start", type=int, default=0, help="first history frame (default 0)")
    p.add_argument("--steps", type=int, default=20, help="predicted frames (default 20)")
    p.add_argument("--baseline", choices=["model", "gns", "zero"], default="model",
                   help="model (default), the checkpoint's grid-free path, or zero acceleration")
    p.add_argument("--history", type=int, help="history length for --baseline zero")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("eval", help="score predicted trajectories against ground truth")
    p.add_argument("--pred", action="append", required=True, help="predicted CORG1 file (repeatable)")
    p.add_argument("--truth", action="append", required=True, help="ground-truth CORG1 file (repeatable)")
    p.add_argument("--start", type=int, default=0, help="rollout start frame in the ground truth (default 0)")
    p.add_argument("--history", type=int, default=0,
                   help="leading history frames in each prediction to skip (default 0)")
    p.add_argument("--n", type=int, help="frames entering MSE_n (default all)")
    p.add_argument("--eps", type=float, help="Sinkhorn eps (default 0.05 * diagonal^2)")
    p.add_argument("--sinkhorn", choices=["debiased", "raw"], default="debiased",
                   help="debiased divergence (default) or the raw regularized objective")
    p.add_argument("--sinkhorn-stride", type=int, default=1, help="score every k-th frame with Sinkhorn")
    p.add_argument("--no-sph", action="store_true", help="skip divergence and vorticity errors")
    p.add_argument("--out-csv", help="per-rollout metric rows")
    p.add_argument("--out-json", help="mean and std summary")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("courant", help="Courant numbers and minimum grid levels")
    p.add_argument("--bounds", type=_floats, help="domain side lengths, e.g. 1,1")
    p.add_argument("--r", type=float, help="connectivity radius")
    p.add_argument("--L", type=int, default=10, help="message-passing layers (default 10)")
    p.add_argument("--preset", help="preset name, or 'all'")
    p.set_defaults(func=cmd_courant)

    p = sub.add_parser("inspect", help="summarize a checkpoint directory or CORG1 file")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"corgi {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError, RuntimeError, OSError) as exc:
        print(f"corgi {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
