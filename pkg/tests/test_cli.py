import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from corgi.cli import main
from corgi.dataio import read_trajectory

SMALL = ["--steps", "4", "--hidden", "8", "--layers", "1", "--widths", "8,16", "--eval-interval", "2",
         "--rollout-steps", "4", "--eval-windows", "2", "--log-interval", "2", "--batch-size", "2"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert run("gen-tgv", "--out", d / "train.corg", "--n-side", 6, "--frames", 16, "--seed", 0) == 0
    assert run("gen-tgv", "--out", d / "val.corg", "--n-side", 6, "--frames", 16, "--seed", 1) == 0
    return d


def test_courant_worked_example(capsys):
    assert run("courant", "--bounds", "1,1", "--r", 0.029, "--L", 10) == 0
    row = capsys.readouterr().out.splitlines()[-1].split()
    assert row[-2] == "4.88" and row[-1] == "3"


def test_courant_presets(capsys):
    assert run("courant", "--preset", "all") == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 8
    table = {r.split()[0]: r.split()[-2] for r in out[1:]}
    assert table["DAM-2D"] == "20.73" and table["TGV-3D"] == "2.37"
    assert run("courant", "--preset", "XYZ") == 1
    assert run("courant") == 1


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        run("courant", "--bogus")
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run("frobnicate")
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_module_entry_point_exit_codes():
    ok = subprocess.run([sys.executable, "-m", "corgi", "courant", "--preset", "TGV-2D"],
                        capture_output=True, text=True)
    assert ok.returncode == 0 and "4.88" in ok.stdout
    bad = subprocess.run([sys.executable, "-m", "corgi", "courant", "--bogus"], capture_output=True, text=True)
    assert bad.returncode == 1 and "error" in bad.stderr


@pytest.mark.parametrize("cmd", ["gen-tgv", "train", "rollout", "eval", "courant", "inspect"])
def test_help_per_subcommand(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        run(cmd, "--help")
    assert exc.value.code == 0
    assert "usage: corgi " + cmd in capsys.readouterr().out


def test_train_requires_seed(data):
    with pytest.raises(SystemExit) as exc:
        run("train", "--data", data / "train.corg", "--out", data / "x")
    assert exc.value.code == 1


def test_validation_errors_exit_1(data, tmp_path, capsys):
    assert run("train", "--data", tmp_path / "missing.corg", "--out", tmp_path / "o", "--seed", 0) == 1
    assert run("train", "--data", data / "train.corg", "--out", tmp_path / "o", "--seed", 0,
               "--decoder-edges", "sideways") == 1
    (tmp_path / "bad.corg").write_bytes(b"NOTCORG")
    assert run("inspect", tmp_path / "bad.corg") == 1
    assert run("rollout", "--data", data / "val.corg", "--out", tmp_path / "p.corg") == 1
    assert "error" in capsys.readouterr().err


def test_runtime_failure_exit_2(data, tmp_path, capsys):
    code = run("train", "--data", data / "train.corg", "--out", tmp_path / "o", "--seed", 0, *SMALL,
               "--max-loss", 0)
    assert code == 2
    assert "failed" in capsys.readouterr().err


def test_eval_identical_trajectories_gives_zero_rows(data, tmp_path):
    assert run("eval", "--pred", data / "val.corg", "--truth", data / "val.corg", "--start", 0,
               "--out-csv", tmp_path / "m.csv", "--out-json", tmp_path / "m.json") == 0
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert {r["metric"] for r in rows} == {"mse", "sinkhorn", "ekin_mse", "divergence_mse", "vorticity_mse"}
    assert all(float(r["value"]) == 0.0 for r in rows)


def test_pipeline_end_to_end(data, tmp_path, capsys):
    out = tmp_path / "run"
    assert run("train", "--data", data / "train.corg", "--val", data / "val.corg", "--out", out,
               "--seed", 0, *SMALL) == 0
    for name in ("loss.csv", "best/params.npz", "best/optimizer.npz", "best/manifest.json", "final/params.npz"):
        assert (out / name).exists(), name
    assert run("rollout", "--checkpoint", out / "best", "--data", data / "val.corg", "--steps", 5,
               "--out", tmp_path / "pred.corg") == 0
    pred = read_trajectory(tmp_path / "pred.corg")
    assert pred.n_frames == 6 + 5
    assert run("rollout", "--checkpoint", out / "best", "--data", data / "val.corg", "--steps", 5,
               "--baseline", "gns", "--out", tmp_path / "gns.corg") == 0
    assert run("rollout", "--data", data / "val.corg", "--steps", 5, "--baseline", "zero", "--history", 6,
               "--out", tmp_path / "zero.corg") == 0
    assert run("eval", "--pred", tmp_path / "pred.corg", "--truth", data / "val.corg", "--history", 6,
               "--pred", tmp_path / "zero.corg", "--truth", data / "val.corg",
               "--out-csv", tmp_path / "m.csv", "--out-json", tmp_path / "m.json") == 0
    summary = json.loads((tmp_path / "m.json").read_text())
    assert summary["mse"]["n"] == 2 and summary["mse"]["mean"] > 0
    assert run("inspect", out / "best") == 0
    assert run("inspect", tmp_path / "pred.corg") == 0
    text = capsys.readouterr().out
    assert "checkpoint" in text and "frames 11" in text


def test_eval_mismatched_lengths(data, tmp_path):
    assert run("rollout", "--data", data / "val.corg", "--steps", 5, "--baseline", "zero", "--history", 6,
               "--out", tmp_path / "zero.corg") == 0
    assert run("eval", "--pred", tmp_path / "zero.corg", "--truth", data / "val.corg", "--history", 6,
               "--start", 10) == 1
    assert run("eval", "--pred", tmp_path / "zero.corg", "--truth", data / "val.corg",
               "--truth", data / "val.corg") == 1


def test_commands_are_byte_reproducible(data, tmp_path):
    for k in range(2):
        assert run("gen-tgv", "--out", tmp_path / f"g{k}.corg", "--n-side", 5, "--frames", 8, "--seed", 4) == 0
        assert run("train", "--data", data / "train.corg", "--val", data / "val.corg", "--out",
                   tmp_path / f"r{k}", "--seed", 3, *SMALL) == 0
    assert (tmp_path / "g0.corg").read_bytes() == (tmp_path / "g1.corg").read_bytes()
    for name in ("loss.csv", "best/params.npz", "best/optimizer.npz", "best/manifest.json"):
        assert (tmp_path / "r0" / name).read_bytes() == (tmp_path / "r1" / name).read_bytes(), name


def test_config_file_and_flag_override(data, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('hidden = 6\nlayers = 1\nwidths = [8, 16]\n\n[train]\nsteps = 2\nbatch_size = 1\n'
                   'eval_interval = 100\n')
    assert run("train", "--data", data / "train.corg", "--out", tmp_path / "o", "--seed", 1,
               "--config", cfg, "--hidden", 10) == 0
    manifest = json.loads((tmp_path / "o" / "best" / "manifest.json").read_text())
    assert manifest["model"]["hidden"] == 10 and manifest["model"]["widths"] == [8, 16]
    assert manifest["train"]["steps"] == 2 and manifest["train"]["seed"] == 1
    with np.load(tmp_path / "o" / "best" / "params.npz") as z:
        assert len(z.files) > 0
    cfg.write_text("nonsense_key = 3\n")
    assert run("train", "--data", data / "train.corg", "--out", tmp_path / "o2", "--seed", 1,
               "--config", cfg) == 1
