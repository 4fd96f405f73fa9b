"""Acceptance suite: one test per criterion, summarized as PASS/FAIL lines at the end of the run."""
import math
import time

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from corgi import tensorcore as tc
from corgi.config import ModelConfig, TrainConfig
from corgi.dataio import compute_stats, generate_tgv, read_trajectory, write_trajectory
from corgi.domain import Box
from corgi.encoding import HistoryWindow
from corgi.gridbridge import GridGeometry, gather, scatter, stencil
from corgi.metrics import (
    KERNEL_CONSTANTS,
    divergence_error,
    ekin_mse,
    mse_n,
    sinkhorn,
    sph_divergence,
    sph_vorticity,
    vorticity_error,
)
from corgi.model import CorgiModel, configure
from corgi.neighbors import hop_distances
from corgi.propagation import PRESETS, analyze
from corgi.rollout import zero_acceleration
from corgi.tensorcore.gradcheck import gradient_errors
from corgi.train import load_checkpoint, rollout_mse, save_checkpoint, smoothed, train, validation_windows
from corgi.unet import ConvPlan, UNet

from helpers import primitive_cases, random_window, tiny_config, tiny_model

KINDS = ("ngp", "cic", "tsc")


def acceptance(number, title):
    return pytest.mark.acceptance(number, title)


# ---------------------------------------------------------------- 1

COURANT_TABLE = {
    "DAM-2D": 20.73, "LDC-2D": 5.46, "RPF-2D": 6.21, "TGV-2D": 4.88,
    "LDC-3D": 3.06, "RPF-3D": 3.18, "TGV-3D": 2.37,
}


@acceptance(1, "Courant table reproduction")
def test_courant_table(record_property):
    t0 = time.perf_counter()
    worst = 0.0
    for name, expected in COURANT_TABLE.items():
        p = PRESETS[name]
        rep = analyze(p.lengths, p.radius, 10)
        worst = max(worst, abs(rep.courant - expected))
        assert abs(rep.courant - expected) <= 0.01, name
        assert rep.min_levels == math.ceil(math.log2(rep.courant)), name
    elapsed = time.perf_counter() - t0
    record_property("max_abs_dev", f"{worst:.4f}")
    assert elapsed < 1.0


# ---------------------------------------------------------------- 2

@acceptance(2, "Interpolation suite")
def test_interpolation_suite(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    bounded = GridGeometry((16, 16), (0.0, 0.0), (16.0, 16.0), (False, False))
    interior = rng.uniform(2.0, 14.0, size=(1000, 2))
    worst_pou = 0.0
    for kind in ("cic", "tsc"):
        _, w = stencil(interior, bounded, kind)
        worst_pou = max(worst_pou, float(np.abs(w.sum(axis=1) - 1.0).max()))
        vals = gather(np.full((16, 16, 1), 2.5), interior, bounded, kind).data
        assert np.abs(vals - 2.5).max() <= 1e-6
    assert worst_pou <= 1e-6

    periodic = GridGeometry((8, 4), (0.0, 0.0), (1.0, 1.0), (True, True))
    pts = rng.uniform(0, 1, size=(500, 2))
    for gm, p in ((periodic, pts), (bounded, interior)):
        mass = scatter(np.ones((p.shape[0], 1)), p, gm, "ngp").data.sum()
        assert abs(mass - p.shape[0]) <= 1e-6 * p.shape[0]

    worst_adj = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        for kind in KINDS:
            for d in (1, 2, 3):
                for per in (True, False):
                    res = tuple(int(v) for v in r.integers(2, 7, size=d))
                    gm = GridGeometry(res, (0.0,) * d, (1.0,) * d, (per,) * d)
                    pos = r.uniform(0, 1, size=(30, d))
                    h = r.normal(size=(30, 3)).astype(np.float32)
                    G = r.normal(size=res + (3,)).astype(np.float32)
                    lhs = float(np.sum(scatter(h, pos, gm, kind).data.astype(np.float64) * G))
                    rhs = float(np.sum(h.astype(np.float64) * gather(G, pos, gm, kind).data))
                    worst_adj = max(worst_adj, abs(lhs - rhs) / max(1.0, abs(lhs)))
    assert worst_adj <= 1e-5

    line = GridGeometry((4,), (0.0,), (4.0,), (False,))
    g = scatter(np.array([[2.0]]), np.array([[1.2]]), line, "cic").data[:, 0]
    np.testing.assert_allclose(g, [0.6, 1.4, 0.0, 0.0], atol=1e-6)
    elapsed = time.perf_counter() - t0
    record_property("pou_err", f"{worst_pou:.1e}")
    record_property("adjoint_rel_err", f"{worst_adj:.1e}")
    assert elapsed < 10.0


# ---------------------------------------------------------------- 3

@acceptance(3, "Gradient suite")
def test_gradient_suite(record_property):
    t0 = time.perf_counter()
    worst_prim = worst_full = 0.0
    for seed in range(10):
        for fn, inputs in primitive_cases(seed):
            worst_prim = max(worst_prim, max(gradient_errors(fn, inputs)))
    for seed in range(10):
        m = tiny_model(seed, hidden=4, widths=(2, 4), precision="float64")
        assert m.cfg.resolution == (8, 8) and m.cfg.plan.levels == 2
        prep = m.prepare(random_window(m.cfg, n=6, seed=seed))
        errs = gradient_errors(lambda *_: m(prep), m.parameters(), h=1e-6, order=2)
        worst_full = max(worst_full, max(errs))
    elapsed = time.perf_counter() - t0
    record_property("primitive_max_rel", f"{worst_prim:.1e}")
    record_property("full_forward_max_rel", f"{worst_full:.1e}")
    assert worst_prim < 1e-4 and worst_full < 1e-4
    assert elapsed < 120.0


# ---------------------------------------------------------------- 4

def two_clusters(shift=0.0):
    rng = np.random.default_rng(5)
    a = np.array([0.5, 0.5]) + rng.uniform(-0.1, 0.1, size=(4, 2))
    b = np.array([3.5, 0.5]) + rng.uniform(-0.1, 0.1, size=(4, 2)) + shift
    x = np.concatenate([a, b])
    v = rng.normal(scale=0.01, size=x.shape)
    frames = np.stack([x - 2 * v, x - v, x])
    box = Box(np.zeros(2), np.array([4.0, 1.0]), np.array([False, False]))
    return HistoryWindow(frames, 1.0, box, np.zeros(2), np.ones(8, int))


@acceptance(4, "Locality/globality dichotomy")
def test_locality_globality(record_property):
    t0 = time.perf_counter()
    m = tiny_model(3, radius=0.3, resolution=(16, 4), bounds_max=(4.0, 1.0), periodic=(False, False))
    base, moved = two_clusters(), two_clusters(np.array([0.05, 0.02]))
    gap = np.linalg.norm(base.current[:4, None] - base.current[None, 4:], axis=-1).min()
    assert gap > m.cfg.radius * 2 * m.cfg.layers
    pa, pb = m.prepare(base), m.prepare(moved)
    assert np.all(np.isinf(hop_distances(pa.graph)[:4, 4:]))
    gns_a = m.forward_gns_baseline(pa).data[:4]
    gns_b = m.forward_gns_baseline(pb).data[:4]
    assert gns_a.tobytes() == gns_b.tobytes()
    diff = float(np.abs(m(pa).data[:4] - m(pb).data[:4]).max())
    record_property("corgi_change", f"{diff:.2e}")
    assert diff > 1e-7
    assert time.perf_counter() - t0 < 10.0


# ---------------------------------------------------------------- 5

def _W(r, h):
    q = r / h
    return KERNEL_CONSTANTS[2] / h ** 2 * sum(c * max(0.0, s - q) ** 5 for c, s in ((1, 3), (-6, 2), (15, 1)))


def _dW(r, h):
    q = r / h
    return KERNEL_CONSTANTS[2] / h ** 3 * sum(-5 * c * max(0.0, s - q) ** 4 for c, s in ((1, 3), (-6, 2), (15, 1)))


def _loop_fields(x, v, h):
    n = len(x)
    div, vort = [0.0] * n, [0.0] * n
    for i in range(n):
        nd = nv = 0.0
        den = _W(0.0, h)
        for j in range(n):
            r_vec = x[i] - x[j]
            r = math.hypot(*r_vec)
            if j == i or r > 3 * h:
                continue
            g = r_vec / r * _dW(r, h)
            dv = v[j] - v[i]
            nd += g[0] * dv[0] + g[1] * dv[1]
            nv += g[0] * dv[1] - g[1] * dv[0]
            den += _W(r, h)
        isolated = den == _W(0.0, h)
        div[i] = 0.0 if isolated else nd / den
        vort[i] = 0.0 if isolated else nv / den
    return div, vort


def _lattice(n):
    g = (np.arange(n) + 0.5) / n
    return np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)


@acceptance(5, "Metric oracles")
def test_metric_oracles(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    T, N, dt, h = 4, 5, 0.1, 0.2
    a = rng.uniform(size=(T, N, 2))
    b = a + rng.normal(scale=0.02, size=a.shape)
    # mse_n
    ref = sum((a[k, i, c] - b[k, i, c]) ** 2 for k in range(T) for i in range(N) for c in range(2)) / (N * T)
    assert mse_n(a, b) == pytest.approx(ref, rel=1e-12)
    # kinetic energy
    def energy(p, t):
        return sum(0.5 * ((p[t + 1, i, c] - p[t, i, c]) / dt) ** 2 for i in range(N) for c in range(2))
    ref = sum((energy(a, t) - energy(b, t)) ** 2 for t in range(T - 1)) / (T - 1)
    assert ekin_mse(a, b, dt) == pytest.approx(ref, rel=1e-12)
    # divergence and vorticity
    ref_d = ref_v = 0.0
    for t in range(T - 1):
        da, va = _loop_fields(a[t + 1], (a[t + 1] - a[t]) / dt, h)
        db, vb = _loop_fields(b[t + 1], (b[t + 1] - b[t]) / dt, h)
        ref_d += sum((da[i] - db[i]) ** 2 for i in range(N))
        ref_v += sum((va[i] - vb[i]) ** 2 for i in range(N))
    assert divergence_error(a, b, dt, h) == pytest.approx(ref_d / (N * (T - 1)), rel=1e-10)
    assert vorticity_error(a, b, dt, h) == pytest.approx(ref_v / (N * (T - 1)), rel=1e-10)
    # Sinkhorn against the exact assignment
    worst_ot = 0.0
    for seed in range(10):
        r = np.random.default_rng(seed)
        n = int(r.integers(2, 9))
        x, y = r.uniform(size=(n, 2)), r.uniform(size=(n, 2))
        C = ((x[:, None] - y[None]) ** 2).sum(-1)
        rows, cols = linear_sum_assignment(C)
        exact = C[rows, cols].sum() / n
        res = sinkhorn(x, y, eps=1e-3 * 2.0, max_iter=20000, tol=1e-6)
        worst_ot = max(worst_ot, abs(res.transport - exact) / exact)
    assert worst_ot <= 0.05
    # SPH fields on a 32x32 periodic lattice, scored away from the periodic seam
    box = Box(np.zeros(2), np.ones(2), np.array([True, True]))
    x = _lattice(32)
    hl = 1 / 32
    inner = np.all((x > 3 * hl + 1e-9) & (x < 1 - 3 * hl - 1e-9), axis=1)
    div = sph_divergence(x, x.copy(), hl, box)[inner]
    omega = 0.8
    rot = omega * np.stack([-(x[:, 1] - 0.5), x[:, 0] - 0.5], axis=1)
    vort = sph_vorticity(x, rot, hl, box)[inner, 2]
    div_err = float(np.abs(div - 2.0).max() / 2.0)
    vort_err = float(np.abs(vort - 2 * omega).max() / (2 * omega))
    record_property("sinkhorn_rel_err", f"{worst_ot:.1e}")
    record_property("div_rel_err", f"{div_err:.1e}")
    record_property("vort_rel_err", f"{vort_err:.1e}")
    assert div_err <= 0.1 and vort_err <= 0.1
    assert time.perf_counter() - t0 < 60.0


# ---------------------------------------------------------------- 6

@acceptance(6, "Training smoke (learnability)")
def test_training_smoke(record_property):
    t0 = time.perf_counter()
    make = lambda seed: generate_tgv(20, 0.05, 0.1, 60, seed=seed)  # noqa: E731
    train_traj, val_traj, held_traj = make(0), make(1), make(2)
    cfg = configure(ModelConfig(hidden=32, layers=2, widths=(32, 64), history=6), train_traj)
    model = CorgiModel(cfg, np.random.default_rng(0), compute_stats([train_traj], cfg.history))
    tcfg = TrainConfig(steps=2000, batch_size=2, eval_interval=500, eval_windows=4, rollout_steps=20, seed=0)
    result = train(model, [train_traj], tcfg, [val_traj])
    losses = [loss for _, _, loss in result.losses]
    s = smoothed(losses, 100)
    ratio = float(s[-1] / s[0])
    model.load_state_dict(result.best.params)
    windows = validation_windows([held_traj], cfg.history, 20, 8)
    mse_model = rollout_mse(model, [held_traj], windows, 20)
    mse_zero = rollout_mse(None, [held_traj], windows, 20, accel_fn=zero_acceleration, history=cfg.history)
    elapsed = time.perf_counter() - t0
    record_property("loss_ratio", f"{ratio:.3f}")
    record_property("mse20_model", f"{mse_model:.3e}")
    record_property("mse20_zero_accel", f"{mse_zero:.3e}")
    assert ratio < 0.5
    assert mse_model < mse_zero
    assert elapsed < 900.0


# ---------------------------------------------------------------- 7

@acceptance(7, "Equivariance and determinism")
def test_equivariance_and_determinism(record_property):
    m = tiny_model(1, precision="float64")
    w = random_window(m.cfg, n=20, seed=1)
    perm = np.random.default_rng(1).permutation(20)
    wp = HistoryWindow(w.positions[:, perm], w.dt, w.box, w.external_force, w.types[perm])
    perm_err = float(np.abs(m(w).data[perm] - m(wp).data).max())
    assert perm_err <= 1e-5

    rng = np.random.default_rng(6)
    K = 3
    net = UNet(ConvPlan(widths=(4, 6, 8)), 3, [True, True], rng)
    g = rng.normal(size=(16, 16, 3)).astype(np.float32)
    out = net(g).data
    step = 2 ** (K - 1)
    shift_err = 0.0
    for shift in [(step, 0), (0, step), (2 * step, 3 * step)]:
        shifted = net(np.roll(g, shift, axis=(0, 1))).data
        shift_err = max(shift_err, float(np.abs(shifted - np.roll(out, shift, axis=(0, 1))).max()))
    assert shift_err <= 1e-5

    runs = []
    for _ in range(2):
        traj = generate_tgv(5, 0.05, 0.1, 12, seed=0)
        model = CorgiModel(configure(tiny_config(radius=2.0), traj), np.random.default_rng(4))
        res = train(model, [traj], TrainConfig(steps=5, batch_size=2, eval_interval=100, seed=4))
        with tc.no_grad():
            fwd = model(HistoryWindow.from_trajectory(traj, 6, model.cfg.history)).data
        runs.append(([loss for _, _, loss in res.losses], fwd.tobytes()))
    assert runs[0] == runs[1]
    record_property("perm_err", f"{perm_err:.1e}")
    record_property("shift_err", f"{shift_err:.1e}")


# ---------------------------------------------------------------- 8

@acceptance(8, "Format round trips")
def test_format_round_trips(tmp_path):
    traj = generate_tgv(6, 0.05, 0.1, 10, seed=3)
    write_trajectory(traj, tmp_path / "t.corg")
    back = read_trajectory(tmp_path / "t.corg")
    assert back.positions.tobytes() == traj.positions.tobytes()
    assert back.dt == traj.dt and np.array_equal(back.types, traj.types)
    for precision in ("float32", "float64"):
        cfg = configure(tiny_config(radius=2.0, precision=precision), traj)
        model = CorgiModel(cfg, np.random.default_rng(2), compute_stats([traj], cfg.history))
        result = train(model, [traj], TrainConfig(steps=2, batch_size=1, eval_interval=100))
        save_checkpoint(result.final, tmp_path / precision)
        loaded, _ = load_checkpoint(tmp_path / precision)
        with tc.no_grad():
            a = model(HistoryWindow.from_trajectory(traj, 5, cfg.history)).data
            b = loaded(HistoryWindow.from_trajectory(back, 5, cfg.history)).data
        assert a.dtype == np.dtype(precision)
        assert a.tobytes() == b.tobytes()
