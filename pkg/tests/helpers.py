"""Small fixtures shared by the model-level tests."""
import numpy as np

from corgi import tensorcore as tc
from corgi.config import ModelConfig
from corgi.dataio import Trajectory
from corgi.domain import Box
from corgi.encoding import HistoryWindow
from corgi.model import CorgiModel


def tiny_config(**overrides):
    base = dict(dim=2, hidden=4, layers=1, mlp_layers=1, radius=0.3, history=3, widths=(4, 8),
                resolution=(8, 8), bounds_min=(0.0, 0.0), bounds_max=(1.0, 1.0), periodic=(True, True))
    base.update(overrides)
    return ModelConfig(**base)


def tiny_model(seed=0, **overrides):
    return CorgiModel(tiny_config(**overrides), np.random.default_rng(seed))


def random_window(cfg, n=6, seed=0, speed=0.02):
    rng = np.random.default_rng(seed)
    lo, hi = np.array(cfg.bounds_min), np.array(cfg.bounds_max)
    x = lo + rng.uniform(size=(n, cfg.dim)) * (hi - lo)
    v = rng.normal(scale=speed, size=(n, cfg.dim))
    frames = np.stack([x + (k - cfg.history + 1) * v for k in range(cfg.history)])
    box = Box(lo, hi, np.array(cfg.periodic))
    return HistoryWindow(box.wrap(frames), 1.0, box, np.zeros(cfg.dim), np.ones(n, int))


def window_trajectory(window: HistoryWindow) -> Trajectory:
    b = window.box
    return Trajectory(window.positions, window.types, window.dt, b.bounds_min, b.bounds_max, b.periodic,
                      window.external_force)


def t64(a, grad=True):
    return tc.DiffTensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def primitive_cases(seed):
    """(fn, inputs) pairs covering every differentiable primitive, in float64."""
    rng = np.random.default_rng(seed)
    cases = []
    x = t64(rng.normal(size=(4, 5)))
    cases.append((lambda x: tc.relu(x), [x]))
    a, b = t64(rng.normal(size=(3, 4))), t64(rng.normal(size=(3, 4)))
    cases.append((lambda a, b: tc.add(tc.mul(a, b), tc.sub(a, b)), [a, b]))
    cases.append((lambda a, b: tc.concat([a, b], axis=1), [a, b]))
    cases.append((lambda a: tc.reduce_sum(a, axis=0), [a]))
    g, bt = t64(rng.normal(size=5)), t64(rng.normal(size=5))
    cases.append((lambda x, g, bt: tc.layer_norm(x, g, bt), [x, g, bt]))
    grid = t64(rng.normal(size=(4, 6, 3)))
    gi, bi = t64(rng.normal(size=3)), t64(rng.normal(size=3))
    cases.append((lambda x, g, b: tc.instance_norm(x, g, b), [grid, gi, bi]))
    cases.append((lambda x: tc.avg_pool_nd(x), [grid]))
    for mode in ("zero", "circular"):
        w, bc = t64(rng.normal(size=(3, 3, 3, 2))), t64(rng.normal(size=2))
        cases.append((lambda x, w, b, m=mode: tc.conv_nd(x, w, b, padding=m), [grid, w, bc]))
    wt, bt2 = t64(rng.normal(size=(2, 2, 3, 2))), t64(rng.normal(size=2))
    cases.append((lambda x, w, b: tc.conv_transpose_nd(x, w, b, stride=2), [grid, wt, bt2]))
    vol = t64(rng.normal(size=(4, 4, 2, 2)))
    w3 = t64(rng.normal(size=(3, 3, 3, 2, 2)))
    cases.append((lambda x, w: tc.conv_nd(x, w, padding="circular"), [vol, w3]))
    idx = rng.integers(0, 6, size=(4, 3))
    wts = rng.uniform(size=(4, 3))
    cases.append((lambda x: tc.scatter_add(x, idx, wts, 6), [x]))
    field = t64(rng.normal(size=(6, 5)))
    cases.append((lambda G: tc.gather_weighted(G, idx, wts), [field]))
    cases.append((lambda x: tc.take_rows(x, np.array([3, 0, 0, 2])), [x]))
    return cases
