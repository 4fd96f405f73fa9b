"""Rollout evaluation: position MSE, Sinkhorn, kinetic energy and SPH kernel diagnostics."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import Box
from .neighbors import build_graph

KERNEL_CONSTANTS = {1: 1.0 / 120.0, 2: 7.0 / (478.0 * np.pi), 3: 1.0 / (120.0 * np.pi)}
KERNEL_FORMS = ("standard", "printed")


def _diff(a, b, box: Box | None):
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return box.minimum_image(d) if box is not None else d


def _check_shapes(a, b) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


# ---------------------------------------------------------------- positions

def mse_n(pred, truth, n: int | None = None, box: Box | None = None) -> float:
    """Mean over the first n frames and all particles of the squared position error."""
    _check_shapes(pred, truth)
    T = np.shape(pred)[0]
    n = T if n is None else n
    if not 0 < n <= T:
        raise ValueError(f"n must lie in 1..{T}, got {n}")
    d = _diff(np.asarray(pred)[:n], np.asarray(truth)[:n], box)
    return float(np.mean(np.sum(d * d, axis=-1)))


@dataclass
class SinkhornResult:
    value: float  # <G, C> + eps * KL(G || a b^T)
    transport: float  # <G, C>
    kl: float
    converged: bool
    iterations: int
    dual_history: list = field(default_factory=list)
    marginal_error: float = 0.0


def _lse(z, axis):
    m = z.max(axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.exp(z - m).sum(axis=axis))


def pairwise_sq_dist(x, y, box: Box | None = None) -> np.ndarray:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    d = _diff(x[:, None, :], y[None, :, :], box)
    return np.sum(d * d, axis=-1)


def default_epsilon(x, y, box: Box | None = None, scale: float = 0.05) -> float:
    if box is not None:
        diag = box.diagonal
    else:
        both = np.concatenate([np.asarray(x), np.asarray(y)], axis=0)
        diag = float(np.linalg.norm(both.max(axis=0) - both.min(axis=0))) or 1.0
    return scale * diag ** 2


def sinkhorn(x, y, eps: float | None = None, max_iter: int = 500, tol: float = 1e-9,
             box: Box | None = None, eps_scaling: float = 0.5) -> SinkhornResult:
    """Entropic OT between equal-size uniform clouds, log-domain Sinkhorn-Knopp.

    Potentials are warm-started by solving at geometrically shrinking eps
    (factor ``eps_scaling``; 0 disables); ``max_iter`` bounds iterations at the
    target eps, where ``dual_history`` is recorded.
    """
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"point clouds must have equal shape, got {x.shape} and {y.shape}")
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty point clouds")
    eps = default_epsilon(x, y, box) if eps is None else float(eps)
    if not eps > 0:
        raise ValueError("eps must be positive")
    C = pairwise_sq_dist(x, y, box)
    log_a = np.full(n, -np.log(n))
    f, g = np.zeros(n), np.zeros(n)

    def f_update(g, e):
        return -e * _lse((g[None, :] - C) / e + log_a[None, :], axis=1)

    def g_update(f, e):
        return -e * _lse((f[:, None] - C) / e + log_a[:, None], axis=0)

    def log_plan(f, g, e):
        return (f[:, None] + g[None, :] - C) / e + 2 * log_a[0]

    def row_error(f, f_next, e):
        # row sums of the current plan are a_i exp((f_i - f_next_i) / e)
        return float(np.abs(np.expm1((f - f_next) / e)).sum() / n)

    if 0 < eps_scaling < 1:
        stages = []
        e = max(float(C.max()), eps)
        while e > eps:
            stages.append(e)
            e *= eps_scaling
        for e in stages:
            f = f_update(g, e)
            for _ in range(min(max_iter, 100)):
                g = g_update(f, e)
                f_next = f_update(g, e)
                done = row_error(f, f_next, e) < max(tol, 1e-6)
                f = f_next
                if done:
                    break

    history, converged, err, it = [], False, np.inf, 0
    f = f_update(g, eps)
    for it in range(1, max_iter + 1):
        g = g_update(f, eps)
        history.append(float(f.mean() + g.mean() - eps * (np.exp(log_plan(f, g, eps)).sum() - 1.0)))
        f_next = f_update(g, eps)
        err = row_error(f, f_next, eps)
        if err < tol:
            converged = True
            break
        if it < max_iter:
            f = f_next
    log_p = log_plan(f, g, eps)
    P = np.exp(log_p)
    transport = float((P * C).sum())
    # KL(P || a b^T) with a_i b_j = 1/n^2, including the mass terms
    kl = float((P * (log_p - 2 * log_a[0])).sum() - P.sum() + 1.0)
    return SinkhornResult(transport + eps * kl, transport, kl, converged, it, history, err)


def sinkhorn_divergence(x, y, eps: float | None = None, max_iter: int = 500, tol: float = 1e-9,
                        box: Box | None = None) -> float:
    """Debiased S(x, y) - (S(x, x) + S(y, y)) / 2; exactly 0 when x and y coincide."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if np.array_equal(x, y):
        return 0.0
    eps = default_epsilon(x, y, box) if eps is None else eps
    sxy = sinkhorn(x, y, eps, max_iter, tol, box).value
    sxx = sinkhorn(x, x, eps, max_iter, tol, box).value
    syy = sinkhorn(y, y, eps, max_iter, tol, box).value
    return sxy - 0.5 * (sxx + syy)


# ---------------------------------------------------------------- kinetic energy

def kinetic_energy(velocities, masses=None) -> np.ndarray:
    """T(t) = 1/2 sum_i m_i |v_i|^2 for velocities (T, N, d)."""
    v = np.asarray(velocities, dtype=np.float64)
    m = np.ones(v.shape[1]) if masses is None else np.asarray(masses, dtype=np.float64)
    return 0.5 * np.einsum("n,tn->t", m, np.sum(v * v, axis=-1))


def frame_velocities(positions, dt: float, box: Box | None = None) -> np.ndarray:
    """Backward finite differences, (T-1, N, d)."""
    p = np.asarray(positions, dtype=np.float64)
    return _diff(p[1:], p[:-1], box) / dt


def ekin_mse(pred, truth, dt: float, masses=None, box: Box | None = None) -> float:
    _check_shapes(pred, truth)
    if np.shape(pred)[0] < 2:
        raise ValueError("kinetic energy needs at least two frames")
    e_p = kinetic_energy(frame_velocities(pred, dt, box), masses)
    e_t = kinetic_energy(frame_velocities(truth, dt, box), masses)
    return float(np.mean((e_p - e_t) ** 2))


# ---------------------------------------------------------------- SPH kernel

def _kernel_terms(q, form: str):
    a, b, c = (np.maximum(0.0, s - q) for s in (3.0, 2.0, 1.0))
    if form == "standard":
        return a ** 5 - 6 * b ** 5 + 15 * c ** 5, -5 * a ** 4 + 30 * b ** 4 - 75 * c ** 4
    if form == "printed":
        return a ** 5 - 6 * b ** 3 + 15 * c, -5 * a ** 4 + 18 * b ** 2 - 15 * (q < 1)
    raise ValueError(f"unknown kernel form {form!r}; expected one of {KERNEL_FORMS}")


def quintic_W(r, h: float, d: int, form: str = "standard"):
    """Quintic spline with support 3h. ``form='printed'`` uses lower powers on the inner terms."""
    if not h > 0:
        raise ValueError("smoothing length must be positive")
    w, _ = _kernel_terms(np.asarray(r, dtype=np.float64) / h, form)
    return KERNEL_CONSTANTS[d] * h ** (-d) * w


def quintic_dW(r, h: float, d: int, form: str = "standard"):
    """Radial derivative dW/dr."""
    _, dw = _kernel_terms(np.asarray(r, dtype=np.float64) / h, form)
    return KERNEL_CONSTANTS[d] * h ** (-d - 1) * dw


def grad_W(r_vec, h: float, d: int | None = None, form: str = "standard"):
    """(r / |r|) dW/d|r|, zero at r = 0. Works on (..., d) arrays."""
    r_vec = np.asarray(r_vec, dtype=np.float64)
    d = r_vec.shape[-1] if d is None else d
    r = np.linalg.norm(r_vec, axis=-1, keepdims=True)
    safe = np.where(r > 0, r, 1.0)
    return np.where(r > 0, r_vec / safe * quintic_dW(r, h, d, form), 0.0)


def smoothing_length(positions, box: Box | None = None, chunk: int = 1024) -> float:
    """Mean nearest-neighbour distance."""
    x = np.asarray(positions, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two particles")
    nearest = np.empty(n)
    for s in range(0, n, chunk):
        d2 = pairwise_sq_dist(x[s:s + chunk], x, box)
        d2[np.arange(d2.shape[0]), np.arange(s, s + d2.shape[0])] = np.inf
        nearest[s:s + chunk] = np.sqrt(d2.min(axis=1))
    return float(nearest.mean())


def _pairs(positions, radius: float, box: Box | None):
    """(receivers i, senders j, x_i - x_j) for i != j within radius."""
    x = np.asarray(positions, dtype=np.float64)
    if box is not None:
        half = box.lengths[box.periodic] / 2
        if not half.size or radius < half.min():
            g = build_graph(x, radius, box.bounds_min, box.bounds_max, box.periodic)
            return g.receivers, g.senders, g.displacement
    n = x.shape[0]
    i, j = np.nonzero(~np.eye(n, dtype=bool))
    disp = _diff(x[i], x[j], box)
    keep = np.linalg.norm(disp, axis=1) <= radius
    return i[keep], j[keep], disp[keep]


def _embed3(v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] == 3:
        return v
    out = np.zeros(v.shape[:-1] + (3,))
    out[..., :v.shape[-1]] = v
    return out


def _sph_terms(positions, velocities, h, box, form):
    x = np.asarray(positions, dtype=np.float64)
    v = np.asarray(velocities, dtype=np.float64)
    n, d = x.shape
    i, j, r_ij = _pairs(x, 3 * h, box)
    w = quintic_W(np.linalg.norm(r_ij, axis=1), h, d, form)
    denom = np.full(n, float(quintic_W(0.0, h, d, form)))
    np.add.at(denom, i, w)
    return i, v[j] - v[i], grad_W(r_ij, h, d, form), denom, np.bincount(i, minlength=n) == 0


def sph_divergence(positions, velocities, h: float, box: Box | None = None, form: str = "standard",
                   return_isolated: bool = False):
    """sum_j (v_j - v_i) . grad W_ij / sum_j W_ij, self term in the denominator."""
    i, dv, gw, denom, isolated = _sph_terms(positions, velocities, h, box, form)
    num = np.zeros(denom.shape[0])
    np.add.at(num, i, np.sum(dv * gw, axis=1))
    div = np.where(isolated, 0.0, num / denom)
    return (div, isolated) if return_isolated else div


def sph_vorticity(positions, velocities, h: float, box: Box | None = None, form: str = "standard",
                  return_isolated: bool = False):
    """sum_j grad W_ij x (v_j - v_i) / sum_j W_ij as 3-vectors (2-D embedded with z = 0)."""
    i, dv, gw, denom, isolated = _sph_terms(positions, velocities, h, box, form)
    num = np.zeros((denom.shape[0], 3))
    np.add.at(num, i, np.cross(_embed3(gw), _embed3(dv)))
    vort = np.where(isolated[:, None], 0.0, num / denom[:, None])
    return (vort, isolated) if return_isolated else vort


def sph_density(positions, h: float, masses=None, box: Box | None = None, form: str = "standard"):
    """rho_i = sum_j m_j W(|x_i - x_j|) including j = i."""
    x = np.asarray(positions, dtype=np.float64)
    n, d = x.shape
    m = np.ones(n) if masses is None else np.asarray(masses, dtype=np.float64)
    i, j, r_ij = _pairs(x, 3 * h, box)
    rho = m * quintic_W(0.0, h, d, form)
    np.add.at(rho, i, m[j] * quintic_W(np.linalg.norm(r_ij, axis=1), h, d, form))
    return rho


def field_mse(a, b) -> float:
    """Mean over frames and particles of the squared L2 distance of per-particle fields."""
    _check_shapes(a, b)
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if diff.ndim == 2:
        return float(np.mean(diff ** 2))
    return float(np.mean(np.sum(diff ** 2, axis=-1)))


def _field_series(fn, traj, dt, h, box, form):
    p = np.asarray(traj, dtype=np.float64)
    vel = frame_velocities(p, dt, box)
    return np.stack([fn(p[t + 1], vel[t], h, box, form) for t in range(vel.shape[0])])


def divergence_error(pred, truth, dt: float, h: float | None = None, box: Box | None = None,
                     form: str = "standard") -> float:
    _check_shapes(pred, truth)
    h = smoothing_length(np.asarray(truth)[0], box) if h is None else h
    return field_mse(_field_series(sph_divergence, pred, dt, h, box, form),
                     _field_series(sph_divergence, truth, dt, h, box, form))


def vorticity_error(pred, truth, dt: float, h: float | None = None, box: Box | None = None,
                    form: str = "standard") -> float:
    _check_shapes(pred, truth)
    h = smoothing_length(np.asarray(truth)[0], box) if h is None else h
    return field_mse(_field_series(sph_vorticity, pred, dt, h, box, form),
                     _field_series(sph_vorticity, truth, dt, h, box, form))


# ---------------------------------------------------------------- reports

def evaluate_rollout(pred, truth, dt: float, box: Box | None = None, n: int | None = None,
                     eps: float | None = None, sph: bool = True, sinkhorn_stride: int = 1,
                     sinkhorn_mode: str = "debiased") -> dict:
    """All metrics for one rollout; pred and truth are (T, N, d) over the same frames.

    ``sinkhorn_mode`` is "debiased" (zero for identical clouds) or "raw"
    (the regularized objective itself, positive even for identical clouds).
    """
    if sinkhorn_mode not in ("debiased", "raw"):
        raise ValueError(f"sinkhorn_mode must be 'debiased' or 'raw', got {sinkhorn_mode!r}")
    _check_shapes(pred, truth)
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    out = {"mse": mse_n(pred, truth, n, box)}
    frames = range(0, pred.shape[0], max(1, sinkhorn_stride))
    if sinkhorn_mode == "raw":
        values = [sinkhorn(pred[t], truth[t], eps, box=box).value for t in frames]
    else:
        values = [sinkhorn_divergence(pred[t], truth[t], eps, box=box) for t in frames]
    out["sinkhorn"] = float(np.mean(values))
    if pred.shape[0] >= 2:
        out["ekin_mse"] = ekin_mse(pred, truth, dt, box=box)
        if sph:
            h = smoothing_length(truth[0], box)
            out["divergence_mse"] = divergence_error(pred, truth, dt, h, box)
            out["vorticity_mse"] = vorticity_error(pred, truth, dt, h, box)
    return out


class MetricReport:
    """One row per (rollout, metric), with mean and std aggregation."""

    def __init__(self):
        self.rows: list[tuple[str, str, float]] = []

    def add(self, rollout: str, metrics: dict) -> None:
        for name, value in metrics.items():
            value = float(value)
            if not np.isfinite(value):
                raise ValueError(f"metric {name} for {rollout} is not finite")
            self.rows.append((rollout, name, value))

    def summary(self) -> dict:
        out: dict[str, dict] = {}
        names = list(dict.fromkeys(r[1] for r in self.rows))
        for name in names:
            vals = np.array([r[2] for r in self.rows if r[1] == name])
            out[name] = {"mean": float(vals.mean()), "std": float(vals.std()), "n": int(vals.size)}
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rollout", "metric", "value"])
            for row in self.rows:
                w.writerow([row[0], row[1], repr(row[2])])

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
