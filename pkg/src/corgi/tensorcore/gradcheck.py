"""Central finite-difference checks for the tape's adjoints."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import DiffTensor, no_grad


def _project(out: DiffTensor, weights: np.ndarray) -> float:
    return float(np.sum(out.data.astype(np.float64) * weights))


def gradient_errors(fn: Callable[..., DiffTensor], inputs: Sequence[DiffTensor],
                    h: float = 1e-5, seed: int = 0, order: int = 4, floor: float = 1e-3) -> list[float]:
    """Relative error ||g_tape - g_fd|| / max(||g_tape||, ||g_fd||, floor * ||g_all||) per input.

    ``g_all`` stacks the tape gradients of every input. The floor keeps inputs
    whose gradient vanishes by construction (a bias feeding a normalization)
    from turning finite-difference round-off into a unit relative error.

    Non-scalar outputs are reduced with a fixed random projection so every
    output entry contributes. The numeric side evaluates ``fn`` with recording
    disabled and never touches the tape. ``order`` selects the 2- or 4-point
    central stencil; the 4-point one keeps truncation error negligible next to
    small gradients (e.g. biases feeding a LayerNorm).
    """
    if order == 2:
        stencil = ((1.0, 0.5), (-1.0, -0.5))
    elif order == 4:
        stencil = ((2.0, -1 / 12), (1.0, 8 / 12), (-1.0, -8 / 12), (-2.0, 1 / 12))
    else:
        raise ValueError("order must be 2 or 4")
    for x in inputs:
        x.grad = None
    out = fn(*inputs)
    weights = np.random.default_rng(seed).normal(size=out.shape)
    out.backward(weights.astype(out.dtype))

    pairs = []
    for x in inputs:
        analytic = np.zeros(x.shape) if x.grad is None else x.grad.astype(np.float64)
        numeric = np.zeros(x.shape)
        flat = x.data.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                saved = flat[i]
                total = 0.0
                for step, coef in stencil:
                    flat[i] = saved + step * h
                    total += coef * _project(fn(*inputs), weights)
                flat[i] = saved
                numeric.reshape(-1)[i] = total / h
        pairs.append((analytic, numeric))
    total = np.sqrt(sum(float(np.sum(a * a)) for a, _ in pairs))
    errors = []
    for analytic, numeric in pairs:
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor * total, 1e-30)
        errors.append(float(np.linalg.norm(analytic - numeric) / scale))
    return errors
