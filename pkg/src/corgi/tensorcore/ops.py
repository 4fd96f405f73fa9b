"""Differentiable primitives.

Spatial tensors are channel-last: a grid with ``d`` axes and ``C`` channels has
shape ``(n_1, ..., n_d, C)``. Convolution kernels are ``(k_1, ..., k_d, C_in,
C_out)``.
"""
from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .tensor import DiffTensor, as_tensor, record

PADDING_MODES = ("zero", "circular")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _lift(a, b):
    if isinstance(a, DiffTensor):
        dtype = a.dtype
    elif isinstance(b, DiffTensor):
        dtype = b.dtype
    else:
        dtype = None
    return as_tensor(a, dtype), as_tensor(b, dtype)


def add(a, b) -> DiffTensor:
    a, b = _lift(a, b)
    return record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> DiffTensor:
    a, b = _lift(a, b)
    return record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> DiffTensor:
    a, b = _lift(a, b)
    return record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def matmul(a, b) -> DiffTensor:
    a, b = _lift(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return record(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def linear(x, weight, bias=None) -> DiffTensor:
    """``x @ weight + bias`` for ``x`` of shape (N, F_in)."""
    x = as_tensor(x)
    weight = as_tensor(weight, x.dtype)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"linear: input shape {x.shape} does not conform to weight shape {weight.shape}")
    out = x.data @ weight.data
    if bias is None:
        return record(out, (x, weight), lambda g: (g @ weight.data.T, x.data.T @ g), "linear")
    bias = as_tensor(bias, x.dtype)
    if bias.shape != (weight.shape[1],):
        raise ValueError(f"linear: bias shape {bias.shape} does not match weight shape {weight.shape}")
    out = out + bias.data
    return record(
        out,
        (x, weight, bias),
        lambda g: (g @ weight.data.T, x.data.T @ g, g.sum(axis=0)),
        "linear",
    )


def relu(x) -> DiffTensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sum(x, axis=None) -> DiffTensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis), dtype=x.dtype)

    def adjoint(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record(out, (x,), adjoint, "sum")


def mean(x, axis=None) -> DiffTensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis), 1.0 / count)


def reshape(x, shape) -> DiffTensor:
    x = as_tensor(x)
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(tensors: Sequence, axis: int = -1) -> DiffTensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def adjoint(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors, adjoint, "concat")


def _check_index(index: np.ndarray, size: int) -> None:
    if index.size and (index.min() < 0 or index.max() >= size):
        bad = index[(index < 0) | (index >= size)].reshape(-1)[0]
        raise IndexError(f"index {int(bad)} out of range for size {size}")


def transfer_matrix(index, weights, size: int, n_source: int, dtype) -> sp.csr_matrix:
    """Sparse (size x n_source) matrix with entry (index[m, s], m) = weights[m, s].

    Duplicate entries are summed during the CSR conversion and every output row
    is reduced in ascending source order, so the result does not depend on how
    the stencil was enumerated.
    """
    index = np.asarray(index, dtype=np.int64)
    if index.ndim == 1:
        index = index[:, None]
    if index.shape[0] != n_source:
        raise ValueError(f"index has {index.shape[0]} rows but source has {n_source}")
    _check_index(index, size)
    if weights is None:
        weights = np.ones(index.shape, dtype=dtype)
    weights = np.asarray(weights, dtype=dtype).reshape(index.shape)
    cols = np.broadcast_to(np.arange(n_source)[:, None], index.shape)
    mat = sp.coo_matrix((weights.ravel(), (index.ravel(), cols.ravel())), shape=(size, n_source))
    return mat.tocsr()


def scatter_add(x, index, weights=None, size: int | None = None) -> DiffTensor:
    """out[index[m, s]] += weights[m, s] * x[m] for x of shape (M, C)."""
    x = as_tensor(x)
    if size is None:
        size = int(np.max(index)) + 1 if np.size(index) else 0
    mat = transfer_matrix(index, weights, size, x.shape[0], x.dtype)
    out = np.asarray(mat @ x.data, dtype=x.dtype)
    return record(out, (x,), lambda g: (np.asarray(mat.T @ g, dtype=x.dtype),), "scatter_add")


def gather_weighted(grid, index, weights=None) -> DiffTensor:
    """out[m] = sum_s weights[m, s] * grid[index[m, s]]; the adjoint of scatter_add."""
    grid = as_tensor(grid)
    index = np.asarray(index)
    n = index.shape[0]
    mat = transfer_matrix(index, weights, grid.shape[0], n, grid.dtype)
    out = np.asarray(mat.T @ grid.data, dtype=grid.dtype)
    return record(out, (grid,), lambda g: (np.asarray(mat @ g, dtype=grid.dtype),), "gather_weighted")


def take_rows(x, index) -> DiffTensor:
    """x[index] along the first axis."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    _check_index(index, x.shape[0])
    n_rows = x.shape[0]

    def adjoint(g):
        mat = transfer_matrix(index, None, n_rows, index.shape[0], x.dtype)
        return (np.asarray(mat @ g, dtype=x.dtype),)

    return record(x.data[index], (x,), adjoint, "take_rows")


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> DiffTensor:
    """Normalize over the last axis."""
    x = as_tensor(x)
    gamma = as_tensor(gamma, x.dtype)
    beta = as_tensor(beta, x.dtype)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    lead = tuple(range(x.ndim - 1))

    def adjoint(g):
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record(xhat * gamma.data + beta.data, (x, gamma, beta), adjoint, "layer_norm")


def instance_norm(x, gamma, beta, eps: float = 1e-6) -> DiffTensor:
    """Normalize each channel over all spatial axes of a channel-last grid."""
    x = as_tensor(x)
    gamma = as_tensor(gamma, x.dtype)
    beta = as_tensor(beta, x.dtype)
    spatial = tuple(range(x.ndim - 1))
    mu = x.data.mean(axis=spatial, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=spatial, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def adjoint(g):
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=spatial, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=spatial, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=spatial), g.sum(axis=spatial)

    return record(xhat * gamma.data + beta.data, (x, gamma, beta), adjoint, "instance_norm")


def _pad_modes(mode, d: int) -> list[str]:
    modes = [mode] * d if isinstance(mode, str) else list(mode)
    if len(modes) != d:
        raise ValueError(f"expected {d} padding modes, got {modes}")
    for m in modes:
        if m not in PADDING_MODES:
            raise ValueError(f"unknown padding mode {m!r}; expected one of {PADDING_MODES}")
    return modes


def _pad_axis(x: DiffTensor, axis: int, lo: int, hi: int, mode: str) -> DiffTensor:
    n = x.shape[axis]
    widths = [(0, 0)] * x.ndim
    widths[axis] = (lo, hi)
    out = np.pad(x.data, widths, mode="constant" if mode == "zero" else "wrap")

    def adjoint(g):
        if mode == "zero":
            return (np.take(g, np.arange(lo, lo + n), axis=axis),)
        folded = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(np.moveaxis(folded, axis, 0), np.arange(-lo, n + hi) % n, np.moveaxis(g, axis, 0))
        return (folded,)

    return record(out, (x,), adjoint, "pad")


def pad(x, widths: Sequence[tuple[int, int]], mode="zero") -> DiffTensor:
    """Pad the spatial (all but last) axes of a channel-last grid.

    ``mode`` is "zero", "circular", or one of those per spatial axis.
    """
    x = as_tensor(x)
    widths = [tuple(int(v) for v in w) for w in widths]
    if len(widths) != x.ndim - 1:
        raise ValueError(f"pad widths {widths} do not match spatial rank of {x.shape}")
    modes = _pad_modes(mode, x.ndim - 1)
    for axis, ((lo, hi), m) in enumerate(zip(widths, modes)):
        if lo or hi:
            x = _pad_axis(x, axis, lo, hi, m)
    return x


def _offsets(kernel_shape):
    return itertools.product(*(range(k) for k in kernel_shape))


def _conv_valid(x: DiffTensor, weight: DiffTensor, stride: int) -> DiffTensor:
    d = x.ndim - 1
    kshape = weight.shape[:d]
    cin, cout = weight.shape[d], weight.shape[d + 1]
    if x.shape[-1] != cin:
        raise ValueError(f"conv: input channels {x.shape[-1]} != kernel input channels {cin}")
    for n, k in zip(x.shape[:d], kshape):
        if k > n:
            raise ValueError(f"conv: kernel {kshape} larger than padded input {x.shape[:d]}")
    out_shape = tuple((n - k) // stride + 1 for n, k in zip(x.shape[:d], kshape))
    slices = {
        off: tuple(slice(o, o + stride * (m - 1) + 1, stride) for o, m in zip(off, out_shape))
        for off in _offsets(kshape)
    }
    out = np.zeros(out_shape + (cout,), dtype=x.dtype)
    for off, sl in slices.items():
        out += x.data[sl] @ weight.data[off]

    def adjoint(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(weight.data)
        g2 = g.reshape(-1, cout)
        for off, sl in slices.items():
            gx[sl] += g @ weight.data[off].T
            gw[off] = x.data[sl].reshape(-1, cin).T @ g2
        return gx, gw

    return record(out, (x, weight), adjoint, "conv")


def conv_nd(x, weight, bias=None, stride: int = 1, padding="zero", same: bool = True) -> DiffTensor:
    """Cross-correlation of a channel-last grid with a (k.., C_in, C_out) kernel.

    ``same=True`` pads (k-1)//2 on each side so stride-1 convolutions keep the
    spatial extent; ``padding`` selects zero or circular (wrap-around) fill,
    either for all axes or per spatial axis.
    """
    x = as_tensor(x)
    weight = as_tensor(weight, x.dtype)
    d = x.ndim - 1
    if d not in (1, 2, 3) or weight.ndim != d + 2:
        raise ValueError(f"conv: unsupported input {x.shape} / kernel {weight.shape}")
    _pad_modes(padding, d)
    if same and any(k > 1 for k in weight.shape[:d]):
        x = pad(x, [((k - 1) // 2, k // 2) for k in weight.shape[:d]], padding)
    out = _conv_valid(x, weight, stride)
    if bias is not None:
        out = add(out, as_tensor(bias, x.dtype))
    return out


def conv_transpose_nd(x, weight, bias=None, stride: int = 2) -> DiffTensor:
    """Transposed convolution: out[stride*i + o] += x[i] @ weight[o]."""
    x = as_tensor(x)
    weight = as_tensor(weight, x.dtype)
    d = x.ndim - 1
    kshape = weight.shape[:d]
    cin, cout = weight.shape[d], weight.shape[d + 1]
    if x.shape[-1] != cin:
        raise ValueError(f"conv_transpose: input channels {x.shape[-1]} != kernel input channels {cin}")
    in_shape = x.shape[:d]
    out_shape = tuple((n - 1) * stride + k for n, k in zip(in_shape, kshape))
    slices = {
        off: tuple(slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(off, in_shape))
        for off in _offsets(kshape)
    }
    out = np.zeros(out_shape + (cout,), dtype=x.dtype)
    for off, sl in slices.items():
        out[sl] += x.data @ weight.data[off]

    def adjoint(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(weight.data)
        x2 = x.data.reshape(-1, cin)
        for off, sl in slices.items():
            gs = g[sl]
            gx += gs @ weight.data[off].T
            gw[off] = x2.T @ gs.reshape(-1, cout)
        return gx, gw

    out = record(out, (x, weight), adjoint, "conv_transpose")
    if bias is not None:
        out = add(out, as_tensor(bias, x.dtype))
    return out


def avg_pool_nd(x, factor: int = 2) -> DiffTensor:
    """Mean over non-overlapping ``factor``-wide windows on every spatial axis."""
    x = as_tensor(x)
    d = x.ndim - 1
    spatial = x.shape[:d]
    if any(n % factor for n in spatial):
        raise ValueError(f"avg_pool: spatial shape {spatial} not divisible by {factor}")
    split = []
    for n in spatial:
        split += [n // factor, factor]
    window_axes = tuple(range(1, 2 * d, 2))
    out = x.data.reshape(split + [x.shape[-1]]).mean(axis=window_axes)
    scale = 1.0 / factor**d

    def adjoint(g):
        gx = g * scale
        for axis in range(d):
            gx = np.repeat(gx, factor, axis=axis)
        return (gx.astype(x.dtype, copy=False),)

    return record(out.astype(x.dtype, copy=False), (x,), adjoint, "avg_pool")
