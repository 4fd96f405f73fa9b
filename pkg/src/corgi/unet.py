"""Multi-resolution convolutional module operating on channel-last grids.

Downsampling, for levels k = 1..K at resolution ``res / 2**(k-1)``::

    D_1 = Block_F1(G0 [+ G0 if B1])
    D_k = Block_Fk(Pool(D_{k-1}) [+ G0_k if Bk]),  G0_k = AvgPool(G0_{k-1})

Upsampling, U_K = D_K and for k = K-1..1::

    U_k = Block_Fk(UpConv_{F_{k+1} -> F_k}(U_{k+1}) [+ D_k if Ak])

The output is a 1x1 convolution of U_1 to H channels. ``+`` is channel
concatenation; bracketed terms are gated by the skip flags.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc

POOL_MODES = ("avg", "conv")


@dataclass
class ConvPlan:
    widths: tuple[int, ...] = (128, 256, 512)
    skip_a: tuple[bool, ...] | None = None
    skip_b: tuple[bool, ...] | None = None
    pool: str = "avg"
    kernel: int = 3

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        K = len(self.widths)
        self.skip_a = tuple(bool(v) for v in (self.skip_a if self.skip_a is not None else [True] * K))
        self.skip_b = tuple(bool(v) for v in (self.skip_b if self.skip_b is not None else [True] * K))
        if len(self.skip_a) != K or len(self.skip_b) != K:
            raise ValueError(f"skip flags need one entry per level ({K})")
        if self.pool not in POOL_MODES:
            raise ValueError(f"unknown pool mode {self.pool!r}; expected one of {POOL_MODES}")
        if any(w < 1 for w in self.widths):
            raise ValueError("widths must be positive")

    @property
    def levels(self) -> int:
        return len(self.widths)

    def check_resolution(self, resolution) -> None:
        if self.levels == 0:
            return
        factor = 2 ** (self.levels - 1)
        bad = [n for n in resolution if n % factor]
        if bad:
            raise ValueError(f"grid resolution {tuple(resolution)} must be divisible by {factor} "
                             f"on every axis for {self.levels} levels")


class ConvBlock(tc.Module):
    """[conv -> InstanceNorm -> ReLU] twice."""

    def __init__(self, ndim: int, c_in: int, width: int, rng, padding, kernel: int = 3, dtype=None):
        self.conv1 = tc.Conv(ndim, c_in, width, kernel, rng, padding=padding, dtype=dtype)
        self.norm1 = tc.InstanceNorm(width, dtype)
        self.conv2 = tc.Conv(ndim, width, width, kernel, rng, padding=padding, dtype=dtype)
        self.norm2 = tc.InstanceNorm(width, dtype)

    def forward(self, x):
        x = tc.relu(self.norm1(self.conv1(x)))
        return tc.relu(self.norm2(self.conv2(x)))


class UNet(tc.Module):
    def __init__(self, plan: ConvPlan, channels: int, periodic, rng: np.random.Generator, dtype=None):
        self.plan = plan
        self.channels = channels
        self.ndim = len(periodic)
        padding = ["circular" if p else "zero" for p in periodic]
        self.padding = padding
        K, F, H, nd = plan.levels, plan.widths, channels, self.ndim
        if K == 0:
            self.down, self.pools, self.upconvs, self.up = [], [], [], []
            self.head = tc.Conv(nd, H, H, 1, rng, dtype=dtype)
            return
        self.down = []
        for k in range(K):
            c_in = (H if k == 0 else F[k - 1]) + (H if plan.skip_b[k] else 0)
            self.down.append(ConvBlock(nd, c_in, F[k], rng, padding, plan.kernel, dtype))
        # strided-conv pooling for the working path when requested
        self.pools = ([tc.Conv(nd, F[k], F[k], 2, rng, padding="zero", stride=2, dtype=dtype)
                       for k in range(K - 1)] if plan.pool == "conv" else [])
        self.upconvs = [tc.ConvTranspose(nd, F[k + 1], F[k], 2, rng, stride=2, dtype=dtype)
                        for k in range(K - 1)]
        self.up = [ConvBlock(nd, F[k] + (F[k] if plan.skip_a[k] else 0), F[k], rng, padding, plan.kernel, dtype)
                   for k in range(K - 1)]
        self.head = tc.Conv(nd, F[0], H, 1, rng, dtype=dtype)

    def identity_init(self) -> None:
        """For K = 0: make the 1x1 map the identity."""
        if self.plan.levels:
            raise ValueError("identity_init only applies to the K = 0 plan")
        self.head.weight.data[:] = np.eye(self.channels, dtype=self.head.weight.dtype).reshape(
            (1,) * self.ndim + (self.channels, self.channels))
        self.head.bias.data[:] = 0

    def _pool(self, k: int, x):
        return self.pools[k](x) if self.pools else tc.avg_pool_nd(x, 2)

    def forward(self, g0, return_levels: bool = False):
        g0 = tc.as_tensor(g0)
        plan = self.plan
        if g0.ndim != self.ndim + 1 or g0.shape[-1] != self.channels:
            raise ValueError(f"grid input {g0.shape} does not match {self.ndim}-D, {self.channels} channels")
        plan.check_resolution(g0.shape[:-1])
        K = plan.levels
        if K == 0:
            out = self.head(g0)
            return (out, []) if return_levels else out
        ladder = g0
        x = g0
        downs = []
        for k in range(K):
            if k > 0:
                ladder = tc.avg_pool_nd(ladder, 2)
                x = self._pool(k - 1, downs[-1])
            if plan.skip_b[k]:
                x = tc.concat([x, ladder], axis=-1)
            downs.append(self.down[k](x))
        u = downs[-1]
        for k in range(K - 2, -1, -1):
            u = self.upconvs[k](u)
            if plan.skip_a[k]:
                u = tc.concat([u, downs[k]], axis=-1)
            u = self.up[k](u)
        out = self.head(u)
        if return_levels:
            return out, [d.shape[:-1] for d in downs]
        return out
