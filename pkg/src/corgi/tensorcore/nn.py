"""Parameter containers and the layers used by the models."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import DiffTensor, get_default_dtype

NORM_EPS = 1e-6


def parameter(data, dtype=None) -> DiffTensor:
    return DiffTensor(np.asarray(data), requires_grad=True, dtype=dtype or get_default_dtype())


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=None) -> DiffTensor:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return parameter(rng.uniform(-bound, bound, size=shape), dtype)


class Module:
    """Base class; parameters and submodules are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, DiffTensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, DiffTensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, DiffTensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self) -> list[DiffTensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {value.shape} != parameter shape {p.shape}")
            p.data = np.ascontiguousarray(value, dtype=p.dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, dtype=None):
        self.weight = kaiming_uniform(rng, (n_in, n_out), n_in, dtype)
        self.bias = parameter(np.zeros(n_out), dtype) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, n: int, dtype=None):
        self.gamma = parameter(np.ones(n), dtype)
        self.beta = parameter(np.zeros(n), dtype)

    def forward(self, x):
        return ops.layer_norm(x, self.gamma, self.beta, NORM_EPS)


class MLP(Module):
    """Linear layers with ReLU in between and an optional LayerNorm on the output."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, hidden_layers: int,
                 rng: np.random.Generator, layer_norm: bool = True, dtype=None):
        widths = [n_in] + [n_hidden] * hidden_layers + [n_out]
        self.linears = [Linear(a, b, rng, dtype=dtype) for a, b in zip(widths[:-1], widths[1:])]
        self.norm = LayerNorm(n_out, dtype) if layer_norm else None
        self.n_in = n_in
        self.n_out = n_out

    def forward(self, x):
        for i, layer in enumerate(self.linears):
            x = layer(x)
            if i < len(self.linears) - 1:
                x = ops.relu(x)
        if self.norm is not None:
            x = self.norm(x)
        return x


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator, dtype=None):
        self.table = parameter(rng.normal(0.0, 1.0, size=(n, dim)), dtype)

    def forward(self, index):
        return ops.take_rows(self.table, index)


class Conv(Module):
    def __init__(self, ndim: int, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 padding: str = "zero", stride: int = 1, dtype=None):
        fan_in = c_in * kernel**ndim
        self.weight = kaiming_uniform(rng, (kernel,) * ndim + (c_in, c_out), fan_in, dtype)
        self.bias = parameter(np.zeros(c_out), dtype)
        self.padding = padding
        self.stride = stride

    def forward(self, x):
        same = self.stride == 1
        return ops.conv_nd(x, self.weight, self.bias, self.stride, self.padding, same=same)


class ConvTranspose(Module):
    def __init__(self, ndim: int, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 2, dtype=None):
        fan_in = c_in * kernel**ndim
        self.weight = kaiming_uniform(rng, (kernel,) * ndim + (c_in, c_out), fan_in, dtype)
        self.bias = parameter(np.zeros(c_out), dtype)
        self.stride = stride

    def forward(self, x):
        return ops.conv_transpose_nd(x, self.weight, self.bias, self.stride)


class InstanceNorm(Module):
    def __init__(self, channels: int, dtype=None):
        self.gamma = parameter(np.ones(channels), dtype)
        self.beta = parameter(np.zeros(channels), dtype)

    def forward(self, x):
        return ops.instance_norm(x, self.gamma, self.beta, NORM_EPS)
