"""Dense tensors that record the operations producing them.

Every op that touches a tensor with ``requires_grad`` appends a node to an
implicit tape: the node carries a monotonically increasing sequence number,
references to its inputs and a closure computing the input adjoints.
:meth:`DiffTensor.backward` collects the reachable nodes and replays them in
decreasing sequence order, which is a valid reverse topological order and is
identical from run to run.
"""
from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True
_SEQ = itertools.count()


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


@contextmanager
def default_dtype(dtype):
    """Temporarily switch the precision used for new tensors."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextmanager
def no_grad():
    """Disable recording; ops return plain tensors."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class TapeNode:
    """One recorded primitive: inputs plus the adjoint rule."""

    __slots__ = ("seq", "parents", "adjoint", "name")

    def __init__(self, parents: Sequence["DiffTensor"], adjoint: Callable, name: str):
        self.seq = next(_SEQ)
        self.parents = tuple(parents)
        self.adjoint = adjoint
        self.name = name


class DiffTensor:
    """A numpy array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "node")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = _DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: TapeNode | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"DiffTensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # arithmetic sugar; definitions live in ops
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import mul
        return mul(self, -1.0)

    def __matmul__(self, other):
        from .ops import matmul
        return matmul(self, other)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable ``.grad``."""
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError(f"grad must be given for non-scalar output of shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise ValueError(f"seed gradient shape {grad.shape} does not match {self.shape}")

        order = _reachable(self)
        _accumulate(self, grad)
        for tensor in order:
            node = tensor.node
            if tensor.grad is None:
                continue
            parent_grads = node.adjoint(tensor.grad)
            for parent, pgrad in zip(node.parents, parent_grads):
                if pgrad is None or not parent.requires_grad:
                    continue
                _accumulate(parent, pgrad)


def _accumulate(tensor: DiffTensor, grad: np.ndarray) -> None:
    grad = np.asarray(grad, dtype=tensor.dtype)
    if grad.shape != tensor.shape:
        raise RuntimeError(f"adjoint shape {grad.shape} != tensor shape {tensor.shape}")
    if tensor.grad is None:
        tensor.grad = grad.copy()
    else:
        tensor.grad = tensor.grad + grad


def _reachable(root: DiffTensor) -> list[DiffTensor]:
    """Recorded tensors reachable from ``root``, latest node first."""
    seen: set[int] = set()
    found: list[DiffTensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen or t.node is None:
            continue
        seen.add(id(t))
        found.append(t)
        stack.extend(p for p in t.node.parents if p.requires_grad)
    found.sort(key=lambda t: t.node.seq, reverse=True)
    return found


def as_tensor(x, dtype=None) -> DiffTensor:
    if isinstance(x, DiffTensor):
        return x
    return DiffTensor(np.asarray(x), dtype=dtype)


def record(data: np.ndarray, parents: Sequence[DiffTensor], adjoint: Callable, name: str) -> DiffTensor:
    """Wrap an op result, attaching a tape node when any input needs grad."""
    out = DiffTensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = TapeNode(parents, adjoint, name)
    return out
