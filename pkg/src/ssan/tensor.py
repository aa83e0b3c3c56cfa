"""Minimal reverse-mode automatic differentiation over numpy arrays.

Provides exactly the operations the encoder/decoder model needs: matmul
(optionally batched over leading axes), elementwise add/mul/scale, bias
addition, relu, last-axis softmax / log-softmax, layer norm, reshape,
transpose, embedding lookup and full-sum reduction.  Operations record
onto an explicit tape (:class:`ComputationGraph`) in execution order;
``backward`` replays the tape in reverse, accumulating gradients into
the ``grad`` field of leaf tensors.

Training runs at float32; gradient-check suites should build float64
tensors (finite-difference tolerances are unreachable at 32-bit).
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(RuntimeError):
    """A documented precondition of an operation was violated."""


class Tensor:
    """An n-dimensional array with optional gradient accumulation.

    ``requires_grad=True`` marks a leaf (trainable parameter or checked
    input); its ``grad`` array has the same shape as ``data`` and is
    summed into by ``backward``.  Tensors produced by operations carry
    no ``grad`` of their own — gradient flow through them is handled by
    the tape that recorded them.
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._graph: Optional["ComputationGraph"] = None
        self._node_index = -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("name", "out", "inputs", "vjp")

    def __init__(self, name, out, inputs, vjp):
        self.name = name
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


_ACTIVE = threading.local()


def _active_graph() -> Optional["ComputationGraph"]:
    return getattr(_ACTIVE, "stack", [None])[-1] if getattr(_ACTIVE, "stack", None) else None


class ComputationGraph:
    """Tape of recorded operations, in execution (hence topological) order.

    Used as a context manager around a forward pass; ``backward`` walks
    the tape once in reverse.  A graph and its tensors are confined to
    one thread.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "ComputationGraph":
        if not getattr(_ACTIVE, "stack", None):
            _ACTIVE.stack = []
        _ACTIVE.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.stack.pop()

    def record(self, name: str, out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> None:
        out._graph = self
        out._node_index = len(self.nodes)
        self.nodes.append(_Node(name, out, tuple(inputs), vjp))

    def first_nonfinite(self) -> Optional[str]:
        """Name of the first recorded op whose output has a NaN/Inf, if any."""
        for i, node in enumerate(self.nodes):
            if not np.all(np.isfinite(node.out.data)):
                return f"{node.name}#{i}"
        return None


class _NoGrad:
    def __enter__(self):
        if not getattr(_ACTIVE, "stack", None):
            _ACTIVE.stack = []
        _ACTIVE.stack.append(None)
        return self

    def __exit__(self, *exc):
        _ACTIVE.stack.pop()


def no_grad() -> _NoGrad:
    """Context manager suppressing tape recording (inference mode)."""
    return _NoGrad()


def _tracked(t: Tensor, graph: ComputationGraph) -> bool:
    return t.requires_grad or t._graph is graph


def _apply(name: str, out_data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap ``out_data`` and record the op if a graph is active and relevant."""
    out = Tensor(out_data)
    graph = _active_graph()
    if graph is not None and any(_tracked(t, graph) for t in inputs):
        graph.record(name, out, inputs, vjp)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

    Repeated calls without ``zero_grad`` accumulate.  The tape is
    traversed once, in reverse execution order, starting at the node
    that produced ``loss``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    graph = loss._graph
    if graph is None:
        raise ContractError("loss was not produced by recorded operations")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes[: loss._node_index + 1]):
        g = pending.pop(id(node.out), None)
        if g is None:
            continue
        input_grads = node.vjp(g)
        for t, gi in zip(node.inputs, input_grads):
            if gi is None:
                continue
            if t.requires_grad:
                t.grad += gi
            elif t._graph is graph:
                acc = pending.get(id(t))
                if acc is None:
                    pending[id(t)] = gi.copy() if gi is g else gi
                else:
                    acc += gi


# ---------------------------------------------------------------------------
# operations


def _sum_to_shape(g: np.ndarray, shape) -> np.ndarray:
    """Reduce leading broadcast axes of g down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must match or be absent."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul leading extents differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = _sum_to_shape(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _sum_to_shape(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _apply("matmul", out, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add shapes differ: {a.shape} vs {b.shape}")
    return _apply("add", a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes differ: {a.shape} vs {b.shape}")
    return _apply("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, s: float) -> Tensor:
    s = x.data.dtype.type(s)
    return _apply("scale", x.data * s, (x,), lambda g: (g * s,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a vector to the last axis of x (the one broadcast the model needs)."""
    if b.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise DimensionError(f"bias shape {b.shape} does not match last extent of {x.shape}")
    return _apply(
        "add_bias",
        x.data + b.data,
        (x, b),
        lambda g: (g, g.reshape(-1, x.shape[-1]).sum(axis=0)),
    )


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    # subgradient at exactly 0 is 0
    return _apply("relu", out, (x,), lambda g: (g * (x.data > 0),))


def softmax_lastdim(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _apply("softmax", y, (x,), vjp)


def log_softmax_lastdim(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - log_z
    p = np.exp(y)

    def vjp(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _apply("log_softmax", y, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm gain/bias must have shape ({d},)")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = centered * inv
    out = gain.data * xhat + bias.data

    def vjp(g):
        gxhat = g * gain.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        gbias = g.reshape(-1, d).sum(axis=0)
        return gx, ggain, gbias

    return _apply("layer_norm", out, (x, gain, bias), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    return _apply("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _apply("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"token id out of range for table of {table.shape[0]} rows")
    out = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _apply("embedding", out, (table,), vjp)


def sum_all(x: Tensor) -> Tensor:
    return _apply(
        "sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),)
    )


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted-mask dropout; identity when not training or rate == 0."""
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return mul(x, Tensor(keep))


# ---------------------------------------------------------------------------
# finite-difference verification hooks


def numerical_gradient(f: Callable[[], float], x: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central-difference d f / d x, evaluating f twice per element of x.

    f must re-run the forward pass from x.data; this never touches the
    analytic backward path.
    """
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = f()
        flat[i] = orig - step
        f_minus = f()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise |a-b| / (|a| + |b| + 1e-6)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / (np.abs(a) + np.abs(b) + 1e-6))) if a.size else 0.0
