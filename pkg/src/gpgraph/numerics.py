"""Dense float64 arrays with reverse-mode differentiation.

Every operation returns a new :class:`Tensor`. When any input requires a
gradient, the result remembers its parents and a closure mapping the output
adjoint to the input adjoints. Calling :meth:`Tensor.backward` builds a
:class:`Tape` (the reachable nodes in topological order) and sweeps it in
reverse. The graph is rebuilt on every forward pass, so scenes with different
pedestrian counts need no special handling.

There is no global graph state: tapes built on different threads never
interact. The only context-local state is the replay buffer used by
:func:`grad_check` to pin non-differentiable paths.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, ConfigurationError, NumericError, PartitionError

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "sigmoid",
    "exp",
    "log",
    "tanh",
    "sqrt",
    "square",
    "softplus",
    "leaky_relu",
    "prelu",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "concat",
    "take_rows",
    "channel",
    "col_normalize",
    "col_softmax",
    "temporal_conv",
    "time_linear",
    "graph_conv",
    "segment_mean",
    "stop_gradient",
    "structural",
    "grad_check",
]


class Tensor:
    """A float64 array node in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = op
        self._parents = tuple(_parents)
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Returns the :class:`Tape` that was swept.
        """
        tape = Tape.from_output(self)
        tape.backward(seed)
        return tape

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class Tape:
    """Reachable graph nodes in topological order (inputs before consumers)."""

    nodes: list = field(default_factory=list)
    gradients: dict = field(default_factory=dict)

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order, seen = [], set()
        stack = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(nodes=order)

    def backward(self, seed=None):
        out = self.nodes[-1]
        if seed is None:
            if out.data.size != 1:
                raise DimensionError(f"backward needs an explicit seed for shape {out.shape}")
            seed = np.ones_like(out.data)
        grads = {id(out): np.asarray(seed, dtype=np.float64)}
        for node in reversed(self.nodes):
            g = grads.get(id(node))
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
        self.gradients = grads
        return self

    def leaves(self):
        return [n for n in self.nodes if n._backward is None and n.requires_grad]


def tensor(data, requires_grad=False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, op):
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward, op)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# -- elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # split by sign so exp never overflows
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sqrt(a) -> Tensor:
    """Square root whose adjoint is taken as zero where the value is zero."""
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return _node(out, (a,), backward, "sqrt")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def softplus(a) -> Tensor:
    """log(1 + exp(a)), evaluated without overflow."""
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return (g * s,)

    return _node(out, (a,), backward, "softplus")


def leaky_relu(a, slope=0.25) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(
        np.where(mask, a.data, slope * a.data),
        (a,),
        lambda g: (np.where(mask, g, slope * g),),
        "leaky_relu",
    )


def prelu(a, slope) -> Tensor:
    """Leaky ReLU with a learnable negative-side slope (scalar or per-channel)."""
    a, slope = as_tensor(a), as_tensor(slope)
    mask = a.data > 0
    neg_part = np.where(mask, 0.0, a.data)
    return _node(
        np.where(mask, a.data, slope.data * a.data),
        (a, slope),
        lambda g: (np.where(mask, g, slope.data * g), _unbroadcast(g * neg_part, slope.shape)),
        "prelu",
    )


# -- reductions and shape ------------------------------------------------------


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = np.argsort(axes)
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def concat(tensors: Sequence[Tensor], axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def take_rows(a, index) -> Tensor:
    """Gather rows ``a[index]`` along axis 0; adjoints of repeated rows add up."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _node(a.data[index], (a,), backward, "take_rows")


def channel(a, i) -> Tensor:
    """Slice ``a[..., i]``."""
    a = as_tensor(a)

    def backward(g):
        out = np.zeros_like(a.data)
        out[..., i] = g
        return (out,)

    return _node(a.data[..., i].copy(), (a,), backward, "channel")


# -- linear algebra --------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _node(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


def col_normalize(a) -> Tensor:
    """Divide every column of a 2-D array by its sum."""
    a = as_tensor(a)
    s = a.data.sum(axis=0, keepdims=True)
    out = a.data / s

    def backward(g):
        return ((g - (g * out).sum(axis=0, keepdims=True)) / s,)

    return _node(out, (a,), backward, "col_normalize")


def col_softmax(a) -> Tensor:
    """Softmax down each column of a 2-D array."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=0, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=0, keepdims=True)),)

    return _node(out, (a,), backward, "col_softmax")


def temporal_conv(x, kernel, bias) -> Tensor:
    """Zero-padded 1-D convolution along time.

    ``x`` is (N, T, C), ``kernel`` is (k, C, C_out) with odd ``k`` and ``bias``
    is (C_out,). Output is (N, T, C_out); tap ``j`` of the kernel reads time
    step ``t + j - k // 2``.
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    k = kernel.shape[0]
    if k % 2 == 0:
        raise ConfigurationError(f"temporal_conv: kernel size must be odd, got {k}")
    if x.ndim != 3 or kernel.ndim != 3 or kernel.shape[1] != x.shape[2]:
        raise DimensionError(f"temporal_conv: input {x.shape} does not match kernel {kernel.shape}")
    if bias.shape != (kernel.shape[2],):
        raise DimensionError(f"temporal_conv: bias {bias.shape} does not match kernel {kernel.shape}")
    n, t, _ = x.shape
    half = k // 2
    xp = np.pad(x.data, ((0, 0), (half, half), (0, 0)))
    out = np.broadcast_to(bias.data, (n, t, kernel.shape[2])).copy()
    for j in range(k):
        out += xp[:, j : j + t, :] @ kernel.data[j]

    def backward(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(kernel.data)
        flat_g = g.reshape(-1, g.shape[-1])
        for j in range(k):
            window = xp[:, j : j + t, :]
            gk[j] = window.reshape(-1, window.shape[-1]).T @ flat_g
            gxp[:, j : j + t, :] += g @ kernel.data[j].T
        return gxp[:, half : half + t, :], gk, g.sum(axis=(0, 1))

    return _node(out, (x, kernel, bias), backward, "temporal_conv")


def time_linear(x, weight, bias) -> Tensor:
    """Mix the time axis: (N, T, C) -> (N, T_out, C) with ``weight`` (T_out, T)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 3 or weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise DimensionError(f"time_linear: input {x.shape} does not match weight {weight.shape}")
    out = np.einsum("st,ntc->nsc", weight.data, x.data) + bias.data[None, :, None]

    def backward(g):
        return (
            np.einsum("st,nsc->ntc", weight.data, g),
            np.einsum("nsc,ntc->st", g, x.data),
            g.sum(axis=(0, 2)),
        )

    return _node(out, (x, weight, bias), backward, "time_linear")


def graph_conv(adjacency, x) -> Tensor:
    """Per-timestep neighbour aggregation: out[n, t] = sum_m adj[t, n, m] * x[m, t]."""
    adjacency, x = as_tensor(adjacency), as_tensor(x)
    if adjacency.ndim != 3 or x.ndim != 3 or adjacency.shape != (x.shape[1], x.shape[0], x.shape[0]):
        raise DimensionError(f"graph_conv: adjacency {adjacency.shape} does not match features {x.shape}")
    out = np.einsum("tnm,mtc->ntc", adjacency.data, x.data)

    def backward(g):
        return (
            np.einsum("ntc,mtc->tnm", g, x.data),
            np.einsum("tnm,ntc->mtc", adjacency.data, g),
        )

    return _node(out, (adjacency, x), backward, "graph_conv")


def _segments_of(segments):
    groups = getattr(segments, "groups", segments)
    return [np.asarray(list(g), dtype=np.intp) for g in groups]


def segment_mean(x, segments) -> Tensor:
    """Row-wise mean within each segment; segments must cover 0..N-1 disjointly."""
    x = as_tensor(x)
    groups = _segments_of(segments)
    n = x.shape[0]
    owner = np.full(n, -1, dtype=np.intp)
    for k, g in enumerate(groups):
        if g.size == 0:
            raise PartitionError(f"segment {k} is empty")
        if np.any(owner[g] != -1):
            raise PartitionError(f"segment {k} overlaps an earlier segment")
        owner[g] = k
    if np.any(owner == -1):
        raise PartitionError(f"segments leave rows {np.flatnonzero(owner == -1).tolist()} uncovered")
    # offsets from the first member keep group-constant rows exact
    out = np.stack([x.data[g[0]] + (x.data[g] - x.data[g[0]]).mean(axis=0) for g in groups])

    def backward(gr):
        sizes = np.array([g.size for g in groups], dtype=np.float64)
        return ((gr / sizes.reshape((-1,) + (1,) * (gr.ndim - 1)))[owner],)

    return _node(out, (x,), backward, "segment_mean")


# -- frozen paths ----------------------------------------------------------------


class _Replay:
    def __init__(self, mode):
        self.mode = mode
        self.values = []
        self.cursor = 0

    def handle(self, compute):
        if self.mode == "record":
            value = compute()
            self.values.append(value)
            return value
        value = self.values[self.cursor]
        self.cursor += 1
        return value


_REPLAY: contextvars.ContextVar = contextvars.ContextVar("gpgraph_replay", default=None)


def stop_gradient(a) -> Tensor:
    """Identity in the forward pass; passes an exactly-zero adjoint back."""
    a = as_tensor(a)
    replay = _REPLAY.get()
    if replay is None:
        return Tensor(a.data.copy(), op="stop_gradient")
    return Tensor(replay.handle(lambda: a.data.copy()), op="stop_gradient")


def structural(compute: Callable):
    """Evaluate a non-differentiable quantity (a partition, an adjacency).

    Outside :func:`grad_check` this just calls ``compute()``. Inside it, the
    value from the unperturbed pass is reused for every perturbed pass, so the
    finite-difference oracle sees the same discrete structure that the tape
    differentiated through.
    """
    replay = _REPLAY.get()
    if replay is None:
        return compute()
    return replay.handle(compute)


def grad_check(f: Callable[[], Tensor], leaves: Sequence[Tensor], h: float = 1e-5, floor: float = 1e-3) -> float:
    """Max relative error between tape adjoints and central differences.

    ``f`` recomputes a scalar from the current contents of ``leaves``. Values
    passing through :func:`stop_gradient` or :func:`structural` are pinned to
    their unperturbed values during the finite-difference passes, so the
    oracle differentiates exactly the function the tape describes.

    The error for each entry is ``|analytic - numeric| / max(|analytic|,
    |numeric|, floor)``.
    """
    if h <= 0:
        raise ConfigurationError("grad_check: h must be positive")
    for leaf in leaves:
        leaf.data = np.array(leaf.data, dtype=np.float64, order="C")
        leaf.grad = None
        leaf.requires_grad = True

    recorder = _Replay("record")
    token = _REPLAY.set(recorder)
    try:
        out = f()
    finally:
        _REPLAY.reset(token)
    if out.data.size != 1:
        raise DimensionError(f"grad_check: f must return a scalar, got shape {out.shape}")
    tape = Tape.from_output(out)
    for i, node in enumerate(tape.nodes):
        if not np.all(np.isfinite(node.data)):
            raise NumericError(f"grad_check: non-finite value at tape node {i} ({node.op})")
    tape.backward()

    def evaluate():
        replay = _Replay("replay")
        replay.values = recorder.values
        tok = _REPLAY.set(replay)
        try:
            return float(f().data)
        finally:
            _REPLAY.reset(tok)

    worst = 0.0
    for leaf in leaves:
        analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
        flat = leaf.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = evaluate()
            flat[i] = orig - h
            down = evaluate()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
