"""
Minimal reverse-mode differentiation on top of numpy.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. The graph is implicit
in those links; :func:`graph_order` recovers it as a topologically ordered list
and :func:`backward` walks that list once in reverse.

All values are float64.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DimensionError, UsageError

NORM_EPS = 1e-12

_ids = itertools.count()


class Tensor:
    """Dense float64 array plus the bookkeeping needed for backprop."""

    def __init__(self, data, parents: Sequence["Tensor"] = (), backward_fn=None, op: str = "leaf",
                 requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_fn: Callable[[np.ndarray], tuple] | None = backward_fn
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.uid = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"


class Parameter(Tensor):
    """Trainable leaf tensor with a stable name."""

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def copy(self, name: str) -> "Parameter":
        return Parameter(self.data.copy(), name)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    return Tensor(data, parents=parents, backward_fn=backward_fn, op=op)


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


# --------------------------------------------------------------------------
# layer primitives


def dense(x, weights, bias) -> Tensor:
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise DimensionError(f"dense: input {x.shape} incompatible with weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise DimensionError(f"dense: bias {bias.shape} incompatible with weights {weights.shape}")
    out = x.data @ weights.data + bias.data

    def backward(g):
        return (
            g @ weights.data.T if x.requires_grad else None,
            x.data.T @ g if weights.requires_grad else None,
            g.sum(axis=0) if bias.requires_grad else None,
        )

    return _make(out, (x, weights, bias), backward, "dense")


def conv2d(x, kernels, bias, stride: int = 1) -> Tensor:
    """Valid cross-correlation. x: n×c×h×w, kernels: f×c×kh×kw."""
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if stride < 1:
        raise ConfigurationError(f"conv2d: stride must be positive, got {stride}", key="stride")
    if x.ndim != 4 or kernels.ndim != 4 or x.shape[1] != kernels.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernels {kernels.shape}")
    n, c, h, w = x.shape
    f, _, kh, kw = kernels.shape
    if kh > h or kw > w:
        raise DimensionError(f"conv2d: kernel {kernels.shape} larger than input {x.shape}")
    if bias.shape != (f,):
        raise DimensionError(f"conv2d: bias {bias.shape} does not match {f} kernels")
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    # n×c×ho×wo×kh×kw
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, kernels.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + bias.data[None, :, None, None]

    def backward(g):
        gx = gk = gb = None
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.einsum("nfhw,fc->nchw", g, kernels.data[:, :, i, j])
                    gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib
        if kernels.requires_grad:
            gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gk, gb

    return _make(np.ascontiguousarray(out), (x, kernels, bias), backward, "conv2d")


def conv1d(x, kernels, bias) -> Tensor:
    """Token-axis convolution. x: n×k×d, kernels: f×ks×d spanning the full width d."""
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if x.ndim != 3 or kernels.ndim != 3 or x.shape[2] != kernels.shape[2]:
        raise DimensionError(f"conv1d: input {x.shape} incompatible with kernels {kernels.shape}")
    n, k, d = x.shape
    f, ks, _ = kernels.shape
    if ks > k:
        raise DimensionError(f"conv1d: kernel span {ks} exceeds sequence length {k}")
    if bias.shape != (f,):
        raise DimensionError(f"conv1d: bias {bias.shape} does not match {f} kernels")
    ko = k - ks + 1
    win = sliding_window_view(x.data, ks, axis=1)  # n×ko×d×ks
    out = np.tensordot(win, kernels.data, axes=([2, 3], [2, 1])).transpose(0, 2, 1)
    out = out + bias.data[None, :, None]

    def backward(g):
        gx = gk = gb = None
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for t in range(ks):
                gx[:, t:t + ko, :] += np.einsum("nfp,fd->npd", g, kernels.data[:, t, :])
        if kernels.requires_grad:
            gk = np.tensordot(g, win, axes=([0, 2], [0, 1])).transpose(0, 2, 1)
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gx, gk, gb

    return _make(np.ascontiguousarray(out), (x, kernels, bias), backward, "conv1d")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


ACTIVATIONS = ("relu", "sigmoid", "identity")


def activation(x, kind: str) -> Tensor:
    x = as_tensor(x)
    if kind == "identity":
        return x
    if kind == "relu":
        mask = x.data > 0
        return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")
    if kind == "sigmoid":
        s = _sigmoid(x.data)
        return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")
    raise ConfigurationError(f"unknown activation {kind!r}", key="activation")


def concat(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat: no parts given")
    for p in parts:
        if p.ndim != 2:
            raise DimensionError(f"concat: expected 2-D parts, got {p.shape}")
    n = parts[0].shape[0]
    if any(p.shape[0] != n for p in parts):
        raise DimensionError(f"concat: leading dimensions differ: {[p.shape for p in parts]}")
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=1)

    def backward(g):
        return tuple(g[:, a:b] for a, b in zip(bounds[:-1], bounds[1:]))

    return _make(out, parts, backward, "concat")


def flatten(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _make(x.data.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),), "flatten")


def take_columns(x, columns: Sequence[int]) -> Tensor:
    """Select entries along the last axis (columns of a matrix, items of a vector)."""
    x = as_tensor(x)
    cols = np.asarray(columns, dtype=np.intp)
    out = np.ascontiguousarray(x.data[..., cols])

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (Ellipsis, cols), g)
        return (gx,)

    return _make(out, (x,), backward, "take_columns")


def stack(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ: {[p.shape for p in parts]}")
    out = np.stack([p.data for p in parts])
    return _make(out, parts, lambda g: tuple(g[i] for i in range(len(parts))), "stack")


def index(x, i: int) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[i] = g
        return (gx,)

    return _make(x.data[i].copy(), (x,), backward, "index")


def mix(mixing, stacked) -> Tensor:
    """out[v] = sum_u mixing[v, u] * stacked[u], elementwise over the remaining axes."""
    mixing, stacked = as_tensor(mixing), as_tensor(stacked)
    m = stacked.shape[0]
    if mixing.shape != (m, m):
        raise DimensionError(f"mix: mixing {mixing.shape} incompatible with {m} stacked parts")
    out = np.tensordot(mixing.data, stacked.data, axes=(1, 0))
    rest = tuple(range(1, stacked.ndim))

    def backward(g):
        gm = np.tensordot(g, stacked.data, axes=(rest, rest)) if mixing.requires_grad else None
        gs = np.tensordot(mixing.data.T, g, axes=(1, 0)) if stacked.requires_grad else None
        return gm, gs

    return _make(out, (mixing, stacked), backward, "mix")


# --------------------------------------------------------------------------
# scalar pieces of the training objective


def squared_error(pred, target) -> Tensor:
    """0.5 * ||pred - target||^2 as a scalar node."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"squared_error: prediction {pred.shape} vs label {target.shape}")
    r = pred.data - target
    return _make(np.array(0.5 * np.sum(r * r)), (pred,), lambda g: (g * r,), "squared_error")


def group_norm(params: Sequence, eps: float = NORM_EPS) -> Tensor:
    """sqrt(sum of squares of every entry of every tensor + eps)."""
    params = [as_tensor(p) for p in params]
    norm = np.sqrt(sum(float(np.sum(p.data * p.data)) for p in params) + eps)

    def backward(g):
        return tuple(g * p.data / norm for p in params)

    return _make(np.array(norm), params, backward, "group_norm")


def add_scalars(terms: Sequence[Tensor]) -> Tensor:
    terms = [as_tensor(t) for t in terms]
    total = np.array(sum(float(t.data) for t in terms))
    return _make(total, terms, lambda g: tuple(g for _ in terms), "add")


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def objective(predictions: Sequence, labels: Sequence, weight_groups: Sequence[Sequence[Parameter]],
              lambdas: Sequence[float], eps: float = NORM_EPS) -> Tensor:
    """Joint multi-task loss: half the summed squared residual over tasks plus a
    per-view penalty lambda_i * ||W_i|| on the Euclidean norm of each view's weights."""
    if len(predictions) != len(labels):
        raise DimensionError(f"objective: {len(predictions)} predictions vs {len(labels)} labels")
    if len(weight_groups) != len(lambdas):
        raise DimensionError("objective: one lambda per view weight group is required")
    for i, lam in enumerate(lambdas):
        if lam < 0 or not np.isfinite(lam):
            raise ConfigurationError(f"objective: lambda for view {i} must be nonnegative, got {lam}",
                                     key="view_lambdas")
    terms = [squared_error(p, y) for p, y in zip(predictions, labels)]
    for lam, group in zip(lambdas, weight_groups):
        if lam > 0 and group:
            terms.append(scale(group_norm(group, eps), lam))
    return add_scalars(terms)


# --------------------------------------------------------------------------
# graph traversal and optimisation


def graph_order(loss: Tensor) -> list[Tensor]:
    """Nodes reachable from ``loss`` in topological order (inputs first)."""
    order, seen = [], set()
    stack_ = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if node.uid in seen:
            continue
        seen.add(node.uid)
        stack_.append((node, True))
        for p in node.parents:
            if p.uid not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> list[Tensor]:
    """Populate ``.grad`` of every leaf reachable from the scalar ``loss``.

    Parameter gradients are reset first, so after the call they hold exactly
    d(loss)/d(parameter). Returns the visited nodes in topological order.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = graph_order(loss)
    grads = {loss.uid: np.ones_like(loss.data)}
    for node in order:
        if not node.parents:
            node.grad = np.zeros_like(node.data)
    for node in reversed(order):
        g = grads.pop(node.uid, None)
        if g is None:
            continue
        if not node.parents:
            node.grad = node.grad + g
            continue
        if not node.requires_grad:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.uid in grads:
                grads[parent.uid] = grads[parent.uid] + pg
            else:
                grads[parent.uid] = pg
    return order


def sgd_step(params: Iterable[Parameter], lr: float):
    if not lr > 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}", key="learning_rate")
    for p in params:
        p.data -= lr * p.grad
        p.zero_grad()
