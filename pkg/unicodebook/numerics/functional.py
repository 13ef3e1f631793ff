"""Differentiable primitives used by the autoencoder and the transformer."""

from __future__ import annotations

import math
from typing import Any

import numpy as np

from unicodebook.domain.errors import ShapeMismatchError
from unicodebook.numerics.tensor import Function, Tensor, as_tensor, unbroadcast


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatchError(op, a.shape, b.shape) from exc


# ── Elementwise arithmetic ───────────────────────────────────────


class Add(Function):
    name = "add"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _check_broadcast(self.name, a, b)
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    name = "sub"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _check_broadcast(self.name, a, b)
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _check_broadcast(self.name, a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return unbroadcast(grad * self.b, self.a.shape), unbroadcast(grad * self.a, self.b.shape)


class Neg(Function):
    name = "neg"

    def forward(self, a: np.ndarray) -> np.ndarray:
        return -a

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (-grad,)


class MatMul(Function):
    name = "matmul"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeMismatchError(self.name, a.shape, b.shape)
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad_a = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        grad_b = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return unbroadcast(grad_a, self.a.shape), unbroadcast(grad_b, self.b.shape)


# ── Reductions and layout ────────────────────────────────────────


class Sum(Function):
    name = "sum"

    def __init__(self, axis: int | tuple[int, ...] | None = None) -> None:
        self.axis = axis

    def forward(self, a: np.ndarray) -> np.ndarray:
        self.shape = a.shape
        return np.sum(a, axis=self.axis)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        if self.axis is None:
            return (np.broadcast_to(grad, self.shape).copy(),)
        axes = (self.axis,) if isinstance(self.axis, int) else self.axis
        axes = tuple(ax % len(self.shape) for ax in axes)
        expanded = np.expand_dims(grad, axis=tuple(sorted(axes)))
        return (np.broadcast_to(expanded, self.shape).copy(),)


class Reshape(Function):
    name = "reshape"

    def __init__(self, shape: tuple[int, ...]) -> None:
        self.target = shape

    def forward(self, a: np.ndarray) -> np.ndarray:
        self.shape = a.shape
        try:
            return a.reshape(self.target)
        except ValueError as exc:
            raise ShapeMismatchError(self.name, a.shape, self.target) from exc

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.reshape(self.shape),)


class Transpose(Function):
    name = "transpose"

    def __init__(self, axes: tuple[int, ...] | None = None) -> None:
        self.axes = axes

    def forward(self, a: np.ndarray) -> np.ndarray:
        self.perm = self.axes if self.axes is not None else tuple(reversed(range(a.ndim)))
        return np.transpose(a, self.perm)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.transpose(grad, np.argsort(self.perm)),)


class Index(Function):
    name = "index"

    def __init__(self, key: Any) -> None:
        self.key = key

    def forward(self, a: np.ndarray) -> np.ndarray:
        self.shape = a.shape
        return a[self.key]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros(self.shape, dtype=grad.dtype)
        np.add.at(out, self.key, grad)
        return (out,)


class ScatterRows(Function):
    """Place rows of ``values`` at ``index`` in an otherwise zero (n_rows, width) matrix."""

    name = "scatter_rows"

    def __init__(self, index: np.ndarray, n_rows: int) -> None:
        self.index = np.asarray(index, dtype=np.int64)
        self.n_rows = n_rows

    def forward(self, values: np.ndarray) -> np.ndarray:
        if values.ndim != 2 or values.shape[0] != self.index.shape[0]:
            raise ShapeMismatchError(self.name, values.shape, self.index.shape)
        out = np.zeros((self.n_rows, values.shape[1]), dtype=values.dtype)
        out[self.index] = values
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad[self.index],)


class Concat(Function):
    name = "concat"

    def __init__(self, axis: int = -1) -> None:
        self.axis = axis

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        self.sizes = [a.shape[self.axis] for a in arrays]
        try:
            return np.concatenate(arrays, axis=self.axis)
        except ValueError as exc:
            raise ShapeMismatchError(self.name, *(a.shape for a in arrays)) from exc

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, ...]:
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


class Patchify(Function):
    """(B, H, W, C) images to (B, H/p, W/p, p*p*C) non-overlapping patches."""

    name = "patchify"

    def __init__(self, patch: int) -> None:
        self.patch = patch

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, h, w, c = x.shape
        p = self.patch
        if h % p or w % p:
            raise ShapeMismatchError(f"{self.name}(patch={p})", x.shape)
        self.shape = x.shape
        grid = x.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5)
        return grid.reshape(b, h // p, w // p, p * p * c)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        b, h, w, c = self.shape
        p = self.patch
        grid = grad.reshape(b, h // p, w // p, p, p, c).transpose(0, 1, 3, 2, 4, 5)
        return (grid.reshape(self.shape),)


class Unpatchify(Function):
    """Inverse of :class:`Patchify`."""

    name = "unpatchify"

    def __init__(self, patch: int, channels: int) -> None:
        self.patch = patch
        self.channels = channels

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, gh, gw, width = x.shape
        p, c = self.patch, self.channels
        if width != p * p * c:
            raise ShapeMismatchError(f"{self.name}(patch={p})", x.shape, (p * p * c,))
        self.shape = x.shape
        grid = x.reshape(b, gh, gw, p, p, c).transpose(0, 1, 3, 2, 4, 5)
        return grid.reshape(b, gh * p, gw * p, c)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        b, gh, gw, _ = self.shape
        p, c = self.patch, self.channels
        grid = grad.reshape(b, gh, p, gw, p, c).transpose(0, 1, 3, 2, 4, 5)
        return (grid.reshape(self.shape),)


class EmbeddingLookup(Function):
    name = "embedding"

    def __init__(self, ids: np.ndarray) -> None:
        self.ids = np.asarray(ids, dtype=np.int64)

    def forward(self, table: np.ndarray) -> np.ndarray:
        if self.ids.size and (self.ids.min() < 0 or self.ids.max() >= table.shape[0]):
            raise ShapeMismatchError(self.name, table.shape, (int(self.ids.max()),))
        self.shape = table.shape
        return table[self.ids]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros(self.shape, dtype=grad.dtype)
        np.add.at(out, self.ids.reshape(-1), grad.reshape(-1, self.shape[1]))
        return (out,)


# ── Nonlinearities ───────────────────────────────────────────────


class ReLU(Function):
    name = "relu"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.mask,)


_GELU_C = math.sqrt(2.0 / math.pi)


class GELU(Function):
    """tanh approximation."""

    name = "gelu"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        self.t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        x, t = self.x, self.t
        du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du),)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.s = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.s

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.s * (1.0 - self.s),)


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


class Softmax(Function):
    name = "softmax"

    def __init__(self, axis: int = -1) -> None:
        self.axis = axis

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.s = _softmax(x, self.axis)
        return self.s

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        inner = np.sum(grad * self.s, axis=self.axis, keepdims=True)
        return (self.s * (grad - inner),)


class LayerNorm(Function):
    """Normalise over the last axis (no affine part)."""

    name = "layernorm"

    def __init__(self, eps: float = 1e-5) -> None:
        self.eps = eps

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + self.eps)
        self.xhat = (x - mu) * self.inv_std
        return self.xhat

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        g_mean = grad.mean(axis=-1, keepdims=True)
        gx_mean = (grad * self.xhat).mean(axis=-1, keepdims=True)
        return (self.inv_std * (grad - g_mean - self.xhat * gx_mean),)


# ── Losses ───────────────────────────────────────────────────────


class MSE(Function):
    name = "mse"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.shape != b.shape:
            raise ShapeMismatchError(self.name, a.shape, b.shape)
        self.diff = a - b
        return np.asarray(np.mean(self.diff**2))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g = grad * 2.0 * self.diff / self.diff.size
        return g, -g


class CrossEntropy(Function):
    """Weighted mean of -log softmax(logits)[target] over rows with nonzero weight."""

    name = "cross_entropy"

    def __init__(self, targets: np.ndarray, weights: np.ndarray) -> None:
        self.targets = np.asarray(targets, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=np.float64)

    def forward(self, logits: np.ndarray) -> np.ndarray:
        if logits.ndim != 2 or logits.shape[0] != self.targets.shape[0]:
            raise ShapeMismatchError(self.name, logits.shape, self.targets.shape)
        self.total = float(self.weights.sum())
        self.probs = _softmax(logits, axis=-1)
        shifted = logits - np.max(logits, axis=-1, keepdims=True)
        log_z = np.log(np.sum(np.exp(shifted), axis=-1))
        rows = np.arange(logits.shape[0])
        nll = log_z - shifted[rows, self.targets]
        return np.asarray(np.sum(nll * self.weights) / self.total)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        g = self.probs.copy()
        g[np.arange(g.shape[0]), self.targets] -= 1.0
        return (g * (self.weights / self.total)[:, None] * grad,)


# ── Public functional API ────────────────────────────────────────


def add(a: Any, b: Any) -> Tensor:
    return Add.apply(a, b)


def sub(a: Any, b: Any) -> Tensor:
    return Sub.apply(a, b)


def mul(a: Any, b: Any) -> Tensor:
    return Mul.apply(a, b)


def neg(a: Tensor) -> Tensor:
    return Neg.apply(a)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def sum(a: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:  # noqa: A001
    return Sum.apply(a, axis=axis)


def mean(a: Tensor) -> Tensor:
    return Sum.apply(a) * (1.0 / as_tensor(a).size)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    return Transpose.apply(a, axes=axes)


def index(a: Tensor, key: Any) -> Tensor:
    return Index.apply(a, key=key)


def scatter_rows(values: Tensor, index: np.ndarray, n_rows: int) -> Tensor:
    return ScatterRows.apply(values, index=index, n_rows=n_rows)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def patchify(images: Tensor, patch: int) -> Tensor:
    return Patchify.apply(images, patch=patch)


def unpatchify(patches: Tensor, patch: int, channels: int = 3) -> Tensor:
    return Unpatchify.apply(patches, patch=patch, channels=channels)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    return EmbeddingLookup.apply(table, ids=ids)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def gelu(x: Tensor) -> Tensor:
    return GELU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    return LayerNorm.apply(x, eps=eps)


def mse(a: Any, b: Any) -> Tensor:
    return MSE.apply(a, b)


def cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    if weights is None:
        weights = np.ones(len(targets))
    return CrossEntropy.apply(logits, targets=targets, weights=weights)


PRIMITIVES: dict[str, type[Function]] = {
    fn.name: fn
    for fn in (
        Add, Sub, Mul, Neg, MatMul, Sum, Reshape, Transpose, Index, ScatterRows, Concat,
        Patchify, Unpatchify, EmbeddingLookup, ReLU, GELU, Sigmoid, Softmax, LayerNorm,
        MSE, CrossEntropy,
    )
}


def forward_primitive(op_kind: str, *inputs: Any, **params: Any) -> Tensor:
    """Apply a primitive by name, recording it on the tape."""
    if op_kind not in PRIMITIVES:
        raise KeyError(f"Unknown primitive '{op_kind}'. Available: {sorted(PRIMITIVES)}")
    return PRIMITIVES[op_kind].apply(*inputs, **params)
