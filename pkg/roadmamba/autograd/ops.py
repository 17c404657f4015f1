"""
Differentiable tensor operations.

Binary elementwise ops broadcast by the trailing-dimension rule. Every op
registers its backward rule when any input requires grad.
"""

from __future__ import annotations

from typing import Any, Dict, Optional, Sequence, Tuple, Type, Union

import numpy as np

from ..errors import GraphError, ShapeError
from .tensor import Function, Tensor, as_tensor

Axis = Union[None, int, Sequence[int]]


def broadcast_shape(*shapes: Tuple[int, ...]) -> Tuple[int, ...]:
    """
    Compute the broadcast shape of several operand shapes.

    Raises:
        ShapeError: Shapes are not broadcast-compatible
    """
    try:
        return tuple(np.broadcast_shapes(*shapes))
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast shapes {shapes}") from exc


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# =============================================================================
# Elementwise
# =============================================================================


class _Binary(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:  # type: ignore[override]
        broadcast_shape(a.shape, b.shape)
        self.a, self.b = a, b
        return self.compute(a, b)

    def compute(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Add(_Binary):
    def compute(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(_Binary):
    def compute(self, a, b):
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(_Binary):
    def compute(self, a, b):
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class Div(_Binary):
    def compute(self, a, b):
        return a / b

    def backward(self, grad):
        return grad / self.b, -grad * self.a / (self.b * self.b)


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, x):
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Square(Function):
    def forward(self, x):
        self.x = x
        return x * x

    def backward(self, grad):
        return (2.0 * grad * self.x,)


class Sqrt(Function):
    def forward(self, x):
        self.out = np.sqrt(x)
        return self.out

    def backward(self, grad):
        return (grad * 0.5 / self.out,)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out * self.out),)


class Sigmoid(Function):
    def forward(self, x):
        self.out = _sigmoid(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, np.zeros_like(x))

    def backward(self, grad):
        return (grad * self.mask,)


class SiLU(Function):
    def forward(self, x):
        self.x = x
        self.s = _sigmoid(x)
        return x * self.s

    def backward(self, grad):
        s = self.s
        return (grad * (s + self.x * s * (1.0 - s)),)


class Softplus(Function):
    def forward(self, x):
        self.x = x
        return np.logaddexp(np.zeros_like(x), x)

    def backward(self, grad):
        return (grad * _sigmoid(self.x),)


_BINARY: Dict[str, Type[Function]] = {
    "add": Add,
    "sub": Sub,
    "mul": Mul,
    "div": Div,
}

_UNARY: Dict[str, Type[Function]] = {
    "neg": Neg,
    "exp": Exp,
    "log": Log,
    "square": Square,
    "sqrt": Sqrt,
    "tanh": Tanh,
    "sigmoid": Sigmoid,
    "relu": ReLU,
    "silu": SiLU,
    "softplus": Softplus,
}

ELEMENTWISE_KINDS = tuple(sorted(_BINARY) + sorted(_UNARY))


def elementwise(kind: str, a: Any, b: Any = None) -> Tensor:
    """
    Apply a named elementwise op.

    Args:
        kind: One of ELEMENTWISE_KINDS
        a: First operand
        b: Second operand for binary kinds

    Returns:
        Result with the broadcast shape of the operands

    Raises:
        GraphError: Unknown op kind, or operand count does not fit the kind
        ShapeError: Operands do not broadcast
    """
    if kind in _BINARY:
        if b is None:
            raise GraphError(f"elementwise '{kind}' needs two operands")
        if not isinstance(a, Tensor):
            a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
        b = as_tensor(b, like=a)
        return _BINARY[kind].apply(a, b)
    if kind in _UNARY:
        if b is not None:
            raise GraphError(f"elementwise '{kind}' takes one operand")
        return _UNARY[kind].apply(as_tensor(a))
    raise GraphError(f"unknown elementwise op '{kind}'")


def add(a: Any, b: Any) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Any, b: Any) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Any, b: Any) -> Tensor:
    return elementwise("mul", a, b)


def div(a: Any, b: Any) -> Tensor:
    return elementwise("div", a, b)


def neg(x: Tensor) -> Tensor:
    return elementwise("neg", x)


def exp(x: Tensor) -> Tensor:
    return elementwise("exp", x)


def log(x: Tensor) -> Tensor:
    return elementwise("log", x)


def square(x: Tensor) -> Tensor:
    return elementwise("square", x)


def sqrt(x: Tensor) -> Tensor:
    return elementwise("sqrt", x)


def tanh(x: Tensor) -> Tensor:
    return elementwise("tanh", x)


def sigmoid(x: Tensor) -> Tensor:
    return elementwise("sigmoid", x)


def relu(x: Tensor) -> Tensor:
    return elementwise("relu", x)


def silu(x: Tensor) -> Tensor:
    return elementwise("silu", x)


def softplus(x: Tensor) -> Tensor:
    return elementwise("softplus", x)


# =============================================================================
# Matmul
# =============================================================================


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.a, self.b
        if b.ndim == 2 and a.ndim > 2:
            # [.., k] @ [k, n]: fold leading axes instead of materializing a batch of k x n
            a2 = a.reshape(-1, a.shape[-1])
            g2 = grad.reshape(-1, grad.shape[-1])
            return grad @ b.T, a2.T @ g2
        return np.matmul(grad, np.swapaxes(b, -1, -2)), np.matmul(np.swapaxes(a, -1, -2), grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product over the last two axes (leading axes broadcast).

    Raises:
        ShapeError: Inner extents disagree
    """
    return MatMul.apply(as_tensor(a), as_tensor(b))


# =============================================================================
# Reductions
# =============================================================================


def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise ShapeError(f"repeated axis in {axes}")
    return tuple(sorted(out))


class _Reduce(Function):
    def forward(self, x, axes: Tuple[int, ...] = (), keepdims: bool = False):
        for ax in axes:
            if x.shape[ax] == 0:
                raise ShapeError(f"cannot reduce over empty axis {ax} of shape {x.shape}")
        self.shape = x.shape
        self.axes = axes
        self.keepdims = keepdims
        return self.compute(x)

    def _expand(self, grad: np.ndarray) -> np.ndarray:
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes) if self.axes else grad
        return grad


class Sum(_Reduce):
    def compute(self, x):
        return np.sum(x, axis=self.axes, keepdims=self.keepdims)

    def backward(self, grad):
        return (np.broadcast_to(self._expand(grad), self.shape).copy(),)


class Mean(_Reduce):
    def compute(self, x):
        self.count = int(np.prod([self.shape[ax] for ax in self.axes])) if self.axes else 1
        return np.mean(x, axis=self.axes, keepdims=self.keepdims)

    def backward(self, grad):
        g = np.broadcast_to(self._expand(grad), self.shape) / self.count
        return (g,)


class Max(_Reduce):
    def compute(self, x):
        # Move reduced axes last, flatten them, and mark the first argmax so
        # ties send the whole gradient to the earliest element in scan order.
        kept = [ax for ax in range(x.ndim) if ax not in self.axes]
        moved = np.transpose(x, kept + list(self.axes))
        kept_shape = moved.shape[: len(kept)]
        flat = moved.reshape(kept_shape + (-1,))
        idx = np.argmax(flat, axis=-1)
        mask = np.zeros_like(flat)
        np.put_along_axis(mask, idx[..., None], 1.0, axis=-1)
        inverse = np.argsort(kept + list(self.axes))
        self.mask = np.transpose(mask.reshape(moved.shape), inverse)
        return np.max(x, axis=self.axes, keepdims=self.keepdims)

    def backward(self, grad):
        return (self.mask * self._expand(grad),)


_REDUCTIONS: Dict[str, Type[_Reduce]] = {"sum": Sum, "mean": Mean, "max": Max}


def reduce(kind: str, x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    """
    Reduce over axes with sum, mean or max.

    Max routes the gradient to the first occurrence of the maximum.

    Raises:
        ShapeError: Axis out of range or of zero extent
        GraphError: Unknown reduction kind
    """
    if kind not in _REDUCTIONS:
        raise GraphError(f"unknown reduction '{kind}'")
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    return _REDUCTIONS[kind].apply(x, axes=axes, keepdims=keepdims)


def sum_(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return reduce("sum", x, axis, keepdims)


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return reduce("mean", x, axis, keepdims)


def max_(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return reduce("max", x, axis, keepdims)


# =============================================================================
# Shape manipulation
# =============================================================================


class Reshape(Function):
    def forward(self, x, shape=()):
        self.in_shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"cannot reshape {x.shape} to {shape}") from exc

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, x, axes=None):
        self.axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
        if sorted(self.axes) != list(range(x.ndim)):
            raise ShapeError(f"invalid permutation {self.axes} for rank {x.ndim}")
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Slice(Function):
    def forward(self, x, index=None):
        self.in_shape = x.shape
        self.index = index
        return x[index]

    def backward(self, grad):
        out = np.zeros(self.in_shape, dtype=grad.dtype)
        if _is_advanced(self.index):
            np.add.at(out, self.index, grad)
        else:
            out[self.index] += grad
        return (out,)


def _is_advanced(index: Any) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


class Take(Function):
    def forward(self, x, indices=None, axis=0):
        self.in_shape = x.shape
        self.indices = np.asarray(indices, dtype=np.intp)
        self.axis = axis % x.ndim
        extent = x.shape[self.axis]
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= extent):
            raise ShapeError(f"take indices out of range for axis of extent {extent}")
        return np.take(x, self.indices, axis=self.axis)

    def backward(self, grad):
        out = np.zeros(self.in_shape, dtype=grad.dtype)
        moved_out = np.moveaxis(out, self.axis, 0)
        moved_grad = np.moveaxis(grad, self.axis, 0)
        np.add.at(moved_out, self.indices, moved_grad)
        return (out,)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError as exc:
            raise ShapeError(f"cannot concatenate shapes {[a.shape for a in arrays]}") from exc

    def backward(self, grad):
        splits = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, splits, axis=self.axis))


class Pad(Function):
    def forward(self, x, pad_width=()):
        self.slices = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, x.shape))
        return np.pad(x, pad_width)

    def backward(self, grad):
        return (grad[self.slices],)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(as_tensor(x), shape=tuple(shape))


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(as_tensor(x), axes=axes)


def slice_(x: Tensor, index: Any) -> Tensor:
    """Basic indexing (ints, slices with steps, Ellipsis, None)."""
    return Slice.apply(as_tensor(x), index=index)


def take(x: Tensor, indices: Any, axis: int = 0) -> Tensor:
    """Gather along an axis; repeated indices accumulate in backward."""
    return Take.apply(as_tensor(x), indices=indices, axis=axis)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    return Concat.apply(*tensors, axis=axis)


def pad(x: Tensor, pad_width: Sequence[Tuple[int, int]]) -> Tensor:
    """Zero-pad; pad_width gives (before, after) per axis."""
    x = as_tensor(x)
    if len(pad_width) != x.ndim:
        raise ShapeError(f"pad_width has {len(pad_width)} entries for rank {x.ndim}")
    return Pad.apply(x, pad_width=tuple((int(lo), int(hi)) for lo, hi in pad_width))


# =============================================================================
# Normalization
# =============================================================================


class LayerNormOp(Function):
    def forward(self, x, gamma, beta, axis=-1, eps=1e-5):
        self.axis = axis % x.ndim
        xm = np.moveaxis(x, self.axis, -1)
        if gamma.shape != (xm.shape[-1],) or beta.shape != (xm.shape[-1],):
            raise ShapeError(
                f"layernorm affine shapes {gamma.shape}/{beta.shape} do not match "
                f"normalized extent {xm.shape[-1]}"
            )
        mu = xm.mean(axis=-1, keepdims=True)
        var = ((xm - mu) ** 2).mean(axis=-1, keepdims=True)
        self.rstd = 1.0 / np.sqrt(var + eps)
        self.xhat = (xm - mu) * self.rstd
        self.gamma = gamma
        return np.moveaxis(self.xhat * gamma + beta, -1, self.axis)

    def backward(self, grad):
        g = np.moveaxis(grad, self.axis, -1)
        lead = tuple(range(g.ndim - 1))
        dgamma = np.sum(g * self.xhat, axis=lead)
        dbeta = np.sum(g, axis=lead)
        dxhat = g * self.gamma
        dx = self.rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - self.xhat * (dxhat * self.xhat).mean(axis=-1, keepdims=True)
        )
        return np.moveaxis(dx, -1, self.axis), dgamma, dbeta


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """
    Normalize to zero mean / unit variance along one axis, then scale and shift.

    Args:
        x: Input tensor
        gamma: Learned scale sized to the normalized axis
        beta: Learned shift sized to the normalized axis
        axis: Normalized axis (channels-last default)
        eps: Added to the variance

    Raises:
        ShapeError: Affine parameters do not match the normalized extent
    """
    return LayerNormOp.apply(as_tensor(x), as_tensor(gamma), as_tensor(beta), axis=axis, eps=eps)
