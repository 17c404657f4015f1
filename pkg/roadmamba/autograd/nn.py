"""
Parameter containers and the basic layers built on them.

Every layer takes an optional numpy Generator. With rng=None weights are
zero-filled (LayerNorm scales are still one), which keeps structural
instantiation cheap for parameter counting.
"""

from __future__ import annotations

import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..constants import LAYERNORM_EPS
from ..errors import ShapeError
from . import ops
from .conv import conv2d_depthwise, conv2d_full
from .tensor import Tensor, get_default_dtype, parameter


def uniform_init(
    rng: Optional[np.random.Generator], shape: Tuple[int, ...], fan_in: int
) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zeros when rng is None."""
    dtype = get_default_dtype()
    if rng is None:
        return np.zeros(shape, dtype=dtype)
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """
    Base class for anything that owns parameters.

    Parameters are discovered by walking instance attributes in assignment
    order: trainable tensors, child modules, and lists of child modules.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Parameter arrays keyed by dotted name (no copies)."""
        return {name: p.data for name, p in self.named_parameters()}

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class Linear(Module):
    """y = x @ W + b with W stored as (in_features, out_features)."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        bias: bool = True,
        rng: Optional[np.random.Generator] = None,
    ):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = parameter(uniform_init(rng, (in_features, out_features), in_features))
        self.bias = (
            parameter(np.zeros(out_features, dtype=get_default_dtype())) if bias else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear expects last extent {self.in_features}, got {x.shape}")
        if x.ndim > 2:
            lead = x.shape[:-1]
            y = ops.matmul(x.reshape(-1, self.in_features), self.weight)
            y = y.reshape(lead + (self.out_features,))
        else:
            y = ops.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y

    def macs(self, tokens: int) -> int:
        return tokens * self.in_features * self.out_features


class LayerNorm(Module):
    """LayerNorm over the trailing (channel) axis."""

    def __init__(self, features: int, eps: float = LAYERNORM_EPS):
        dtype = get_default_dtype()
        self.features = features
        self.eps = eps
        self.weight = parameter(np.ones(features, dtype=dtype))
        self.bias = parameter(np.zeros(features, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layernorm(x, self.weight, self.bias, axis=-1, eps=self.eps)


class Conv2d(Module):
    """Dense convolution with kernel (C_out, C_in, k, k) and bias."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
        rng: Optional[np.random.Generator] = None,
    ):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = parameter(
            uniform_init(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        )
        self.bias = parameter(np.zeros(out_channels, dtype=get_default_dtype())) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d_full(x, self.weight, self.bias, padding=self.padding, stride=self.stride)

    def macs(self, out_h: int, out_w: int) -> int:
        k = self.kernel_size
        return out_h * out_w * self.out_channels * self.in_channels * k * k


class DepthwiseConv2d(Module):
    """Per-channel same-size convolution with kernel (C, k, k) and bias."""

    def __init__(
        self,
        channels: int,
        kernel_size: int,
        bias: bool = True,
        rng: Optional[np.random.Generator] = None,
    ):
        if kernel_size % 2 == 0:
            raise ShapeError(f"depthwise kernel side must be odd, got {kernel_size}")
        self.channels = channels
        self.kernel_size = kernel_size
        self.weight = parameter(
            uniform_init(rng, (channels, kernel_size, kernel_size), kernel_size * kernel_size)
        )
        self.bias = parameter(np.zeros(channels, dtype=get_default_dtype())) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d_depthwise(x, self.weight, self.bias)

    def macs(self, out_h: int, out_w: int) -> int:
        return out_h * out_w * self.channels * self.kernel_size * self.kernel_size
