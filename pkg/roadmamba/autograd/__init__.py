"""
Minimal dense tensors with reverse-mode automatic differentiation.
"""

from . import ops
from .conv import conv2d_depthwise, conv2d_full, conv_output_extent
from .gradcheck import gradcheck, gradient_errors, numerical_grad
from .nn import Conv2d, DepthwiseConv2d, LayerNorm, Linear, Module
from .ops import (
    ELEMENTWISE_KINDS,
    broadcast_shape,
    concat,
    elementwise,
    layernorm,
    matmul,
    pad,
    reduce,
    reshape,
    slice_,
    take,
    transpose,
)
from .tensor import (
    Function,
    Graph,
    Tensor,
    as_tensor,
    get_default_dtype,
    parameter,
    precision,
    set_default_dtype,
)

__all__ = [
    "ops",
    "Tensor",
    "Function",
    "Graph",
    "as_tensor",
    "parameter",
    "get_default_dtype",
    "set_default_dtype",
    "precision",
    "ELEMENTWISE_KINDS",
    "elementwise",
    "broadcast_shape",
    "matmul",
    "reduce",
    "reshape",
    "transpose",
    "slice_",
    "take",
    "concat",
    "pad",
    "layernorm",
    "conv2d_depthwise",
    "conv2d_full",
    "conv_output_extent",
    "Module",
    "Linear",
    "LayerNorm",
    "Conv2d",
    "DepthwiseConv2d",
    "gradcheck",
    "gradient_errors",
    "numerical_grad",
]
