"""
2D convolutions on channels-last feature maps.

Both variants compute cross-correlation (no kernel flip) on [B, H, W, C]
inputs. Depthwise kernels are shaped (C, k, k); full kernels are
(C_out, C_in, k, k).
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import Function, Tensor, as_tensor


def conv_output_extent(size: int, kernel: int, padding: int, stride: int) -> int:
    """
    Output side of a convolution: floor((size + 2p - k) / stride) + 1.

    Raises:
        ShapeError: Stride below 1 or nonpositive output extent
    """
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")
    out = (size + 2 * padding - kernel) // stride + 1
    if out <= 0:
        raise ShapeError(
            f"kernel {kernel} with padding {padding} and stride {stride} "
            f"gives nonpositive output extent on side {size}"
        )
    return out


def _pad_spatial(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))


class DepthwiseConv2d(Function):
    def forward(self, x, kernel, bias=None, padding=0):
        if x.ndim != 4:
            raise ShapeError(f"depthwise conv expects [B, H, W, C], got {x.shape}")
        channels, k, k2 = kernel.shape
        if k != k2 or k % 2 == 0:
            raise ShapeError(f"depthwise kernel must be square with odd side, got {kernel.shape}")
        if channels != x.shape[-1]:
            raise ShapeError(f"kernel has {channels} channels, input has {x.shape[-1]}")
        _, height, width, _ = x.shape
        out_h = conv_output_extent(height, k, padding, 1)
        out_w = conv_output_extent(width, k, padding, 1)

        xp = _pad_spatial(x, padding)
        out = np.zeros(x.shape[:1] + (out_h, out_w, channels), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                out += xp[:, i : i + out_h, j : j + out_w, :] * kernel[:, i, j]
        if bias is not None:
            out += bias

        self.xp = xp
        self.kernel = kernel
        self.padding = padding
        self.in_shape = x.shape
        self.has_bias = bias is not None
        return out

    def backward(self, grad):
        k = self.kernel.shape[1]
        out_h, out_w = grad.shape[1:3]
        dxp = np.zeros_like(self.xp)
        dk = np.zeros_like(self.kernel)
        for i in range(k):
            for j in range(k):
                window = self.xp[:, i : i + out_h, j : j + out_w, :]
                dk[:, i, j] = np.sum(grad * window, axis=(0, 1, 2))
                dxp[:, i : i + out_h, j : j + out_w, :] += grad * self.kernel[:, i, j]
        p = self.padding
        dx = dxp[:, p : p + self.in_shape[1], p : p + self.in_shape[2], :]
        dbias = np.sum(grad, axis=(0, 1, 2)) if self.has_bias else None
        return (dx, dk, dbias) if self.has_bias else (dx, dk)


class Conv2d(Function):
    def forward(self, x, kernel, bias=None, padding=0, stride=1):
        if x.ndim != 4:
            raise ShapeError(f"conv expects [B, H, W, C], got {x.shape}")
        c_out, c_in, k, k2 = kernel.shape
        if k != k2:
            raise ShapeError(f"conv kernel must be square, got {kernel.shape}")
        if c_in != x.shape[-1]:
            raise ShapeError(f"kernel expects {c_in} input channels, input has {x.shape[-1]}")
        _, height, width, _ = x.shape
        out_h = conv_output_extent(height, k, padding, stride)
        out_w = conv_output_extent(width, k, padding, stride)

        xp = _pad_spatial(x, padding)
        # [B, H', W', C_in, k, k] view, then subsample by stride
        windows = sliding_window_view(xp, (k, k), axis=(1, 2))
        rows = slice(None, (out_h - 1) * stride + 1, stride)
        cols = slice(None, (out_w - 1) * stride + 1, stride)
        windows = windows[:, rows, cols]
        out = np.tensordot(windows, kernel, axes=([3, 4, 5], [1, 2, 3]))
        if bias is not None:
            out = out + bias

        self.windows = windows
        self.kernel = kernel
        self.xp_shape = xp.shape
        self.in_shape = x.shape
        self.padding = padding
        self.stride = stride
        self.has_bias = bias is not None
        return out

    def backward(self, grad):
        k = self.kernel.shape[-1]
        s = self.stride
        out_h, out_w = grad.shape[1:3]
        dk = np.tensordot(grad, self.windows, axes=([0, 1, 2], [0, 1, 2]))
        dwin = np.tensordot(grad, self.kernel, axes=([3], [0]))
        dxp = np.zeros(self.xp_shape, dtype=grad.dtype)
        for i in range(k):
            rows = slice(i, i + s * (out_h - 1) + 1, s)
            for j in range(k):
                cols = slice(j, j + s * (out_w - 1) + 1, s)
                dxp[:, rows, cols, :] += dwin[..., i, j]
        p = self.padding
        dx = dxp[:, p : p + self.in_shape[1], p : p + self.in_shape[2], :]
        dbias = np.sum(grad, axis=(0, 1, 2)) if self.has_bias else None
        return (dx, dk, dbias) if self.has_bias else (dx, dk)


def conv2d_depthwise(
    x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, padding: Optional[int] = None
) -> Tensor:
    """
    Per-channel 2D cross-correlation, stride 1.

    Args:
        x: Input map [B, H, W, C]
        kernel: Kernel (C, k, k) with odd k
        bias: Optional per-channel bias (C,)
        padding: Zero padding on each side; defaults to (k - 1) / 2 (same size)

    Returns:
        Output map [B, H, W, C] when padding is the default

    Raises:
        ShapeError: Even or non-square kernel, channel mismatch
    """
    kernel = as_tensor(kernel)
    if padding is None:
        padding = (kernel.shape[-1] - 1) // 2
    args: Tuple[Tensor, ...] = (as_tensor(x), kernel)
    if bias is not None:
        args += (as_tensor(bias),)
    return DepthwiseConv2d.apply(*args, padding=padding)


def conv2d_full(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    padding: int = 0,
    stride: int = 1,
) -> Tensor:
    """
    Dense 2D cross-correlation mixing all input channels.

    Args:
        x: Input map [B, H, W, C_in]
        kernel: Kernel (C_out, C_in, k, k)
        bias: Optional bias (C_out,)
        padding: Zero padding on each side
        stride: Step between windows

    Returns:
        Output map [B, H_out, W_out, C_out] with
        H_out = floor((H + 2p - k) / stride) + 1

    Raises:
        ShapeError: Channel mismatch or nonpositive output extent
    """
    args: Tuple[Tensor, ...] = (as_tensor(x), as_tensor(kernel))
    if bias is not None:
        args += (as_tensor(bias),)
    return Conv2d.apply(*args, padding=padding, stride=stride)
