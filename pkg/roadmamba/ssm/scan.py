"""
Linear-recurrence scans over discretized SSMs.

The recurrence h_t = a_t * h_{t-1} + b_t composes under the associative
operator (a2, b2) o (a1, b1) = (a2 a1, a2 b1 + b2), which lets the whole
prefix be computed by recursive doubling in ceil(log2 L) vectorized sweeps.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from ..errors import ConfigError, ShapeError
from .zoh import SsmDiscrete


Pair = Tuple[np.ndarray, np.ndarray]

STEP_AXIS = -3


def combine(second: Pair, first: Pair) -> Pair:
    """Compose two affine steps: apply first, then second."""
    a2, b2 = second
    a1, b1 = first
    return a2 * a1, a2 * b1 + b2


# =============================================================================
# Prefix kernels on (..., L, D, N) arrays
# =============================================================================


def prefix_sequential(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Inclusive prefix of the recurrence by direct rollout; returns every h_t."""
    a, b = np.broadcast_arrays(a, b)
    h = np.empty(a.shape, dtype=np.result_type(a, b))
    state = np.zeros(h.shape[:STEP_AXIS] + h.shape[STEP_AXIS + 1 :], dtype=h.dtype)
    for t in range(h.shape[STEP_AXIS]):
        state = a[..., t, :, :] * state + b[..., t, :, :]
        h[..., t, :, :] = state
    return h


def _doubling(a: np.ndarray, b: np.ndarray) -> None:
    # Hillis-Steele sweeps, in place; b is updated before a since it reads
    # the pre-sweep a.
    length = a.shape[STEP_AXIS]
    d = 1
    while d < length:
        b[..., d:, :, :] = a[..., d:, :, :] * b[..., :-d, :, :] + b[..., d:, :, :]
        a[..., d:, :, :] = a[..., d:, :, :] * a[..., :-d, :, :]
        d *= 2


def prefix_parallel(a: np.ndarray, b: np.ndarray, chunk_size: Optional[int] = None) -> np.ndarray:
    """
    Inclusive prefix of the recurrence by associative doubling.

    Args:
        a: Per-step decays (..., L, D, N)
        b: Per-step inputs (..., L, D, N)
        chunk_size: When set, scan fixed-size chunks independently and then
            scan the chunk carries (two-level scan)

    Returns:
        h with h_t = a_t h_{t-1} + b_t and h_{-1} = 0
    """
    shape = np.broadcast_shapes(a.shape, b.shape)
    dtype = np.result_type(a, b)
    a = np.array(np.broadcast_to(a, shape), dtype=dtype)
    b = np.array(np.broadcast_to(b, shape), dtype=dtype)
    length = shape[STEP_AXIS]
    if chunk_size is None or chunk_size >= length:
        _doubling(a, b)
        return b
    if chunk_size < 1:
        raise ConfigError(f"chunk_size must be >= 1, got {chunk_size}")

    n_chunks = -(-length // chunk_size)
    extra = n_chunks * chunk_size - length
    if extra:
        widths = [(0, 0)] * len(shape)
        widths[len(shape) + STEP_AXIS] = (0, extra)
        a = np.pad(a, widths, constant_values=1.0)
        b = np.pad(b, widths)
    lead, tail = shape[:STEP_AXIS], shape[STEP_AXIS + 1 :]
    a = a.reshape(lead + (n_chunks, chunk_size) + tail)
    b = b.reshape(lead + (n_chunks, chunk_size) + tail)
    _doubling(a, b)

    carry_a = np.array(a[..., :, -1, :, :])
    carry_b = np.array(b[..., :, -1, :, :])
    _doubling(carry_a, carry_b)
    carry_in = np.zeros_like(carry_b)
    carry_in[..., 1:, :, :] = carry_b[..., :-1, :, :]
    h = b + a * carry_in[..., :, None, :, :]
    h = h.reshape(lead + (n_chunks * chunk_size,) + tail)
    return h[..., :length, :, :]


def prefix_scan(
    a: np.ndarray, b: np.ndarray, path: str = "parallel", chunk_size: Optional[int] = None
) -> np.ndarray:
    """Dispatch to the parallel or sequential prefix kernel."""
    if path == "parallel":
        return prefix_parallel(a, b, chunk_size)
    if path == "sequential":
        return prefix_sequential(a, b)
    raise ConfigError(f"unknown scan path '{path}'")


# =============================================================================
# Scans over discretized SSMs
# =============================================================================


def _scan_operands(
    disc: SsmDiscrete, x: np.ndarray, h0: Optional[np.ndarray]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.asarray(x)
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ShapeError(f"scan needs a nonempty (..., L, D) sequence, got {x.shape}")
    full = x.shape + (disc.state_size,)
    try:
        a = np.broadcast_to(disc.A_bar, full)
        b = np.broadcast_to(disc.B_bar, full) * x[..., None]
        c = np.broadcast_to(disc.C, full)
    except ValueError as exc:
        raise ShapeError(
            f"per-step parameters {np.shape(disc.A_bar)} do not match sequence {x.shape}"
        ) from exc
    if h0 is not None:
        b = np.array(b)
        b[..., 0, :, :] += a[..., 0, :, :] * h0
    return a, b, c


def scan_sequential(
    disc: SsmDiscrete, x: np.ndarray, h0: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Roll out the discrete recurrence step by step.

    Args:
        disc: Discrete SSM with parameters broadcastable to (..., L, D, N)
        x: Input sequence (..., L, D)
        h0: Initial state (..., D, N); zero when None

    Returns:
        y (..., L, D) with y_t = sum_n C_t h_t

    Raises:
        ShapeError: Empty sequence or per-step parameters of another length
    """
    a, b, c = _scan_operands(disc, x, h0)
    h = prefix_sequential(a, b)
    return np.sum(c * h, axis=-1)


def scan_parallel(
    disc: SsmDiscrete,
    x: np.ndarray,
    h0: Optional[np.ndarray] = None,
    chunk_size: Optional[int] = None,
) -> np.ndarray:
    """
    Same result as scan_sequential, computed by associative prefix doubling.

    Args:
        disc: Discrete SSM with parameters broadcastable to (..., L, D, N)
        x: Input sequence (..., L, D)
        h0: Initial state (..., D, N); zero when None
        chunk_size: Optional two-level subdivision of the step axis

    Returns:
        y (..., L, D)
    """
    a, b, c = _scan_operands(disc, x, h0)
    h = prefix_parallel(a, b, chunk_size)
    return np.sum(c * h, axis=-1)


def _is_step_invariant(p: np.ndarray) -> bool:
    p = np.asarray(p)
    if p.ndim < 3:
        return True
    return bool(np.all(p == np.take(p, [0], axis=STEP_AXIS)))


def kernel_conv(disc: SsmDiscrete, length: int) -> np.ndarray:
    """
    Convolution kernel of a step-invariant SSM.

    K[k, d] = sum_n C[d, n] * A_bar[d, n]^k * B_bar[d, n] for k < length.

    Raises:
        ConfigError: Parameters vary across steps (selective mode)
    """
    if not all(_is_step_invariant(p) for p in (disc.A_bar, disc.B_bar, disc.C)):
        raise ConfigError("kernel_conv needs step-invariant SSM parameters")

    def first_step(p: np.ndarray) -> np.ndarray:
        p = np.asarray(p)
        return p if p.ndim < 3 else np.take(p, 0, axis=STEP_AXIS)

    a, b, c = (first_step(p) for p in (disc.A_bar, disc.B_bar, disc.C))
    a, b, c = np.broadcast_arrays(a, b, c)
    powers = a[None, ...] ** np.arange(length).reshape((length,) + (1,) * a.ndim)
    return np.sum(c * powers * b, axis=-1)


def causal_conv(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """
    y_t = sum_{k <= t} kernel_k x_{t-k}, along the step axis of (L, D) arrays.

    Computed with a zero-padded real FFT of length >= 2L.
    """
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    length = x.shape[-2]
    if kernel.shape[0] != length:
        raise ShapeError(f"kernel length {kernel.shape[0]} != sequence length {length}")
    n = 1 << (2 * length - 1).bit_length()
    fx = np.fft.rfft(x, n=n, axis=-2)
    fk = np.fft.rfft(kernel, n=n, axis=0)
    y = np.fft.irfft(fx * fk, n=n, axis=-2)[..., :length, :]
    return y.astype(x.dtype, copy=False)
