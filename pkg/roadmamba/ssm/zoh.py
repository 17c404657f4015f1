"""
Continuous and discretized diagonal state-space models.

Every SSM lane d owns a diagonal state matrix A[d, :] of size N. Arrays are
laid out (..., L, D, N): step axis, lane axis, state axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..constants import ZOH_SERIES_THRESHOLD
from ..errors import NumericalError, ShapeError

# The derivative of phi cancels worse than phi itself near zero, so its
# series branch reaches further out.
PHI_GRAD_SERIES_THRESHOLD = 1e-2


@dataclass
class SsmContinuous:
    """
    Continuous-time diagonal SSM: h' = A h + B x, y = C h.

    Attributes:
        A: Diagonal state matrix per lane, shape (D, N); negative entries
        B: Input map, broadcastable to (..., L, D, N)
        C: Readout, broadcastable to (..., L, D, N)
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    @classmethod
    def initial(cls, lanes: int, state: int, dtype=np.float64) -> "SsmContinuous":
        """A[d, n] = -(n + 1), unit B and C."""
        a = -np.tile(np.arange(1, state + 1, dtype=dtype), (lanes, 1))
        return cls(A=a, B=np.ones(state, dtype=dtype), C=np.ones(state, dtype=dtype))

    @property
    def state_size(self) -> int:
        return int(np.shape(self.A)[-1])


@dataclass
class SsmDiscrete:
    """
    Discretized SSM: h_t = A_bar_t * h_{t-1} + B_bar_t * x_t, y_t = sum_n C_t h_t.

    Attributes:
        A_bar: Per-step decay, broadcastable to (..., L, D, N); in (0, 1) for stable A
        B_bar: Per-step input weight, same layout as A_bar
        C: Readout, same layout as A_bar
        delta: Timesteps that produced A_bar/B_bar (None when built directly)
    """

    A_bar: np.ndarray
    B_bar: np.ndarray
    C: np.ndarray
    delta: Optional[np.ndarray] = None

    @property
    def state_size(self) -> int:
        return int(np.shape(self.A_bar)[-1])


def zoh_phi(z: np.ndarray) -> np.ndarray:
    """
    phi(z) = (exp(z) - 1) / z, with phi(0) = 1.

    Below ZOH_SERIES_THRESHOLD in magnitude the series 1 + z/2 + z^2/6 is used.
    """
    z = np.asarray(z)
    small = np.abs(z) < ZOH_SERIES_THRESHOLD
    safe = np.where(small, np.ones_like(z), z)
    closed = np.expm1(safe) / safe
    series = 1.0 + z / 2.0 + z * z / 6.0
    return np.where(small, series, closed)


def zoh_phi_grad(z: np.ndarray) -> np.ndarray:
    """Derivative of zoh_phi: (z exp(z) - expm1(z)) / z^2, series near zero."""
    z = np.asarray(z)
    small = np.abs(z) < PHI_GRAD_SERIES_THRESHOLD
    safe = np.where(small, np.ones_like(z), z)
    closed = (safe * np.exp(safe) - np.expm1(safe)) / (safe * safe)
    series = 0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0
    return np.where(small, series, closed)


def discretize_zoh(cont: SsmContinuous, delta: np.ndarray) -> SsmDiscrete:
    """
    Zero-order-hold discretization, elementwise on the diagonal.

    A_bar = exp(delta A), B_bar = (exp(delta A) - 1) / (delta A) * delta B.

    Args:
        cont: Continuous SSM
        delta: Positive timesteps, shape (..., L, D) (or broadcastable)

    Returns:
        Discrete SSM with per-step parameters of shape (..., L, D, N)

    Raises:
        NumericalError: Nonpositive or non-finite delta
        ShapeError: delta does not broadcast against the lanes of A
    """
    delta = np.asarray(delta)
    if not np.all(np.isfinite(delta)) or np.any(delta <= 0):
        raise NumericalError("ZOH discretization needs finite delta > 0")
    d = delta[..., None]
    try:
        z = d * cont.A
    except ValueError as exc:
        raise ShapeError(f"delta {delta.shape} does not match A {np.shape(cont.A)}") from exc
    a_bar = np.exp(z)
    b_bar = zoh_phi(z) * d * cont.B
    return SsmDiscrete(A_bar=a_bar, B_bar=b_bar, C=np.asarray(cont.C), delta=delta)
