"""
Selective (input-dependent) SSM.

Per step t the input x_t generates its own timestep delta_t and its own
input/readout maps B_t, C_t; each of the D channels is an independent SSM
lane with a diagonal state of size N.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..autograd import Linear, Module, Tensor, ops, parameter
from ..autograd.tensor import Function, get_default_dtype
from ..constants import DT_MAX, DT_MIN, SCAN_MACS_PER_STATE
from ..errors import NumericalError, ShapeError
from .scan import prefix_scan
from .zoh import zoh_phi, zoh_phi_grad


class SelectiveScan(Function):
    """
    Fused ZOH discretization, scan and readout with a hand-written backward.

    Inputs: x (B, L, D), delta (B, L, D), A (D, N), Bm (B, L, N), Cm (B, L, N).
    Output: y (B, L, D) with y_t = sum_n C_t[n] h_t[:, n].
    """

    def forward(self, x, delta, A, Bm, Cm, path="parallel", chunk_size=None):
        if x.shape != delta.shape:
            raise ShapeError(f"x {x.shape} and delta {delta.shape} differ")
        if A.shape[0] != x.shape[-1]:
            raise ShapeError(f"A has {A.shape[0]} lanes, x has {x.shape[-1]} channels")
        if Bm.shape != Cm.shape or Bm.shape[:-1] != x.shape[:-1] or Bm.shape[-1] != A.shape[-1]:
            raise ShapeError(f"B {Bm.shape} / C {Cm.shape} do not match x {x.shape}, A {A.shape}")
        d = delta[..., None]
        z = d * A
        a = np.exp(z)
        phi = zoh_phi(z)
        Bx = Bm[..., None, :]
        bbar = phi * d * Bx
        h = prefix_scan(a, bbar * x[..., None], path=path, chunk_size=chunk_size)
        y = np.sum(Cm[..., None, :] * h, axis=-1)

        self.x, self.delta, self.A, self.Bm, self.Cm = x, delta, A, Bm, Cm
        self.z, self.a, self.phi, self.bbar, self.h = z, a, phi, bbar, h
        self.path, self.chunk_size = path, chunk_size
        return y

    def backward(self, grad):
        x, delta, A, Bm, Cm = self.x, self.delta, self.A, self.Bm, self.Cm
        a, h = self.a, self.h
        dC = np.einsum("bld,bldn->bln", grad, h)
        gh = grad[..., None] * Cm[..., None, :]

        # G_t = gh_t + a_{t+1} G_{t+1}: the same recurrence run in reverse
        a_next = np.zeros_like(a)
        a_next[:, :-1] = a[:, 1:]
        G = prefix_scan(a_next[:, ::-1], gh[:, ::-1], path=self.path, chunk_size=self.chunk_size)
        G = G[:, ::-1]

        h_prev = np.zeros_like(h)
        h_prev[:, 1:] = h[:, :-1]
        da = G * h_prev
        dbbar = G * x[..., None]
        dx = np.sum(G * self.bbar, axis=-1)

        d = delta[..., None]
        Bx = Bm[..., None, :]
        dz = da * a + dbbar * d * Bx * zoh_phi_grad(self.z)
        ddelta = np.sum(dbbar * self.phi * Bx + dz * A, axis=-1)
        dA = np.sum(dz * d, axis=(0, 1))
        dB = np.sum(dbbar * self.phi * d, axis=-2)
        return dx, ddelta, dA, dB, dC


def selective_scan(
    x: Tensor,
    delta: Tensor,
    A: Tensor,
    Bm: Tensor,
    Cm: Tensor,
    path: str = "parallel",
    chunk_size: Optional[int] = None,
) -> Tensor:
    """
    Differentiable scan with per-step timesteps and input/readout maps.

    Args:
        x: Inputs (B, L, D)
        delta: Positive timesteps (B, L, D)
        A: Negative diagonal state matrix (D, N)
        Bm: Input maps (B, L, N), shared by all lanes
        Cm: Readout maps (B, L, N)
        path: "parallel" (associative doubling) or "sequential" (rollout oracle)
        chunk_size: Optional two-level subdivision of the parallel scan

    Returns:
        y (B, L, D)
    """
    return SelectiveScan.apply(x, delta, A, Bm, Cm, path=path, chunk_size=chunk_size)


class SelectiveProjections(Module):
    """
    Input-dependent parameter generators.

    x_proj maps each token to (dt_low, B_t, C_t); dt_proj lifts dt_low back to
    one timestep per lane before the softplus.
    """

    def __init__(
        self,
        d_inner: int,
        d_state: int,
        dt_rank: int,
        rng: Optional[np.random.Generator] = None,
    ):
        self.d_inner = d_inner
        self.d_state = d_state
        self.dt_rank = dt_rank
        self.x_proj = Linear(d_inner, dt_rank + 2 * d_state, bias=False, rng=rng)
        self.dt_proj = Linear(dt_rank, d_inner, bias=True, rng=rng)
        if rng is not None:
            std = dt_rank ** -0.5
            self.dt_proj.weight.data[...] = rng.uniform(-std, std, size=(dt_rank, d_inner))
            # softplus(bias) lands log-uniformly in [DT_MIN, DT_MAX]
            dt = np.exp(
                rng.uniform(math.log(DT_MIN), math.log(DT_MAX), size=d_inner)
            )
            self.dt_proj.bias.data[...] = dt + np.log(-np.expm1(-dt))

    def __call__(self, x: Tensor):
        """
        Args:
            x: Tokens (B, L, D)

        Returns:
            (delta, B_t, C_t) with shapes (B, L, D), (B, L, N), (B, L, N)
        """
        r, n = self.dt_rank, self.d_state
        xdbl = self.x_proj(x)
        dt_low = xdbl[..., :r]
        Bm = xdbl[..., r : r + n]
        Cm = xdbl[..., r + n :]
        delta = ops.softplus(self.dt_proj(dt_low))
        if not np.all(np.isfinite(delta.data)):
            raise NumericalError("timestep positivity map produced a non-finite value")
        return delta, Bm, Cm

    def macs(self, tokens: int) -> int:
        return self.x_proj.macs(tokens) + self.dt_proj.macs(tokens)


def selective_forward(
    proj: SelectiveProjections,
    A: Tensor,
    x: Tensor,
    path: str = "parallel",
    chunk_size: Optional[int] = None,
) -> Tensor:
    """
    Run a selective SSM over token sequences.

    Args:
        proj: Generators for delta_t, B_t, C_t
        A: Negative diagonal state matrix (D, N)
        x: Tokens (B, L, D)
        path: "parallel" in production, "sequential" as the test oracle

    Returns:
        y (B, L, D), differentiable in x, A and every projection weight
    """
    delta, Bm, Cm = proj(x)
    return selective_scan(x, delta, A, Bm, Cm, path=path, chunk_size=chunk_size)


class SelectiveSsm(Module):
    """
    One selective SSM unit with log-parameterized A and a per-lane skip.

    A = -exp(A_log) stays negative for any A_log; A_log[d, n] starts at
    log(n + 1) so the initial A is -(n + 1).
    """

    def __init__(
        self,
        d_inner: int,
        d_state: int,
        dt_rank: int,
        rng: Optional[np.random.Generator] = None,
    ):
        dtype = get_default_dtype()
        self.d_inner = d_inner
        self.d_state = d_state
        self.proj = SelectiveProjections(d_inner, d_state, dt_rank, rng=rng)
        self.A_log = parameter(
            np.tile(np.log(np.arange(1, d_state + 1, dtype=dtype)), (d_inner, 1))
        )
        self.skip = parameter(np.ones(d_inner, dtype=dtype))

    @property
    def A(self) -> Tensor:
        return -ops.exp(self.A_log)

    def __call__(
        self, x: Tensor, path: str = "parallel", chunk_size: Optional[int] = None
    ) -> Tensor:
        if x.shape[-1] != self.d_inner:
            raise ShapeError(f"SSM lane width {self.d_inner} does not match input {x.shape}")
        y = selective_forward(self.proj, self.A, x, path=path, chunk_size=chunk_size)
        return y + x * self.skip

    def macs(self, tokens: int) -> int:
        """Projections plus SCAN_MACS_PER_STATE per token, lane and state."""
        return self.proj.macs(tokens) + SCAN_MACS_PER_STATE * tokens * self.d_inner * self.d_state
