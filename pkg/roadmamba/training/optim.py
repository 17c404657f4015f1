"""
AdamW with decoupled weight decay, and the warmup + cosine learning-rate
schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from ..autograd import Tensor
from ..constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, REFERENCE_BATCH, WEIGHT_DECAY
from ..errors import ConfigError, NumericalError

NamedParams = Sequence[Tuple[str, Tensor]]


@dataclass
class OptimizerState:
    """
    AdamW moments and hyperparameters.

    Attributes:
        exp_avg: First moment per parameter name (created lazily)
        exp_avg_sq: Second moment per parameter name
        step: Completed update steps
        betas: Moment decay rates
        eps: Denominator guard
        weight_decay: Decoupled decay coefficient
    """

    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    betas: Tuple[float, float] = (ADAM_BETA1, ADAM_BETA2)
    eps: float = ADAM_EPS
    weight_decay: float = WEIGHT_DECAY

    def load(
        self, exp_avg: Dict[str, np.ndarray], exp_avg_sq: Dict[str, np.ndarray], step: int
    ) -> None:
        """Replace the moments (restoring from a checkpoint)."""
        self.exp_avg = {k: np.array(v) for k, v in exp_avg.items()}
        self.exp_avg_sq = {k: np.array(v) for k, v in exp_avg_sq.items()}
        self.step = int(step)


def optimizer_step(state: OptimizerState, params: NamedParams, lr: float) -> None:
    """
    One AdamW update:

        m <- b1 m + (1 - b1) g
        v <- b2 v + (1 - b2) g^2
        p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)

    Parameters whose grad is None are left untouched (their moments too).

    Args:
        state: Moments, updated in place
        params: (name, tensor) pairs with populated grads
        lr: Learning rate of this step

    Raises:
        NumericalError: A gradient holds NaN/inf; nothing is modified
    """
    for name, p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in '{name}' at step {state.step + 1}")

    beta1, beta2 = state.betas
    state.step += 1
    t = state.step
    bias1 = 1.0 - beta1**t
    bias2 = 1.0 - beta2**t
    for name, p in params:
        g = p.grad
        if g is None:
            continue
        m = state.exp_avg.get(name)
        v = state.exp_avg_sq.get(name)
        if m is None or m.shape != p.shape:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.exp_avg[name] = m.astype(p.dtype, copy=False)
        state.exp_avg_sq[name] = v.astype(p.dtype, copy=False)
        update = (m / bias1) / (np.sqrt(v / bias2) + state.eps) + state.weight_decay * p.data
        p.data = (p.data - lr * update).astype(p.dtype, copy=False)


class AdamW:
    """
    Optimizer bound to a fixed list of named parameters.

    Example:
        opt = AdamW(model.named_parameters(), weight_decay=0.05)
        loss.backward()
        opt.step(lr)
        opt.zero_grad()
    """

    def __init__(
        self,
        params: Iterable[Tuple[str, Tensor]],
        betas: Tuple[float, float] = (ADAM_BETA1, ADAM_BETA2),
        eps: float = ADAM_EPS,
        weight_decay: float = WEIGHT_DECAY,
    ):
        self._params: List[Tuple[str, Tensor]] = list(params)
        self._state = OptimizerState(betas=betas, eps=eps, weight_decay=weight_decay)

    @property
    def state(self) -> OptimizerState:
        return self._state

    @property
    def params(self) -> List[Tuple[str, Tensor]]:
        return self._params

    def step(self, lr: float) -> None:
        optimizer_step(self._state, self._params, lr)

    def zero_grad(self) -> None:
        for _, p in self._params:
            p.zero_grad()


@dataclass(frozen=True)
class ScheduleState:
    """
    Linear warmup to base_lr, then cosine decay to min_lr at total_steps.

    Attributes:
        base_lr: Peak learning rate
        warmup_steps: Length of the linear ramp
        total_steps: Step at which min_lr is reached
        min_lr: Floor of the cosine
    """

    base_lr: float
    warmup_steps: int
    total_steps: int
    min_lr: float = 0.0

    def validate(self) -> None:
        if self.total_steps < 1 or not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(
                f"need 0 <= warmup_steps <= total_steps and total_steps >= 1, "
                f"got {self.warmup_steps}/{self.total_steps}"
            )
        if self.min_lr < 0 or self.min_lr > self.base_lr:
            raise ConfigError(f"need 0 <= min_lr <= base_lr, got {self.min_lr}/{self.base_lr}")


def lr_at(step: int, sched: ScheduleState) -> float:
    """
    Learning rate at a step.

    0 at step 0, base_lr at the end of warmup, then
    min + 0.5 (base - min)(1 + cos(pi * progress)); steps outside
    [0, total] are clamped.
    """
    step = min(max(step, 0), sched.total_steps)
    if step < sched.warmup_steps:
        return sched.base_lr * step / sched.warmup_steps
    span = sched.total_steps - sched.warmup_steps
    if span == 0:
        return sched.base_lr
    progress = (step - sched.warmup_steps) / span
    cosine = 0.5 * (1.0 + math.cos(math.pi * progress))
    return sched.min_lr + (sched.base_lr - sched.min_lr) * cosine


def scaled_lr(base_lr: float, batch_size: int, reference_batch: int = REFERENCE_BATCH) -> float:
    """Linear scaling rule: base_lr * batch_size / reference_batch."""
    return base_lr * batch_size / reference_batch


def gradient_norm(params: NamedParams) -> float:
    """Global L2 norm of all populated gradients."""
    total = sum(float(np.sum(np.square(p.grad))) for _, p in params if p.grad is not None)
    return math.sqrt(total)

