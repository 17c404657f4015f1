"""
Central finite-difference gradient checking.
"""

from __future__ import annotations

from typing import Callable, List, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], tensor: Tensor, eps: float = 1e-6) -> np.ndarray:
    """
    Estimate d fn() / d tensor by central differences.

    fn is re-evaluated with each element of tensor.data perturbed in place
    by +/- eps; the original value is restored afterwards.
    """
    grad = np.zeros(tensor.shape, dtype=np.float64)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = fn().item()
        flat[i] = original - eps
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * eps)
    return grad


def gradient_errors(
    fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6
) -> List[float]:
    """
    Relative error between analytic and numerical gradients, one per input.

    The error of each input is max|analytic - numerical| divided by the larger
    of the two gradients' max magnitudes (or 1e-12 when both vanish).
    """
    for t in inputs:
        t.zero_grad()
    fn().backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in inputs]
    errors = []
    for t, a in zip(inputs, analytic):
        n = numerical_grad(fn, t, eps)
        scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0), 1e-12)
        errors.append(float(np.max(np.abs(a - n), initial=0.0) / scale))
    return errors


def gradcheck(
    fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6, tol: float = 1e-6
) -> bool:
    """
    Compare backward() against central differences.

    Args:
        fn: Zero-argument closure returning a scalar loss; must be deterministic
        inputs: Tensors (with requires_grad) to check
        eps: Perturbation size
        tol: Largest accepted relative error

    Returns:
        True when every input's relative error is within tol
    """
    return max(gradient_errors(fn, inputs, eps), default=0.0) <= tol
