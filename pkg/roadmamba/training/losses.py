"""
Classification losses: softmax cross-entropy and the main + auxiliary total.

    L_total = L_main + lambda * sum over blocks of (L_aux_global + L_aux_local)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..autograd import Function, Tensor, as_tensor
from ..constants import AUX_LAMBDA
from ..errors import ConfigError, ShapeError

AuxLogits = Union[Tensor, Tuple[Tensor, Optional[Tensor]]]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax on a [B, K] array (max-shifted)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class CrossEntropy(Function):
    """Mean softmax cross-entropy over the batch."""

    def forward(self, logits, labels=None):
        log_p = log_softmax(logits)
        rows = np.arange(logits.shape[0])
        self.probs = np.exp(log_p)
        self.rows = rows
        self.labels = labels
        return np.asarray(-log_p[rows, labels].mean(), dtype=logits.dtype)

    def backward(self, grad):
        d = self.probs.copy()
        d[self.rows, self.labels] -= 1.0
        return (d * (grad / d.shape[0]),)


def _check_labels(logits: Tensor, labels: np.ndarray) -> np.ndarray:
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [B, N_cls], got {logits.shape}")
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:1]:
        raise ShapeError(f"{logits.shape[0]} logit rows but labels have shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ConfigError(
            f"labels must lie in [0, {logits.shape[1]}), got {labels.min()}..{labels.max()}"
        )
    return labels.astype(np.int64)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """
    Mean softmax cross-entropy.

    Args:
        logits: [B, N_cls]
        labels: [B] integer class ids

    Returns:
        Scalar tensor

    Raises:
        ConfigError: Label out of range
        ShapeError: Batch size mismatch
    """
    logits = as_tensor(logits)
    return CrossEntropy.apply(logits, labels=_check_labels(logits, labels))


@dataclass(frozen=True)
class LossSpec:
    """
    Attributes:
        lambda_aux: Weight of the summed auxiliary losses (>= 0)
    """

    lambda_aux: float = AUX_LAMBDA

    def validate(self) -> None:
        if self.lambda_aux < 0:
            raise ConfigError(f"lambda_aux must be >= 0, got {self.lambda_aux}")


def flatten_aux(aux_logits: Iterable[AuxLogits]) -> List[Tensor]:
    """Flatten per-block (global, local) pairs into a list of heads, skipping absent ones."""
    heads: List[Tensor] = []
    for item in aux_logits:
        if isinstance(item, tuple):
            heads.extend(t for t in item if t is not None)
        else:
            heads.append(item)
    return heads


def total_loss(
    logits: Tensor,
    aux_logits: Sequence[AuxLogits],
    labels: np.ndarray,
    spec: LossSpec = LossSpec(),
) -> Tensor:
    """
    Main cross-entropy plus lambda times the sum of auxiliary cross-entropies.

    Args:
        logits: Main head output [B, N_cls]
        aux_logits: Auxiliary head outputs, flat or as (global, local) pairs
        labels: [B] class ids
        spec: Loss weighting

    Returns:
        Scalar tensor; equals the main loss exactly when lambda is 0 or there
        are no auxiliary heads

    Raises:
        ConfigError: Label out of range or negative lambda
    """
    spec.validate()
    loss = cross_entropy(logits, labels)
    heads = flatten_aux(aux_logits)
    if spec.lambda_aux == 0 or not heads:
        return loss
    aux = cross_entropy(heads[0], labels)
    for head in heads[1:]:
        aux = aux + cross_entropy(head, labels)
    return loss + aux * spec.lambda_aux
