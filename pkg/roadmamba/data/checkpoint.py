"""
Checkpoints - model parameters, optimizer moments and run metadata in one
tensor archive.

Entry names:
    param.<dotted parameter name>        parameter values
    optim.exp_avg.<name>                 AdamW first moment
    optim.exp_avg_sq.<name>              AdamW second moment
    optim.step                           step counter (f64 scalar)
    meta.<key>                           run metadata (f64 scalars)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from ..autograd import Module
from ..constants import (
    EXP_AVG_PREFIX,
    EXP_AVG_SQ_PREFIX,
    META_PREFIX,
    PARAM_PREFIX,
    STEP_ENTRY,
)
from ..errors import ArchiveError, CheckpointMismatchError
from .archive import PathLike, load_archive, save_archive

logger = logging.getLogger(__name__)


@dataclass
class Checkpoint:
    """
    Decoded checkpoint contents.

    Attributes:
        params: Parameter arrays by dotted name
        exp_avg: First moments (empty when saved without optimizer state)
        exp_avg_sq: Second moments
        step: Optimizer step counter
        meta: Scalar run metadata (seed, epoch, ...)
    """

    params: Dict[str, np.ndarray]
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    meta: Dict[str, float] = field(default_factory=dict)

    @property
    def has_optimizer(self) -> bool:
        return bool(self.exp_avg) or self.step > 0

    def num_parameters(self, exclude_prefix: Optional[str] = None) -> int:
        """Total element count of the stored parameters."""
        return sum(
            a.size
            for n, a in self.params.items()
            if exclude_prefix is None or not n.startswith(exclude_prefix)
        )


def _param_arrays(params: Union[Module, Mapping[str, Any]]) -> List[Tuple[str, np.ndarray]]:
    if isinstance(params, Module):
        return [(n, p.data) for n, p in params.named_parameters()]
    return [(n, np.asarray(getattr(v, "data", v))) for n, v in params.items()]


def checkpoint_entries(
    params: Union[Module, Mapping[str, Any]],
    optimizer: Any = None,
    meta: Optional[Mapping[str, float]] = None,
) -> List[Tuple[str, np.ndarray]]:
    """
    Flatten a model (or name -> array mapping), an optional optimizer state and
    metadata into archive entries.

    The optimizer is anything with exp_avg / exp_avg_sq dicts and a step counter.
    """
    entries = [(PARAM_PREFIX + n, a) for n, a in _param_arrays(params)]
    if optimizer is not None:
        entries.extend((EXP_AVG_PREFIX + n, a) for n, a in optimizer.exp_avg.items())
        entries.extend((EXP_AVG_SQ_PREFIX + n, a) for n, a in optimizer.exp_avg_sq.items())
        entries.append((STEP_ENTRY, np.array(optimizer.step, dtype=np.float64)))
    for key, value in (meta or {}).items():
        entries.append((META_PREFIX + key, np.array(value, dtype=np.float64)))
    return entries


def save_checkpoint(
    path: PathLike,
    params: Union[Module, Mapping[str, Any]],
    optimizer: Any = None,
    meta: Optional[Mapping[str, float]] = None,
) -> Path:
    """
    Write a checkpoint.

    Args:
        path: Destination file
        params: Model or mapping of parameter arrays
        optimizer: Optional optimizer state (moments + step)
        meta: Optional scalar metadata

    Returns:
        Written path
    """
    entries = checkpoint_entries(params, optimizer, meta)
    path = save_archive(path, entries)
    logger.info("saved checkpoint %s (%d tensors)", path, len(entries))
    return path


def split_entries(tensors: Mapping[str, np.ndarray]) -> Checkpoint:
    """
    Sort raw archive entries into a Checkpoint.

    Raises:
        ArchiveError: Entry outside the checkpoint namespaces, or no parameters
    """
    ckpt = Checkpoint(params={})
    for name, array in tensors.items():
        if name.startswith(PARAM_PREFIX):
            ckpt.params[name[len(PARAM_PREFIX) :]] = array
        elif name.startswith(EXP_AVG_SQ_PREFIX):
            ckpt.exp_avg_sq[name[len(EXP_AVG_SQ_PREFIX) :]] = array
        elif name.startswith(EXP_AVG_PREFIX):
            ckpt.exp_avg[name[len(EXP_AVG_PREFIX) :]] = array
        elif name == STEP_ENTRY:
            ckpt.step = int(array)
        elif name.startswith(META_PREFIX):
            ckpt.meta[name[len(META_PREFIX) :]] = float(array)
        else:
            raise ArchiveError(f"unexpected entry '{name}': not a checkpoint")
    if not ckpt.params:
        raise ArchiveError("archive holds no parameters: not a checkpoint")
    return ckpt


def restore_parameters(model: Module, checkpoint: Checkpoint) -> None:
    """
    Copy checkpoint parameters into an instantiated model.

    Every model parameter must be present with the same shape; stored values
    are cast to the model's dtype. Checkpoint entries the model does not own
    (auxiliary heads of a run with lambda_aux > 0, say) are ignored.

    Raises:
        CheckpointMismatchError: First missing or wrongly shaped tensor
    """
    named = list(model.named_parameters())
    for name, param in named:
        stored = checkpoint.params.get(name)
        if stored is None:
            raise CheckpointMismatchError(f"checkpoint has no tensor '{name}'", name)
        if stored.shape != param.shape:
            raise CheckpointMismatchError(
                f"shape mismatch for '{name}': checkpoint {stored.shape}, model {param.shape}",
                name,
            )
    for name, param in named:
        param.data = checkpoint.params[name].astype(param.dtype, copy=True)
    extra = set(checkpoint.params) - {n for n, _ in named}
    if extra:
        logger.debug("ignored %d checkpoint tensors not owned by the model", len(extra))


def load_checkpoint(path: PathLike, model: Optional[Module] = None) -> Checkpoint:
    """
    Read a checkpoint and, when a model is given, load its parameters.

    Args:
        path: Checkpoint file
        model: Optional instantiated model to validate against and fill

    Returns:
        Decoded checkpoint

    Raises:
        ArchiveError: Not a checkpoint, bad version, truncated file
        CheckpointMismatchError: Model and checkpoint disagree
    """
    ckpt = split_entries(load_archive(path))
    if model is not None:
        restore_parameters(model, ckpt)
    logger.debug("loaded checkpoint %s at step %d", path, ckpt.step)
    return ckpt
