"""
Run configuration files.

Grammar (UTF-8):

    # comment
    key = value   # trailing comment

Keys are the field names of RunConfig; unknown keys are an error so typos
do not silently fall back to defaults. Values are coerced to the field type.

Example:
    variant = micro
    batch_size = 32
    total_steps = 2000
    aggregator_assignment = GCLT
"""

from __future__ import annotations

import logging
import typing
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from ..backbone import BackboneConfig, backbone_config
from ..constants import (
    AUX_LAMBDA,
    BASE_LR,
    NUM_CLASSES,
    REFERENCE_BATCH,
    WARMUP_FRAC,
    WEIGHT_DECAY,
    WINDOW_SIZE,
)
from ..errors import ConfigError

logger = logging.getLogger(__name__)

_PRECISIONS = {"float32": np.float32, "float64": np.float64}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class RunConfig:
    """
    Everything a train/eval/bench/ablate run needs.

    Attributes:
        variant: Backbone variant name (tiny/small/base/micro)
        image_side: Input side in pixels
        num_classes: Classifier outputs
        batch_size: Samples per optimizer step
        base_lr: Learning rate at the reference batch of 32
        warmup_frac: Fraction of total_steps spent in linear warmup
        total_steps: Optimizer steps
        lambda_aux: Auxiliary loss weight (0 disables aux heads)
        window_size: Local-scan window side
        seed: Seed of initialization, data order and window selection
        aggregator_assignment: GCLT, GLTC or GTLC
        scan_variant: dual, global_only or local_only
        use_daf: False replaces DAF with sum + LayerNorm
        min_lr: Learning rate at the end of the cosine
        weight_decay: Decoupled AdamW weight decay
        scale_lr: Apply the linear scaling rule base_lr * batch_size / 32
        eval_interval: Steps between history rows (0: only at the end)
        checkpoint_interval: Steps between checkpoints (0: only at the end)
        eval_samples: Cap on eval-split samples per history row (0: all)
        precision: float32, or float64 for bitwise-reproducible verification runs
        data_dir: Directory written by gen-data
        scan_path: parallel or sequential selective-scan evaluation
    """

    variant: str = "micro"
    image_side: int = 64
    num_classes: int = NUM_CLASSES
    batch_size: int = REFERENCE_BATCH
    base_lr: float = BASE_LR
    warmup_frac: float = WARMUP_FRAC
    total_steps: int = 2000
    lambda_aux: float = AUX_LAMBDA
    window_size: int = WINDOW_SIZE
    seed: int = 0
    aggregator_assignment: str = "GCLT"
    scan_variant: str = "dual"
    use_daf: bool = True
    min_lr: float = 0.0
    weight_decay: float = WEIGHT_DECAY
    scale_lr: bool = True
    eval_interval: int = 100
    checkpoint_interval: int = 0
    eval_samples: int = 0
    precision: str = "float32"
    data_dir: str = "data"
    scan_path: str = "parallel"

    @property
    def peak_lr(self) -> float:
        """Learning rate after warmup (linear scaling rule applied)."""
        if self.scale_lr:
            return self.base_lr * self.batch_size / REFERENCE_BATCH
        return self.base_lr

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_frac * self.total_steps))

    @property
    def dtype(self) -> Any:
        return _PRECISIONS[self.precision]

    def backbone(self) -> BackboneConfig:
        """
        Network configuration for this run.

        Raises:
            ConfigError: Unknown variant or invalid network settings
        """
        return backbone_config(
            self.variant,
            image_side=self.image_side,
            num_classes=self.num_classes,
            lambda_aux=self.lambda_aux,
            window_size=self.window_size,
            variant=self.scan_variant,
            assignment=self.aggregator_assignment,
            use_daf=self.use_daf,
            scan_path=self.scan_path,
        )

    def validate(self) -> None:
        """
        Raises:
            ConfigError: Any out-of-range value
        """
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ConfigError("warmup_frac must lie in [0, 1]")
        if self.base_lr <= 0 or self.min_lr < 0 or self.min_lr > self.peak_lr:
            raise ConfigError("need base_lr > 0 and 0 <= min_lr <= peak lr")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if min(self.eval_interval, self.checkpoint_interval, self.eval_samples) < 0:
            raise ConfigError("intervals and eval_samples must be >= 0")
        if self.precision not in _PRECISIONS:
            raise ConfigError(f"precision must be one of {', '.join(_PRECISIONS)}")
        self.backbone()

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Validated copy with some fields replaced."""
        config = replace(self, **overrides)
        config.validate()
        return config

    def to_text(self) -> str:
        """Render in the file grammar (parse_run_config round-trips it)."""
        return "".join(f"{k} = {_format(v)}\n" for k, v in asdict(self).items())


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(key: str, raw: str, kind: Any, where: str) -> Any:
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: '{key}' expects {kind.__name__}, got '{raw}'") from None
    return raw


def parse_run_config(text: str, source: str = "<string>") -> RunConfig:
    """
    Parse config text.

    Args:
        text: File contents
        source: Name used in error messages

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: Syntax error, unknown or repeated key, ill-typed value
    """
    types = typing.get_type_hints(RunConfig)
    known = {f.name for f in fields(RunConfig)}
    values: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"{where}: expected 'key = value', got '{line}'")
        if key not in known:
            raise ConfigError(f"{where}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{where}: '{key}' set twice")
        values[key] = _coerce(key, raw, types[key], where)
    config = RunConfig(**values)
    config.validate()
    logger.debug("run config from %s: %s", source, values)
    return config


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Read and validate a run-config file.

    Raises:
        ConfigError: Invalid contents
        OSError: Unreadable file
    """
    path = Path(path)
    return parse_run_config(path.read_text(encoding="utf-8"), source=str(path))
