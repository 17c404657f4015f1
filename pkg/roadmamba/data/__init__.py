"""
Dataset generation, tensor archives, checkpoints and run configuration.
"""

from .archive import TensorArchiveReader, decode_archive, encode_archive, load_archive, save_archive
from .checkpoint import Checkpoint, load_checkpoint, restore_parameters, save_checkpoint
from .config import RunConfig, load_run_config, parse_run_config
from .synthetic import (
    FACTORS,
    Dataset,
    SyntheticSpec,
    class_id,
    decompose,
    generate_dataset,
    load_split,
    render_dataset,
    render_sample,
)

__all__ = [
    "TensorArchiveReader",
    "encode_archive",
    "decode_archive",
    "save_archive",
    "load_archive",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "restore_parameters",
    "RunConfig",
    "parse_run_config",
    "load_run_config",
    "FACTORS",
    "Dataset",
    "SyntheticSpec",
    "class_id",
    "decompose",
    "render_sample",
    "render_dataset",
    "generate_dataset",
    "load_split",
]
