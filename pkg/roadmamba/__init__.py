"""
roadmamba - desk-scale RoadMamba (dual global/local state-space vision
backbone) in numpy.

Basic usage:
    import numpy as np
    from roadmamba import Mode, RoadMamba, backbone_config

    config = backbone_config("micro")
    model = RoadMamba(config, rng=np.random.default_rng(0))
    out = model.forward(images, Mode.EVAL)        # images: [B, 64, 64, 3]
    predictions = out.logits.data.argmax(axis=-1)

Command line:
    roadmamba gen-data --out data --n-train 10000 --n-eval 2000 --seed 0
    roadmamba train --config run.cfg --out run.rmba
"""

__version__ = "0.1.0"

from .backbone import (
    VARIANTS,
    BackboneConfig,
    RoadMamba,
    SelectionContext,
    backbone_config,
    count_params,
    estimate_flops,
    estimate_flops_breakdown,
)
from .dualssm import AggregatorAssignment, DualSsmBlock, DualSsmBlockConfig, ScanVariant
from .errors import (
    ArchiveError,
    CheckpointMismatchError,
    ConfigError,
    DivergenceError,
    GraphError,
    NumericalError,
    RoadMambaError,
    ShapeError,
)
from .scan2d import Mode

__all__ = [
    "__version__",
    "VARIANTS",
    "BackboneConfig",
    "RoadMamba",
    "SelectionContext",
    "backbone_config",
    "count_params",
    "estimate_flops",
    "estimate_flops_breakdown",
    "AggregatorAssignment",
    "DualSsmBlock",
    "DualSsmBlockConfig",
    "ScanVariant",
    "Mode",
    "RoadMambaError",
    "ShapeError",
    "GraphError",
    "NumericalError",
    "ConfigError",
    "ArchiveError",
    "CheckpointMismatchError",
    "DivergenceError",
]
