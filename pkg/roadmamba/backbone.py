"""
RoadMamba network assembly.

stem (4x4 / stride 4 conv) -> 4 stages of DualSSM blocks with patch merging
between them -> per-stage LayerNorm + global average pool -> concatenation ->
linear classifier. In train mode every block also feeds its pre-fusion branch
outputs to a pair of auxiliary classifiers.

Usage:
    config = backbone_config("micro")
    model = RoadMamba(config, rng=np.random.default_rng(0))
    out = model.forward(images, Mode.EVAL)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autograd import Conv2d, LayerNorm, Linear, Module, Tensor, as_tensor, ops
from .constants import (
    ATTENTION_REDUCTION,
    AUX_LAMBDA,
    NUM_CLASSES,
    STEM_PATCH,
    WINDOW_SIZE,
)
from .dualssm import (
    AggregatorAssignment,
    DualSsmBlock,
    DualSsmBlockConfig,
    ScanVariant,
    parse_enum,
)
from .errors import ConfigError, ShapeError
from .scan2d import Mode, selection_rng

logger = logging.getLogger(__name__)

NUM_STAGES = 4


@dataclass
class BackboneConfig:
    """
    Hyperparameters of a full network.

    Attributes:
        name: Variant name
        stem_channels: Stem output width (equals widths[0])
        widths: Channel width C_i of each stage
        depths: Number of DualSSM blocks in each stage
        image_side: Expected square input side
        num_classes: Classifier outputs
        lambda_aux: Auxiliary loss weight; 0 disables the auxiliary heads
        d_state: SSM state size
        window_size: Local window side
        reduction: Channel-attention reduction
        variant: Scanning branches of every block
        assignment: DAF aggregator assignment of every block
        use_daf: False replaces DAF with a plain sum + LayerNorm
        scan_path: "parallel" or "sequential"
    """

    name: str
    stem_channels: int
    widths: Tuple[int, ...]
    depths: Tuple[int, ...]
    image_side: int = 224
    num_classes: int = NUM_CLASSES
    lambda_aux: float = AUX_LAMBDA
    d_state: int = 12
    window_size: int = WINDOW_SIZE
    reduction: int = ATTENTION_REDUCTION
    variant: ScanVariant = ScanVariant.DUAL
    assignment: AggregatorAssignment = AggregatorAssignment.GCLT
    use_daf: bool = True
    scan_path: str = "parallel"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.depths = tuple(int(d) for d in self.depths)
        self.variant = parse_enum(ScanVariant, self.variant)
        self.assignment = parse_enum(AggregatorAssignment, self.assignment)

    @property
    def has_aux_heads(self) -> bool:
        return self.lambda_aux > 0

    @property
    def num_blocks(self) -> int:
        return sum(self.depths)

    @property
    def head_width(self) -> int:
        """Length of the concatenated multi-scale vector."""
        return sum(self.widths)

    def block_config(self, stage: int) -> DualSsmBlockConfig:
        return DualSsmBlockConfig(
            channels=self.widths[stage],
            window_size=self.window_size,
            reduction=self.reduction,
            d_state=self.d_state,
            variant=self.variant,
            assignment=self.assignment,
            use_daf=self.use_daf,
            scan_path=self.scan_path,
        )

    def stage_sides(self, image_side: Optional[int] = None) -> List[int]:
        """Spatial side of each stage's feature map (ceil through merges)."""
        side = (image_side or self.image_side) // STEM_PATCH
        sides = []
        for _ in range(NUM_STAGES):
            sides.append(side)
            side = math.ceil(side / 2)
        return sides

    def validate(self) -> None:
        """
        Raises:
            ConfigError: Wrong stage count, widths not doubling, or bad sizes
        """
        if len(self.widths) != NUM_STAGES or len(self.depths) != NUM_STAGES:
            raise ConfigError(f"a backbone has exactly {NUM_STAGES} stages")
        if self.stem_channels != self.widths[0]:
            raise ConfigError("stem_channels must equal the first stage width")
        for a, b in zip(self.widths, self.widths[1:]):
            if b != 2 * a:
                raise ConfigError(f"stage widths must double, got {self.widths}")
        if any(d < 1 for d in self.depths):
            raise ConfigError(f"every stage needs at least one block, got {self.depths}")
        if self.image_side < STEM_PATCH or self.image_side % STEM_PATCH != 0:
            raise ConfigError(f"image_side must be a positive multiple of {STEM_PATCH}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.lambda_aux < 0:
            raise ConfigError("lambda_aux must be >= 0")
        for stage in range(NUM_STAGES):
            self.block_config(stage).validate()


# =============================================================================
# Variant registry
# =============================================================================

VARIANTS: Dict[str, BackboneConfig] = {
    "tiny": BackboneConfig("tiny", 96, (96, 192, 384, 768), (1, 3, 6, 3)),
    "small": BackboneConfig("small", 96, (96, 192, 384, 768), (3, 3, 10, 3)),
    "base": BackboneConfig("base", 128, (128, 256, 512, 1024), (3, 3, 15, 3)),
    # desk-scale configuration, not one of the published sizes
    "micro": BackboneConfig(
        "micro", 16, (16, 32, 64, 128), (1, 1, 2, 1), image_side=64, d_state=4
    ),
}

_ALIASES = {
    "t": "tiny",
    "s": "small",
    "b": "base",
    "roadmamba-t": "tiny",
    "roadmamba-s": "small",
    "roadmamba-b": "base",
}


def backbone_config(name: str, **overrides) -> BackboneConfig:
    """
    Look up a variant by name (tiny/small/base/micro, T/S/B, roadmamba-t ...).

    Args:
        name: Variant name or alias
        **overrides: Fields to replace on the returned copy

    Raises:
        ConfigError: Unknown variant or invalid override
    """
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in VARIANTS:
        raise ConfigError(f"unknown variant '{name}' (expected one of {', '.join(VARIANTS)})")
    try:
        config = replace(VARIANTS[key], **overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    config.validate()
    return config


# =============================================================================
# Modules
# =============================================================================


class Stem(Module):
    """Non-overlapping 4x4 patch embedding followed by LayerNorm."""

    def __init__(
        self, channels: int, in_channels: int = 3, rng: Optional[np.random.Generator] = None
    ):
        self.conv = Conv2d(
            in_channels, channels, STEM_PATCH, stride=STEM_PATCH, bias=True, rng=rng
        )
        self.norm = LayerNorm(channels)

    def __call__(self, image: Tensor) -> Tensor:
        _, height, width, _ = image.shape
        if height % STEM_PATCH or width % STEM_PATCH:
            raise ShapeError(f"input side {height}x{width} is not divisible by {STEM_PATCH}")
        return self.norm(self.conv(image))

    def macs(self, image_side: int) -> int:
        side = image_side // STEM_PATCH
        return self.conv.macs(side, side)


class PatchMerging(Module):
    """2x2 neighborhood concatenation (C -> 4C), LayerNorm, Linear 4C -> 2C."""

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None):
        self.channels = channels
        self.norm = LayerNorm(4 * channels)
        self.reduction = Linear(4 * channels, 2 * channels, bias=False, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        _, height, width, channels = x.shape
        if height % 2 or width % 2:
            raise ShapeError(f"patch merging needs even spatial extents, got {height}x{width}")
        if channels != self.channels:
            raise ShapeError(f"patch merging built for {self.channels} channels, got {channels}")
        x0 = x[:, 0::2, 0::2, :]
        x1 = x[:, 1::2, 0::2, :]
        x2 = x[:, 0::2, 1::2, :]
        x3 = x[:, 1::2, 1::2, :]
        return self.reduction(self.norm(ops.concat([x0, x1, x2, x3], axis=-1)))

    def macs(self, height: int, width: int) -> int:
        return self.reduction.macs(math.ceil(height / 2) * math.ceil(width / 2))


class Stage(Module):
    """Blocks at one resolution, optionally followed by patch merging."""

    def __init__(
        self,
        config: DualSsmBlockConfig,
        depth: int,
        downsample: bool,
        rng: Optional[np.random.Generator] = None,
    ):
        self.blocks = [DualSsmBlock(config, rng=rng) for _ in range(depth)]
        self.downsample = PatchMerging(config.channels, rng=rng) if downsample else None


@dataclass
class StageTap:
    """Stage output F_i and its pooled vector v_i = GAP(LayerNorm(F_i))."""

    feature: Tensor
    pooled: Tensor


class AuxHead(Module):
    """Train-only classifiers on a block's pooled global and local branch outputs."""

    def __init__(
        self,
        inner: int,
        num_classes: int,
        with_local: bool = True,
        rng: Optional[np.random.Generator] = None,
    ):
        self.global_fc = Linear(inner, num_classes, bias=True, rng=rng)
        self.local_fc = Linear(inner, num_classes, bias=True, rng=rng) if with_local else None

    def __call__(
        self, y_global: Tensor, y_local: Optional[Tensor]
    ) -> Tuple[Tensor, Optional[Tensor]]:
        g = self.global_fc(y_global.mean(axis=(1, 2)))
        if y_local is None or self.local_fc is None:
            return g, None
        return g, self.local_fc(y_local.mean(axis=(1, 2)))


class MultiScaleHead(Module):
    """Concatenate the four pooled stage vectors and classify."""

    def __init__(
        self, widths: Sequence[int], num_classes: int, rng: Optional[np.random.Generator] = None
    ):
        self.widths = tuple(widths)
        self.fc = Linear(sum(self.widths), num_classes, bias=True, rng=rng)

    def fuse(self, taps: Sequence[StageTap]) -> Tensor:
        """v_ms = v_1 || v_2 || v_3 || v_4."""
        if len(taps) != len(self.widths):
            raise ShapeError(f"head expects {len(self.widths)} stage taps, got {len(taps)}")
        for tap, width in zip(taps, self.widths):
            if tap.pooled.shape[-1] != width:
                raise ShapeError(f"stage tap has width {tap.pooled.shape[-1]}, expected {width}")
        return ops.concat([tap.pooled for tap in taps], axis=-1)

    def __call__(self, taps: Sequence[StageTap]) -> Tensor:
        return self.fc(self.fuse(taps))


def multiscale_head(taps: Sequence[StageTap], head: MultiScaleHead) -> Tensor:
    """Logits [B, N_cls] from four stage taps."""
    return head(taps)


@dataclass(frozen=True)
class SelectionContext:
    """Seed lineage for window selection: (seed, epoch, step)."""

    seed: int = 0
    epoch: int = 0
    step: int = 0


@dataclass
class ForwardOutput:
    """
    Attributes:
        logits: Main classifier output [B, N_cls]
        aux_logits: Per block (global, local) auxiliary logits; empty at eval
        taps: Per stage outputs and pooled vectors
    """

    logits: Tensor
    aux_logits: List[Tuple[Tensor, Optional[Tensor]]] = field(default_factory=list)
    taps: List[StageTap] = field(default_factory=list)


class RoadMamba(Module):
    """
    Full classifier.

    Parameter names are dotted attribute paths (stem.conv.weight,
    stages.0.blocks.0.in_proj.weight, ...). Auxiliary heads live under
    aux_heads and are not part of the reported parameter count.
    """

    def __init__(self, config: BackboneConfig, rng: Optional[np.random.Generator] = None):
        config.validate()
        self.config = config
        self.stem = Stem(config.stem_channels, rng=rng)
        self.stages = [
            Stage(config.block_config(i), config.depths[i], downsample=i < NUM_STAGES - 1, rng=rng)
            for i in range(NUM_STAGES)
        ]
        self.tap_norms = [LayerNorm(width) for width in config.widths]
        self.head = MultiScaleHead(config.widths, config.num_classes, rng=rng)
        self.aux_heads: List[AuxHead] = []
        if config.has_aux_heads:
            with_local = config.variant is not ScanVariant.GLOBAL_ONLY
            for i in range(NUM_STAGES):
                inner = config.block_config(i).inner
                self.aux_heads.extend(
                    AuxHead(inner, config.num_classes, with_local=with_local, rng=rng)
                    for _ in range(config.depths[i])
                )

    def forward(
        self,
        image: Tensor,
        mode: Mode = Mode.EVAL,
        selection: Optional[SelectionContext] = None,
    ) -> ForwardOutput:
        """
        Run the network.

        Args:
            image: Batch [B, H, W, 3]
            mode: TRAIN samples local windows and evaluates auxiliary heads;
                EVAL never touches the auxiliary heads
            selection: Seed lineage for train-mode window selection

        Returns:
            ForwardOutput with logits, aux logits and stage taps
        """
        image = as_tensor(image)
        if image.ndim != 4 or image.shape[-1] != 3:
            raise ShapeError(f"expected images [B, H, W, 3], got {image.shape}")
        train = mode is Mode.TRAIN
        selection = selection or SelectionContext()
        use_aux = train and self.config.has_aux_heads
        heads = iter(self.aux_heads) if use_aux else None

        x = self.stem(image)
        taps: List[StageTap] = []
        aux: List[Tuple[Tensor, Optional[Tensor]]] = []
        for i, stage in enumerate(self.stages):
            for j, block in enumerate(stage.blocks):
                rng = (
                    selection_rng(selection.seed, selection.epoch, selection.step, i, j)
                    if train
                    else None
                )
                out = block(x, mode, rng)
                x = out.y
                if heads is not None:
                    aux.append(next(heads)(out.taps.y_global, out.taps.y_local))
            pooled = self.tap_norms[i](x).mean(axis=(1, 2))
            taps.append(StageTap(feature=x, pooled=pooled))
            if stage.downsample is not None:
                x = stage.downsample(x)
        logits = self.head(taps)
        return ForwardOutput(logits=logits, aux_logits=aux, taps=taps)

    __call__ = forward

    def backbone_parameters(self) -> List[Tuple[str, Tensor]]:
        """Named parameters used at inference (auxiliary heads excluded)."""
        return [(n, p) for n, p in self.named_parameters() if not n.startswith("aux_heads.")]

    def macs(self, image_side: Optional[int] = None) -> Dict[str, int]:
        """Eval-mode multiply-accumulates per component for one image."""
        side = image_side or self.config.image_side
        sides = self.config.stage_sides(side)
        breakdown = {"stem": self.stem.macs(side)}
        for i, stage in enumerate(self.stages):
            s = sides[i]
            breakdown[f"stage{i + 1}.blocks"] = sum(block.macs(s, s) for block in stage.blocks)
            if stage.downsample is not None:
                breakdown[f"stage{i + 1}.merge"] = stage.downsample.macs(s, s)
        breakdown["head"] = self.head.fc.macs(1)
        return breakdown


def count_params(config: BackboneConfig) -> int:
    """
    Exact parameter count of the inference network (auxiliary heads excluded).

    The network is instantiated with zero-filled weights.
    """
    model = RoadMamba(config, rng=None)
    return sum(p.size for _, p in model.backbone_parameters())


def estimate_flops_breakdown(
    config: BackboneConfig, image_side: Optional[int] = None, flops_per_mac: float = 1.0
) -> Dict[str, float]:
    """Per-component GFLOPs of one eval forward."""
    model = RoadMamba(config, rng=None)
    return {k: v * flops_per_mac / 1e9 for k, v in model.macs(image_side).items()}


def estimate_flops(
    config: BackboneConfig, image_side: Optional[int] = None, flops_per_mac: float = 1.0
) -> float:
    """
    Analytic GFLOPs of one eval forward.

    Dense layers count one FLOP per multiply-accumulate (flops_per_mac=2
    doubles everything); each selective scan costs 9 L D N per direction.

    Args:
        config: Network configuration
        image_side: Input side; defaults to config.image_side
        flops_per_mac: FLOPs charged per multiply-accumulate
    """
    total = sum(estimate_flops_breakdown(config, image_side, flops_per_mac).values())
    logger.debug("%s at %s px: %.3f GFLOPs", config.name, image_side or config.image_side, total)
    return total
