"""
DualSSM block and Dual Attention Fusion.

Block pipeline on a [B, H, W, C] map:

    LayerNorm -> Linear C->4C -> split (ssm path 2C | gate 2C)
    ssm path -> depthwise 3x3 -> SiLU -> {global scan, local scan}
             -> DAF (attention per stream, sum, LayerNorm)
    fused * SiLU(gate) -> Linear 2C->C -> + residual
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from .autograd import Conv2d, DepthwiseConv2d, LayerNorm, Linear, Module, Tensor, ops
from .constants import (
    ATTENTION_REDUCTION,
    DWCONV_KERNEL,
    EXPANSION,
    SPATIAL_KERNEL,
    WINDOW_SIZE,
)
from .errors import ConfigError, ShapeError
from .scan2d import Mode, ScanPair, WindowGrid, global_scan, local_scan, select_windows
from .ssm import SelectiveSsm


class ScanVariant(Enum):
    """Which scanning branches a block runs."""

    DUAL = "dual"
    GLOBAL_ONLY = "global_only"
    LOCAL_ONLY = "local_only"


class AggregatorAssignment(Enum):
    """
    Which attention each stream goes through.

    GCLT: global -> channel, local -> spatial (token).
    GTLC: global -> spatial, local -> channel.
    GLTC: both streams -> channel then spatial.
    """

    GCLT = "GCLT"
    GLTC = "GLTC"
    GTLC = "GTLC"


def parse_enum(enum_cls, value):
    """Look up an enum member by value or name, case-insensitively."""
    if isinstance(value, enum_cls):
        return value
    text = str(value).strip()
    for member in enum_cls:
        if text.lower() in (member.value.lower(), member.name.lower()):
            return member
    choices = ", ".join(m.value for m in enum_cls)
    raise ConfigError(f"unknown {enum_cls.__name__} '{value}' (expected one of {choices})")


@dataclass
class DualSsmBlockConfig:
    """
    Hyperparameters of one DualSSM block.

    Attributes:
        channels: Block width C
        expansion: Input projection factor (C -> expansion * C, split in half)
        window_size: Local window side M
        reduction: Channel-attention reduction r
        d_state: SSM state size N
        dt_rank: Rank of the timestep projection; C / 4 when None
        variant: Scanning branches
        assignment: DAF aggregator assignment
        use_daf: False replaces DAF with a plain sum + LayerNorm
        scan_path: "parallel" or "sequential"
    """

    channels: int
    expansion: int = EXPANSION
    window_size: int = WINDOW_SIZE
    reduction: int = ATTENTION_REDUCTION
    d_state: int = 12
    dt_rank: Optional[int] = None
    variant: ScanVariant = ScanVariant.DUAL
    assignment: AggregatorAssignment = AggregatorAssignment.GCLT
    use_daf: bool = True
    scan_path: str = "parallel"

    def __post_init__(self):
        self.variant = parse_enum(ScanVariant, self.variant)
        self.assignment = parse_enum(AggregatorAssignment, self.assignment)

    @property
    def inner(self) -> int:
        """Width of the SSM and gate paths (2C)."""
        return self.expansion * self.channels // 2

    @property
    def rank(self) -> int:
        return self.dt_rank if self.dt_rank is not None else max(1, -(-self.channels // 4))

    def validate(self) -> None:
        """
        Raises:
            ConfigError: Any field out of range
        """
        if self.channels < 1 or self.channels % self.reduction != 0:
            raise ConfigError(
                f"channels {self.channels} must be positive and divisible by "
                f"reduction {self.reduction}"
            )
        if self.expansion < 2 or self.expansion % 2 != 0:
            raise ConfigError(f"expansion must be an even integer >= 2, got {self.expansion}")
        if self.window_size < 1 or self.d_state < 1 or self.rank < 1:
            raise ConfigError("window_size, d_state and dt_rank must all be >= 1")
        if self.scan_path not in ("parallel", "sequential"):
            raise ConfigError(f"unknown scan path '{self.scan_path}'")


# =============================================================================
# Attention
# =============================================================================


class ChannelAttention(Module):
    """
    Per-channel recalibration: w_c = sigmoid(MLP(avgpool) + MLP(maxpool)).

    The two-layer MLP (D -> D/r -> D, ReLU between) is shared by both pooled
    vectors.
    """

    def __init__(self, channels: int, reduction: int, rng: Optional[np.random.Generator] = None):
        if channels % reduction != 0:
            raise ConfigError(f"channels {channels} not divisible by reduction {reduction}")
        self.channels = channels
        self.fc1 = Linear(channels, channels // reduction, bias=False, rng=rng)
        self.fc2 = Linear(channels // reduction, channels, bias=False, rng=rng)

    def _mlp(self, u: Tensor) -> Tensor:
        return self.fc2(ops.relu(self.fc1(u)))

    def weights(self, y: Tensor) -> Tensor:
        """Channel multipliers, shape [B, 1, 1, D], strictly inside (0, 1)."""
        if y.shape[-1] != self.channels:
            raise ShapeError(f"channel attention built for {self.channels} channels, got {y.shape}")
        u_avg = y.mean(axis=(1, 2))
        u_max = y.max(axis=(1, 2))
        w = ops.sigmoid(self._mlp(u_avg) + self._mlp(u_max))
        return w.reshape(y.shape[0], 1, 1, self.channels)

    def __call__(self, y: Tensor) -> Tensor:
        return y * self.weights(y)

    def macs(self, height: int, width: int) -> int:
        return 2 * (self.fc1.macs(1) + self.fc2.macs(1))


class SpatialAttention(Module):
    """Per-position recalibration: M_s = sigmoid(conv7x7([mean_c; max_c]))."""

    def __init__(
        self, kernel_size: int = SPATIAL_KERNEL, rng: Optional[np.random.Generator] = None
    ):
        self.conv = Conv2d(2, 1, kernel_size, padding=(kernel_size - 1) // 2, bias=True, rng=rng)

    def weights(self, y: Tensor) -> Tensor:
        """Spatial map, shape [B, H, W, 1], strictly inside (0, 1)."""
        m_avg = y.mean(axis=-1, keepdims=True)
        m_max = y.max(axis=-1, keepdims=True)
        return ops.sigmoid(self.conv(ops.concat([m_avg, m_max], axis=-1)))

    def __call__(self, y: Tensor) -> Tensor:
        return y * self.weights(y)

    def macs(self, height: int, width: int) -> int:
        return self.conv.macs(height, width)


class StreamAttention(Module):
    """Attentions applied to one stream, in order."""

    def __init__(self, stages: List[Module]):
        self.stages = stages

    def __call__(self, y: Tensor) -> Tensor:
        for stage in self.stages:
            y = stage(y)
        return y

    def macs(self, height: int, width: int) -> int:
        return sum(stage.macs(height, width) for stage in self.stages)


class DualAttentionFusion(Module):
    """
    Y_fused = LayerNorm(att_g(Y_global) + att_l(Y_local)).

    Attentions per stream follow the aggregator assignment. With use_daf off
    the attentions are skipped and the streams are summed directly.
    """

    def __init__(
        self,
        channels: int,
        reduction: int = ATTENTION_REDUCTION,
        assignment: AggregatorAssignment = AggregatorAssignment.GCLT,
        use_daf: bool = True,
        with_local: bool = True,
        rng: Optional[np.random.Generator] = None,
    ):
        self.assignment = parse_enum(AggregatorAssignment, assignment)
        self.use_daf = use_daf
        self.global_attention: Optional[StreamAttention] = None
        self.local_attention: Optional[StreamAttention] = None
        if use_daf:

            def channel() -> ChannelAttention:
                return ChannelAttention(channels, reduction, rng=rng)

            def spatial() -> SpatialAttention:
                return SpatialAttention(rng=rng)

            if self.assignment is AggregatorAssignment.GCLT:
                self.global_attention = StreamAttention([channel()])
                self.local_attention = StreamAttention([spatial()])
            elif self.assignment is AggregatorAssignment.GTLC:
                self.global_attention = StreamAttention([spatial()])
                self.local_attention = StreamAttention([channel()])
            else:
                self.global_attention = StreamAttention([channel(), spatial()])
                self.local_attention = StreamAttention([channel(), spatial()])
            if not with_local:
                self.local_attention = None
        self.norm = LayerNorm(channels)

    def attend(self, y_global: Tensor, y_local: Optional[Tensor]) -> Tensor:
        """Pre-normalization sum of the attended streams."""
        if y_local is not None and y_local.shape != y_global.shape:
            raise ShapeError(f"stream shapes differ: {y_global.shape} vs {y_local.shape}")
        g = self.global_attention(y_global) if self.global_attention else y_global
        if y_local is None:
            return g
        l_ = self.local_attention(y_local) if self.local_attention else y_local
        return g + l_

    def __call__(self, y_global: Tensor, y_local: Optional[Tensor]) -> Tensor:
        return self.norm(self.attend(y_global, y_local))

    def macs(self, height: int, width: int, with_local: bool = True) -> int:
        total = self.global_attention.macs(height, width) if self.global_attention else 0
        if with_local and self.local_attention:
            total += self.local_attention.macs(height, width)
        return total


def channel_attention(y_global: Tensor, attention: ChannelAttention) -> Tensor:
    """Y' = w_c * Y_global with w_c broadcast over spatial positions."""
    return attention(y_global)


def spatial_attention(y_local: Tensor, attention: SpatialAttention) -> Tensor:
    """Y' = M_s * Y_local with M_s broadcast over channels."""
    return attention(y_local)


def daf_fuse(y_global: Tensor, y_local: Optional[Tensor], fusion: DualAttentionFusion) -> Tensor:
    """
    Fuse the two streams with the fusion module's aggregator assignment.

    Raises:
        ShapeError: Stream shapes differ
    """
    return fusion(y_global, y_local)


# =============================================================================
# Block
# =============================================================================


@dataclass
class BranchTaps:
    """Pre-fusion branch outputs of one block; absent branches are None."""

    y_global: Optional[Tensor] = None
    y_local: Optional[Tensor] = None


@dataclass
class BlockOutput:
    y: Tensor
    taps: BranchTaps = field(default_factory=BranchTaps)


class DualSsmBlock(Module):
    """
    One DualSSM block.

    The global slot holds a whole-map scan (or, for the local_only variant,
    a second windowed scan with its own SSM); the local slot holds the
    windowed scan and is absent for global_only.
    """

    def __init__(self, config: DualSsmBlockConfig, rng: Optional[np.random.Generator] = None):
        config.validate()
        self.config = config
        c, e = config.channels, config.inner
        self.norm = LayerNorm(c)
        self.in_proj = Linear(c, 2 * e, bias=False, rng=rng)
        self.dwconv = DepthwiseConv2d(e, DWCONV_KERNEL, bias=True, rng=rng)
        self.global_ssm = SelectiveSsm(e, config.d_state, config.rank, rng=rng)
        self.local_ssm: Optional[SelectiveSsm] = None
        if config.variant is not ScanVariant.GLOBAL_ONLY:
            self.local_ssm = SelectiveSsm(e, config.d_state, config.rank, rng=rng)
        self.fusion = DualAttentionFusion(
            e,
            config.reduction,
            config.assignment,
            config.use_daf,
            with_local=self.local_ssm is not None,
            rng=rng,
        )
        self.out_proj = Linear(e, c, bias=False, rng=rng)

    def _grid(
        self, height: int, width: int, mode: Mode, rng: Optional[np.random.Generator]
    ) -> WindowGrid:
        base = WindowGrid.for_map(height, width, self.config.window_size)
        return select_windows(base.n_h, base.n_w, rng, mode, window=self.config.window_size)

    def __call__(
        self,
        x: Tensor,
        mode: Mode = Mode.EVAL,
        rng: Optional[np.random.Generator] = None,
    ) -> BlockOutput:
        """
        Args:
            x: Map [B, H, W, C]
            mode: TRAIN samples half the windows from rng; EVAL scans all of
                them and halves the local output
            rng: Window-selection stream (train mode)

        Returns:
            Output map with the input's shape, plus branch taps

        Raises:
            ConfigError: A dual/local_only block is missing its local SSM
            ShapeError: Channel count differs from the config
        """
        cfg = self.config
        if x.ndim != 4 or x.shape[-1] != cfg.channels:
            raise ShapeError(f"block expects [B, H, W, {cfg.channels}], got {x.shape}")
        if cfg.variant is not ScanVariant.GLOBAL_ONLY and self.local_ssm is None:
            raise ConfigError(f"{cfg.variant.value} block has no local-branch parameters")
        _, height, width, _ = x.shape
        e = cfg.inner

        z = self.in_proj(self.norm(x))
        s = ops.silu(self.dwconv(z[..., :e]))
        gate = z[..., e:]

        global_pair = ScanPair.shared(self.global_ssm)
        if cfg.variant is ScanVariant.LOCAL_ONLY:
            grid = self._grid(height, width, mode, rng)
            y_global = local_scan(s, global_pair, grid, cfg.scan_path)
        else:
            y_global = global_scan(s, global_pair, cfg.scan_path)
        y_local = None
        if self.local_ssm is not None:
            local_pair = ScanPair.shared(self.local_ssm)
            y_local = local_scan(s, local_pair, self._grid(height, width, mode, rng), cfg.scan_path)

        fused = self.fusion(y_global, y_local)
        y = x + self.out_proj(fused * ops.silu(gate))
        return BlockOutput(y=y, taps=BranchTaps(y_global=y_global, y_local=y_local))

    def macs(self, height: int, width: int) -> int:
        """Multiply-accumulates of one eval forward on an H x W map."""
        tokens = height * width
        total = self.in_proj.macs(tokens) + self.out_proj.macs(tokens)
        total += self.dwconv.macs(height, width)
        total += 2 * self.global_ssm.macs(tokens)
        if self.local_ssm is not None:
            total += 2 * self.local_ssm.macs(tokens)
        total += self.fusion.macs(height, width, with_local=self.local_ssm is not None)
        return total
