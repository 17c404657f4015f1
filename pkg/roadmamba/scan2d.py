"""
Scanning strategies that turn 2D feature maps into SSM sequences.

Global scanning flattens the whole map row-major and column-major and sums
the two directional SSM outputs. Local scanning tiles the map into M x M
windows, scans a random half of them (all of them at eval, scaled by 0.5)
in both orders, and leaves the rest exactly zero.

Maps are channels-last [B, H, W, D].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, Optional, Sequence, Tuple

import numpy as np

from .autograd import Tensor, ops
from .constants import WINDOW_SIZE
from .errors import ConfigError, ShapeError
from .ssm import SelectiveSsm


class LayoutKind(Enum):
    """Order in which a 2D grid is read into a sequence."""

    ROW_MAJOR = "row_major"
    COLUMN_MAJOR = "column_major"


class Mode(Enum):
    """Forward mode; only train mode samples windows and evaluates aux heads."""

    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class ScanLayout:
    """Bijection between (row, col) grid positions and sequence indices."""

    kind: LayoutKind
    H: int
    W: int

    def order(self) -> np.ndarray:
        """Row-major grid position read at each sequence index."""
        grid = np.arange(self.H * self.W).reshape(self.H, self.W)
        if self.kind is LayoutKind.COLUMN_MAJOR:
            grid = grid.T
        return grid.reshape(-1)

    def inverse(self) -> np.ndarray:
        """Sequence index holding each row-major grid position."""
        return np.argsort(self.order())


def flatten(x: Tensor, layout: ScanLayout) -> Tensor:
    """
    Read a map into a sequence.

    Args:
        x: Map [B, H, W, D]
        layout: Reading order and grid size

    Returns:
        Sequence [B, H*W, D]
    """
    batch, height, width, depth = x.shape
    if (height, width) != (layout.H, layout.W):
        raise ShapeError(f"layout is {layout.H}x{layout.W}, map is {height}x{width}")
    if layout.kind is LayoutKind.COLUMN_MAJOR:
        x = x.transpose(0, 2, 1, 3)
    return x.reshape(batch, height * width, depth)


def unflatten(seq: Tensor, layout: ScanLayout) -> Tensor:
    """Inverse of flatten: [B, H*W, D] back to [B, H, W, D]."""
    batch, _, depth = seq.shape
    if layout.kind is LayoutKind.COLUMN_MAJOR:
        return seq.reshape(batch, layout.W, layout.H, depth).transpose(0, 2, 1, 3)
    return seq.reshape(batch, layout.H, layout.W, depth)


@dataclass
class ScanPair:
    """
    SSM units for the two reading orders.

    Both fields hold the same unit when weights are shared.
    """

    row: SelectiveSsm
    col: SelectiveSsm

    @classmethod
    def shared(cls, ssm: SelectiveSsm) -> "ScanPair":
        return cls(row=ssm, col=ssm)

    def swapped(self) -> "ScanPair":
        return ScanPair(row=self.col, col=self.row)

    @property
    def width(self) -> int:
        return self.row.d_inner


def _bidirectional(x: Tensor, pair: ScanPair, path: str) -> Tensor:
    """SSM_row(row-major x) + SSM_col(column-major x), mapped back to [B, H, W, D]."""
    _, height, width, depth = x.shape
    if depth != pair.width:
        raise ShapeError(f"SSM lane width {pair.width} does not match map depth {depth}")
    rows = ScanLayout(LayoutKind.ROW_MAJOR, height, width)
    cols = ScanLayout(LayoutKind.COLUMN_MAJOR, height, width)
    y_h = unflatten(pair.row(flatten(x, rows), path=path), rows)
    y_v = unflatten(pair.col(flatten(x, cols), path=path), cols)
    return y_h + y_v


def global_scan(x: Tensor, pair: ScanPair, path: str = "parallel") -> Tensor:
    """
    Whole-map scan in both orders, summed: Y = Y_h + Y_v.

    Raises:
        ShapeError: SSM width differs from the map depth
    """
    return _bidirectional(x, pair, path)


# =============================================================================
# Windows
# =============================================================================


@dataclass(frozen=True)
class WindowGrid:
    """
    Non-overlapping M x M tiling of a (bottom/right zero-padded) map.

    Attributes:
        window: Window side M
        n_h: Windows per column, ceil(H / M)
        n_w: Windows per row, ceil(W / M)
        selected: (p, q) indices of the windows to scan
        scale: Multiplier applied to the reassembled output
    """

    window: int
    n_h: int
    n_w: int
    selected: FrozenSet[Tuple[int, int]] = field(default_factory=frozenset)
    scale: float = 1.0

    @classmethod
    def for_map(cls, height: int, width: int, window: int = WINDOW_SIZE) -> "WindowGrid":
        """Grid covering an H x W map with nothing selected."""
        if window < 1:
            raise ConfigError(f"window size must be >= 1, got {window}")
        return cls(window=window, n_h=math.ceil(height / window), n_w=math.ceil(width / window))

    @property
    def count(self) -> int:
        return self.n_h * self.n_w

    def with_selection(
        self, selected: Sequence[Tuple[int, int]], scale: float = 1.0
    ) -> "WindowGrid":
        chosen = frozenset((int(p), int(q)) for p, q in selected)
        for p, q in chosen:
            if not (0 <= p < self.n_h and 0 <= q < self.n_w):
                raise ShapeError(f"window ({p}, {q}) outside a {self.n_h}x{self.n_w} grid")
        return WindowGrid(self.window, self.n_h, self.n_w, chosen, scale)

    def flat_selection(self) -> np.ndarray:
        """Selected windows as sorted row-major window indices p * n_w + q."""
        return np.array(sorted(p * self.n_w + q for p, q in self.selected), dtype=np.intp)


def selection_rng(
    seed: int, epoch: int = 0, step: int = 0, stage: int = 0, block: int = 0
) -> np.random.Generator:
    """Window-selection stream derived from (seed, epoch, step, stage, block)."""
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, step, stage, block]))


def select_windows(
    n_h: int,
    n_w: int,
    rng: Optional[np.random.Generator],
    mode: Mode = Mode.TRAIN,
    window: int = WINDOW_SIZE,
) -> WindowGrid:
    """
    Choose which windows the local branch scans.

    Train mode draws ceil(n_h * n_w / 2) windows uniformly without
    replacement; eval mode selects every window with output scale 0.5.

    Raises:
        ConfigError: Train mode without an rng stream
    """
    grid = WindowGrid(window=window, n_h=n_h, n_w=n_w)
    all_windows = [(p, q) for p in range(n_h) for q in range(n_w)]
    if mode is Mode.EVAL:
        return grid.with_selection(all_windows, scale=0.5)
    if rng is None:
        raise ConfigError("train-mode window selection needs a seeded rng stream")
    k = math.ceil(grid.count / 2)
    picks = rng.choice(grid.count, size=k, replace=False)
    return grid.with_selection([all_windows[i] for i in picks])


def partition_windows(x: Tensor, window: int) -> Tensor:
    """
    Split a map into non-overlapping windows, zero-padding bottom/right.

    Args:
        x: Map [B, H, W, D]
        window: Window side M

    Returns:
        Windows [B, n_h * n_w, M, M, D] in row-major window order
    """
    batch, height, width, depth = x.shape
    grid = WindowGrid.for_map(height, width, window)
    pad_h = grid.n_h * window - height
    pad_w = grid.n_w * window - width
    if pad_h or pad_w:
        x = ops.pad(x, ((0, 0), (0, pad_h), (0, pad_w), (0, 0)))
    x = x.reshape(batch, grid.n_h, window, grid.n_w, window, depth)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(batch, grid.count, window, window, depth)


def reassemble_windows(windows: Tensor, height: int, width: int) -> Tensor:
    """
    Inverse of partition_windows: tile windows back and crop the padding.

    Args:
        windows: [B, n_h * n_w, M, M, D]
        height: Original map height
        width: Original map width

    Returns:
        Map [B, H, W, D]
    """
    batch, count, window, _, depth = windows.shape
    grid = WindowGrid.for_map(height, width, window)
    if count != grid.count:
        raise ShapeError(f"{count} windows cannot tile a {height}x{width} map with M={window}")
    x = windows.reshape(batch, grid.n_h, grid.n_w, window, window, depth)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    x = x.reshape(batch, grid.n_h * window, grid.n_w * window, depth)
    if x.shape[1] != height or x.shape[2] != width:
        x = x[:, :height, :width, :]
    return x


def local_scan(x: Tensor, pair: ScanPair, grid: WindowGrid, path: str = "parallel") -> Tensor:
    """
    Within-window scans on the selected windows; zeros elsewhere.

    Every selected window gets SSM_row(row-major) + SSM_col(column-major)
    over its own M x M tokens. The reassembled map is multiplied by
    grid.scale.

    Args:
        x: Map [B, H, W, D]
        pair: Directional SSMs
        grid: Tiling and selection for this map

    Returns:
        Map [B, H, W, D]
    """
    batch, height, width, depth = x.shape
    expected = WindowGrid.for_map(height, width, grid.window)
    if (expected.n_h, expected.n_w) != (grid.n_h, grid.n_w):
        raise ShapeError(
            f"grid {grid.n_h}x{grid.n_w} does not tile a {height}x{width} map with M={grid.window}"
        )
    if depth != pair.width:
        raise ShapeError(f"SSM lane width {pair.width} does not match map depth {depth}")
    selected = grid.flat_selection()
    if selected.size == 0:
        return Tensor(np.zeros(x.shape, dtype=x.dtype), dtype=x.dtype)

    m = grid.window
    windows = partition_windows(x, m)
    picked = ops.take(windows, selected, axis=1)
    tiles = picked.reshape(batch * selected.size, m, m, depth)
    scanned = _bidirectional(tiles, pair, path).reshape(batch, selected.size, m, m, depth)

    # Scatter back: index 0 reads an all-zero window, k + 1 reads scanned[k]
    source = np.zeros(grid.count, dtype=np.intp)
    source[selected] = np.arange(1, selected.size + 1)
    zero = Tensor(np.zeros((batch, 1, m, m, depth), dtype=x.dtype), dtype=x.dtype)
    full = ops.take(ops.concat([zero, scanned], axis=1), source, axis=1)
    y = reassemble_windows(full, height, width)
    if grid.scale != 1.0:
        y = y * grid.scale
    return y
