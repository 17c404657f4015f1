"""
Synthetic 27-class images with a global x mid-scale x local factor structure.

Each class is a triple of three-level factors:

    hue      global base colour family      (whole-image cue)
    stripe   orientation of period-16 bands (mid-scale cue)
    checker  period of a fine checkerboard  (local texture cue)

with class id = 9 * hue + 3 * stripe + checker. Phases are random per
sample, so the checker factor cannot be read off class-mean pixels; telling
its levels apart needs texture modelling.

Usage:
    spec = SyntheticSpec(image_side=64, noise_sigma=0.05, seed=0)
    train_path, eval_path = generate_dataset(spec, 10000, 2000, "data/")
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from ..constants import EVAL_SPLIT_FILE, IMAGES_ENTRY, LABELS_ENTRY, NUM_CLASSES, TRAIN_SPLIT_FILE
from ..errors import ArchiveError, ConfigError, ShapeError
from .archive import load_archive, save_archive

logger = logging.getLogger(__name__)

# =============================================================================
# Factor structure
# =============================================================================

FACTORS = ("hue", "stripe", "checker")
FACTOR_LEVELS = 3

HUE_COLORS = np.array(
    [
        [0.80, 0.35, 0.25],  # red family
        [0.30, 0.70, 0.35],  # green family
        [0.30, 0.40, 0.85],  # blue family
    ]
)
HUE_JITTER = 0.05

STRIPE_PERIOD = 16
STRIPE_AMPLITUDE = 0.12

CHECKER_PERIODS = (2, 3, 4)
CHECKER_AMPLITUDE = 0.10


def class_id(hue, stripe, checker):
    """Class id of a factor triple (works elementwise on arrays)."""
    return FACTOR_LEVELS * FACTOR_LEVELS * hue + FACTOR_LEVELS * stripe + checker


def decompose(label):
    """
    Factor triple (hue, stripe, checker) of a class id.

    Args:
        label: Class id in [0, 27) or an integer array of them

    Returns:
        Tuple of three ints (or arrays)
    """
    hue, rest = np.divmod(label, FACTOR_LEVELS * FACTOR_LEVELS)
    stripe, checker = np.divmod(rest, FACTOR_LEVELS)
    if np.ndim(label) == 0:
        return int(hue), int(stripe), int(checker)
    return hue, stripe, checker


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Generator settings.

    Attributes:
        image_side: Square image side in pixels
        noise_sigma: Std of additive Gaussian pixel noise
        seed: Dataset seed; sample i uses SeedSequence([seed, i])
        stratified: Label of sample i is i mod 27 instead of a uniform draw
        checker_periods: Checker cell sides of the three checker levels
    """

    image_side: int = 64
    noise_sigma: float = 0.05
    seed: int = 0
    stratified: bool = False
    checker_periods: Tuple[int, int, int] = CHECKER_PERIODS

    def validate(self) -> None:
        """
        Raises:
            ConfigError: Side too small for the checker period or stripe bands,
                negative noise, wrong number of checker levels
        """
        if len(self.checker_periods) != FACTOR_LEVELS or min(self.checker_periods) < 1:
            raise ConfigError(f"need {FACTOR_LEVELS} positive checker periods")
        needed = 2 * max(self.checker_periods)
        if self.image_side < needed:
            raise ConfigError(
                f"image side {self.image_side} is too small for checker period "
                f"{max(self.checker_periods)} (need at least {needed})"
            )
        if self.image_side < STRIPE_PERIOD:
            raise ConfigError(
                f"image side {self.image_side} is smaller than the stripe period {STRIPE_PERIOD}"
            )
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def render_sample(spec: SyntheticSpec, index: int) -> Tuple[np.ndarray, int]:
    """
    Render sample `index` of a dataset.

    Identical (spec, index) pairs give bitwise-identical images.

    Returns:
        (image [side, side, 3] float32 in [0, 1], label)
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    if spec.stratified:
        label = index % NUM_CLASSES
    else:
        label = int(rng.integers(NUM_CLASSES))
    hue, stripe, checker = decompose(label)
    side = spec.image_side
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)

    base = HUE_COLORS[hue] + rng.uniform(-HUE_JITTER, HUE_JITTER, size=3)

    # band normal: 0 horizontal, 1 vertical, 2 diagonal
    coord = (yy, xx, (xx + yy) / np.sqrt(2.0))[stripe]
    phase = rng.uniform(0.0, STRIPE_PERIOD)
    bands = np.where((coord + phase) % STRIPE_PERIOD < STRIPE_PERIOD / 2, 1.0, -1.0)

    period = spec.checker_periods[checker]
    # offsets cover a full 2 * period cycle of the board
    oy, ox = rng.integers(0, 2 * period, size=2)
    cells = ((yy + oy) // period + (xx + ox) // period) % 2
    texture = (2.0 * cells - 1.0) * CHECKER_AMPLITUDE

    image = base * (1.0 + STRIPE_AMPLITUDE * bands)[..., None] + texture[..., None]
    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32), label


@dataclass
class Dataset:
    """
    In-memory image/label pairs.

    Attributes:
        images: [n, side, side, 3] float32
        labels: [n] int64 class ids
    """

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise ShapeError(f"images must be [n, H, W, 3], got {self.images.shape}")
        if self.labels.shape != self.images.shape[:1]:
            raise ShapeError(
                f"{self.images.shape[0]} images but labels have shape {self.labels.shape}"
            )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def image_side(self) -> int:
        return int(self.images.shape[1])

    def batch(self, indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Images and labels at the given indices."""
        return self.images[indices], self.labels[indices]

    def subset(self, count: int) -> "Dataset":
        """First count samples."""
        return Dataset(self.images[:count], self.labels[:count])

    def save(self, path: Union[str, Path]) -> Path:
        """Write as a tensor archive (labels stored as f32)."""
        return save_archive(
            path,
            [(IMAGES_ENTRY, self.images), (LABELS_ENTRY, self.labels.astype(np.float32))],
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Dataset":
        """
        Read a dataset archive.

        Raises:
            ArchiveError: Missing entries or non-integral labels
        """
        tensors = load_archive(path)
        for entry in (IMAGES_ENTRY, LABELS_ENTRY):
            if entry not in tensors:
                raise ArchiveError(f"{path}: no '{entry}' entry, not a dataset archive")
        labels = tensors[LABELS_ENTRY]
        if not np.array_equal(labels, np.round(labels)):
            raise ArchiveError(f"{path}: labels are not integral")
        return cls(tensors[IMAGES_ENTRY], labels.astype(np.int64))


def render_dataset(spec: SyntheticSpec, count: int, offset: int = 0) -> Dataset:
    """
    Render samples offset .. offset + count - 1.

    Raises:
        ConfigError: Invalid spec or negative count
    """
    spec.validate()
    if count < 0:
        raise ConfigError(f"sample count must be >= 0, got {count}")
    side = spec.image_side
    images = np.empty((count, side, side, 3), dtype=np.float32)
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        images[i], labels[i] = render_sample(spec, offset + i)
    return Dataset(images, labels)


def generate_dataset(
    spec: SyntheticSpec, n_train: int, n_eval: int, out_dir: Union[str, Path]
) -> Tuple[Path, Path]:
    """
    Write train and eval splits to out_dir.

    Eval samples continue the index sequence after the training samples, so
    the splits never share a sample.

    Args:
        spec: Generator settings
        n_train: Training samples (>= 27 recommended so every class appears)
        n_eval: Evaluation samples
        out_dir: Output directory (created if missing)

    Returns:
        Paths of the train and eval archives
    """
    out = Path(out_dir)
    if n_train < NUM_CLASSES:
        logger.warning("only %d training samples: some classes may be missing", n_train)
    train = render_dataset(spec, n_train, offset=0)
    held_out = render_dataset(spec, n_eval, offset=n_train)
    train_path = train.save(out / TRAIN_SPLIT_FILE)
    eval_path = held_out.save(out / EVAL_SPLIT_FILE)
    logger.info("generated %d train / %d eval samples in %s", n_train, n_eval, out)
    return train_path, eval_path


def load_split(data: Union[str, Path], split: str = "train") -> Dataset:
    """
    Load a dataset from an archive path, or a split from a gen-data directory.

    Args:
        data: Archive file, or directory holding train.rmba / eval.rmba
        split: "train" or "eval" (directories only)

    Raises:
        ConfigError: Unknown split name
    """
    path = Path(data)
    if path.is_dir():
        files = {"train": TRAIN_SPLIT_FILE, "eval": EVAL_SPLIT_FILE}
        if split not in files:
            raise ConfigError(f"unknown split '{split}' (expected train or eval)")
        path = path / files[split]
    return Dataset.load(path)
