"""
Trainer - seeded training loop with periodic evaluation, checkpoints and
divergence detection.

Everything random in a run derives from RunConfig.seed: parameter
initialization, the per-epoch sample order and the per-block window
selection (seed, epoch, step, stage, block). Two runs with the same config
therefore produce the same loss curve, bitwise at float64.

Usage:
    trainer = Trainer(config, train_data, eval_data, checkpoint_path="run.rmba")
    state = trainer.run()
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from ..autograd import Tensor, precision
from ..backbone import RoadMamba, SelectionContext
from ..constants import HISTORY_HEADER
from ..data.checkpoint import load_checkpoint, save_checkpoint
from ..data.config import RunConfig
from ..data.synthetic import Dataset
from ..errors import ConfigError, DivergenceError, NumericalError
from ..scan2d import Mode
from .losses import LossSpec, total_loss
from .metrics import MetricsReport, compute_metrics
from .optim import AdamW, OptimizerState, ScheduleState, gradient_norm, lr_at

logger = logging.getLogger(__name__)

# SeedSequence stream tags keeping initialization and data order apart
INIT_STREAM = 0x1417
ORDER_STREAM = 0x0DE5

EVAL_BATCH = 64

PathLike = Union[str, Path]


class TrainerState(Enum):
    """Training state machine states."""

    IDLE = 0
    RUNNING = 1
    FINISHED = 2
    DIVERGED = 3


@dataclass
class HistoryRow:
    """One evaluation point of a run."""

    step: int
    lr: float
    loss: float
    top1: float
    meanP: float
    meanR: float
    meanF1: float

    def as_row(self) -> List[str]:
        return [str(self.step)] + [repr(float(v)) for v in self.values()]

    def values(self) -> List[float]:
        return [self.lr, self.loss, self.top1, self.meanP, self.meanR, self.meanF1]


@dataclass
class TrainState:
    """
    Everything needed to continue or inspect a run.

    Attributes:
        model: Network being trained
        optimizer: AdamW moments and step counter
        schedule: Learning-rate schedule
        seed: Root of the seed lineage
        step: Completed optimizer steps
        epoch: Epoch of the next step
        history: Evaluation rows so far
        losses: Training loss of every completed step
    """

    model: RoadMamba
    optimizer: OptimizerState
    schedule: ScheduleState
    seed: int
    step: int = 0
    epoch: int = 0
    history: List[HistoryRow] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)


def init_model(config: RunConfig) -> RoadMamba:
    """Build the network for a run, initialized from the run seed at the run precision."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, INIT_STREAM]))
    with precision(config.dtype):
        return RoadMamba(config.backbone(), rng=rng)


def predict(model: RoadMamba, images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Eval-mode class predictions for [n, H, W, 3] images."""
    preds = []
    for start in range(0, len(images), batch_size):
        batch = Tensor(images[start : start + batch_size], dtype=model.stem.conv.weight.dtype)
        out = model.forward(batch, Mode.EVAL)
        preds.append(np.argmax(out.logits.data, axis=-1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(
    model: RoadMamba, dataset: Dataset, num_classes: int, batch_size: int = EVAL_BATCH
) -> MetricsReport:
    """Top-1 and macro metrics of a model on a dataset."""
    with precision(model.stem.conv.weight.dtype):
        preds = predict(model, dataset.images, batch_size)
    return compute_metrics(preds, dataset.labels, num_classes)


def history_path(checkpoint_path: PathLike) -> Path:
    """CSV history file written next to a checkpoint (run.rmba -> run.history.csv)."""
    return Path(checkpoint_path).with_suffix(".history.csv")


def write_history(path: PathLike, rows: List[HistoryRow]) -> Path:
    """Write rows under the header step,lr,loss,top1,meanP,meanR,meanF1."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_HEADER)
        writer.writerows(row.as_row() for row in rows)
    return path


def read_history(path: PathLike) -> List[HistoryRow]:
    """Read a history CSV written by write_history()."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != HISTORY_HEADER:
            raise ConfigError(f"{path}: unexpected history header {reader.fieldnames}")
        return [
            HistoryRow(int(r["step"]), *(float(r[k]) for k in HISTORY_HEADER[1:]))
            for r in reader
        ]


class Trainer:
    """
    Seeded AdamW training of a RoadMamba classifier.

    Example:
        trainer = Trainer(config, train_data, eval_data, "run.rmba")
        trainer.resume("run.rmba")   # optional
        state = trainer.run()
        print(trainer.state, state.history[-1].top1)
    """

    def __init__(
        self,
        config: RunConfig,
        train_data: Dataset,
        eval_data: Optional[Dataset] = None,
        checkpoint_path: Optional[PathLike] = None,
    ):
        """
        Initialize a run.

        Args:
            config: Run settings (validated here)
            train_data: Training samples (nonempty)
            eval_data: Samples for history rows; training data when omitted
            checkpoint_path: Where checkpoints and the history CSV go

        Raises:
            ConfigError: Invalid config, empty dataset or wrong image side
        """
        config.validate()
        if len(train_data) == 0:
            raise ConfigError("training dataset is empty")
        if train_data.image_side != config.image_side:
            raise ConfigError(
                f"dataset images are {train_data.image_side}px, config expects {config.image_side}"
            )
        self._config = config
        self._train = train_data
        self._eval = eval_data if eval_data is not None else train_data
        self._checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
        self._last_good: Optional[Path] = None
        self._status = TrainerState.IDLE

        model = init_model(config)
        self._optimizer = AdamW(model.named_parameters(), weight_decay=config.weight_decay)
        self._loss_spec = LossSpec(config.lambda_aux)
        schedule = ScheduleState(
            base_lr=config.peak_lr,
            warmup_steps=config.warmup_steps,
            total_steps=config.total_steps,
            min_lr=config.min_lr,
        )
        schedule.validate()
        self._state = TrainState(
            model=model,
            optimizer=self._optimizer.state,
            schedule=schedule,
            seed=config.seed,
        )

    # -------------------------------------------------------------------------
    # Properties
    # -------------------------------------------------------------------------

    @property
    def state(self) -> TrainerState:
        """Current state machine state."""
        return self._status

    @property
    def train_state(self) -> TrainState:
        return self._state

    @property
    def model(self) -> RoadMamba:
        return self._state.model

    @property
    def steps_per_epoch(self) -> int:
        return max(1, math.ceil(len(self._train) / self._config.batch_size))

    @property
    def last_good_checkpoint(self) -> Optional[Path]:
        return self._last_good

    # -------------------------------------------------------------------------
    # Data order
    # -------------------------------------------------------------------------

    def epoch_order(self, epoch: int) -> np.ndarray:
        """Sample permutation of an epoch."""
        rng = np.random.default_rng(
            np.random.SeedSequence([self._config.seed, ORDER_STREAM, epoch])
        )
        return rng.permutation(len(self._train))

    def batch_indices(self, step: int) -> np.ndarray:
        """Sample indices used by a (0-based) step."""
        epoch, k = divmod(step, self.steps_per_epoch)
        size = self._config.batch_size
        return self.epoch_order(epoch)[k * size : (k + 1) * size]

    # -------------------------------------------------------------------------
    # Training
    # -------------------------------------------------------------------------

    def resume(self, path: PathLike) -> None:
        """
        Restore parameters, optimizer moments and step counter.

        Raises:
            ArchiveError: Not a checkpoint
            CheckpointMismatchError: Checkpoint from a different network
        """
        state = self._state
        with precision(self._config.dtype):
            ckpt = load_checkpoint(path, state.model)
        state.optimizer.load(ckpt.exp_avg, ckpt.exp_avg_sq, ckpt.step)
        state.step = ckpt.step
        state.epoch = ckpt.step // self.steps_per_epoch
        if int(ckpt.meta.get("seed", self._config.seed)) != self._config.seed:
            logger.warning("resuming a run started with seed %d", int(ckpt.meta["seed"]))
        csv_path = history_path(path)
        if csv_path.is_file():
            state.history = [row for row in read_history(csv_path) if row.step <= state.step]
        self._last_good = Path(path)
        logger.info("resumed from %s at step %d", path, state.step)

    def train_step(self) -> float:
        """
        Run one optimizer step.

        Returns:
            Training loss of the step

        Raises:
            NumericalError: Non-finite forward value or gradient
        """
        state = self._state
        step = state.step
        epoch = step // self.steps_per_epoch
        images, labels = self._train.batch(self.batch_indices(step))
        out = state.model.forward(
            Tensor(images), Mode.TRAIN, SelectionContext(state.seed, epoch, step)
        )
        loss = total_loss(out.logits, out.aux_logits, labels, self._loss_spec)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericalError(f"loss is {value} at step {step + 1}")
        loss.backward()
        lr = lr_at(step + 1, state.schedule)
        logger.debug(
            "step %d loss %.6f lr %.3e grad-norm %.4e",
            step + 1,
            value,
            lr,
            gradient_norm(self._optimizer.params),
        )
        self._optimizer.step(lr)
        self._optimizer.zero_grad()
        state.step = step + 1
        state.epoch = state.step // self.steps_per_epoch
        state.losses.append(value)
        return value

    def _record(self, window: List[float]) -> HistoryRow:
        state = self._state
        data = self._eval
        if self._config.eval_samples:
            data = data.subset(self._config.eval_samples)
        report = evaluate(state.model, data, self._config.num_classes)
        row = HistoryRow(
            step=state.step,
            lr=lr_at(state.step, state.schedule),
            loss=float(np.mean(window)) if window else float("nan"),
            top1=report.top1,
            meanP=report.mean_precision,
            meanR=report.mean_recall,
            meanF1=report.mean_f1,
        )
        state.history.append(row)
        logger.info(
            "step %d lr %.3e loss %.4f top1 %.4f meanF1 %.4f",
            row.step,
            row.lr,
            row.loss,
            row.top1,
            row.meanF1,
        )
        return row

    def save(self, path: Optional[PathLike] = None) -> Optional[Path]:
        """Write a checkpoint (and the history CSV beside it)."""
        path = Path(path) if path else self._checkpoint_path
        if path is None:
            return None
        state = self._state
        save_checkpoint(
            path,
            state.model,
            state.optimizer,
            meta={"seed": state.seed, "epoch": state.epoch},
        )
        write_history(history_path(path), state.history)
        self._last_good = path
        return path

    def run(self) -> TrainState:
        """
        Train until config.total_steps.

        Returns:
            Final TrainState

        Raises:
            DivergenceError: Loss or gradient became non-finite; carries the
                last checkpoint written before the failure (None only when the
                trainer has no checkpoint path)
        """
        config = self._config
        state = self._state
        self._status = TrainerState.RUNNING
        logger.info(
            "training %s (%s, %s) for %d steps, batch %d, peak lr %.3e",
            config.variant,
            config.scan_variant,
            config.aggregator_assignment,
            config.total_steps,
            config.batch_size,
            config.peak_lr,
        )
        if self._last_good is None:
            # step-0 checkpoint
            self.save()
        window: List[float] = []
        with precision(config.dtype):
            while state.step < config.total_steps:
                try:
                    window.append(self.train_step())
                except NumericalError as exc:
                    self._status = TrainerState.DIVERGED
                    last = str(self._last_good) if self._last_good else None
                    logger.error(
                        "diverged at step %d: %s (last good checkpoint: %s)",
                        state.step + 1,
                        exc,
                        last,
                    )
                    raise DivergenceError(
                        f"training diverged at step {state.step + 1}: {exc}", last
                    ) from exc
                done = state.step == config.total_steps
                if done or (config.eval_interval and state.step % config.eval_interval == 0):
                    self._record(window)
                    window = []
                if (
                    not done
                    and config.checkpoint_interval
                    and state.step % config.checkpoint_interval == 0
                ):
                    self.save()
        self.save()
        self._status = TrainerState.FINISHED
        return state


def train_loop(
    config: RunConfig,
    dataset: Dataset,
    seed: Optional[int] = None,
    eval_data: Optional[Dataset] = None,
    checkpoint_path: Optional[PathLike] = None,
    resume: Optional[PathLike] = None,
) -> TrainState:
    """
    Train a model from scratch (or from a checkpoint).

    Args:
        config: Run settings
        dataset: Training samples
        seed: Overrides config.seed when given
        eval_data: Samples for the history rows
        checkpoint_path: Checkpoint/history destination
        resume: Checkpoint to continue from

    Returns:
        Final TrainState with the metric history
    """
    if seed is not None:
        config = config.with_overrides(seed=seed)
    trainer = Trainer(config, dataset, eval_data, checkpoint_path)
    if resume is not None:
        trainer.resume(resume)
    return trainer.run()
