"""
Losses, optimizer, schedule, metrics, the training loop and ablation grids.
"""

from .ablation import AXES, AblationArm, AblationResult, format_table, run_ablation, summarize
from .losses import CrossEntropy, LossSpec, cross_entropy, total_loss
from .metrics import MetricsReport, compute_metrics, confusion_matrix, factor_accuracy
from .optim import AdamW, OptimizerState, ScheduleState, lr_at, optimizer_step, scaled_lr
from .trainer import (
    HistoryRow,
    Trainer,
    TrainerState,
    TrainState,
    evaluate,
    history_path,
    init_model,
    predict,
    read_history,
    train_loop,
    write_history,
)

__all__ = [
    "CrossEntropy",
    "LossSpec",
    "cross_entropy",
    "total_loss",
    "OptimizerState",
    "AdamW",
    "optimizer_step",
    "ScheduleState",
    "lr_at",
    "scaled_lr",
    "MetricsReport",
    "compute_metrics",
    "confusion_matrix",
    "factor_accuracy",
    "TrainerState",
    "TrainState",
    "HistoryRow",
    "Trainer",
    "init_model",
    "predict",
    "evaluate",
    "history_path",
    "write_history",
    "read_history",
    "train_loop",
    "AXES",
    "AblationArm",
    "AblationResult",
    "run_ablation",
    "summarize",
    "format_table",
]
