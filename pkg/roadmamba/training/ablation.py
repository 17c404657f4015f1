"""
Ablation grids on the synthetic task.

Axes:
    scan  global scan only / windowed scan only / dual scan (no DAF, no aux loss)
    daf   aggregator assignments GCLT / GLTC / GTLC
    aux   cumulative: global only -> + dual scan -> + DAF -> + auxiliary loss
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..autograd import precision
from ..constants import AUX_LAMBDA
from ..data.config import RunConfig
from ..data.synthetic import FACTORS, Dataset
from ..errors import ConfigError
from .metrics import MetricsReport, compute_metrics, factor_accuracy
from .trainer import Trainer, predict

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationArm:
    """One row of an ablation table: a name and RunConfig overrides."""

    name: str
    overrides: Dict[str, Any] = field(default_factory=dict)


_NO_EXTRAS = {"use_daf": False, "lambda_aux": 0.0}

AXES: Dict[str, List[AblationArm]] = {
    "scan": [
        AblationArm("GlobalMamba", {"scan_variant": "global_only", **_NO_EXTRAS}),
        AblationArm("WindowMamba", {"scan_variant": "local_only", **_NO_EXTRAS}),
        AblationArm("RoadMamba*", {"scan_variant": "dual", **_NO_EXTRAS}),
    ],
    "daf": [
        AblationArm(name, {"scan_variant": "dual", "use_daf": True, "aggregator_assignment": name})
        for name in ("GCLT", "GLTC", "GTLC")
    ],
    "aux": [
        AblationArm("global-only", {"scan_variant": "global_only", **_NO_EXTRAS}),
        AblationArm("+dual-scan", {"scan_variant": "dual", **_NO_EXTRAS}),
        AblationArm("+DAF", {"scan_variant": "dual", "use_daf": True, "lambda_aux": 0.0}),
        AblationArm(
            "+aux-loss", {"scan_variant": "dual", "use_daf": True, "lambda_aux": AUX_LAMBDA}
        ),
    ],
}


@dataclass
class AblationResult:
    """
    Attributes:
        arm: Row name
        seed: Run seed
        report: Eval-split metrics
        factors: Accuracy per synthetic factor
        final_loss: Last training loss
    """

    arm: str
    seed: int
    report: MetricsReport
    factors: Dict[str, float]
    final_loss: float


def arm_config(config: RunConfig, arm: AblationArm) -> RunConfig:
    """Validated config of one arm."""
    return config.with_overrides(**arm.overrides)


def run_ablation(
    config: RunConfig,
    axis: str,
    train_data: Dataset,
    eval_data: Dataset,
    seeds: Optional[Sequence[int]] = None,
) -> List[AblationResult]:
    """
    Train and evaluate every arm of an axis for every seed.

    Args:
        config: Base run settings
        axis: "scan", "daf" or "aux"
        train_data: Training samples
        eval_data: Held-out samples
        seeds: Seeds to average over (default: config.seed only)

    Raises:
        ConfigError: Unknown axis
    """
    if axis not in AXES:
        raise ConfigError(f"unknown ablation axis '{axis}' (expected {', '.join(AXES)})")
    results = []
    for arm in AXES[axis]:
        for seed in seeds if seeds is not None else [config.seed]:
            run_config = arm_config(config, arm).with_overrides(seed=seed)
            trainer = Trainer(run_config, train_data, eval_data)
            state = trainer.run()
            with precision(run_config.dtype):
                preds = predict(state.model, eval_data.images)
            report = compute_metrics(preds, eval_data.labels, run_config.num_classes)
            result = AblationResult(
                arm=arm.name,
                seed=seed,
                report=report,
                factors=factor_accuracy(preds, eval_data.labels),
                final_loss=state.losses[-1] if state.losses else float("nan"),
            )
            logger.info(
                "%s/%s seed %d: top1 %.4f meanF1 %.4f checker %.4f",
                axis,
                arm.name,
                seed,
                report.top1,
                report.mean_f1,
                result.factors["checker"],
            )
            results.append(result)
    return results


def summarize(results: Sequence[AblationResult]) -> List[Dict[str, Any]]:
    """Seed-averaged rows in arm order: arm, seeds, top1, meanP, meanR, meanF1, factors."""
    rows: Dict[str, List[AblationResult]] = {}
    for r in results:
        rows.setdefault(r.arm, []).append(r)
    table = []
    for arm, group in rows.items():
        row: Dict[str, Any] = {"arm": arm, "seeds": len(group)}
        for key, attr in (
            ("top1", "top1"),
            ("meanP", "mean_precision"),
            ("meanR", "mean_recall"),
            ("meanF1", "mean_f1"),
        ):
            row[key] = float(np.mean([getattr(r.report, attr) for r in group]))
        for factor in FACTORS:
            row[factor] = float(np.mean([r.factors[factor] for r in group]))
        table.append(row)
    return table


def format_table(rows: Sequence[Dict[str, Any]]) -> str:
    """Plain-text table of summarize() rows."""
    columns = ["top1", "meanP", "meanR", "meanF1", *FACTORS]
    width = max([len("arm")] + [len(r["arm"]) for r in rows])
    lines = [f"{'arm':<{width}}  " + "  ".join(f"{c:>7}" for c in columns)]
    for r in rows:
        lines.append(f"{r['arm']:<{width}}  " + "  ".join(f"{r[c]:>7.4f}" for c in columns))
    return "\n".join(lines)
