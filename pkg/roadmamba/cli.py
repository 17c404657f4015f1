"""
Command-line interface.

    roadmamba gen-data --out D --n-train N --n-eval M --seed S
    roadmamba init     --config F --out CKPT
    roadmamba train    --config F --out CKPT [--resume CKPT]
    roadmamba eval     --config F --ckpt CKPT --data D [--split train|eval]
    roadmamba inspect  --ckpt CKPT
    roadmamba bench    --config F [--flops-per-mac 1|2]
    roadmamba ablate   --config F --axis {scan,daf,aux}

Exit codes: 0 success, 1 usage error (bad arguments or config), 2 runtime
failure. Messages go to standard error.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
import time
from pathlib import Path
from typing import Iterator, List, NoReturn, Optional

import numpy as np

from . import __version__
from .autograd import Tensor, precision
from .backbone import estimate_flops_breakdown
from .constants import EVAL_SPLIT_FILE, NUM_CLASSES, PARAM_PREFIX, TRAIN_SPLIT_FILE
from .data import (
    SyntheticSpec,
    generate_dataset,
    load_archive,
    load_checkpoint,
    load_run_config,
    load_split,
    save_checkpoint,
)
from .data.checkpoint import split_entries
from .data.config import RunConfig
from .data.synthetic import Dataset
from .errors import ConfigError, RoadMambaError
from .scan2d import Mode
from .training import (
    AXES,
    compute_metrics,
    factor_accuracy,
    format_table,
    init_model,
    predict,
    run_ablation,
    summarize,
)
from .training.trainer import Trainer, history_path

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2


class UsageError(ConfigError):
    """Bad command-line arguments or configuration file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


@contextlib.contextmanager
def _usage_errors() -> Iterator[None]:
    """Report ConfigErrors raised while reading user input as usage errors."""
    try:
        yield
    except UsageError:
        raise
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _load_config(path: str) -> RunConfig:
    with _usage_errors():
        return load_run_config(path)


def _data_dir(config: RunConfig, override: Optional[str]) -> Path:
    return Path(override) if override else Path(config.data_dir)


# =============================================================================
# Commands
# =============================================================================


def cmd_gen_data(args: argparse.Namespace) -> int:
    with _usage_errors():
        if args.n_train < 0 or args.n_eval < 0:
            raise ConfigError("--n-train and --n-eval must be >= 0")
        spec = SyntheticSpec(
            image_side=args.side,
            noise_sigma=args.noise,
            seed=args.seed,
            stratified=args.stratified,
        )
        spec.validate()
    train_path, eval_path = generate_dataset(spec, args.n_train, args.n_eval, args.out)
    print(f"wrote {train_path} ({args.n_train} samples)")
    print(f"wrote {eval_path} ({args.n_eval} samples)")
    return EXIT_OK


def cmd_init(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    model = init_model(config)
    save_checkpoint(args.out, model, meta={"seed": config.seed, "epoch": 0})
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    data_dir = _data_dir(config, args.data)
    train_data = Dataset.load(data_dir / TRAIN_SPLIT_FILE)
    eval_path = data_dir / EVAL_SPLIT_FILE
    eval_data = Dataset.load(eval_path) if eval_path.is_file() else None
    with _usage_errors():
        trainer = Trainer(config, train_data, eval_data, checkpoint_path=args.out)
    if args.resume:
        trainer.resume(args.resume)
    state = trainer.run()
    last = state.history[-1]
    print(f"step {last.step}: loss {last.loss:.4f} top1 {last.top1:.4f} meanF1 {last.meanF1:.4f}")
    print(f"wrote {args.out} and {history_path(args.out)}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    with _usage_errors():
        dataset = load_split(args.data, args.split)
    model = init_model(config)
    with precision(config.dtype):
        load_checkpoint(args.ckpt, model)
        preds = predict(model, dataset.images)
    report = compute_metrics(preds, dataset.labels, config.num_classes)
    print(f"top1 = {report.top1:.4f}")
    print(f"meanP = {report.mean_precision:.4f}")
    print(f"meanR = {report.mean_recall:.4f}")
    print(f"meanF1 = {report.mean_f1:.4f}")
    if config.num_classes == NUM_CLASSES:
        for name, acc in factor_accuracy(preds, dataset.labels).items():
            print(f"{name} = {acc:.4f}")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    tensors = load_archive(args.ckpt)
    ckpt = split_entries(tensors)
    width = max(len(name) for name in tensors)
    for name, array in tensors.items():
        print(f"{name:<{width}}  {array.dtype.str:>4}  {tuple(array.shape)}")
    aux = PARAM_PREFIX + "aux_heads."
    backbone = sum(
        a.size
        for n, a in tensors.items()
        if n.startswith(PARAM_PREFIX) and not n.startswith(aux)
    )
    print(f"tensors: {len(tensors)}")
    print(f"parameters: {backbone}")
    aux_count = ckpt.num_parameters() - backbone
    if aux_count:
        print(f"auxiliary-head parameters: {aux_count}")
    if ckpt.has_optimizer:
        print(f"optimizer step: {ckpt.step}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    with _usage_errors():
        if args.repeats < 1 or args.batch < 1:
            raise ConfigError("--repeats and --batch must be >= 1")
        if args.flops_per_mac <= 0:
            raise ConfigError("--flops-per-mac must be > 0")
        backbone = config.backbone()
    side = config.image_side
    breakdown = estimate_flops_breakdown(backbone, side, args.flops_per_mac)
    print(f"convention: 1 multiply-accumulate = {args.flops_per_mac:g} FLOP")
    for part, gflops in breakdown.items():
        print(f"{part:<16} {gflops:8.3f} GFLOPs")
    print(f"{'total':<16} {sum(breakdown.values()):8.3f} GFLOPs at {side}px")

    model = init_model(config)
    rng = np.random.default_rng(config.seed)
    timings = []
    with precision(config.dtype):
        images = Tensor(rng.uniform(0.0, 1.0, size=(args.batch, side, side, 3)))
        for _ in range(args.repeats):
            start = time.perf_counter_ns()
            model.forward(images, Mode.EVAL)
            timings.append((time.perf_counter_ns() - start) / 1e6)
    print(f"forward latency: {min(timings):.1f} ms (best of {args.repeats}, batch {args.batch})")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    data_dir = _data_dir(config, args.data)
    train_data = Dataset.load(data_dir / TRAIN_SPLIT_FILE)
    eval_data = Dataset.load(data_dir / EVAL_SPLIT_FILE)
    results = run_ablation(config, args.axis, train_data, eval_data, seeds=args.seeds)
    print(format_table(summarize(results)))
    return EXIT_OK


# =============================================================================
# Parser
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="roadmamba", description="Desk-scale RoadMamba in numpy.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic 27-class dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-train", type=int, required=True)
    p.add_argument("--n-eval", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--side", type=int, default=64, help="image side in pixels")
    p.add_argument("--noise", type=float, default=0.05, help="pixel noise sigma")
    p.add_argument("--stratified", action="store_true", help="sample i gets class i mod 27")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("init", help="write a freshly initialized checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--data", help="dataset directory (overrides data_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print top-1 and macro metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="dataset archive or gen-data directory")
    p.add_argument("--split", choices=("train", "eval"), default="eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="list checkpoint tensors and parameter count")
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", help="estimated GFLOPs and measured forward latency")
    p.add_argument("--config", required=True)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument(
        "--flops-per-mac", type=float, default=1.0, help="FLOPs charged per multiply-accumulate"
    )
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="run an ablation grid on the synthetic data")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True, choices=sorted(AXES))
    p.add_argument("--seeds", type=int, nargs="+", help="seeds to average over")
    p.add_argument("--data", help="dataset directory (overrides data_dir)")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run the CLI.

    Args:
        argv: Arguments without the program name (defaults to sys.argv[1:])

    Returns:
        Exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help / --version
        return int(exc.code or 0)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"roadmamba {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RoadMambaError, OSError) as exc:
        logger.debug("command failed", exc_info=True)
        print(f"roadmamba {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
