"""
ECON - Stock Movement and Volatility Prediction
Command-line entry point

Exit codes: 0 success, 1 unexpected error, 2 configuration error,
3 input/data error, 4 stage failure (calibration or training).
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Union

import torch

from . import __version__
from .config import VARIANT_ORDER, Ablation, RunConfig, load_config
from .errors import EconError
from .pipeline import Pipeline, report, run_pipeline

logger = logging.getLogger("econ")

ABLATION_CHOICES = [a.value for a in VARIANT_ORDER]


def parse_k(value: str) -> Union[int, str]:
    if value in ("auto", "all"):
        return value
    try:
        k = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"k must be a positive integer, 'auto' or 'all', got {value!r}")
    if k < 1:
        raise argparse.ArgumentTypeError("k must be at least 1")
    return k


def _run_options() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", type=Path, help="YAML run config")
    shared.add_argument("--seed", type=int, help="root seed")
    shared.add_argument("--output-dir", type=Path, help="run directory")
    shared.add_argument("--data-dir", type=Path, help="directory with the four input files (default: synthetic)")
    shared.add_argument("--force", action="store_true", help="rerun stages even when their inputs are unchanged")
    return shared


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="econ", description="Stock movement and volatility prediction")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    commands = parser.add_subparsers(dest="command", required=True)
    shared = _run_options()

    synth = commands.add_parser("synth", parents=[shared], help="generate a planted-signal dataset")
    synth.add_argument("--n-stocks", type=int)
    synth.add_argument("--n-days", type=int)
    synth.add_argument("--sectors", type=int)
    synth.add_argument("--signal", type=float, help="signal strength in [0, 1]")

    tweet_filter = commands.add_parser("filter", parents=[shared], help="calibrate k and filter tweets")
    tweet_filter.add_argument("--k", type=parse_k)
    tweet_filter.add_argument("--scorer", choices=["lexicon", "import"])
    tweet_filter.add_argument("--slack", type=float)
    tweet_filter.add_argument("--lexicon", type=Path)

    commands.add_parser("pretrain-sector", parents=[shared], help="masked-ticker sector pretraining")

    train = commands.add_parser("train", parents=[shared], help="train the predictor")
    train.add_argument("--ablation", choices=ABLATION_CHOICES)

    evaluate = commands.add_parser("evaluate", parents=[shared], help="score a trained predictor and the baselines")
    evaluate.add_argument("--ablation", choices=ABLATION_CHOICES)

    run = commands.add_parser("run", parents=[shared], help="every stage, all ablations, then the report")
    run.add_argument("--ablations", nargs="+", choices=ABLATION_CHOICES)

    report_cmd = commands.add_parser("report", help="comparison table and plots for finished runs")
    report_cmd.add_argument("runs", nargs="+", type=Path)
    report_cmd.add_argument("--out", type=Path, default=Path("report"))

    config_cmd = commands.add_parser("config", parents=[shared], help="print the resolved configuration")
    config_cmd.add_argument("--defaults", action="store_true", help="print built-in defaults only")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(getattr(args, "config", None))
    return config.override(
        **{
            "seed": getattr(args, "seed", None),
            "output_dir": getattr(args, "output_dir", None),
            "ablation": getattr(args, "ablation", None),
            "log_level": args.log_level.upper() if args.log_level else None,
            "data.dir": getattr(args, "data_dir", None),
            "filter.k": getattr(args, "k", None),
            "filter.scorer": getattr(args, "scorer", None),
            "filter.slack": getattr(args, "slack", None),
            "filter.lexicon": getattr(args, "lexicon", None),
            "synth.n_stocks": getattr(args, "n_stocks", None),
            "synth.n_days": getattr(args, "n_days", None),
            "synth.m_sectors": getattr(args, "sectors", None),
            "synth.signal_strength": getattr(args, "signal", None),
        }
    )


def stage_targets(command: str, config: RunConfig) -> List[str]:
    if command == "synth":
        return ["data"]
    if command == "filter":
        return ["filter"]
    if command == "pretrain-sector":
        return ["pretrain-sector"]
    if command == "train":
        return [f"train-{config.ablation.value}"]
    if command == "evaluate":
        return [f"evaluate-{config.ablation.value}", "baselines"]
    raise ValueError(f"{command} is not a stage command")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "report":
            written = report(args.runs, args.out)
            for name, path in written.items():
                print(f"{name}: {path}")
            return 0
        if args.command == "config" and args.defaults:
            sys.stdout.write(RunConfig.defaults().to_yaml())
            return 0
        config = resolve_config(args)
        logging.getLogger().setLevel(config.log_level)
        if args.command == "config":
            sys.stdout.write(config.to_yaml())
            return 0
        torch.set_num_threads(config.threads)
        if args.command == "run":
            ablations = [Ablation(a) for a in args.ablations] if args.ablations else None
            root = run_pipeline(config, ablations, force=args.force)
            print(root)
            return 0
        pipeline = Pipeline(config, force=args.force)
        pipeline.run(stage_targets(args.command, config))
        logger.info("done: %s", pipeline.stats())
        return 0
    except EconError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except Exception:
        logger.exception("unexpected failure")
        return 1


def cli() -> None:
    """CLI entry point."""
    sys.exit(main())


if __name__ == "__main__":
    cli()
