"""
Command-line entry point for one-shot federated segmentation experiments.
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

from ..config.experiment import ExperimentConfig
from .exceptions import FedSegError, StageError
from .logging_setup import attach_run_log, detach_run_logs, setup_logging
from .manifest import STAGES
from .pipeline import ABLATION_AXES, ExperimentRunner

logger = logging.getLogger(__name__)

STAGE_COMMANDS = {
    "train-client": "train_clients",
    "score-inconsistency": "score_inconsistency",
    "augment": "augment",
    "distill": "distill",
    "fedavg": "baselines",
    "evaluate": "evaluate",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedseg",
        description="One-shot federated distillation of segmentation models on synthetic domains",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment YAML file")
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    common.add_argument("--out", default=None, help="override the output directory")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ...")
    common.add_argument("--log-file", default=None, help="also log to this rotating file")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="render client, server and target domains")
    train = sub.add_parser("train-client", parents=[common], help="train and upload clients")
    train.add_argument("--client", type=int, default=None, help="train only this client index")
    for command in ("score-inconsistency", "augment", "distill", "fedavg", "evaluate"):
        sub.add_parser(command, parents=[common], help=f"run the '{STAGE_COMMANDS[command]}' stage")

    run = sub.add_parser("run", parents=[common], help="full pipeline, resuming where it stopped")
    run.add_argument("--stage", choices=STAGES, default=None, help="stop after this stage")

    ablate = sub.add_parser("ablate", parents=[common], help="component ablation table")
    ablate.add_argument(
        "--axes",
        nargs="*",
        choices=ABLATION_AXES,
        default=list(ABLATION_AXES),
        help="components to ablate (none: full configuration only)",
    )

    sweep = sub.add_parser("sweep-samples", parents=[common], help="generated-image count sweep")
    sweep.add_argument("--counts", type=int, nargs="+", default=None)
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_yaml(args.config)
    return config.with_overrides(seed=args.seed, output_dir=args.out)


def dispatch(args: argparse.Namespace) -> Dict[str, Any]:
    """Run the requested command and return the runner status."""
    config = load_config(args)
    attach_run_log(config.output_dir)
    runner = ExperimentRunner(config)
    command = args.command
    if command == "gen-data":
        runner.generate_data()
    elif command == "train-client" and args.client is not None:
        stage = "train_clients"
        try:
            runner.manifest.require_before(stage)
            runner.train_clients(only=args.client)
        except FedSegError as e:
            raise StageError(stage, str(e), e) from e
        if runner.clients_uploaded():
            runner.manifest.mark_completed(stage, 0.0)
            runner.save()
    elif command in STAGE_COMMANDS:
        runner.run_stage(STAGE_COMMANDS[command])
    elif command == "run":
        runner.run(until=args.stage)
    elif command == "ablate":
        runner.run_ablation(args.axes)
    elif command == "sweep-samples":
        runner.run_sample_sweep(args.counts)
    return runner.get_status()


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(list(argv) if argv is not None else None)
    setup_logging(log_file=args.log_file, log_level=args.log_level)

    try:
        status = dispatch(args)
    except StageError as e:
        logger.error(str(e))
        print(f"error: stage {e.stage} failed: {e.cause or e}", file=sys.stderr)
        return 2
    except FedSegError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {args.command}: {e}", file=sys.stderr)
        return 1
    finally:
        detach_run_logs()

    completed: List[str] = status["completed"]
    logger.info(f"{args.command} done; completed stages: {completed}; next: {status['next']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
