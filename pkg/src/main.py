# src/main.py

"""Command-line entry point: train, eval, embed, retrieve and ablate sequence metric models."""

import argparse
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Sequence

# Ensure the src directory is in the Python path for module resolution
# when running the script directly (python src/main.py).
SCRIPT_DIR_MAIN = Path(__file__).resolve().parent
PROJECT_ROOT = SCRIPT_DIR_MAIN.parent
if str(SCRIPT_DIR_MAIN) not in sys.path:
    sys.path.insert(0, str(SCRIPT_DIR_MAIN))

from motion_metric.commands import cmd_ablate, cmd_embed, cmd_eval, cmd_retrieve, cmd_train
from motion_metric.config_manager import load_app_config
from motion_metric.errors import ConfigError, MotionMetricError
from motion_metric.logger_setup import get_logger, setup_logging

EXIT_OK = 0
EXIT_RUNTIME_ERROR = 1
EXIT_CONFIG_ERROR = 2


def _tpr_levels(text: str) -> List[float]:
    """Parses '95,90,80' or '0.95,0.9,0.8'."""
    levels = []
    for token in text.split(","):
        value = float(token.strip())
        levels.append(value / 100.0 if value > 1.0 else value)
    return levels


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motion-metric", description=__doc__)
    parser.add_argument("--config", type=Path, help="Run configuration YAML (see config.example.yaml)")
    parser.add_argument("--profile", choices=["paper", "desk"], help="Default hyperparameter profile")
    parser.add_argument("--seed", type=int, help="Run seed")
    parser.add_argument("--out", type=Path, help="Output directory")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING, ...")

    data_flags = argparse.ArgumentParser(add_help=False)
    source = data_flags.add_mutually_exclusive_group()
    source.add_argument("--synthetic", type=Path, help="Synthetic class spec YAML")
    source.add_argument("--manifest", type=Path, help="Dataset manifest (JSON lines)")
    data_flags.add_argument("--label-key", choices=["category", "subject"], help="Label driving episodes and evaluation")

    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", parents=[data_flags], help="Train an encoder")
    train.add_argument("--loss", dest="loss_kind",
                       choices=["mmd_nca", "triplet", "triplet_gor", "contrastive", "nca", "n_pair"])
    train.add_argument("--margin", type=float, help="Margin for triplet and contrastive losses")
    train.add_argument("--updates", type=int, help="Total number of updates")
    train.add_argument("--resume", type=Path, help="Checkpoint to resume from")

    evaluate = sub.add_parser("eval", parents=[data_flags], help="Evaluate metrics on unseen labels")
    evaluate.add_argument("--checkpoint", type=Path)
    evaluate.add_argument("--metrics", help="Comma-separated subset of learned,l2,dtw")
    evaluate.add_argument("--tpr-levels", type=_tpr_levels, help="e.g. 95,90,85,80,75,70")

    embed = sub.add_parser("embed", parents=[data_flags], help="Write embeddings for every sequence")
    embed.add_argument("--checkpoint", type=Path, required=True)
    embed.add_argument("--output", type=Path)

    retrieve = sub.add_parser("retrieve", parents=[data_flags], help="Nearest neighbors of one sequence")
    retrieve.add_argument("--checkpoint", type=Path, required=True)
    retrieve.add_argument("--query", required=True, help="source_id of the query sequence")
    retrieve.add_argument("-k", type=int, default=None)

    ablate = sub.add_parser("ablate", parents=[data_flags], help="Train and evaluate the ablation variants")
    ablate.add_argument("--updates", type=int, help="Total number of updates per variant")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Maps explicit command-line flags onto configuration keys."""
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    if args.log_level:
        overrides["log_level"] = args.log_level

    data: Dict[str, Any] = {}
    if getattr(args, "synthetic", None):
        data.update(synthetic_specs=str(args.synthetic), manifest=None)
    if getattr(args, "manifest", None):
        data.update(manifest=str(args.manifest), synthetic_specs=None)
    if getattr(args, "label_key", None):
        data["label_key"] = args.label_key
    if data:
        overrides["data"] = data

    loss: Dict[str, Any] = {}
    if getattr(args, "loss_kind", None):
        loss["loss_kind"] = args.loss_kind
    if getattr(args, "margin", None) is not None:
        loss["margin"] = args.margin
    if loss:
        overrides["loss"] = loss
    if getattr(args, "updates", None) is not None:
        overrides["train"] = {"total_updates": args.updates}

    evaluation: Dict[str, Any] = {}
    if getattr(args, "metrics", None):
        evaluation["metrics"] = [m.strip() for m in args.metrics.split(",") if m.strip()]
    if getattr(args, "tpr_levels", None):
        evaluation["tpr_levels"] = args.tpr_levels
    if evaluation:
        overrides["evaluation"] = evaluation
    return overrides


def main(argv: Sequence[str] | None = None) -> int:
    """Parses arguments, loads configuration and logging, then runs one command."""
    args = build_parser().parse_args(argv)

    # 1. Load Configuration
    print("ℹ️ Phase 1 Loading configuration...", file=sys.stderr)
    try:
        config = load_app_config(args.config, args.profile, overrides_from_args(args))
    except (ConfigError, FileNotFoundError) as e:
        print(f"ERROR: Invalid configuration. Details: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    # 2. Setup Logging
    log_file_path = Path(config.out_dir) / "logs" / f"motion_metric_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
    try:
        setup_logging(log_level=config.log_level, log_file=log_file_path)
    except ValueError as e:
        print(f"ERROR: Failed to setup logging. Details: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    logger = get_logger(__name__)
    logger.info(f"Command '{args.command}' started (profile {config.profile}, seed {config.seed})")
    logger.debug(f"Full configuration: {config.to_dict()}")

    # 3. Run the command
    print(f"🔧 Phase 2 Running '{args.command}'...", file=sys.stderr)
    try:
        if args.command == "train":
            cmd_train(config, resume=args.resume)
        elif args.command == "eval":
            cmd_eval(config, args.checkpoint)
        elif args.command == "embed":
            cmd_embed(config, args.checkpoint, args.output)
        elif args.command == "retrieve":
            cmd_retrieve(config, args.checkpoint, args.query, args.k)
        elif args.command == "ablate":
            cmd_ablate(config)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG_ERROR
    except FileNotFoundError as e:
        logger.error(f"Missing input: {e}")
        return EXIT_CONFIG_ERROR
    except MotionMetricError as e:
        logger.error(f"'{args.command}' failed: {e}")
        return EXIT_RUNTIME_ERROR
    except Exception as e:
        logger.error(f"An unexpected error occurred during '{args.command}': {e}", exc_info=True)
        return EXIT_RUNTIME_ERROR

    print(f"✅ Phase 2 Complete", file=sys.stderr)
    logger.info("Command finished successfully.")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
