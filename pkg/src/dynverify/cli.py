"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 stage failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .config import ConfigError, PipelineConfig
from .pipeline import StageError, cmd_attack, cmd_explore, cmd_report, cmd_train_task

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="dynverify", description="Checker-network design and fault campaigns.",
                                formatter_class=fmt)
    common = argparse.ArgumentParser(add_help=False, formatter_class=fmt)
    common.add_argument("-c", "--config", help="YAML pipeline config; built-in defaults when omitted")
    common.add_argument("-o", "--output", help="output directory (overrides config 'output')")
    common.add_argument("--seed", type=int, help="master seed (overrides config 'seed')")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train-task", parents=[common], formatter_class=fmt,
                       help="train and quantize the task model")
    t.add_argument("--epochs", type=int, help="override task.train.epochs")

    e = sub.add_parser("explore", parents=[common], formatter_class=fmt,
                       help="width sweep, clustering and candidate selection")
    e.add_argument("--runs", type=int, help="override campaign.runs")
    e.add_argument("--flips", type=int, help="override campaign.flips")

    a = sub.add_parser("attack", parents=[common], formatter_class=fmt,
                       help="random and bit-flip attacks against the selected design and the threshold baseline")
    a.add_argument("--bundle", help="bundle directory (default <output>/bundle)")
    a.add_argument("--runs", type=int, help="override campaign.runs")
    a.add_argument("--bfa-flips", type=int, help="override attack.bfa_flips")

    sub.add_parser("report", parents=[common], formatter_class=fmt, help="summarise a run directory")
    return p


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    top = {}
    if args.output is not None:
        top["output"] = args.output
    if args.seed is not None:
        top["seed"] = args.seed
    try:
        if getattr(args, "epochs", None) is not None:
            top["task"] = replace(cfg.task, train=replace(cfg.task.train, epochs=args.epochs))
        camp = {}
        if getattr(args, "runs", None) is not None:
            camp["runs"] = args.runs
        if getattr(args, "flips", None) is not None:
            camp["flips"] = args.flips
        if camp:
            top["campaign"] = replace(cfg.campaign, **camp)
        if getattr(args, "bfa_flips", None) is not None:
            top["attack"] = replace(cfg.attack, bfa_flips=args.bfa_flips)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return replace(cfg, **top) if top else cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        if args.command == "train-task":
            task = cmd_train_task(cfg)
            print(f"task model saved to {cfg.task_path} (held-out accuracy {task.meta['test_accuracy']:.4f})")
        elif args.command == "explore":
            s = cmd_explore(cfg)
            print(f"selected K={s['selected']['K']} at alpha*={s['alpha_star']:.4f}; "
                  f"O_C {s['identity']['O_C']:.4f} -> {s['selected']['O_C']:.4f}")
        elif args.command == "attack":
            cmd_attack(cfg, args.bundle)
            print((cfg.out_dir / "comparison.txt").read_text(), end="")
        else:
            print(cmd_report(cfg))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as e:
        print(f"stage failed: {e}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
