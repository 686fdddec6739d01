"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import PRESETS, VARIANTS, ConfigFileError, RunConfig, load_config, preset
from .gradcheck import run_gradcheck

log = logging.getLogger("tagalign")

COMMANDS = ("generate", "pretrain-gm", "pretrain-lm", "produce", "train-stage1", "train-stage2", "evaluate",
            "ablate", "chat", "all", "gradcheck")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tagalign", description="Graph-to-LM alignment pipeline.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--run-dir", type=Path, default=Path("runs/default"), help="artifact directory")
    common.add_argument("--seed", type=int, help="override every per-run seed")
    common.add_argument("--preset", choices=PRESETS, help="start from a named preset (ignored with --config)")
    common.add_argument("--variant", choices=VARIANTS, default="full")
    common.add_argument("--force", action="store_true", help="proceed despite a configuration mismatch")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "chat":
            p.add_argument("--node", type=int, required=True)
        if name == "gradcheck":
            p.add_argument("--seeds", type=int, default=10)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else preset(args.preset or "desk")
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _print_json(obj: object) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gradcheck":
        report = run_gradcheck(seeds=args.seeds)
        for line in report.lines():
            print(line)
        print(f"{'PASS' if report.passed else 'FAIL'} ({report.seconds:.1f}s)")
        return 0 if report.passed else 1

    try:
        config = resolve_config(args)
        if config.preset == "paper-shape" and args.command not in ("generate",):
            raise pipeline.PipelineError("the paper-shape preset documents dimensions only and is not trainable "
                                         "at desk scale")
        pipeline.set_deterministic()
        run = pipeline.RunDir(args.run_dir, config, force=args.force)
        with run.open():
            if args.command == "generate":
                print(pipeline.cmd_generate(run))
            elif args.command == "pretrain-gm":
                print(pipeline.cmd_pretrain_gm(run))
            elif args.command == "pretrain-lm":
                print(pipeline.cmd_pretrain_lm(run))
            elif args.command == "produce":
                print(pipeline.cmd_produce(run))
            elif args.command == "train-stage1":
                print(pipeline.cmd_train_stage1(run))
            elif args.command == "train-stage2":
                print(pipeline.cmd_train_stage2(run, args.variant))
            elif args.command == "evaluate":
                _print_json(pipeline.cmd_evaluate(run, args.variant).to_json())
            elif args.command == "ablate":
                _print_json(pipeline.cmd_ablate(run))
            elif args.command == "all":
                _print_json(pipeline.cmd_all(run, args.variant).to_json())
            elif args.command == "chat":
                pipeline.cmd_chat(run, args.node, args.variant)
    except (pipeline.PipelineError, ConfigFileError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
