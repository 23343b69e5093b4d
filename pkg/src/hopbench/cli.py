"""Command-line entry points: run, eval, forge, report.

Exit code is nonzero only when the batch itself fails (bad config,
unreadable inputs); individual instance failures are recorded in the run
summary and do not fail the process.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .batch import build_model, evaluate_run, forge_batch, render_report, run_batch
from .config import ConfigError, load_forge_config, load_run_config

logger = logging.getLogger(__name__)


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    if args.instances:
        cfg.instances_path = args.instances
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.tools:
        cfg.tools = [t.strip() for t in args.tools.split(",") if t.strip()]
    cfg.validate()
    summary = run_batch(cfg)
    print(
        f"run complete: {len(summary.completed)} done, "
        f"{len(summary.skipped)} skipped (resume), {len(summary.failed)} failed "
        f"-> {summary.run_dir}"
    )
    for qid, message in sorted(summary.failed.items()):
        print(f"  instance {qid}: {message}", file=sys.stderr)
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    judge = build_model(args.judge)
    report = evaluate_run(args.run_dir, judge, instances_path=args.instances)
    print(render_report(report))
    return 0


def _cmd_forge(args: argparse.Namespace) -> int:
    cfg = load_forge_config(args.config)
    if args.roots:
        cfg.roots_path = args.roots
    if args.output_dir:
        cfg.output_dir = args.output_dir
    cfg.validate()
    result = forge_batch(cfg)
    print(
        f"forge complete: {result['accepted']} accepted, "
        f"{result['rejected']} rejected -> {result['out_dir']}"
    )
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    report = json.loads(Path(args.eval_json).read_text(encoding="utf-8"))
    print(render_report(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hopbench",
        description="Run, evaluate, and forge multi-hop browse-and-verify benchmarks.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a batch of episodes")
    p_run.add_argument("--config", required=True, help="YAML run config")
    p_run.add_argument("--instances", help="override instances path")
    p_run.add_argument("--output-dir", help="override output directory")
    p_run.add_argument("--tools", help="comma-separated tool toggle set")
    p_run.set_defaults(func=_cmd_run)

    p_eval = sub.add_parser("eval", help="judge and analyze a finished run")
    p_eval.add_argument("--run-dir", required=True)
    p_eval.add_argument("--judge", required=True, help="judge model spec, e.g. openai:gpt-4o")
    p_eval.add_argument("--instances", help="override instances path")
    p_eval.set_defaults(func=_cmd_eval)

    p_forge = sub.add_parser("forge", help="forge multi-hop instances from roots")
    p_forge.add_argument("--config", required=True, help="YAML forge config")
    p_forge.add_argument("--roots", help="override roots path")
    p_forge.add_argument("--output-dir", help="override output directory")
    p_forge.set_defaults(func=_cmd_forge)

    p_report = sub.add_parser("report", help="re-render tables from eval.json")
    p_report.add_argument("--eval-json", required=True)
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
