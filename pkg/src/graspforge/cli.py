"""Command-line entry point: `graspforge <stage> [--config PATH] [--seed N] [--out DIR] [--set k=v]`."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from .config import ConfigError, apply_overrides, load_config, with_out
from .pipeline import (
    STAGES,
    MissingArtifact,
    RunLocked,
    StageError,
    open_run,
    run_lock,
    run_pipeline,
    run_stage,
)
from .report import ReportError, build_report, render_text, write_report

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2

BUILTIN_CONFIGS = ("desk", "paper", "smoke")


def resolve_config_path(name: str | None) -> Path | None:
    if name is None:
        return None
    if name in BUILTIN_CONFIGS and not Path(name).exists():
        return Path(str(resources.files("graspforge") / "configs" / f"{name}.json"))
    return Path(name)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file, or one of: " + ", ".join(BUILTIN_CONFIGS))
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--out", help="run directory (overrides the config)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graspforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-seed", "preselect", "record", "stats", "sample-poses", "train-diffusion", "eval", "ablate"):
        _common(sub.add_parser(name, help=f"run the {name} stage"))
    p = sub.add_parser("train-rl", help="Phase 2 (static) or Phase 3 (random) RL training + filtering")
    _common(p)
    p.add_argument("--pose", choices=("static", "random"), required=True)
    p = sub.add_parser("run", help="run every stage with missing artifacts, then the report")
    _common(p)
    p.add_argument("--force", action="store_true", help="re-run stages even when artifacts exist")
    p = sub.add_parser("report", help="aggregate a run directory into report.json / report.txt")
    p.add_argument("run_dir", nargs="?", help="run directory (default: --out or the config's out)")
    _common(p)
    return parser


def _config(args):
    cfg = load_config(resolve_config_path(args.config))
    cfg = apply_overrides(cfg, args.set)
    return with_out(cfg, args.out, args.seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "report":
            root = Path(args.run_dir or cfg.out)
            report = build_report(root)
            write_report(root, report)
            print(render_text(report), end="")
            timings = root / "timings.json"
            if timings.exists():
                t = json.loads(timings.read_text())
                print("\nwall clock (s): " + ", ".join(f"{k} {v:.1f}" for k, v in t.items()))
            return EXIT_OK
        if args.command == "run":
            report = run_pipeline(cfg, force=args.force)
            print(render_text(report), end="")
            return EXIT_OK
        stage = f"train-rl-{args.pose}" if args.command == "train-rl" else args.command
        assert stage in STAGES
        run = open_run(cfg)
        with run_lock(run.root):
            run_stage(run, stage)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, MissingArtifact, ReportError, RunLocked) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
