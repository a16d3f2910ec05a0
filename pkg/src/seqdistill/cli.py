"""Command-line entry point.

Each command is one pipeline stage; stages communicate only via record files
under the configured working directory. Every run writes a resolved-config
snapshot beside its outputs, takes a per-workdir lock while running, and is
byte-reproducible with the mock backend and fixed seeds.

Exit codes: 0 success, 1 usage or config validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config, write_snapshot
from . import pipeline

COMMANDS = {
    "sample": "sample teacher candidates at both temperatures",
    "score": "teacher-forced scoring of candidates under all three models",
    "classify": "label every sentence with its source type",
    "select": "divergence-aware candidate selection under the budget",
    "filter": "structure/length/repetition gate with a rejection report",
    "build-stages": "render the two temperature-scheduled stage datasets",
    "mixed-policy": "student regeneration, cut-off analytics, teacher continuations",
    "analyze": "export likelihood, position-profile and cut-off analytics (CSV + figures)",
    "oracle": "exact toy-model divergence checks and coverage measurements (CSV + figures)",
}

GATEWAY_COMMANDS = {"sample", "score", "select", "filter", "mixed-policy"}


class WorkdirLock:
    """One command at a time per output directory."""

    def __init__(self, workdir: Path):
        self.path = workdir / ".lock"
        self._fd: int | None = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"workdir is locked by another run ({self.path}); remove the lock "
                "file if no other command is running"
            ) from None
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc_info):
        if self._fd is not None:
            os.close(self._fd)
            self.path.unlink(missing_ok=True)
        return False


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqdistill",
        description="Data-curation pipeline for sequence-level distillation.",
    )
    sub = parser.add_subparsers(dest="command")
    for name, help_text in COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="pipeline config JSON")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the command's configured seed")
        cmd.add_argument("--mock", action="store_true",
                         help="force the built-in mock backend")
        cmd.add_argument("--verbose", action="store_true",
                         help="emit per-record verdicts where applicable")
    return parser


def _apply_overrides(cfg, args) -> None:
    if args.seed is not None:
        cfg.sampling.seed = args.seed
        cfg.mixed_policy.seed = args.seed
        cfg.oracle.seed = args.seed
    if args.mock:
        cfg.gateway.use_mock = True


def run_command(command: str, cfg, verbose: bool = False) -> dict:
    gateway = pipeline.build_gateway(cfg) if command in GATEWAY_COMMANDS else None
    if command == "sample":
        return pipeline.cmd_sample(cfg, gateway)
    if command == "score":
        return pipeline.cmd_score(cfg, gateway)
    if command == "classify":
        return pipeline.cmd_classify(cfg)
    if command == "select":
        return pipeline.cmd_select(cfg, gateway)
    if command == "filter":
        return pipeline.cmd_filter(cfg, gateway, verbose=verbose)
    if command == "build-stages":
        return pipeline.cmd_build_stages(cfg)
    if command == "mixed-policy":
        return pipeline.cmd_mixed_policy(cfg, gateway)
    if command == "analyze":
        return pipeline.cmd_analyze(cfg)
    if command == "oracle":
        return pipeline.cmd_oracle(cfg)
    raise ConfigError(f"unknown command {command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1

    try:
        cfg = load_config(args.config)
        _apply_overrides(cfg, args)
        cfg.validate(args.command)
    except ConfigError as exc:
        print(f"seqdistill: config error: {exc}", file=sys.stderr)
        return 1

    try:
        with WorkdirLock(cfg.workdir_path()):
            write_snapshot(cfg, args.command)
            summary = run_command(args.command, cfg, verbose=args.verbose)
        print(json.dumps({"command": args.command, **summary}, sort_keys=True))
        return 0
    except ConfigError as exc:
        print(f"seqdistill: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"seqdistill: {args.command} failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
