# search_main.py
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from app.observability import _init_otel_tracing_once
from app.orchestrator import COMMANDS, run_command

# ------------------------------------------------------------------ logging
logging.basicConfig(
    level=os.getenv("LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
    stream=sys.stderr,
)
log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="search_main",
        description="Sampler search: shared pretraining, GP-UCB outer loop, fine-tune scoring and final retrain.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="run config: a JSON/YAML file path or raw JSON text")
    parser.add_argument("--workdir", help="overrides paths.workdir from the config")
    parser.add_argument("--agent", choices=["ss", "random", "rl"], help="search: outer-loop agent")
    parser.add_argument("--transform", choices=["cgf", "cdf"], help="search: transform mode")
    parser.add_argument("--sampler", help="retrain: SamplerParams JSON or a search result.json")
    parser.add_argument("--result", help="sr-tr: search result.json")
    parser.add_argument("--param", choices=["S", "E_o"], help="sweep: parameter to vary")
    parser.add_argument("--values", nargs="+", type=int, default=[], help="sweep: values of --param")
    parser.add_argument("--out", help="output path (file, or directory for report)")
    parser.add_argument("files", nargs="*", help="report: search result files")
    return parser


def exit_code(result: dict) -> int:
    if result.get("status") == "success":
        return 0
    return 2 if result.get("where") == "orchestrator" else 1


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    try:
        _init_otel_tracing_once()
    except Exception as e:
        log.warning("OTEL init failed: %s", e)

    result = run_command(
        args.command,
        args.config,
        workdir=args.workdir,
        agent=args.agent,
        transform=args.transform,
        sampler=args.sampler,
        result=args.result,
        param=args.param,
        values=args.values,
        files=args.files,
        out=args.out,
    )
    print(json.dumps(result, indent=2, sort_keys=True))
    return exit_code(result)


if __name__ == "__main__":
    sys.exit(main())
