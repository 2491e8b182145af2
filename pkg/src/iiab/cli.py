"""Command line: ``iiab run``, ``iiab replay`` and ``iiab check``."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

from .harness import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_REPLAY,
    ConfigError,
    ExperimentConfig,
    ReplayRefused,
    run_experiment,
    replay,
)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iiab", description="Seeded simulator and checker for the IIAB model.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute an experiment config; IIAB_OUTPUT_DIR overrides output.dir")
    run.add_argument("config")
    rep = sub.add_parser("replay", help="re-execute a run artifact or a checker report")
    rep.add_argument("artifact")
    rep.add_argument("--seed", type=int, help="must match the seed pinned in the artifact")
    chk = sub.add_parser("check", help="run a config in exhaustive mode")
    chk.add_argument("config")
    return ap


def _load(path: str, exhaustive: bool) -> ExperimentConfig:
    with open(path) as fh:
        data = json.load(fh)
    if exhaustive:
        data = {**data, "mode": "exhaustive"}
    return ExperimentConfig.from_json(data)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "replay":
            res = replay(args.artifact, seed=args.seed)
            print(json.dumps({"kind": res.kind, "identical": res.identical, **res.detail}, sort_keys=True))
            return EXIT_OK if res.identical else EXIT_REPLAY
        cfg = _load(args.config, args.command == "check")
        summary = run_experiment(cfg)
    except ReplayRefused as e:
        print(f"iiab: replay refused: {e}", file=sys.stderr)
        return EXIT_REPLAY
    except (ConfigError, OSError, json.JSONDecodeError) as e:
        print(f"iiab: {e}", file=sys.stderr)
        return EXIT_CONFIG
    doc = summary.to_json()
    print(json.dumps({"name": doc["name"], "mode": doc["mode"], "aggregate": doc["aggregate"],
                      "exit_code": doc["exit_code"], **({"error": doc["error"]} if "error" in doc else {})},
                     sort_keys=True))
    if summary.error:
        print(f"iiab: {summary.error}", file=sys.stderr)
    return summary.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
