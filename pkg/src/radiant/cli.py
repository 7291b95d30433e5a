"""Command line entry point: ``radiant <subcommand> [--config FILE] [--seed N] [--out DIR] [--jobs N]``.

Exit codes: 0 pass, 1 assertion failure, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, load, resolve
from .metric_models import ChartError, ModelError

SUBCOMMANDS = {
    "check-metric": "sample the metric symbol bounds and the timelike margin",
    "geodesics": "non-trapping constant C(R0, g) from a null-geodesic ensemble",
    "solve": "evolve the configured data mode by mode",
    "norms": "weighted fixed-time and space-time norms of the solution",
    "verify": "evaluate registry identities and inequalities",
    "decay": "fit decay exponents on the interior and cone channels",
    "elliptic": "Neumann series, weighted ratios and the tail sweep",
    "report": "collect stage outputs into report.json and summary.txt",
    "run": "full pipeline with the stages enabled in the config",
}

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radiant", description="Numerical checks of weighted wave estimates.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in SUBCOMMANDS.items():
        s = sub.add_parser(name, help=text, description=text)
        s.add_argument("--config", type=Path, help="JSON experiment config")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        s.add_argument("--out", type=Path, help="output directory (overrides the config)")
        s.add_argument("--jobs", type=int, help="worker threads (fallback: RADIANT_JOBS, then the config)")
        s.add_argument("--model", help="model id (overrides model.id)")
        if name in ("verify", "run"):
            s.add_argument("--registry", help="'all' or a comma-separated list of entry ids")
    return p


def _raw_config(args) -> dict:
    raw = load(args.config) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.model:
        raw.setdefault("model", {})["id"] = args.model
    if getattr(args, "registry", None):
        ids = "all" if args.registry == "all" else [s.strip() for s in args.registry.split(",") if s.strip()]
        raw.setdefault("registry", {})["ids"] = ids
    if args.out is not None:
        raw["out"] = str(args.out)
    return raw


def _jobs(args) -> int | None:
    if args.jobs is not None:
        return args.jobs
    env = os.environ.get("RADIANT_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"RADIANT_JOBS: not an integer ({env!r})") from None
    return None


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        raw = _raw_config(args)
        cfg = resolve(raw)
        jobs = _jobs(args)
    except (ConfigError, ModelError, ChartError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg["out"])

    if args.command == "report":
        if not out.exists():
            print(f"configuration error: output directory {out} does not exist", file=sys.stderr)
            return EXIT_CONFIG
        pipeline.build_report(out)
        print((out / "summary.txt").read_text(), end="")
        return EXIT_OK

    if args.command == "elliptic":
        try:
            res = pipeline.run_elliptic(cfg, out)
        except (ModelError, ChartError) as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except Exception as exc:  # numerical failure inside the solver
            print(f"numerical abort: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_ABORT
        print(json.dumps({"neumann": res["neumann"]["verdict"], "weighted": res["weighted"],
                          "sweep_growth": res["sweep"]["growth"]}, indent=2))
        return EXIT_OK

    stages = None if args.command == "run" else {args.command}
    try:
        manifest = pipeline.run_pipeline(cfg, stages=stages, out=out, jobs=jobs)
    except (ConfigError, ModelError, ChartError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run" or "report" in (stages or ()):
        summary = out / "summary.txt"
        if summary.exists():
            print(summary.read_text(), end="")
    else:
        print(json.dumps(manifest.results.get(args.command, {}), indent=2, default=str))
    for f in manifest.failures:
        print(f"FAIL {f}", file=sys.stderr)
    if manifest.error:
        print(f"numerical abort: {manifest.error}", file=sys.stderr)
    print(f"manifest: {out / 'manifest.json'} (exit {manifest.exit_code})", file=sys.stderr)
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
