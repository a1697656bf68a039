"""Command line interface.

Subcommands mirror the pipeline stages plus a scenario generator:

    microequity synth --out DIR [--seed N] [--preset default|mini|large]
    microequity run --config run.ini [--out DIR]
    microequity ingest-check --config run.ini
    microequity infer-trips --config run.ini
    microequity metrics --config run.ini
    microequity report --config run.ini [--alpha 0.01]

Exit codes: 0 success, 2 invalid configuration or arguments, 3 data
problems, 4 internal errors. The output directory comes from the config
file, overridden by MICROEQUITY_OUT, overridden by --out.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from .errors import EXIT_INTERNAL, EXIT_OK, MicroequityError
from .config import load_config
from .pipeline import STAGES, run_pipeline

_STAGE_OF_COMMAND = {
    "ingest-check": "ingest",
    "infer-trips": "trips",
    "metrics": "metrics",
    "report": "report",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="microequity",
        description="Spatial equity analysis for shared micromobility systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic scenario with ground truth")
    synth.add_argument("--out", required=True, help="directory to create the scenario in")
    synth.add_argument("--seed", type=int, default=42, help="random seed (default 42)")
    synth.add_argument(
        "--preset",
        choices=("default", "mini", "large"),
        default="default",
        help="scenario size preset",
    )

    def add_config(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="path to the run configuration file")
        p.add_argument("--out", help="output directory (overrides config and MICROEQUITY_OUT)")

    run = sub.add_parser("run", help="run every pipeline stage in order")
    add_config(run)

    for command, stage in _STAGE_OF_COMMAND.items():
        helps = {
            "ingest": "validate all inputs and record their checksums",
            "trips": "infer trips, loose events, and idle gaps",
            "metrics": "compute per-zone indicators and density rasters",
            "report": "build the category tables, weighted means, and tests",
        }
        p = sub.add_parser(command, help=helps[stage])
        add_config(p)
        if stage == "report":
            p.add_argument(
                "--alpha", type=float, default=None,
                help="significance level for the difference tests (overrides config)",
            )
    return parser


def _resolve_out(args) -> Optional[Path]:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get("MICROEQUITY_OUT", "").strip()
    if env:
        return Path(env)
    return None


def _cmd_synth(args) -> int:
    from .synth import ScenarioSpec, generate_scenario

    presets = {
        "default": {},
        "mini": {
            "grid_rows": 4,
            "grid_cols": 4,
            "cadence_min": 30.0,
            "scooter_per_zone_eea": 4,
            "scooter_per_zone_noneea": 2,
            "bike_trips_per_day": 10,
        },
        "large": {
            "grid_rows": 12,
            "grid_cols": 12,
            "days": 4,
            "cadence_min": 10.0,
        },
    }
    spec = ScenarioSpec(seed=args.seed, **presets[args.preset])
    truth = generate_scenario(spec, Path(args.out))
    n_trips = sum(len(ts) for ts in truth.trips.values())
    print(f"scenario written to {args.out}: {len(truth.zone_ids)} zones, "
          f"{n_trips} true trips over {len(truth.days)} days (seed {spec.seed})")
    print(f"run it with: microequity run --config {Path(args.out) / 'run.ini'}")
    return EXIT_OK


def _cmd_pipeline(args, stages: List[str]) -> int:
    cfg = load_config(Path(args.config))
    alpha = getattr(args, "alpha", None)
    if alpha is not None:
        cfg = replace(cfg, alpha=alpha)
    out_dir = _resolve_out(args)
    results = run_pipeline(cfg, stages=stages, out_dir=out_dir)
    target = out_dir or cfg.out_dir
    for res in results:
        wrote = f", wrote {len(res.outputs)} files" if res.outputs else ""
        print(f"{res.stage}: ok{wrote}")
    print(f"outputs in {target}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "run":
            return _cmd_pipeline(args, list(STAGES))
        return _cmd_pipeline(args, [_STAGE_OF_COMMAND[args.command]])
    except MicroequityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
