"""Command line interface.

Every stage command works on one output directory with fixed file names, so
a pipeline can be driven stage by stage:

    dwelltrack synth --residents 20 --groups 4 --days 30 --out run/
    dwelltrack preprocess --out run/
    dwelltrack cluster --out run/ --weight active_day_focus
    dwelltrack norms --out run/
    dwelltrack detect --out run/
    dwelltrack classify --out run/
    dwelltrack report --out run/

or in one step with `dwelltrack pipeline`. Config values resolve as
defaults, then --config file, then explicit flags.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import sys

from . import __version__
from .config import (
    AWAKE_RULES,
    WEIGHT_KINDS,
    PipelineConfig,
    load_config,
    parse_k_range,
)
from .errors import PipelineError, ValidationError
from .pipeline import (
    run_classify,
    run_cluster,
    run_detect,
    run_ingest,
    run_norms,
    run_pipeline,
    run_preprocess,
    run_report,
    run_synth,
)
from .synth import CohortSpec, NoiseModel

_CONFIG_KEYS = (
    "seed",
    "jobs",
    "rssi_threshold_dbm",
    "utc_offset_minutes",
    "min_stay_slots",
    "min_valid_fraction",
    "h_slots",
    "weight",
    "focus_ratio",
    "k",
    "k_range",
    "h_gap_slots",
    "prefer_earliest",
    "leave_one_out",
    "awake_rule",
    "thresholds",
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", required=True, help="working directory for stage files")
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--jobs", type=int, default=None)
    parser.add_argument("--rssi-threshold-dbm", type=int, default=None)
    parser.add_argument("--utc-offset-minutes", type=int, default=None)
    parser.add_argument("--min-stay-slots", type=int, default=None)
    parser.add_argument("--min-valid-fraction", type=float, default=None)
    parser.add_argument("--h-slots", type=int, default=None)
    parser.add_argument("--weight", choices=WEIGHT_KINDS, default=None)
    parser.add_argument("--focus-ratio", type=float, default=None)
    parser.add_argument("--k", type=int, default=None)
    parser.add_argument("--k-range", default=None, metavar="LO:HI")
    parser.add_argument("--h-gap-slots", type=int, default=None)
    parser.add_argument(
        "--prefer-earliest", action=argparse.BooleanOptionalAction, default=None
    )
    parser.add_argument(
        "--leave-one-out", action=argparse.BooleanOptionalAction, default=None
    )
    parser.add_argument("--awake-rule", choices=AWAKE_RULES, default=None)
    parser.add_argument(
        "--thresholds", default=None, help="'fit', 'reference', or a JSON file"
    )


def _add_spec_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--spec", help="cohort spec JSON; overrides the quick flags")
    parser.add_argument("--residents", type=int, default=20)
    parser.add_argument("--groups", type=int, default=4)
    parser.add_argument("--days", type=int, default=30)
    parser.add_argument("--start-date", default="2024-03-04")
    parser.add_argument(
        "--raw", action=argparse.BooleanOptionalAction, default=False,
        help="emit raw scan logs instead of trajectories",
    )
    parser.add_argument("--flip-rate", type=float, default=0.0)
    parser.add_argument("--missing-rate", type=float, default=0.0)
    parser.add_argument("--rssi-jitter-dbm", type=int, default=0)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dwelltrack",
        description="Room-level daily trajectories: synth, ingest, cluster, "
        "norms, deviation, and behavior labels.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (
        ("synth", "generate a synthetic cohort"),
        ("pipeline", "run every stage end to end"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        _add_spec_flags(p)

    for name, helptext in (
        ("ingest", "vote scan logs down to per-cycle location fixes"),
        ("preprocess", "build smoothed day trajectories and origins"),
        ("cluster", "group residents by trajectory similarity"),
        ("norms", "build per-day hybrid norms"),
        ("detect", "filter trajectories against norms"),
        ("classify", "fit fences and label behaviors"),
        ("report", "classification plus cohort summary"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)

    return parser


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is None:
            continue
        if key == "k_range":
            value = parse_k_range(value)
        overrides[key] = value
    return config.merged(**overrides)


def _resolve_spec(args: argparse.Namespace) -> CohortSpec:
    if args.spec:
        return CohortSpec.from_json(args.spec)
    try:
        start_date = dt.date.fromisoformat(args.start_date)
    except ValueError as exc:
        raise ValidationError(f"bad --start-date {args.start_date!r}") from exc
    return CohortSpec(
        n_residents=args.residents,
        n_groups=args.groups,
        days=args.days,
        start_date=start_date,
        noise=NoiseModel(
            slot_flip_rate=args.flip_rate,
            missing_rate=args.missing_rate,
            rssi_jitter_dbm=args.rssi_jitter_dbm,
        ),
        raw_scans=args.raw,
    )


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _resolve_config(args)
        if args.command == "synth":
            run_synth(args.out, _resolve_spec(args), config.seed)
        elif args.command == "pipeline":
            run_pipeline(args.out, _resolve_spec(args), config)
        elif args.command == "ingest":
            run_ingest(args.out, config)
        elif args.command == "preprocess":
            run_preprocess(args.out, config)
        elif args.command == "cluster":
            run_cluster(args.out, config)
        elif args.command == "norms":
            run_norms(args.out, config)
        elif args.command == "detect":
            run_detect(args.out, config)
        elif args.command == "classify":
            run_classify(args.out, config)
        elif args.command == "report":
            run_report(args.out, config)
    except ValidationError as exc:
        _report_error(exc)
        return 2
    except (PipelineError, OSError) as exc:
        _report_error(exc)
        return 3
    return 0


def _report_error(exc: Exception) -> None:
    print(
        json.dumps({"error": str(exc), "type": type(exc).__name__}),
        file=sys.stderr,
    )


if __name__ == "__main__":
    sys.exit(main())
