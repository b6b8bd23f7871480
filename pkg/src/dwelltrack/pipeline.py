"""File-driven pipeline stages.

Every stage reads and writes fixed file names inside one output directory, so
stages can be run one at a time or chained with run_pipeline; both routes
produce byte-identical files for the same inputs, seed, and config. Nothing
here embeds timestamps or absolute paths in outputs.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from . import synth as synth_mod
from .classify import (
    DeviationProfile,
    ThresholdTable,
    classify,
    deviation_probabilities,
    fit_thresholds,
    period_layout,
    reference_thresholds,
    with_labels,
    write_classification_json,
    write_report_json,
)
from .cluster import (
    AggregatedTrajectory,
    WeightKind,
    aggregate,
    best_k,
    read_cluster_json,
    spectral_cluster,
    ssd_curve,
    weights_for,
    write_cluster_json,
)
from .config import PipelineConfig
from .deviation import (
    DeviationDay,
    deviation_history,
    read_deviations_jsonl,
    write_deviations_csv,
    write_deviations_jsonl,
)
from .errors import ValidationError
from .localize import (
    ReceiverMap,
    localize_stream,
    read_fixes_csv,
    read_registry,
    read_scan_log,
    write_fixes_csv,
    write_registry,
    write_scan_log,
)
from .model import (
    EncodedLocation,
    SpatioTemporalMatrix,
    group_by_resident,
    read_trajectory_csv,
    write_trajectory_csv,
)
from .norms import HybridNorm, build_norms, read_norms_csv, write_norms_csv
from .preprocess import detect_origin, preprocess_fixes, smooth

SPEC_FILE = "spec.json"
GROUPS_FILE = "groups.json"
PLAN_FILE = "plan.jsonl"
TRAJECTORIES_FILE = "trajectories.csv"
PLANTED_TRAJECTORIES_FILE = "planted_trajectories.csv"
SCANS_FILE = "scans.jsonl"
RECEIVERS_FILE = "receivers.csv"
REGISTRY_FILE = "registry.csv"
FIXES_FILE = "fixes.csv"
INGEST_REPORT_FILE = "ingest_report.json"
ORIGINS_FILE = "origins.csv"
CLUSTERS_FILE = "clusters.json"
NORMS_FILE = "norms.csv"
DEVIATIONS_JSONL_FILE = "deviations.jsonl"
DEVIATIONS_CSV_FILE = "deviations.csv"
CLASSIFICATION_FILE = "classification.json"
REPORT_FILE = "report.json"

ORIGINS_HEADER = ["resident_id", "room_id", "origin_code"]


def _map_jobs(fn, items: Sequence, jobs: int) -> list:
    """Order-preserving map, threaded when jobs > 1."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# --- synth -----------------------------------------------------------------------

def run_synth(outdir, spec: synth_mod.CohortSpec, seed: int = 0) -> synth_mod.Cohort:
    """Generate a cohort and write it out, raw or trajectory-level."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    cohort = synth_mod.generate(spec, seed)
    spec.to_json(out / SPEC_FILE)
    synth_mod.write_groups_json(out / GROUPS_FILE, cohort)
    synth_mod.write_plan_jsonl(out / PLAN_FILE, cohort.plan)
    if spec.raw_scans:
        write_trajectory_csv(out / PLANTED_TRAJECTORIES_FILE, cohort.trajectories)
        assert cohort.scans is not None
        write_scan_log(out / SCANS_FILE, cohort.scans)
        cohort.receiver_map.to_csv(out / RECEIVERS_FILE)
        write_registry(out / REGISTRY_FILE, cohort.registry)
    else:
        write_trajectory_csv(out / TRAJECTORIES_FILE, cohort.trajectories)
    return cohort


# --- ingest ----------------------------------------------------------------------

def run_ingest(outdir, config: PipelineConfig) -> dict:
    out = Path(outdir)
    scans = read_scan_log(out / SCANS_FILE)
    receiver_map = ReceiverMap.from_csv(out / RECEIVERS_FILE)
    registry = read_registry(out / REGISTRY_FILE)
    fixes, report = localize_stream(
        scans, receiver_map, registry, threshold_dbm=config.rssi_threshold_dbm
    )
    write_fixes_csv(out / FIXES_FILE, fixes)
    payload = report.as_dict()
    with open(out / INGEST_REPORT_FILE, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return payload


# --- preprocess ------------------------------------------------------------------

def _write_origins(path, origins: dict[str, tuple[str, EncodedLocation]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ORIGINS_HEADER)
        for rid in sorted(origins):
            room_id, code = origins[rid]
            writer.writerow([rid, room_id, int(code)])


def read_origins_csv(path) -> dict[str, tuple[str, EncodedLocation]]:
    out: dict[str, tuple[str, EncodedLocation]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ORIGINS_HEADER:
            raise ValidationError(f"unexpected origins header in {path}")
        for line in reader:
            if not line:
                continue
            out[line[0]] = (line[1], EncodedLocation(int(line[2])))
    return out


def run_preprocess(outdir, config: PipelineConfig) -> None:
    """Turn fixes (raw route) or planted rows into smoothed trajectories plus
    per-resident origins."""
    out = Path(outdir)
    if (out / FIXES_FILE).exists():
        fixes = read_fixes_csv(out / FIXES_FILE)
        rooms = ReceiverMap.from_csv(out / RECEIVERS_FILE).rooms()
        rows, origins = preprocess_fixes(
            fixes,
            rooms,
            min_stay_slots=config.min_stay_slots,
            utc_offset_minutes=config.utc_offset_minutes,
        )
        write_trajectory_csv(out / TRAJECTORIES_FILE, rows)
        _write_origins(out / ORIGINS_FILE, origins)
        return

    if not (out / TRAJECTORIES_FILE).exists():
        raise ValidationError(f"nothing to preprocess in {out}: no fixes or trajectories")
    rows = [
        smooth(row, config.min_stay_slots)
        for row in read_trajectory_csv(out / TRAJECTORIES_FILE)
    ]
    matrices = group_by_resident(rows)
    # room identity is unknown at trajectory granularity
    origins = {rid: ("", detect_origin(m)) for rid, m in sorted(matrices.items())}
    write_trajectory_csv(out / TRAJECTORIES_FILE, rows)
    _write_origins(out / ORIGINS_FILE, origins)


# --- cluster ---------------------------------------------------------------------

def _load_matrices(out: Path) -> dict[str, SpatioTemporalMatrix]:
    return group_by_resident(read_trajectory_csv(out / TRAJECTORIES_FILE))


def _load_origin_codes(out: Path) -> dict[str, EncodedLocation]:
    path = out / ORIGINS_FILE
    if not path.exists():
        raise ValidationError(f"{path} missing: run preprocess first")
    return {rid: code for rid, (_, code) in read_origins_csv(path).items()}


def _aggregates(
    out: Path, config: PipelineConfig
) -> list[AggregatedTrajectory]:
    matrices = _load_matrices(out)
    origins = _load_origin_codes(out)

    def one(rid: str) -> AggregatedTrajectory:
        return aggregate(
            matrices[rid], config.min_valid_fraction, origin=origins.get(rid)
        )

    return _map_jobs(one, sorted(matrices), config.jobs)


def run_cluster(outdir, config: PipelineConfig) -> None:
    out = Path(outdir)
    aggs = _aggregates(out, config)
    w = weights_for(config.weight, config.focus_ratio)
    # clamp the sweep to what the cohort can support (k < n)
    lo, hi = config.k_range
    hi = min(hi, len(aggs) - 1)
    if lo > hi:
        raise ValidationError(
            f"cohort of {len(aggs)} residents cannot support k range {config.k_range}"
        )
    curve = ssd_curve(aggs, (lo, hi), w, config.h_slots, config.seed)
    k = config.k if config.k is not None else best_k(curve)
    assignment = spectral_cluster(aggs, k, w, config.h_slots, config.seed)
    write_cluster_json(
        out / CLUSTERS_FILE, assignment, config.seed, WeightKind(config.weight), curve
    )


# --- norms -----------------------------------------------------------------------

def run_norms(outdir, config: PipelineConfig) -> None:
    out = Path(outdir)
    matrices = _load_matrices(out)
    origins = _load_origin_codes(out)
    assignment, _ = read_cluster_json(out / CLUSTERS_FILE)
    norms = build_norms(
        matrices,
        assignment,
        origins,
        min_valid_fraction=config.min_valid_fraction,
        h_gap=config.h_gap_slots,
        leave_one_out=config.leave_one_out,
        prefer_earliest=config.prefer_earliest,
    )
    write_norms_csv(out / NORMS_FILE, [norms[key] for key in sorted(norms)])


# --- detect ----------------------------------------------------------------------

def _norms_by_resident(rows: Sequence[HybridNorm]) -> dict[str, dict[dt.date, HybridNorm]]:
    out: dict[str, dict[dt.date, HybridNorm]] = {}
    for norm in rows:
        out.setdefault(norm.resident_id, {})[norm.date] = norm
    return out


def run_detect(outdir, config: PipelineConfig) -> None:
    out = Path(outdir)
    matrices = _load_matrices(out)
    norms = _norms_by_resident(read_norms_csv(out / NORMS_FILE))

    def one(rid: str) -> list[DeviationDay]:
        return deviation_history(
            matrices[rid], norms.get(rid, {}), config.min_valid_fraction
        )

    histories = _map_jobs(one, sorted(matrices), config.jobs)
    days = [day for history in histories for day in history]
    write_deviations_jsonl(out / DEVIATIONS_JSONL_FILE, days)
    write_deviations_csv(out / DEVIATIONS_CSV_FILE, days)


# --- classify / report -----------------------------------------------------------

def _average_transitions(norms: Sequence[HybridNorm]) -> tuple[float, float]:
    """Cohort-average day window, skipping rows that fell back to a pure
    individual norm (their 144/144 marker carries no schedule signal)."""
    spans = [
        (n.transitions.p5, n.transitions.p6)
        for n in norms
        if not (n.transitions.p5 == 144 and n.transitions.p6 == 144)
    ]
    if not spans:
        return 144.0, 144.0
    return (
        sum(p5 for p5, _ in spans) / len(spans),
        sum(p6 for _, p6 in spans) / len(spans),
    )


def _load_thresholds(
    profiles: Sequence[DeviationProfile], config: PipelineConfig
) -> ThresholdTable:
    if config.thresholds == "fit":
        return fit_thresholds(profiles)
    if config.thresholds == "reference":
        return reference_thresholds()
    path = Path(config.thresholds)
    if not path.exists():
        raise ValidationError(
            f"thresholds must be 'fit', 'reference', or a JSON file; "
            f"{config.thresholds!r} does not exist"
        )
    with open(path) as fh:
        payload = json.load(fh)
    table = payload.get("thresholds", payload) if isinstance(payload, dict) else None
    if not isinstance(table, dict):
        raise ValidationError(f"{path}: not a threshold table")
    return ThresholdTable.from_dict(table)


def _classify_core(
    out: Path, config: PipelineConfig
) -> tuple[ThresholdTable, list[DeviationProfile]]:
    days = read_deviations_jsonl(out / DEVIATIONS_JSONL_FILE)
    by_resident: dict[str, list[DeviationDay]] = {}
    for day in days:
        by_resident.setdefault(day.resident_id, []).append(day)

    avg_p5, avg_p6 = _average_transitions(read_norms_csv(out / NORMS_FILE))
    layout = period_layout(avg_p5, avg_p6)

    def one(rid: str) -> DeviationProfile:
        return deviation_probabilities(by_resident[rid], layout)

    bare = _map_jobs(one, sorted(by_resident), config.jobs)
    thresholds = _load_thresholds(bare, config)
    profiles = [
        with_labels(
            p, classify(p, thresholds, config.awake_rule)
        )
        for p in bare
    ]
    return thresholds, profiles


def run_classify(outdir, config: PipelineConfig) -> None:
    out = Path(outdir)
    thresholds, profiles = _classify_core(out, config)
    write_classification_json(
        out / CLASSIFICATION_FILE, thresholds, profiles
    )


def run_report(outdir, config: PipelineConfig) -> None:
    out = Path(outdir)
    thresholds, profiles = _classify_core(out, config)
    write_report_json(out / REPORT_FILE, thresholds, profiles)


# --- end to end ------------------------------------------------------------------

def run_pipeline(outdir, spec: synth_mod.CohortSpec, config: PipelineConfig) -> None:
    """synth through report in one call, equivalent to running the stages."""
    out = Path(outdir)
    run_synth(out, spec, config.seed)
    if spec.raw_scans:
        run_ingest(out, config)
    run_preprocess(out, config)
    run_cluster(out, config)
    run_norms(out, config)
    run_detect(out, config)
    run_classify(out, config)
    run_report(out, config)
