"""Norm filtering: keep only the slots where the observed day departs from
the hybrid norm."""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import NormGap, ValidationError
from .model import (
    SLOTS_PER_DAY,
    DayTrajectory,
    EncodedLocation,
    SpatioTemporalMatrix,
    valid_day,
)
from .norms import HybridNorm


@dataclass(frozen=True)
class DeviationDay:
    """One filtered resident-day.

    slots[t] is None when the input matched the norm at t or the input was
    Missing there; otherwise it preserves the observed location. missing marks
    the Missing (invalid) inputs so they are never mistaken for matches.
    """

    resident_id: str
    date: dt.date
    slots: tuple[EncodedLocation | None, ...]
    missing: tuple[bool, ...]
    deviated_count: int
    invalid_count: int

    def __post_init__(self) -> None:
        if len(self.slots) != SLOTS_PER_DAY or len(self.missing) != SLOTS_PER_DAY:
            raise ValidationError("deviation day must cover all 288 slots")


@dataclass(frozen=True)
class Episode:
    """Maximal run of consecutive deviated slots at one location.

    end_slot is exclusive. A contiguous deviation that moves between locations
    splits into one episode per location."""

    start_slot: int
    end_slot: int
    location: EncodedLocation


def filter_day(traj: DayTrajectory, norm: HybridNorm) -> DeviationDay:
    """Blank out every slot where the day agrees with its norm.

    Missing input slots are invalid, not deviations: they blank out too but
    are counted separately. A non-Missing input against a Missing norm slot is
    a literal mismatch and stays.
    """
    if traj.resident_id != norm.resident_id or traj.date != norm.date:
        raise ValidationError(
            f"day {traj.resident_id}/{traj.date} filtered against norm "
            f"{norm.resident_id}/{norm.date}"
        )
    slots: list[EncodedLocation | None] = []
    missing: list[bool] = []
    deviated = 0
    invalid = 0
    for observed, expected in zip(traj.slots, norm.slots):
        if observed is EncodedLocation.MISSING:
            slots.append(None)
            missing.append(True)
            invalid += 1
        elif observed == expected:
            slots.append(None)
            missing.append(False)
        else:
            slots.append(observed)
            missing.append(False)
            deviated += 1
    return DeviationDay(
        resident_id=traj.resident_id,
        date=traj.date,
        slots=tuple(slots),
        missing=tuple(missing),
        deviated_count=deviated,
        invalid_count=invalid,
    )


def deviation_history(
    matrix: SpatioTemporalMatrix,
    norms: Mapping[dt.date, HybridNorm],
    min_valid_fraction: float = 0.5,
) -> list[DeviationDay]:
    """Filter every valid day of a resident, in date order.

    A valid day without a norm is a NormGap error; invalid days are skipped.
    """
    out = []
    for day in matrix.days:
        if not valid_day(day, min_valid_fraction):
            continue
        norm = norms.get(day.date)
        if norm is None:
            raise NormGap(f"no norm for {matrix.resident_id} on {day.date}")
        out.append(filter_day(day, norm))
    return out


def episodes(day: DeviationDay) -> list[Episode]:
    """Split the day's deviated slots into constant-location runs."""
    out = []
    start = 0
    current: EncodedLocation | None = None
    for i, loc in enumerate(day.slots):
        if loc != current:
            if current is not None:
                out.append(Episode(start_slot=start, end_slot=i, location=current))
            start = i
            current = loc
    if current is not None:
        out.append(Episode(start_slot=start, end_slot=SLOTS_PER_DAY, location=current))
    return out


# --- files --------------------------------------------------------------------

def write_deviations_jsonl(path, days: Iterable[DeviationDay]) -> None:
    """One JSON object per resident-day with its episode list."""
    with open(path, "w") as fh:
        for day in days:
            payload = {
                "resident_id": day.resident_id,
                "date": day.date.isoformat(),
                "episodes": [
                    {
                        "start_slot": ep.start_slot,
                        "end_slot": ep.end_slot,
                        "location_code": int(ep.location),
                    }
                    for ep in episodes(day)
                ],
                # missing slots are recorded so readers can rebuild per-slot
                # validity, not just the total
                "missing_slots": [i for i, m in enumerate(day.missing) if m],
                "deviated_count": day.deviated_count,
                "invalid_count": day.invalid_count,
            }
            fh.write(json.dumps(payload, sort_keys=True) + "\n")


DEVIATIONS_CSV_HEADER = ["resident_id", "date"] + [f"slot_{i}" for i in range(SLOTS_PER_DAY)]


def write_deviations_csv(path, days: Iterable[DeviationDay]) -> None:
    """Dense mirror: empty cell for null, integer code for a deviated slot."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DEVIATIONS_CSV_HEADER)
        for day in days:
            writer.writerow(
                [day.resident_id, day.date.isoformat()]
                + ["" if s is None else int(s) for s in day.slots]
            )


def read_deviations_jsonl(path) -> list[DeviationDay]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                slots: list[EncodedLocation | None] = [None] * SLOTS_PER_DAY
                for ep in obj["episodes"]:
                    loc = EncodedLocation(int(ep["location_code"]))
                    for t in range(int(ep["start_slot"]), int(ep["end_slot"])):
                        slots[t] = loc
                missing = [False] * SLOTS_PER_DAY
                for t in obj["missing_slots"]:
                    missing[int(t)] = True
                day = DeviationDay(
                    resident_id=str(obj["resident_id"]),
                    date=dt.date.fromisoformat(obj["date"]),
                    slots=tuple(slots),
                    missing=tuple(missing),
                    deviated_count=int(obj["deviated_count"]),
                    invalid_count=int(obj["invalid_count"]),
                )
            except (KeyError, TypeError, ValueError, IndexError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad deviation row ({exc})") from exc
            if day.deviated_count != sum(s is not None for s in day.slots):
                raise ValidationError(
                    f"{path}:{lineno}: deviated_count disagrees with episodes"
                )
            out.append(day)
    return out
