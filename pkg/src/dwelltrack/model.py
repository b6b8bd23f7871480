"""Core data model: the location alphabet, the 5-minute slot grid, and per-day rows.

A day is a fixed grid of 288 five-minute slots. Every slot holds one symbol of
the nine-value location alphabet; slot i covers minutes [i*5, (i+1)*5) of the
local day.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

SLOTS_PER_DAY = 288
SLOT_MINUTES = 5
SLOT_SECONDS = SLOT_MINUTES * 60


class EncodedLocation(IntEnum):
    """Location alphabet. Integer codes are a stable bijection used by all
    persisted files; do not reorder."""

    ORIGIN_L2 = 0    # resident's own room, level 2
    ORIGIN_L3 = 1    # resident's own room, level 3
    PRIVATE_L2 = 2   # another resident's room, level 2
    PRIVATE_L3 = 3   # another resident's room, level 3
    PUBLIC_B1 = 4    # common area, basement level
    PUBLIC_L2 = 5    # common area, level 2
    PUBLIC_L3 = 6    # common area, level 3
    RESTRICTED = 7   # staff-only area
    MISSING = 8      # no observation


OBSERVABLE_LOCATIONS: tuple[EncodedLocation, ...] = tuple(
    loc for loc in EncodedLocation if loc is not EncodedLocation.MISSING
)
ORIGIN_CATEGORIES = (EncodedLocation.ORIGIN_L2, EncodedLocation.ORIGIN_L3)
RESIDENTIAL_CATEGORIES = (
    EncodedLocation.ORIGIN_L2,
    EncodedLocation.ORIGIN_L3,
    EncodedLocation.PRIVATE_L2,
    EncodedLocation.PRIVATE_L3,
)


def origin_for_level(level: int) -> EncodedLocation:
    if level == 2:
        return EncodedLocation.ORIGIN_L2
    if level == 3:
        return EncodedLocation.ORIGIN_L3
    raise ValidationError(f"residential rooms live on level 2 or 3, got {level}")


def private_for_level(level: int) -> EncodedLocation:
    if level == 2:
        return EncodedLocation.PRIVATE_L2
    if level == 3:
        return EncodedLocation.PRIVATE_L3
    raise ValidationError(f"residential rooms live on level 2 or 3, got {level}")


def _as_locations(slots: Sequence[int]) -> tuple[EncodedLocation, ...]:
    if len(slots) != SLOTS_PER_DAY:
        raise ValidationError(f"expected {SLOTS_PER_DAY} slots, got {len(slots)}")
    try:
        return tuple(EncodedLocation(int(s)) for s in slots)
    except ValueError as exc:
        raise ValidationError(f"slot value outside the location alphabet: {exc}") from exc


@dataclass(frozen=True)
class DayTrajectory:
    """One resident-day: 288 slot symbols."""

    resident_id: str
    date: dt.date
    slots: tuple[EncodedLocation, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "slots", _as_locations(self.slots))

    @property
    def valid_fraction(self) -> float:
        """Fraction of slots with a non-Missing observation."""
        missing = sum(1 for s in self.slots if s is EncodedLocation.MISSING)
        return (SLOTS_PER_DAY - missing) / SLOTS_PER_DAY

    def codes(self) -> np.ndarray:
        return np.fromiter((int(s) for s in self.slots), dtype=np.uint8, count=SLOTS_PER_DAY)


def valid_day(traj: DayTrajectory, min_valid_fraction: float = 0.5) -> bool:
    """True when the day carries enough observations to be used downstream."""
    return traj.valid_fraction >= min_valid_fraction


@dataclass(frozen=True)
class SpatioTemporalMatrix:
    """All of one resident's days, stacked in date order."""

    resident_id: str
    days: tuple[DayTrajectory, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "days", tuple(self.days))
        for day in self.days:
            if day.resident_id != self.resident_id:
                raise ValidationError(
                    f"day for {day.resident_id!r} in matrix of {self.resident_id!r}"
                )
        dates = [d.date for d in self.days]
        if any(a >= b for a, b in zip(dates, dates[1:])):
            raise ValidationError("matrix days must be strictly increasing by date")

    def codes(self) -> np.ndarray:
        """(n_days, 288) uint8 view of the slot codes."""
        if not self.days:
            return np.zeros((0, SLOTS_PER_DAY), dtype=np.uint8)
        return np.stack([d.codes() for d in self.days])

    def valid_days(self, min_valid_fraction: float = 0.5) -> tuple[DayTrajectory, ...]:
        return tuple(d for d in self.days if valid_day(d, min_valid_fraction))


@dataclass(frozen=True)
class ResidentProfile:
    """Static facts about one resident."""

    resident_id: str
    origin: EncodedLocation
    cluster_label: int | None = None

    def __post_init__(self) -> None:
        if self.origin not in ORIGIN_CATEGORIES:
            raise ValidationError(f"origin must be an origin category, got {self.origin!r}")


# --- trajectory CSV -------------------------------------------------------

TRAJECTORY_HEADER = ["resident_id", "date"] + [f"slot_{i}" for i in range(SLOTS_PER_DAY)]


def write_trajectory_csv(path, rows: Iterable[DayTrajectory]) -> None:
    """Write day rows as `resident_id,date,slot_0,...,slot_287` with integer codes."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_HEADER)
        for row in rows:
            writer.writerow([row.resident_id, row.date.isoformat(), *map(int, row.slots)])


def read_trajectory_csv(path) -> list[DayTrajectory]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRAJECTORY_HEADER:
            raise ValidationError(f"unexpected trajectory header in {path}")
        out = []
        for line in reader:
            if not line:
                continue
            if len(line) != 2 + SLOTS_PER_DAY:
                raise ValidationError(f"short trajectory row in {path}: {line[:2]}")
            out.append(
                DayTrajectory(
                    resident_id=line[0],
                    date=dt.date.fromisoformat(line[1]),
                    slots=_as_locations([int(v) for v in line[2:]]),
                )
            )
        return out


def group_by_resident(rows: Iterable[DayTrajectory]) -> dict[str, SpatioTemporalMatrix]:
    """Bundle day rows into per-resident matrices, sorted by resident then date."""
    grouped: dict[str, list[DayTrajectory]] = {}
    for row in rows:
        grouped.setdefault(row.resident_id, []).append(row)
    out = {}
    for rid in sorted(grouped):
        days = sorted(grouped[rid], key=lambda d: d.date)
        out[rid] = SpatioTemporalMatrix(resident_id=rid, days=tuple(days))
    return out
