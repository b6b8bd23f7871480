"""Per-day hybrid norms: individual habit outside the group window, group
habit inside it.

A resident's individual norm is their aggregated modal day. A cluster's group
norm is the per-slot mode over the members' rows for one date (absent when
fewer than three members contributed). The two are spliced at transition
points derived from when each norm leaves and returns to the origin.
"""

from __future__ import annotations

import csv
import datetime as dt
import warnings
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cluster import AggregatedTrajectory, ClusterAssignment, aggregate, modal_slots
from .errors import DegeneracyWarning, NoValidDays, ValidationError
from .model import (
    SLOTS_PER_DAY,
    DayTrajectory,
    EncodedLocation,
    SpatioTemporalMatrix,
)

DEFAULT_H_GAP_SLOTS = 6  # 30 minutes
MIN_GROUP_ROWS = 3       # a group norm needs more than 2 contributing rows
_NOON = SLOTS_PER_DAY // 2


class Provenance(IntEnum):
    INDIVIDUAL = 0
    GROUP = 1


@dataclass(frozen=True)
class GroupNorm:
    """Slot-wise modal day over one cluster's members for one date."""

    cluster_label: int
    date: dt.date
    slots: tuple[EncodedLocation, ...]

    def __post_init__(self) -> None:
        if len(self.slots) != SLOTS_PER_DAY:
            raise ValidationError(f"expected {SLOTS_PER_DAY} slots, got {len(self.slots)}")

    def codes(self) -> np.ndarray:
        return np.fromiter((int(s) for s in self.slots), dtype=np.uint8, count=SLOTS_PER_DAY)


@dataclass(frozen=True)
class TransitionPoints:
    """Day boundaries: p1/p4 from the individual norm, p2/p3 from the group
    norm, p5/p6 the fused splice points."""

    p1: int
    p2: int
    p3: int
    p4: int
    p5: int
    p6: int

    def __post_init__(self) -> None:
        for name in ("p1", "p2", "p3", "p4", "p5", "p6"):
            v = getattr(self, name)
            if not (0 <= v <= SLOTS_PER_DAY):
                raise ValidationError(f"{name}={v} outside [0, {SLOTS_PER_DAY}]")


@dataclass(frozen=True)
class HybridNorm:
    """The day's expected trajectory with per-slot provenance."""

    resident_id: str
    date: dt.date
    slots: tuple[EncodedLocation, ...]
    provenance: tuple[Provenance, ...]
    transitions: TransitionPoints

    def __post_init__(self) -> None:
        if len(self.slots) != SLOTS_PER_DAY or len(self.provenance) != SLOTS_PER_DAY:
            raise ValidationError("hybrid norm must cover all 288 slots")

    def codes(self) -> np.ndarray:
        return np.fromiter((int(s) for s in self.slots), dtype=np.uint8, count=SLOTS_PER_DAY)


def group_norm(
    cluster_label: int,
    day_trajectories: Sequence[DayTrajectory],
    assignment: ClusterAssignment,
) -> GroupNorm | None:
    """Aggregate same-label rows of one date into a group norm.

    Returns None when fewer than three rows contribute; member order never
    matters. All rows must share one date.
    """
    dates = {t.date for t in day_trajectories}
    if len(dates) > 1:
        raise ValidationError(f"group norm rows span several dates: {sorted(dates)}")
    members = [
        t for t in day_trajectories if assignment.labels.get(t.resident_id) == cluster_label
    ]
    if len(members) < MIN_GROUP_ROWS:
        return None
    rows = np.stack([m.codes() for m in members])
    slots = modal_slots(rows, origin=None)
    return GroupNorm(
        cluster_label=cluster_label,
        date=dates.pop(),
        slots=tuple(EncodedLocation(int(c)) for c in slots),
    )


def day_start_end(
    slots: Sequence[EncodedLocation] | np.ndarray,
    origin: EncodedLocation,
    h_gap: int = DEFAULT_H_GAP_SLOTS,
) -> tuple[int, int]:
    """When a norm leaves the origin for the day and when it settles back.

    day_start: first t in [0, 144) where slots[t : t+h_gap] are all away from
    the origin. day_end: last t in (144, 288] where slots[t-h_gap : t] are all
    away (the slot index that closes the excursion). Slots compare
    symbolically, so Missing counts as away. No qualifying run on a side
    leaves that boundary at 144.
    """
    if h_gap < 1:
        raise ValidationError("h_gap must be >= 1")
    codes = np.asarray([int(s) for s in slots], dtype=np.int64)
    if codes.shape != (SLOTS_PER_DAY,):
        raise ValidationError(f"expected {SLOTS_PER_DAY} slots")
    away = codes != int(origin)
    csum = np.concatenate([[0], np.cumsum(away)])

    day_start = _NOON
    for t in range(0, _NOON):
        end = t + h_gap
        if end <= SLOTS_PER_DAY and csum[end] - csum[t] == h_gap:
            day_start = t
            break

    day_end = _NOON
    for t in range(SLOTS_PER_DAY, _NOON, -1):
        lo = t - h_gap
        if lo >= 0 and csum[t] - csum[lo] == h_gap:
            day_end = t
            break
    return day_start, day_end


def transition_points(
    p1: int,
    p2: int,
    p3: int,
    p4: int,
    h_gap: int = DEFAULT_H_GAP_SLOTS,
    prefer_earliest: bool = False,
) -> tuple[int, int]:
    """Fuse individual (p1, p4) and group (p2, p3) day boundaries.

    Default rule: p5 = p1 when |p1-p2| <= h_gap or p1 >= p2, else p2;
    p6 = p4 when |p3-p4| <= h_gap or p3 < p4, else p3. With prefer_earliest
    the wide-gap case takes the earlier boundary on both sides instead.
    """
    if prefer_earliest:
        p5 = p1 if abs(p1 - p2) <= h_gap else min(p1, p2)
        p6 = p4 if abs(p3 - p4) <= h_gap else min(p3, p4)
        return p5, p6
    p5 = p1 if (abs(p1 - p2) <= h_gap or (p1 - p2) >= 0) else p2
    p6 = p4 if (abs(p3 - p4) <= h_gap or (p3 - p4) < 0) else p3
    return p5, p6


def hybrid_norm(
    individual: AggregatedTrajectory,
    group: GroupNorm | None,
    origin: EncodedLocation,
    h_gap: int = DEFAULT_H_GAP_SLOTS,
    *,
    date: dt.date,
    prefer_earliest: bool = False,
    transitions: TransitionPoints | None = None,
) -> HybridNorm:
    """Splice the group norm into the individual norm over [p5, p6).

    Without a group norm the result is the individual norm end to end, with an
    empty group segment. A degenerate fused window (p5 > p6) also falls back to
    the pure individual norm, with a warning. Precomputed transitions may be
    supplied to bypass the boundary scan.
    """
    ind = list(individual.slots)
    if group is None:
        tp = transitions or TransitionPoints(
            p1=_NOON, p2=_NOON, p3=_NOON, p4=_NOON, p5=_NOON, p6=_NOON
        )
        return HybridNorm(
            resident_id=individual.resident_id,
            date=date,
            slots=tuple(ind),
            provenance=tuple([Provenance.INDIVIDUAL] * SLOTS_PER_DAY),
            transitions=tp,
        )

    if transitions is None:
        p1, p4 = day_start_end(individual.slots, origin, h_gap)
        p2, p3 = day_start_end(group.slots, origin, h_gap)
        p5, p6 = transition_points(p1, p2, p3, p4, h_gap, prefer_earliest)
        transitions = TransitionPoints(p1=p1, p2=p2, p3=p3, p4=p4, p5=p5, p6=p6)

    if transitions.p5 > transitions.p6:
        warnings.warn(
            f"{individual.resident_id} {date}: fused window [{transitions.p5}, "
            f"{transitions.p6}) is degenerate; using the individual norm",
            DegeneracyWarning,
            stacklevel=2,
        )
        collapsed = TransitionPoints(
            p1=transitions.p1, p2=transitions.p2, p3=transitions.p3,
            p4=transitions.p4, p5=_NOON, p6=_NOON,
        )
        return HybridNorm(
            resident_id=individual.resident_id,
            date=date,
            slots=tuple(ind),
            provenance=tuple([Provenance.INDIVIDUAL] * SLOTS_PER_DAY),
            transitions=collapsed,
        )

    p5, p6 = transitions.p5, transitions.p6
    slots = ind[:p5] + list(group.slots[p5:p6]) + ind[p6:]
    provenance = (
        [Provenance.INDIVIDUAL] * p5
        + [Provenance.GROUP] * (p6 - p5)
        + [Provenance.INDIVIDUAL] * (SLOTS_PER_DAY - p6)
    )
    return HybridNorm(
        resident_id=individual.resident_id,
        date=date,
        slots=tuple(slots),
        provenance=tuple(provenance),
        transitions=transitions,
    )


def build_norms(
    matrices: Mapping[str, SpatioTemporalMatrix],
    assignment: ClusterAssignment,
    origins: Mapping[str, EncodedLocation],
    *,
    min_valid_fraction: float = 0.5,
    h_gap: int = DEFAULT_H_GAP_SLOTS,
    leave_one_out: bool = False,
    prefer_earliest: bool = False,
) -> dict[tuple[str, dt.date], HybridNorm]:
    """Hybrid norms for every valid resident-day in the cohort.

    Group norms draw on the valid rows of all same-cluster residents for each
    date. With leave_one_out the individual norm for a day is re-aggregated
    without that day; by default every valid day contributes.
    """
    for rid in matrices:
        if rid not in assignment.labels:
            raise ValidationError(f"resident {rid!r} has no cluster label")
        if rid not in origins:
            raise ValidationError(f"resident {rid!r} has no origin")

    rows_by_date: dict[dt.date, list[DayTrajectory]] = {}
    for rid, matrix in matrices.items():
        for day in matrix.valid_days(min_valid_fraction):
            rows_by_date.setdefault(day.date, []).append(day)

    group_norms: dict[tuple[int, dt.date], GroupNorm | None] = {}
    for date, rows in rows_by_date.items():
        for label in sorted(set(assignment.labels.values())):
            group_norms[(label, date)] = group_norm(label, rows, assignment)

    individuals: dict[str, AggregatedTrajectory] = {}
    if not leave_one_out:
        for rid, matrix in matrices.items():
            individuals[rid] = aggregate(matrix, min_valid_fraction, origins[rid])

    out: dict[tuple[str, dt.date], HybridNorm] = {}
    for rid in sorted(matrices):
        matrix = matrices[rid]
        label = assignment.labels[rid]
        origin = origins[rid]
        for day in matrix.valid_days(min_valid_fraction):
            if leave_one_out:
                rest = tuple(d for d in matrix.days if d.date != day.date)
                try:
                    individual = aggregate(
                        SpatioTemporalMatrix(resident_id=rid, days=rest),
                        min_valid_fraction,
                        origin,
                    )
                except NoValidDays:
                    individual = aggregate(matrix, min_valid_fraction, origin)
            else:
                individual = individuals[rid]
            out[(rid, day.date)] = hybrid_norm(
                individual,
                group_norms[(label, day.date)],
                origin,
                h_gap,
                date=day.date,
                prefer_earliest=prefer_earliest,
            )
    return out


# --- norms CSV ---------------------------------------------------------------

NORMS_HEADER = (
    ["resident_id", "date"]
    + [f"slot_{i}" for i in range(SLOTS_PER_DAY)]
    + [f"provenance_{i}" for i in range(SLOTS_PER_DAY)]
    + ["p5", "p6"]
)


def write_norms_csv(path, norms: Iterable[HybridNorm]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(NORMS_HEADER)
        for norm in norms:
            writer.writerow(
                [norm.resident_id, norm.date.isoformat()]
                + [int(s) for s in norm.slots]
                + [int(p) for p in norm.provenance]
                + [norm.transitions.p5, norm.transitions.p6]
            )


def read_norms_csv(path) -> list[HybridNorm]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != NORMS_HEADER:
            raise ValidationError(f"unexpected norms header in {path}")
        for line in reader:
            if not line:
                continue
            slots = tuple(EncodedLocation(int(v)) for v in line[2:2 + SLOTS_PER_DAY])
            prov = tuple(
                Provenance(int(v))
                for v in line[2 + SLOTS_PER_DAY:2 + 2 * SLOTS_PER_DAY]
            )
            p5, p6 = int(line[-2]), int(line[-1])
            # p1..p4 are not persisted; reconstruct a consistent container.
            out.append(
                HybridNorm(
                    resident_id=line[0],
                    date=dt.date.fromisoformat(line[1]),
                    slots=slots,
                    provenance=prov,
                    transitions=TransitionPoints(p1=p5, p2=p5, p3=p6, p4=p6, p5=p5, p6=p6),
                )
            )
    return out
