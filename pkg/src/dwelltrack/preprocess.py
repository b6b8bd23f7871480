"""Fix-stream cleaning: slot fitting, short-stay smoothing, origin detection.

The raw fix stream is folded into the 288-slot day grid at room granularity,
the resident's origin room is detected from overnight dwell, rooms are encoded
into the location alphabet, and short stays are smoothed away as likely noise.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import NoOriginDetectable, ValidationError
from .localize import CYCLE_SECONDS, LocationFix, Room
from .model import (
    SLOTS_PER_DAY,
    DayTrajectory,
    EncodedLocation,
    SpatioTemporalMatrix,
    origin_for_level,
    private_for_level,
)

# Slots covering 23:00-06:00 local time: the overnight window used for origin
# detection (tail of one day plus the small hours of the next).
NIGHT_SLOTS: frozenset[int] = frozenset(range(276, 288)) | frozenset(range(0, 72))

_RESIDENTIAL = (EncodedLocation.PRIVATE_L2, EncodedLocation.PRIVATE_L3)


@dataclass(frozen=True)
class RoomGrid:
    """One resident-day at room granularity: 288 slots of room_id or None."""

    resident_id: str
    date: dt.date
    rooms: tuple[str | None, ...]

    def __post_init__(self) -> None:
        if len(self.rooms) != SLOTS_PER_DAY:
            raise ValidationError(f"expected {SLOTS_PER_DAY} slots, got {len(self.rooms)}")


def _fix_start(fix: LocationFix) -> dt.datetime:
    return fix.cycle_end - dt.timedelta(seconds=CYCLE_SECONDS)


def _local_slot(fix: LocationFix, utc_offset_minutes: int) -> tuple[dt.date, int]:
    local = _fix_start(fix) + dt.timedelta(minutes=utc_offset_minutes)
    slot = (local.hour * 60 + local.minute) // 5
    return local.date(), slot


def _slot_winner(counts: Mapping, key) -> object:
    """Most dwell wins; ties break by the supplied sort key."""
    top = max(counts.values())
    tied = [loc for loc, n in counts.items() if n == top]
    tied.sort(key=key)
    return tied[0]


def fit_windows(
    fixes: Sequence[LocationFix],
    resident_id: str,
    date: dt.date,
    *,
    utc_offset_minutes: int = 0,
) -> RoomGrid:
    """Fold one resident-day of fixes into the slot grid at room granularity.

    Each fix stands for one 15-second detection cycle; a slot resolves to the
    room with the longest total dwell inside it (ties: lower room_id). Slots
    without any fix become None.
    """
    dwell: list[dict[str, int]] = [dict() for _ in range(SLOTS_PER_DAY)]
    for fix in fixes:
        if fix.resident_id != resident_id:
            raise ValidationError(f"fix for {fix.resident_id!r} while fitting {resident_id!r}")
        d, slot = _local_slot(fix, utc_offset_minutes)
        if d != date:
            raise ValidationError(f"fix dated {d} while fitting {date}")
        dwell[slot][fix.room_id] = dwell[slot].get(fix.room_id, 0) + 1
    rooms = tuple(
        _slot_winner(counts, key=lambda room: room) if counts else None for counts in dwell
    )
    return RoomGrid(resident_id=resident_id, date=date, rooms=rooms)


def build_day(
    fixes: Sequence[LocationFix],
    resident_id: str,
    date: dt.date,
    *,
    utc_offset_minutes: int = 0,
) -> DayTrajectory:
    """Fold one resident-day of already-encoded fixes into a DayTrajectory.

    Same dwell rule as fit_windows but at category granularity: each slot holds
    the encoded location with the longest total dwell (ties: lower code); empty
    slots become Missing.
    """
    dwell: list[dict[EncodedLocation, int]] = [dict() for _ in range(SLOTS_PER_DAY)]
    for fix in fixes:
        if fix.resident_id != resident_id:
            raise ValidationError(f"fix for {fix.resident_id!r} while building {resident_id!r}")
        d, slot = _local_slot(fix, utc_offset_minutes)
        if d != date:
            raise ValidationError(f"fix dated {d} while building {date}")
        dwell[slot][fix.location] = dwell[slot].get(fix.location, 0) + 1
    slots = tuple(
        _slot_winner(counts, key=int) if counts else EncodedLocation.MISSING
        for counts in dwell
    )
    return DayTrajectory(resident_id=resident_id, date=date, slots=slots)


def detect_origin_room(
    grids: Iterable[RoomGrid], rooms: Mapping[str, Room]
) -> tuple[str, EncodedLocation]:
    """Find the resident's own room from overnight dwell.

    Counts night-window slots spent in residential rooms across all days; the
    most-dwelt room wins (ties: lower room_id) and is emitted as the origin
    category of that room's level.
    """
    dwell: dict[str, int] = {}
    for grid in grids:
        for slot in NIGHT_SLOTS:
            room_id = grid.rooms[slot]
            if room_id is None:
                continue
            room = rooms.get(room_id)
            if room is None:
                raise ValidationError(f"grid references unmapped room {room_id!r}")
            if room.category in _RESIDENTIAL:
                dwell[room_id] = dwell.get(room_id, 0) + 1
    if not dwell:
        raise NoOriginDetectable("no residential dwell in the night window on any day")
    top = max(dwell.values())
    winner = min(room_id for room_id, n in dwell.items() if n == top)
    return winner, origin_for_level(rooms[winner].level)


def detect_origin(matrix: SpatioTemporalMatrix) -> EncodedLocation:
    """Category-level origin detection on an encoded matrix.

    Counts night-window dwell per residential category across all days and maps
    the winning category's level to an origin symbol (ties: lowest code). Used
    when room identity is gone; the fix pipeline uses detect_origin_room.
    """
    dwell = {loc: 0 for loc in (
        EncodedLocation.ORIGIN_L2,
        EncodedLocation.ORIGIN_L3,
        EncodedLocation.PRIVATE_L2,
        EncodedLocation.PRIVATE_L3,
    )}
    for day in matrix.days:
        for slot in NIGHT_SLOTS:
            loc = day.slots[slot]
            if loc in dwell:
                dwell[loc] += 1
    if not any(dwell.values()):
        raise NoOriginDetectable(
            f"resident {matrix.resident_id!r}: no residential dwell in the night window"
        )
    top = max(dwell.values())
    winner = min(loc for loc, n in dwell.items() if n == top)
    level = 2 if winner in (EncodedLocation.ORIGIN_L2, EncodedLocation.PRIVATE_L2) else 3
    return origin_for_level(level)


def encode_grid(
    grid: RoomGrid, origin_room_id: str, rooms: Mapping[str, Room]
) -> DayTrajectory:
    """Encode a room-level grid into the location alphabet.

    The resident's own room becomes Origin of its level, other residential
    rooms become Private of theirs, everything else keeps its map category.
    """
    slots = []
    for room_id in grid.rooms:
        if room_id is None:
            slots.append(EncodedLocation.MISSING)
            continue
        room = rooms.get(room_id)
        if room is None:
            raise ValidationError(f"grid references unmapped room {room_id!r}")
        if room_id == origin_room_id:
            slots.append(origin_for_level(room.level))
        elif room.category in _RESIDENTIAL:
            slots.append(private_for_level(room.level))
        else:
            slots.append(room.category)
    return DayTrajectory(resident_id=grid.resident_id, date=grid.date, slots=tuple(slots))


def _runs(slots: Sequence) -> list[tuple[int, int, object]]:
    """Maximal runs as (start, end_exclusive, value)."""
    runs = []
    start = 0
    for i in range(1, len(slots) + 1):
        if i == len(slots) or slots[i] != slots[start]:
            runs.append((start, i, slots[start]))
            start = i
    return runs


def smooth(traj: DayTrajectory, min_stay_slots: int = 2) -> DayTrajectory:
    """Remove short stays as likely localization noise.

    Every maximal non-Missing run shorter than min_stay_slots merges into the
    longer neighboring run (ties: the preceding run; day-edge runs merge
    inward). Missing runs are kept. Idempotent.
    """
    if min_stay_slots < 1:
        raise ValidationError("min_stay_slots must be >= 1")
    slots = list(traj.slots)
    while True:
        runs = _runs(slots)
        if len(runs) < 2:
            break
        target = None
        for idx, (start, end, value) in enumerate(runs):
            if value is EncodedLocation.MISSING:
                continue
            if end - start < min_stay_slots:
                target = idx
                break
        if target is None:
            break
        start, end, _ = runs[target]
        prev_run = runs[target - 1] if target > 0 else None
        next_run = runs[target + 1] if target + 1 < len(runs) else None
        if prev_run is None:
            absorb = next_run
        elif next_run is None:
            absorb = prev_run
        else:
            prev_len = prev_run[1] - prev_run[0]
            next_len = next_run[1] - next_run[0]
            absorb = next_run if next_len > prev_len else prev_run
        slots[start:end] = [absorb[2]] * (end - start)
    return DayTrajectory(resident_id=traj.resident_id, date=traj.date, slots=tuple(slots))


def preprocess_fixes(
    fixes: Iterable[LocationFix],
    rooms: Mapping[str, Room],
    *,
    min_stay_slots: int = 2,
    utc_offset_minutes: int = 0,
) -> tuple[list[DayTrajectory], dict[str, tuple[str, EncodedLocation]]]:
    """Full fix-stream preprocessing for a cohort.

    Returns smoothed encoded day rows (sorted by resident, date) and each
    resident's detected origin as (room_id, origin category).
    """
    per_day: dict[tuple[str, dt.date], list[LocationFix]] = {}
    for fix in fixes:
        d, _ = _local_slot(fix, utc_offset_minutes)
        per_day.setdefault((fix.resident_id, d), []).append(fix)

    grids: dict[str, list[RoomGrid]] = {}
    for (rid, date), day_fixes in sorted(per_day.items()):
        grids.setdefault(rid, []).append(
            fit_windows(day_fixes, rid, date, utc_offset_minutes=utc_offset_minutes)
        )

    origins: dict[str, tuple[str, EncodedLocation]] = {}
    rows: list[DayTrajectory] = []
    for rid in sorted(grids):
        origin_room, origin_cat = detect_origin_room(grids[rid], rooms)
        origins[rid] = (origin_room, origin_cat)
        for grid in grids[rid]:
            rows.append(smooth(encode_grid(grid, origin_room, rooms), min_stay_slots))
    return rows, origins
