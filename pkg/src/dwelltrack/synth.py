"""Deterministic synthetic cohorts with planted structure.

Residents belong to activity groups that share a daily schedule (meals in the
basement common area, activities on the group's floor, nights in each
resident's own room). The schedule varies between days, members of one group
move in lockstep, and deviations are injected per an explicit plan that is
recorded as ground truth before any noise is applied. Optionally the cohort is
rendered down to raw scan logs that reproduce the planted trajectories
exactly through ingestion and preprocessing when noise is zero.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .localize import Receiver, ReceiverMap, Room, ScanRecord
from .model import (
    SLOTS_PER_DAY,
    SLOT_SECONDS,
    DayTrajectory,
    EncodedLocation,
    origin_for_level,
    private_for_level,
)

SPEC_VERSION = 1

# Group personality tables, indexed by group id modulo 5. Wake and return
# times stay fixed per group so norms outside the group window are stable.
_WAKES = (78, 84, 90, 81, 87)
_RETURNS = (240, 246, 234, 243, 237)
_MORNING_OPTIONS = (
    ("COMMON_LEVEL", "COMMON_B1"),
    ("COMMON_B1", "ORIGIN"),
    ("ORIGIN", "COMMON_LEVEL"),
    ("COMMON_LEVEL", "ORIGIN"),
    ("COMMON_B1", "COMMON_LEVEL"),
)
_AFTERNOON_OPTIONS = (
    ("COMMON_B1", "COMMON_LEVEL"),
    ("COMMON_LEVEL", "ORIGIN"),
    ("COMMON_LEVEL", "COMMON_B1"),
    ("ORIGIN", "COMMON_B1"),
    ("ORIGIN", "COMMON_LEVEL"),
)

_BREAKFAST_SLOTS = 12
_LUNCH = (144, 156)
_AFTERNOON = (156, 216)
_DINNER = (216, 228)
_WINDDOWN_START = 228

SLEEP_EPISODE_SLOTS = 36
AWAKE_EPISODE_SLOTS = 12
PRIVATE_EPISODE_SLOTS = 30

_BASE_RSSI = -50


class DeviationKind(str, Enum):
    SLEEP = "sleep"
    AWAKE = "awake"
    PRIVATE_VISIT = "private_visit"


_KIND_TO_LABEL = {
    DeviationKind.SLEEP: "sleep_irregularity",
    DeviationKind.AWAKE: "awake_irregularity",
    DeviationKind.PRIVATE_VISIT: "private_visiting",
}


def label_for_kind(kind: DeviationKind) -> str:
    """The behavior label a planted kind is expected to earn."""
    return _KIND_TO_LABEL[DeviationKind(kind)]


@dataclass(frozen=True)
class NoiseModel:
    slot_flip_rate: float = 0.0
    missing_rate: float = 0.0
    rssi_jitter_dbm: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.slot_flip_rate < 1.0):
            raise ValidationError("slot_flip_rate must be in [0, 1)")
        if not (0.0 <= self.missing_rate < 1.0):
            raise ValidationError("missing_rate must be in [0, 1)")
        if not (0 <= self.rssi_jitter_dbm <= 15):
            # jitter above 15 dBm would push scans under the ingest filter
            raise ValidationError("rssi_jitter_dbm must be in [0, 15]")


@dataclass(frozen=True)
class PlantedBehavior:
    """Shorthand: give one resident recurring episodes of one kind."""

    resident_id: str
    kind: DeviationKind
    day_fraction: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", DeviationKind(self.kind))
        if not (0.0 < self.day_fraction <= 1.0):
            raise ValidationError("day_fraction must be in (0, 1]")


@dataclass(frozen=True)
class Injection:
    """One planted deviation episode, fully resolved."""

    resident_id: str
    date: dt.date
    kind: DeviationKind
    start_slot: int
    end_slot: int  # exclusive
    room_id: str
    location: EncodedLocation

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", DeviationKind(self.kind))
        if not (0 <= self.start_slot < self.end_slot <= SLOTS_PER_DAY):
            raise ValidationError(
                f"bad episode range [{self.start_slot}, {self.end_slot})"
            )

    def slots(self) -> range:
        return range(self.start_slot, self.end_slot)


@dataclass(frozen=True)
class CohortSpec:
    """Everything needed to regenerate a cohort, minus the seed."""

    n_residents: int
    n_groups: int
    days: int
    start_date: dt.date = dt.date(2024, 3, 4)
    noise: NoiseModel = field(default_factory=NoiseModel)
    planted: tuple[PlantedBehavior, ...] = ()
    raw_scans: bool = False
    version: int = SPEC_VERSION

    def __post_init__(self) -> None:
        if self.version != SPEC_VERSION:
            raise ValidationError(f"unsupported spec version {self.version}")
        if self.n_groups < 1 or self.n_residents < self.n_groups:
            raise ValidationError("need at least one resident per group")
        if self.days < 1:
            raise ValidationError("need at least one day")
        object.__setattr__(self, "planted", tuple(self.planted))
        ids = {p.resident_id for p in self.planted}
        if len(ids) != len(self.planted):
            raise ValidationError("one planted behavior per resident")

    def resident_ids(self) -> list[str]:
        return [f"r{i:03d}" for i in range(self.n_residents)]

    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=i) for i in range(self.days)]

    def to_json(self, path) -> None:
        payload = {
            "version": self.version,
            "n_residents": self.n_residents,
            "n_groups": self.n_groups,
            "days": self.days,
            "start_date": self.start_date.isoformat(),
            "raw_scans": self.raw_scans,
            "noise": {
                "slot_flip_rate": self.noise.slot_flip_rate,
                "missing_rate": self.noise.missing_rate,
                "rssi_jitter_dbm": self.noise.rssi_jitter_dbm,
            },
            "planted": [
                {
                    "resident_id": p.resident_id,
                    "kind": p.kind.value,
                    "day_fraction": p.day_fraction,
                }
                for p in self.planted
            ],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "CohortSpec":
        with open(path) as fh:
            payload = json.load(fh)
        try:
            noise = payload.get("noise", {})
            return cls(
                n_residents=int(payload["n_residents"]),
                n_groups=int(payload["n_groups"]),
                days=int(payload["days"]),
                start_date=dt.date.fromisoformat(
                    payload.get("start_date", "2024-03-04")
                ),
                noise=NoiseModel(
                    slot_flip_rate=float(noise.get("slot_flip_rate", 0.0)),
                    missing_rate=float(noise.get("missing_rate", 0.0)),
                    rssi_jitter_dbm=int(noise.get("rssi_jitter_dbm", 0)),
                ),
                planted=tuple(
                    PlantedBehavior(
                        resident_id=str(p["resident_id"]),
                        kind=DeviationKind(p["kind"]),
                        day_fraction=float(p["day_fraction"]),
                    )
                    for p in payload.get("planted", ())
                ),
                raw_scans=bool(payload.get("raw_scans", False)),
                version=int(payload.get("version", SPEC_VERSION)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad cohort spec {path}: {exc}") from exc


@dataclass
class Cohort:
    """A generated cohort plus its ground truth."""

    spec: CohortSpec
    seed: int
    trajectories: list[DayTrajectory]
    plan: list[Injection]
    group_of: dict[str, int]
    origin_room: dict[str, str]
    origin_code: dict[str, EncodedLocation]
    rooms: dict[str, Room]
    receiver_map: ReceiverMap
    registry: dict[str, str]
    scans: list[ScanRecord] | None = None


def _group_level(g: int) -> int:
    return 2 if g % 2 == 0 else 3


def _common_room(level: int) -> str:
    return f"common-l{level}"


def _building(spec: CohortSpec) -> tuple[dict[str, Room], dict[str, int], dict[str, str]]:
    """Rooms, group assignment, and each resident's own room."""
    rooms: dict[str, Room] = {
        "common-b1": Room("common-b1", EncodedLocation.PUBLIC_B1, 0),
        "common-l2": Room("common-l2", EncodedLocation.PUBLIC_L2, 2),
        "common-l3": Room("common-l3", EncodedLocation.PUBLIC_L3, 3),
        "staff-l1": Room("staff-l1", EncodedLocation.RESTRICTED, 1),
    }
    group_of: dict[str, int] = {}
    own_room: dict[str, str] = {}
    for i, rid in enumerate(spec.resident_ids()):
        g = i % spec.n_groups
        level = _group_level(g)
        room_id = f"room-l{level}-{i:03d}"
        rooms[room_id] = Room(room_id, private_for_level(level), level)
        group_of[rid] = g
        own_room[rid] = room_id
    return rooms, group_of, own_room


def _schedule_tokens(g: int, day_index: int) -> list[str]:
    """One group-day as 288 tokens: ORIGIN or a concrete room id."""
    wake = _WAKES[g % 5]
    ret = _RETURNS[g % 5]
    level_room = _common_room(_group_level(g))
    variant = (day_index + g) % 2
    morning = _MORNING_OPTIONS[g % 5][variant]
    afternoon = _AFTERNOON_OPTIONS[g % 5][variant]

    def resolve(token: str) -> str:
        if token == "COMMON_LEVEL":
            return level_room
        if token == "COMMON_B1":
            return "common-b1"
        return token  # ORIGIN stays symbolic until per-resident materialization

    tokens = ["ORIGIN"] * SLOTS_PER_DAY
    tokens[wake:wake + _BREAKFAST_SLOTS] = ["common-b1"] * _BREAKFAST_SLOTS
    tokens[wake + _BREAKFAST_SLOTS:_LUNCH[0]] = [resolve(morning)] * (
        _LUNCH[0] - wake - _BREAKFAST_SLOTS
    )
    tokens[_LUNCH[0]:_LUNCH[1]] = ["common-b1"] * (_LUNCH[1] - _LUNCH[0])
    tokens[_AFTERNOON[0]:_AFTERNOON[1]] = [resolve(afternoon)] * (
        _AFTERNOON[1] - _AFTERNOON[0]
    )
    tokens[_DINNER[0]:_DINNER[1]] = ["common-b1"] * (_DINNER[1] - _DINNER[0])
    tokens[_WINDDOWN_START:ret] = [level_room] * (ret - _WINDDOWN_START)
    tokens[ret:] = ["ORIGIN"] * (SLOTS_PER_DAY - ret)
    return tokens


def group_window(g: int) -> tuple[int, int]:
    """The (wake, return) slots a group's schedule is built around."""
    return _WAKES[g % 5], _RETURNS[g % 5]


def _episode_range(kind: DeviationKind, g: int) -> tuple[int, int]:
    wake, ret = group_window(g)
    if kind is DeviationKind.SLEEP:
        return ret, min(ret + SLEEP_EPISODE_SLOTS, SLOTS_PER_DAY)
    if kind is DeviationKind.AWAKE:
        return wake, wake + AWAKE_EPISODE_SLOTS
    return wake + 30, wake + 30 + PRIVATE_EPISODE_SLOTS


def _episode_room(
    kind: DeviationKind,
    rid: str,
    g: int,
    own_room: Mapping[str, str],
    group_members: Sequence[str],
) -> str:
    if kind is DeviationKind.SLEEP:
        return _common_room(_group_level(g))
    if kind is DeviationKind.AWAKE:
        return own_room[rid]
    idx = group_members.index(rid)
    target = group_members[(idx + 1) % len(group_members)]
    if target == rid:
        raise ValidationError(
            f"{rid}: private visiting needs another resident in the group"
        )
    return own_room[target]


def _expand_plan(
    spec: CohortSpec,
    seed: int,
    group_of: Mapping[str, int],
    own_room: Mapping[str, str],
    rooms: Mapping[str, Room],
) -> list[Injection]:
    members_of: dict[int, list[str]] = {}
    for rid in spec.resident_ids():
        members_of.setdefault(group_of[rid], []).append(rid)

    dates = spec.dates()
    plan: list[Injection] = []
    resident_index = {rid: i for i, rid in enumerate(spec.resident_ids())}
    for behavior in spec.planted:
        rid = behavior.resident_id
        if rid not in group_of:
            raise ValidationError(f"planted behavior for unknown resident {rid!r}")
        g = group_of[rid]
        start, end = _episode_range(behavior.kind, g)
        room_id = _episode_room(behavior.kind, rid, g, own_room, members_of[g])
        room = rooms[room_id]
        if behavior.kind is DeviationKind.AWAKE:
            location = origin_for_level(room.level)
        elif behavior.kind is DeviationKind.PRIVATE_VISIT:
            location = private_for_level(room.level)
        else:
            location = room.category
        n_days = max(1, round(spec.days * behavior.day_fraction))
        rng = np.random.default_rng([seed, 101, resident_index[rid]])
        chosen = sorted(rng.choice(spec.days, size=n_days, replace=False).tolist())
        for day_index in chosen:
            plan.append(
                Injection(
                    resident_id=rid,
                    date=dates[day_index],
                    kind=behavior.kind,
                    start_slot=start,
                    end_slot=end,
                    room_id=room_id,
                    location=location,
                )
            )
    return plan


def _encode_rooms(
    room_ids: Sequence[str | None], own_room_id: str, rooms: Mapping[str, Room]
) -> tuple[EncodedLocation, ...]:
    out = []
    for room_id in room_ids:
        if room_id is None:
            out.append(EncodedLocation.MISSING)
            continue
        room = rooms[room_id]
        if room_id == own_room_id:
            out.append(origin_for_level(room.level))
        elif room.category in (EncodedLocation.PRIVATE_L2, EncodedLocation.PRIVATE_L3):
            out.append(private_for_level(room.level))
        else:
            out.append(room.category)
    return tuple(out)


def generate(spec: CohortSpec, seed: int = 0) -> Cohort:
    """Generate the cohort. Same spec and seed, same cohort, bit for bit."""
    rooms, group_of, own_room = _building(spec)
    plan = _expand_plan(spec, seed, group_of, own_room, rooms)
    injected: dict[tuple[str, dt.date], list[Injection]] = {}
    for inj in plan:
        key = (inj.resident_id, inj.date)
        for other in injected.get(key, ()):
            if inj.start_slot < other.end_slot and other.start_slot < inj.end_slot:
                raise ValidationError(f"overlapping injections for {key}")
        injected.setdefault(key, []).append(inj)

    flip_pool = ["common-b1", "common-l2", "common-l3", "staff-l1"]
    dates = spec.dates()
    resident_index = {rid: i for i, rid in enumerate(spec.resident_ids())}

    trajectories: list[DayTrajectory] = []
    scans: list[ScanRecord] | None = [] if spec.raw_scans else None
    registry = {f"tag-{i:03d}": rid for i, rid in enumerate(spec.resident_ids())}
    tag_of = {rid: tag for tag, rid in registry.items()}

    for rid in spec.resident_ids():
        g = group_of[rid]
        mine = own_room[rid]
        for day_index, date in enumerate(dates):
            tokens = _schedule_tokens(g, day_index)
            day_rooms: list[str | None] = [
                mine if tok == "ORIGIN" else tok for tok in tokens
            ]
            protected = [False] * SLOTS_PER_DAY
            for inj in injected.get((rid, date), ()):
                for t in inj.slots():
                    day_rooms[t] = inj.room_id
                    protected[t] = True

            noise = spec.noise
            if noise.slot_flip_rate > 0 or noise.missing_rate > 0:
                rng = np.random.default_rng([seed, 202, resident_index[rid], day_index])
                flips = rng.random(SLOTS_PER_DAY) < noise.slot_flip_rate
                picks = rng.integers(0, len(flip_pool) + 1, size=SLOTS_PER_DAY)
                misses = rng.random(SLOTS_PER_DAY) < noise.missing_rate
                for t in range(SLOTS_PER_DAY):
                    if flips[t]:
                        # The pool plus the resident's own room, skipping the
                        # current value so a flip always changes something.
                        options = [r for r in flip_pool + [mine] if r != day_rooms[t]]
                        day_rooms[t] = options[int(picks[t]) % len(options)]
                    if misses[t] and not protected[t]:
                        day_rooms[t] = None

            trajectories.append(
                DayTrajectory(
                    resident_id=rid,
                    date=date,
                    slots=_encode_rooms(day_rooms, mine, rooms),
                )
            )

            if scans is not None:
                jitter_rng = (
                    np.random.default_rng([seed, 303, resident_index[rid], day_index])
                    if noise.rssi_jitter_dbm > 0
                    else None
                )
                day_start = dt.datetime(
                    date.year, date.month, date.day, tzinfo=dt.timezone.utc
                )
                for t, room_id in enumerate(day_rooms):
                    if room_id is None:
                        continue
                    rssi = _BASE_RSSI
                    if jitter_rng is not None:
                        rssi -= int(jitter_rng.integers(0, noise.rssi_jitter_dbm + 1))
                    scans.append(
                        ScanRecord(
                            timestamp=day_start + dt.timedelta(seconds=t * SLOT_SECONDS),
                            receiver_id=f"rx-{room_id}",
                            tag_id=tag_of[rid],
                            rssi=rssi,
                        )
                    )

    receiver_map = ReceiverMap(
        Receiver(receiver_id=f"rx-{room_id}", room=room)
        for room_id, room in sorted(rooms.items())
    )
    origin_code = {
        rid: origin_for_level(rooms[own_room[rid]].level) for rid in spec.resident_ids()
    }
    return Cohort(
        spec=spec,
        seed=seed,
        trajectories=trajectories,
        plan=plan,
        group_of=group_of,
        origin_room=dict(own_room),
        origin_code=origin_code,
        rooms=rooms,
        receiver_map=receiver_map,
        registry=registry,
        scans=scans,
    )


# --- ground-truth files ---------------------------------------------------------

def write_plan_jsonl(path, plan: Iterable[Injection]) -> None:
    with open(path, "w") as fh:
        for inj in plan:
            fh.write(
                json.dumps(
                    {
                        "resident_id": inj.resident_id,
                        "date": inj.date.isoformat(),
                        "kind": inj.kind.value,
                        "start_slot": inj.start_slot,
                        "end_slot": inj.end_slot,
                        "room_id": inj.room_id,
                        "location_code": int(inj.location),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_plan_jsonl(path) -> list[Injection]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(
                    Injection(
                        resident_id=str(obj["resident_id"]),
                        date=dt.date.fromisoformat(obj["date"]),
                        kind=DeviationKind(obj["kind"]),
                        start_slot=int(obj["start_slot"]),
                        end_slot=int(obj["end_slot"]),
                        room_id=str(obj["room_id"]),
                        location=EncodedLocation(int(obj["location_code"])),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad plan row ({exc})") from exc
    return out


def write_groups_json(path, cohort: Cohort) -> None:
    payload = {
        "group_of": dict(sorted(cohort.group_of.items())),
        "origin_room": dict(sorted(cohort.origin_room.items())),
        "origin_code": {
            rid: int(code) for rid, code in sorted(cohort.origin_code.items())
        },
        "planted": {
            p.resident_id: p.kind.value for p in cohort.spec.planted
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
