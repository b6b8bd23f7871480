"""BLE scan ingestion and room resolution.

Receivers listen for resident tags in 15-second detection cycles. Each cycle
splits into five 3-second sub-windows; per sub-window a resident's candidate
room is the room of their single strongest record, and the cycle resolves to
the modal candidate. Residents without a usable record in a cycle keep their
last known room.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import ValidationError
from .model import EncodedLocation

CYCLE_SECONDS = 15
SUBWINDOW_SECONDS = 3
SUBWINDOWS_PER_CYCLE = CYCLE_SECONDS // SUBWINDOW_SECONDS

RSSI_FLOOR = -120
RSSI_CEIL = 0
DEFAULT_RSSI_THRESHOLD_DBM = -70

# Categories a receiver may advertise. Origin is resident-specific and is
# assigned later, during preprocessing; Missing never comes from hardware.
_MAP_CATEGORIES = (
    EncodedLocation.PRIVATE_L2,
    EncodedLocation.PRIVATE_L3,
    EncodedLocation.PUBLIC_B1,
    EncodedLocation.PUBLIC_L2,
    EncodedLocation.PUBLIC_L3,
    EncodedLocation.RESTRICTED,
)


def _as_utc(ts: dt.datetime) -> dt.datetime:
    # Naive timestamps are taken to already be UTC.
    if ts.tzinfo is None:
        return ts.replace(tzinfo=dt.timezone.utc)
    return ts.astimezone(dt.timezone.utc)


@dataclass(frozen=True)
class ScanRecord:
    """One received advertisement: a receiver heard a tag at some strength."""

    timestamp: dt.datetime
    receiver_id: str
    tag_id: str
    rssi: int  # dBm

    def __post_init__(self) -> None:
        object.__setattr__(self, "timestamp", _as_utc(self.timestamp))
        if not (RSSI_FLOOR <= self.rssi <= RSSI_CEIL):
            raise ValidationError(
                f"rssi {self.rssi} outside [{RSSI_FLOOR}, {RSSI_CEIL}] dBm"
            )


@dataclass(frozen=True)
class Room:
    room_id: str
    category: EncodedLocation
    level: int


@dataclass(frozen=True)
class Receiver:
    receiver_id: str
    room: Room


class ReceiverMap:
    """Authoritative receiver-to-room assignment."""

    def __init__(self, receivers: Iterable[Receiver]):
        self._by_id: dict[str, Receiver] = {}
        rooms: dict[str, Room] = {}
        for rx in receivers:
            if rx.receiver_id in self._by_id:
                raise ValidationError(f"duplicate receiver id {rx.receiver_id!r}")
            if rx.room.category not in _MAP_CATEGORIES:
                raise ValidationError(
                    f"receiver {rx.receiver_id!r} maps to non-physical category "
                    f"{rx.room.category!r}"
                )
            seen = rooms.get(rx.room.room_id)
            if seen is not None and seen != rx.room:
                raise ValidationError(
                    f"room {rx.room.room_id!r} declared with conflicting metadata"
                )
            rooms[rx.room.room_id] = rx.room
            self._by_id[rx.receiver_id] = rx
        self._rooms = rooms

    def receiver(self, receiver_id: str) -> Receiver:
        try:
            return self._by_id[receiver_id]
        except KeyError:
            raise ValidationError(f"unknown receiver id {receiver_id!r}") from None

    def rooms(self) -> dict[str, Room]:
        return dict(self._rooms)

    def __len__(self) -> int:
        return len(self._by_id)

    @classmethod
    def from_csv(cls, path) -> "ReceiverMap":
        """Load `receiver_id,room_id,category_code,level` rows."""
        receivers = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            expected = {"receiver_id", "room_id", "category_code", "level"}
            if reader.fieldnames is None or set(reader.fieldnames) != expected:
                raise ValidationError(f"unexpected receiver map header in {path}")
            for row in reader:
                try:
                    category = EncodedLocation(int(row["category_code"]))
                except ValueError as exc:
                    raise ValidationError(f"bad category code in {path}: {exc}") from exc
                receivers.append(
                    Receiver(
                        receiver_id=row["receiver_id"],
                        room=Room(
                            room_id=row["room_id"],
                            category=category,
                            level=int(row["level"]),
                        ),
                    )
                )
        return cls(receivers)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["receiver_id", "room_id", "category_code", "level"])
            for rx_id in sorted(self._by_id):
                rx = self._by_id[rx_id]
                writer.writerow(
                    [rx.receiver_id, rx.room.room_id, int(rx.room.category), rx.room.level]
                )


class FixSource(str, Enum):
    VOTED = "voted"
    FALLBACK = "fallback"


@dataclass(frozen=True)
class LocationFix:
    """Resolved room for one resident over one detection cycle.

    cycle_end is the exclusive end of the 15-second cycle. room_id is kept
    alongside the map category because origin detection needs room identity.
    """

    resident_id: str
    cycle_end: dt.datetime
    room_id: str
    location: EncodedLocation
    source: FixSource


@dataclass
class IngestReport:
    total_records: int = 0
    weak_filtered: int = 0
    unknown_tag_records: int = 0
    unknown_tags: tuple[str, ...] = ()
    cycles: int = 0
    voted_fixes: int = 0
    fallback_fixes: int = 0

    def as_dict(self) -> dict:
        return {
            "total_records": self.total_records,
            "weak_filtered": self.weak_filtered,
            "unknown_tag_records": self.unknown_tag_records,
            "unknown_tags": list(self.unknown_tags),
            "cycles": self.cycles,
            "voted_fixes": self.voted_fixes,
            "fallback_fixes": self.fallback_fixes,
        }


def filter_scans(
    scans: Iterable[ScanRecord], threshold_dbm: int = DEFAULT_RSSI_THRESHOLD_DBM
) -> list[ScanRecord]:
    """Drop weak records. Keeps rssi >= threshold (boundary kept), order preserved."""
    return [s for s in scans if s.rssi >= threshold_dbm]


def _subwindow_index(ts: dt.datetime, cycle_start: dt.datetime) -> int:
    # Records exactly on a 3-second boundary belong to the later sub-window.
    offset = (ts - cycle_start).total_seconds()
    idx = int(offset // SUBWINDOW_SECONDS)
    if not (0 <= idx < SUBWINDOWS_PER_CYCLE):
        raise ValidationError(f"record at {ts} outside cycle starting {cycle_start}")
    return idx


def vote_cycle(
    scans: Sequence[ScanRecord],
    cycle_start: dt.datetime,
    receiver_map: ReceiverMap,
    registry: Mapping[str, str],
) -> dict[str, str]:
    """Resolve one cycle's filtered scans to a room per resident.

    Per sub-window, per resident: the candidate is the room of the single
    highest-RSSI record (ties: lower room_id). The cycle's answer is the modal
    candidate over the five sub-windows; a modal tie goes to the room with the
    highest single RSSI among the tied rooms, then the lower room_id.
    Residents with no record in the cycle are absent from the result.
    """
    # best[(sub, resident)] = (rssi, room_id)
    best: dict[tuple[int, str], tuple[int, str]] = {}
    # peak[(resident, room)] = strongest rssi seen in the cycle
    peak: dict[tuple[str, str], int] = {}
    for rec in scans:
        resident = registry.get(rec.tag_id)
        if resident is None:
            continue
        room_id = receiver_map.receiver(rec.receiver_id).room.room_id
        sub = _subwindow_index(rec.timestamp, cycle_start)
        key = (sub, resident)
        cur = best.get(key)
        cand = (rec.rssi, room_id)
        # Highest rssi wins; on equal rssi the lower room_id wins.
        if cur is None or cand[0] > cur[0] or (cand[0] == cur[0] and cand[1] < cur[1]):
            best[key] = cand
        pk = (resident, room_id)
        if pk not in peak or rec.rssi > peak[pk]:
            peak[pk] = rec.rssi

    votes: dict[str, dict[str, int]] = {}
    for (_, resident), (_, room_id) in best.items():
        votes.setdefault(resident, {}).setdefault(room_id, 0)
        votes[resident][room_id] += 1

    result: dict[str, str] = {}
    for resident, counts in votes.items():
        top = max(counts.values())
        tied = [room for room, n in counts.items() if n == top]
        # Tie rule: strongest single record among tied rooms, then lower room_id.
        tied.sort(key=lambda room: (-peak[(resident, room)], room))
        result[resident] = tied[0]
    return result


def localize_stream(
    scans: Iterable[ScanRecord],
    receiver_map: ReceiverMap,
    registry: Mapping[str, str],
    *,
    threshold_dbm: int = DEFAULT_RSSI_THRESHOLD_DBM,
) -> tuple[list[LocationFix], IngestReport]:
    """Run the per-cycle vote over a whole scan log.

    Emits one fix per resident per cycle from the resident's first successful
    vote through the final cycle of the log; cycles without a vote repeat the
    last known room as a fallback fix. Residents never seen produce nothing.
    Unknown tags are skipped and counted; unknown receivers are an error.
    """
    report = IngestReport()
    ordered = sorted(scans, key=lambda s: s.timestamp)
    report.total_records = len(ordered)

    for rec in ordered:  # map is authoritative: fail fast on unknown hardware
        receiver_map.receiver(rec.receiver_id)

    unknown: set[str] = set()
    known: list[ScanRecord] = []
    for rec in ordered:
        if rec.tag_id not in registry:
            unknown.add(rec.tag_id)
            report.unknown_tag_records += 1
        else:
            known.append(rec)
    report.unknown_tags = tuple(sorted(unknown))

    strong = filter_scans(known, threshold_dbm)
    report.weak_filtered = len(known) - len(strong)
    if not strong:
        return [], report

    epoch = dt.datetime(1970, 1, 1, tzinfo=dt.timezone.utc)

    def cycle_index(ts: dt.datetime) -> int:
        return int((ts - epoch).total_seconds() // CYCLE_SECONDS)

    by_cycle: dict[int, list[ScanRecord]] = {}
    for rec in strong:
        by_cycle.setdefault(cycle_index(rec.timestamp), []).append(rec)

    first_cycle = min(by_cycle)
    last_cycle = max(by_cycle)
    report.cycles = last_cycle - first_cycle + 1

    last_room: dict[str, str] = {}
    fixes: list[LocationFix] = []
    rooms = receiver_map.rooms()
    for cyc in range(first_cycle, last_cycle + 1):
        cycle_start = epoch + dt.timedelta(seconds=cyc * CYCLE_SECONDS)
        cycle_end = cycle_start + dt.timedelta(seconds=CYCLE_SECONDS)
        voted = vote_cycle(by_cycle.get(cyc, ()), cycle_start, receiver_map, registry)
        for resident in sorted(set(last_room) | set(voted)):
            if resident in voted:
                room_id = voted[resident]
                source = FixSource.VOTED
                last_room[resident] = room_id
                report.voted_fixes += 1
            else:
                room_id = last_room[resident]
                source = FixSource.FALLBACK
                report.fallback_fixes += 1
            fixes.append(
                LocationFix(
                    resident_id=resident,
                    cycle_end=cycle_end,
                    room_id=room_id,
                    location=rooms[room_id].category,
                    source=source,
                )
            )
    return fixes, report


# --- file formats ----------------------------------------------------------

def read_scan_log(path) -> list[ScanRecord]:
    """Read JSONL records: {"ts": ISO-8601, "rx": str, "tag": str, "rssi": int}."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                ts = dt.datetime.fromisoformat(str(obj["ts"]).replace("Z", "+00:00"))
                out.append(
                    ScanRecord(
                        timestamp=ts,
                        receiver_id=str(obj["rx"]),
                        tag_id=str(obj["tag"]),
                        rssi=int(obj["rssi"]),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad scan record ({exc})") from exc
    return out


def write_scan_log(path, scans: Iterable[ScanRecord]) -> None:
    with open(path, "w") as fh:
        for rec in scans:
            ts = rec.timestamp.astimezone(dt.timezone.utc)
            fh.write(
                json.dumps(
                    {
                        "ts": ts.isoformat().replace("+00:00", "Z"),
                        "rx": rec.receiver_id,
                        "tag": rec.tag_id,
                        "rssi": rec.rssi,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_registry(path) -> dict[str, str]:
    """Read `tag_id,resident_id` rows into a tag -> resident mapping."""
    registry: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {"tag_id", "resident_id"}:
            raise ValidationError(f"unexpected registry header in {path}")
        for row in reader:
            tag = row["tag_id"]
            if tag in registry:
                raise ValidationError(f"tag {tag!r} registered twice")
            registry[tag] = row["resident_id"]
    return registry


def write_registry(path, registry: Mapping[str, str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["tag_id", "resident_id"])
        for tag in sorted(registry):
            writer.writerow([tag, registry[tag]])


FIX_HEADER = ["resident_id", "cycle_end", "room_id", "location_code", "source"]


def write_fixes_csv(path, fixes: Iterable[LocationFix]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIX_HEADER)
        for fix in fixes:
            ts = fix.cycle_end.astimezone(dt.timezone.utc)
            writer.writerow(
                [
                    fix.resident_id,
                    ts.isoformat().replace("+00:00", "Z"),
                    fix.room_id,
                    int(fix.location),
                    fix.source.value,
                ]
            )


def read_fixes_csv(path) -> list[LocationFix]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FIX_HEADER:
            raise ValidationError(f"unexpected fixes header in {path}")
        for line in reader:
            if not line:
                continue
            out.append(
                LocationFix(
                    resident_id=line[0],
                    cycle_end=dt.datetime.fromisoformat(line[1].replace("Z", "+00:00")),
                    room_id=line[2],
                    location=EncodedLocation(int(line[3])),
                    source=FixSource(line[4]),
                )
            )
    return out
