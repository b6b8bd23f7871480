import datetime as dt
import random
from collections import Counter

import pytest

from dwelltrack.errors import ValidationError
from dwelltrack.localize import (
    CYCLE_SECONDS,
    FixSource,
    Receiver,
    ReceiverMap,
    Room,
    ScanRecord,
    filter_scans,
    localize_stream,
    read_fixes_csv,
    read_registry,
    read_scan_log,
    vote_cycle,
    write_fixes_csv,
    write_registry,
    write_scan_log,
)
from dwelltrack.model import EncodedLocation

UTC = dt.timezone.utc
T0 = dt.datetime(2024, 3, 4, 12, 0, 0, tzinfo=UTC)  # epoch-aligned to 15 s


def make_map(n_rooms=4):
    receivers = []
    for i in range(n_rooms):
        room = Room(f"room-{i:02d}", EncodedLocation.PRIVATE_L2, 2)
        receivers.append(Receiver(f"rx-{i:02d}", room))
    return ReceiverMap(receivers)


def scan(offset_s, rx, tag, rssi, base=T0):
    return ScanRecord(base + dt.timedelta(seconds=offset_s), rx, tag, rssi)


REGISTRY = {"tag-a": "ra", "tag-b": "rb"}


# --- independent voting oracle ----------------------------------------------
# Replays every record of a cycle and applies the documented rules directly:
# sub-window winner by (rssi, then lower room id), mode across sub-windows,
# mode ties by strongest single record among the tied rooms, then room id.

def oracle_vote(records, cycle_start, room_of_rx, resident_of_tag):
    per_sub = {}
    for rec in records:
        rid = resident_of_tag.get(rec.tag_id)
        if rid is None:
            continue
        off = (rec.timestamp - cycle_start).total_seconds()
        sub = int(off // 3)
        room = room_of_rx[rec.receiver_id]
        per_sub.setdefault(rid, {}).setdefault(sub, []).append((rec.rssi, room))

    out = {}
    for rid, subs in per_sub.items():
        candidates = []
        for entries in subs.values():
            strongest = max(rssi for rssi, _ in entries)
            winner = min(room for rssi, room in entries if rssi == strongest)
            candidates.append(winner)
        counts = Counter(candidates)
        top = max(counts.values())
        tied = sorted(room for room, n in counts.items() if n == top)
        if len(tied) > 1:
            def peak(room):
                return max(
                    rec.rssi
                    for rec in records
                    if resident_of_tag.get(rec.tag_id) == rid
                    and room_of_rx[rec.receiver_id] == room
                )
            best = max(peak(room) for room in tied)
            tied = sorted(room for room in tied if peak(room) == best)
        out[rid] = tied[0]
    return out


def test_filter_scans_boundary():
    records = [
        scan(0, "rx-00", "tag-a", -65),
        scan(1, "rx-00", "tag-a", -71),
        scan(2, "rx-00", "tag-a", -70),
    ]
    kept = filter_scans(records, -70)
    assert [r.rssi for r in kept] == [-65, -70]
    assert filter_scans([], -70) == []


def test_vote_majority():
    # heard in room-00 in 4 sub-windows, room-01 in 1
    records = [scan(3 * i + 1, "rx-00", "tag-a", -60) for i in range(4)]
    records.append(scan(13, "rx-01", "tag-a", -50))
    votes = vote_cycle(records, T0, make_map(), REGISTRY)
    assert votes == {"ra": "room-00"}


def test_vote_empty_cycle_and_unregistered_tag():
    assert vote_cycle([], T0, make_map(), REGISTRY) == {}
    # tags missing from the registry contribute nothing here
    records = [scan(1, "rx-00", "tag-zz", -40)]
    assert vote_cycle(records, T0, make_map(), REGISTRY) == {}


def test_vote_mode_tie_resolved_by_peak_rssi():
    # 2 sub-windows room-01 (peak -50), 2 sub-windows room-00 (peak -60)
    records = [
        scan(0, "rx-01", "tag-a", -55),
        scan(3, "rx-01", "tag-a", -50),
        scan(6, "rx-00", "tag-a", -60),
        scan(9, "rx-00", "tag-a", -62),
    ]
    votes = vote_cycle(records, T0, make_map(), REGISTRY)
    assert votes == {"ra": "room-01"}


def test_vote_mode_tie_then_room_id():
    records = [
        scan(0, "rx-01", "tag-a", -50),
        scan(3, "rx-00", "tag-a", -50),
    ]
    votes = vote_cycle(records, T0, make_map(), REGISTRY)
    assert votes == {"ra": "room-00"}


def test_vote_subwindow_tie_lower_room_id():
    # same rssi in one sub-window: lower room id is the candidate
    records = [
        scan(1.0, "rx-03", "tag-a", -44),
        scan(1.5, "rx-02", "tag-a", -44),
    ]
    votes = vote_cycle(records, T0, make_map(), REGISTRY)
    assert votes == {"ra": "room-02"}


def test_subwindow_boundary_goes_to_later_window():
    # two records, both at sub-window boundaries; they land in windows 1 and 2,
    # giving two distinct candidates, and the -40 peak breaks the mode tie
    records = [
        scan(3.0, "rx-00", "tag-a", -40),
        scan(6.0, "rx-01", "tag-a", -45),
    ]
    votes = vote_cycle(records, T0, make_map(), REGISTRY)
    assert votes == {"ra": "room-00"}
    # a record on the cycle end boundary belongs to the next cycle
    with pytest.raises(ValidationError):
        vote_cycle([scan(15.0, "rx-00", "tag-a", -40)], T0, make_map(), REGISTRY)


def test_vote_against_oracle_random_cycles():
    rng = random.Random(17)
    rmap = make_map(6)
    room_of_rx = {f"rx-{i:02d}": f"room-{i:02d}" for i in range(6)}
    registry = {f"tag-{j}": f"r{j}" for j in range(4)}
    for _ in range(200):
        records = []
        for _ in range(rng.randrange(0, 25)):
            offset = rng.choice(
                [rng.uniform(0, 14.999), float(rng.randrange(0, 5) * 3)]
            )
            records.append(
                scan(
                    offset,
                    f"rx-{rng.randrange(6):02d}",
                    f"tag-{rng.randrange(4)}",
                    rng.randrange(-69, -40),
                )
            )
        got = vote_cycle(records, T0, rmap, registry)
        want = oracle_vote(records, T0, room_of_rx, registry)
        assert got == want
        # record order within the cycle must not matter
        shuffled = records[:]
        rng.shuffle(shuffled)
        assert vote_cycle(shuffled, T0, rmap, registry) == want


def test_localize_stream_fallback_and_cold_start():
    rmap = make_map()
    records = [
        scan(1, "rx-00", "tag-a", -50),          # cycle 0: ra voted room-00
        scan(CYCLE_SECONDS * 2 + 1, "rx-01", "tag-a", -50),  # cycle 2: room-01
        scan(CYCLE_SECONDS * 2 + 2, "rx-02", "tag-b", -50),  # rb first seen cycle 2
    ]
    fixes, report = localize_stream(records, rmap, REGISTRY)
    by_resident = {}
    for f in fixes:
        by_resident.setdefault(f.resident_id, []).append(f)

    ra = by_resident["ra"]
    assert [f.room_id for f in ra] == ["room-00", "room-00", "room-01"]
    assert [f.source for f in ra] == [
        FixSource.VOTED,
        FixSource.FALLBACK,
        FixSource.VOTED,
    ]
    assert ra[0].cycle_end == T0 + dt.timedelta(seconds=CYCLE_SECONDS)
    # rb emits nothing before its first vote
    assert [f.room_id for f in by_resident["rb"]] == ["room-02"]
    assert report.cycles == 3
    assert report.voted_fixes == 3 and report.fallback_fixes == 1


def test_localize_stream_weak_records_can_leave_gaps():
    rmap = make_map()
    records = [
        scan(1, "rx-00", "tag-a", -50),
        scan(CYCLE_SECONDS + 1, "rx-01", "tag-a", -71),  # filtered out
    ]
    fixes, report = localize_stream(records, rmap, REGISTRY)
    # the weak record still bounds nothing: last strong cycle is cycle 0
    assert len(fixes) == 1 and fixes[0].source is FixSource.VOTED
    assert report.weak_filtered == 1


def test_localize_stream_unknown_tag_counted_unknown_receiver_fatal():
    rmap = make_map()
    records = [
        scan(1, "rx-00", "tag-a", -50),
        scan(2, "rx-00", "tag-ghost", -50),
    ]
    fixes, report = localize_stream(records, rmap, REGISTRY)
    assert len(fixes) == 1
    assert report.unknown_tag_records == 1
    assert report.unknown_tags == ("tag-ghost",)

    with pytest.raises(ValidationError):
        localize_stream(
            [scan(1, "rx-nope", "tag-a", -50)], rmap, REGISTRY
        )


def test_localize_stream_input_order_irrelevant():
    rng = random.Random(3)
    rmap = make_map(5)
    registry = {f"tag-{j}": f"r{j}" for j in range(3)}
    records = []
    for c in range(40):
        for _ in range(rng.randrange(0, 6)):
            records.append(
                scan(
                    c * CYCLE_SECONDS + rng.uniform(0, 14.9),
                    f"rx-{rng.randrange(5):02d}",
                    f"tag-{rng.randrange(3)}",
                    rng.randrange(-69, -40),
                )
            )
    fixes_sorted, _ = localize_stream(records, rmap, registry)
    rng.shuffle(records)
    fixes_shuffled, _ = localize_stream(records, rmap, registry)
    assert fixes_sorted == fixes_shuffled


def test_scan_log_round_trip(tmp_path):
    records = [
        scan(0, "rx-00", "tag-a", -50),
        scan(1.5, "rx-01", "tag-b", -70),
    ]
    path = tmp_path / "scans.jsonl"
    write_scan_log(path, records)
    assert read_scan_log(path) == records
    first = path.read_text().splitlines()[0]
    assert '"ts"' in first and first.rstrip().endswith("}")
    assert "Z" in first  # UTC written with the Z suffix


def test_registry_round_trip_and_duplicate_tag(tmp_path):
    path = tmp_path / "registry.csv"
    write_registry(path, {"tag-b": "rb", "tag-a": "ra"})
    assert read_registry(path) == {"tag-a": "ra", "tag-b": "rb"}
    path.write_text("tag_id,resident_id\ntag-a,ra\ntag-a,rb\n")
    with pytest.raises(ValidationError):
        read_registry(path)


def test_receiver_map_csv_round_trip(tmp_path):
    rmap = make_map(3)
    path = tmp_path / "receivers.csv"
    rmap.to_csv(path)
    back = ReceiverMap.from_csv(path)
    assert back.rooms() == rmap.rooms()
    with pytest.raises(ValidationError):
        back.receiver("rx-99")


def test_fixes_csv_round_trip(tmp_path):
    rmap = make_map()
    records = [scan(1, "rx-00", "tag-a", -50), scan(16, "rx-01", "tag-a", -50)]
    fixes, _ = localize_stream(records, rmap, REGISTRY)
    path = tmp_path / "fixes.csv"
    write_fixes_csv(path, fixes)
    assert read_fixes_csv(path) == fixes
