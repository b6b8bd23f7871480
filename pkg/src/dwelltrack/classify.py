"""Deviation statistics over day periods and rule-based behavior labels.

Each resident's day splits into seven periods anchored on their average
transition points. Deviated slots are pooled into five combined categories
(null, origin, public, private, restricted) and turned into per-period
probabilities; quartile fences over the cohort then flag the unusual ones.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .deviation import DeviationDay
from .errors import DegeneracyWarning, ValidationError
from .model import SLOTS_PER_DAY, EncodedLocation

TRANSITION_BUFFER_SLOTS = 12  # one hour on each side of the group window
MIN_PROFILES_FOR_FENCES = 5


class PeriodKind(str, Enum):
    MIDNIGHT1 = "midnight1"
    MORNING = "morning"
    PRE_GROUP = "pre_group"
    GROUP = "group"
    POST_GROUP = "post_group"
    EVENING = "evening"
    MIDNIGHT2 = "midnight2"


# Period axis used by fences and rules: both midnight stretches pool into one.
RULE_PERIODS = ("midnight", "morning", "pre_group", "group", "post_group", "evening")


class CombinedCategory(str, Enum):
    C1_NULL = "c1"
    C2_ORIGIN = "c2"
    C3_PUBLIC = "c3"
    C4_PRIVATE = "c4"
    C5_RESTRICTED = "c5"


_CATEGORY_OF = {
    EncodedLocation.ORIGIN_L2: CombinedCategory.C2_ORIGIN,
    EncodedLocation.ORIGIN_L3: CombinedCategory.C2_ORIGIN,
    EncodedLocation.PRIVATE_L2: CombinedCategory.C4_PRIVATE,
    EncodedLocation.PRIVATE_L3: CombinedCategory.C4_PRIVATE,
    EncodedLocation.PUBLIC_B1: CombinedCategory.C3_PUBLIC,
    EncodedLocation.PUBLIC_L2: CombinedCategory.C3_PUBLIC,
    EncodedLocation.PUBLIC_L3: CombinedCategory.C3_PUBLIC,
    EncodedLocation.RESTRICTED: CombinedCategory.C5_RESTRICTED,
}

_DEVIATION_CATEGORIES = (
    CombinedCategory.C2_ORIGIN,
    CombinedCategory.C3_PUBLIC,
    CombinedCategory.C4_PRIVATE,
    CombinedCategory.C5_RESTRICTED,
)


class BehaviorLabel(str, Enum):
    SLEEP_IRREGULARITY = "sleep_irregularity"
    AWAKE_IRREGULARITY = "awake_irregularity"
    PRIVATE_VISITING = "private_visiting"


def combined_category(loc: EncodedLocation) -> CombinedCategory:
    try:
        return _CATEGORY_OF[loc]
    except KeyError:
        raise ValidationError(f"{loc!r} has no combined category") from None


@dataclass(frozen=True)
class PeriodLayout:
    """Seven half-open slot ranges tiling [0, 288)."""

    ranges: Mapping[PeriodKind, range]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ranges", dict(self.ranges))
        covered = sum(len(r) for r in self.ranges.values())
        if set(self.ranges) != set(PeriodKind) or covered != SLOTS_PER_DAY:
            raise ValidationError("periods must tile the 288-slot day exactly")


def period_layout(avg_p5: float, avg_p6: float) -> PeriodLayout:
    """Cut the day into periods around the fused transition points.

    Uses one-hour buffers on each side of the group window. When the window is
    shorter than the two buffers, the group period collapses and the buffers
    share the window, with a warning.
    """
    p5 = int(round(avg_p5))
    p6 = int(round(avg_p6))
    if not (0 <= p5 <= p6 <= SLOTS_PER_DAY):
        raise ValidationError(f"need 0 <= p5 <= p6 <= {SLOTS_PER_DAY}, got {p5}, {p6}")
    half_morning = p5 // 2
    if p6 - p5 >= 2 * TRANSITION_BUFFER_SLOTS:
        pre_end = p5 + TRANSITION_BUFFER_SLOTS
        post_start = p6 - TRANSITION_BUFFER_SLOTS
    else:
        mid = (p5 + p6) // 2
        pre_end = mid
        post_start = mid
        warnings.warn(
            f"group window [{p5}, {p6}) shorter than the two transition "
            "buffers; group period collapsed",
            DegeneracyWarning,
            stacklevel=2,
        )
    evening_end = p6 + (SLOTS_PER_DAY - p6) // 2
    return PeriodLayout(
        ranges={
            PeriodKind.MIDNIGHT1: range(0, half_morning),
            PeriodKind.MORNING: range(half_morning, p5),
            PeriodKind.PRE_GROUP: range(p5, pre_end),
            PeriodKind.GROUP: range(pre_end, post_start),
            PeriodKind.POST_GROUP: range(post_start, p6),
            PeriodKind.EVENING: range(p6, evening_end),
            PeriodKind.MIDNIGHT2: range(evening_end, SLOTS_PER_DAY),
        }
    )


@dataclass(frozen=True)
class DeviationProfile:
    """Per-period deviation category probabilities for one resident.

    probs holds the seven-period view; rule_probs pools the two midnight
    stretches into the six-period axis the rules use. Periods with zero valid
    slots are absent from both.
    """

    resident_id: str
    probs: Mapping[str, Mapping[str, float]]
    rule_probs: Mapping[str, Mapping[str, float]]
    labels: frozenset[BehaviorLabel] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", {p: dict(c) for p, c in self.probs.items()})
        object.__setattr__(
            self, "rule_probs", {p: dict(c) for p, c in self.rule_probs.items()}
        )
        object.__setattr__(self, "labels", frozenset(self.labels))


def with_labels(
    profile: DeviationProfile, labels: Iterable[BehaviorLabel]
) -> DeviationProfile:
    return replace(profile, labels=frozenset(labels))


def deviation_probabilities(
    history: Sequence[DeviationDay], layout: PeriodLayout
) -> DeviationProfile:
    """Turn a resident's deviation history into per-period probabilities.

    For each period, every non-null category's probability is its deviated
    slot count over the period's valid (non-Missing) slot count, pooled across
    days; the null category takes the remainder so each present period sums
    to one.
    """
    if not history:
        raise ValidationError("deviation history is empty")
    resident_ids = {d.resident_id for d in history}
    if len(resident_ids) != 1:
        raise ValidationError(f"history spans residents {sorted(resident_ids)}")

    valid: dict[PeriodKind, int] = {k: 0 for k in PeriodKind}
    dev: dict[PeriodKind, dict[CombinedCategory, int]] = {
        k: {c: 0 for c in _DEVIATION_CATEGORIES} for k in PeriodKind
    }
    for day in history:
        for kind, slots in layout.ranges.items():
            for t in slots:
                if day.missing[t]:
                    continue
                valid[kind] += 1
                loc = day.slots[t]
                if loc is not None:
                    dev[kind][combined_category(loc)] += 1

    def _prob_row(valid_n: int, counts: Mapping[CombinedCategory, int]) -> dict[str, float]:
        row = {c.value: counts[c] / valid_n for c in _DEVIATION_CATEGORIES}
        row[CombinedCategory.C1_NULL.value] = 1.0 - sum(row.values())
        return row

    probs: dict[str, dict[str, float]] = {}
    for kind in PeriodKind:
        if valid[kind] > 0:
            probs[kind.value] = _prob_row(valid[kind], dev[kind])

    rule_probs: dict[str, dict[str, float]] = {}
    mid_valid = valid[PeriodKind.MIDNIGHT1] + valid[PeriodKind.MIDNIGHT2]
    if mid_valid > 0:
        pooled = {
            c: dev[PeriodKind.MIDNIGHT1][c] + dev[PeriodKind.MIDNIGHT2][c]
            for c in _DEVIATION_CATEGORIES
        }
        rule_probs["midnight"] = _prob_row(mid_valid, pooled)
    for kind in (
        PeriodKind.MORNING,
        PeriodKind.PRE_GROUP,
        PeriodKind.GROUP,
        PeriodKind.POST_GROUP,
        PeriodKind.EVENING,
    ):
        if valid[kind] > 0:
            rule_probs[kind.value] = _prob_row(valid[kind], dev[kind])

    return DeviationProfile(
        resident_id=resident_ids.pop(), probs=probs, rule_probs=rule_probs
    )


# --- quartile fences -----------------------------------------------------------

def nearest_rank_quantile(values: Sequence[float], q: float) -> float:
    """Type-1 (nearest-rank) quantile: the ceil(q*n)-th smallest value."""
    if not values:
        raise ValidationError("quantile of empty sequence")
    if not (0 < q <= 1):
        raise ValidationError(f"q must be in (0, 1], got {q}")
    ordered = sorted(values)
    rank = max(1, math.ceil(q * len(ordered)))
    return float(ordered[rank - 1])


@dataclass(frozen=True)
class Fence:
    """Tukey fences for one (period, category) cell, clamped to [0, 1]."""

    uav: float | None = None
    lav: float | None = None


@dataclass(frozen=True)
class ThresholdTable:
    """UAV/LAV fences per (rule period, category)."""

    cells: Mapping[tuple[str, str], Fence]
    source: str = "fit"

    def __post_init__(self) -> None:
        object.__setattr__(self, "cells", dict(self.cells))

    def fence(self, period: str, category: str) -> Fence | None:
        return self.cells.get((period, category))

    def as_dict(self) -> dict:
        out: dict[str, dict[str, dict]] = {}
        for (period, category), fence in sorted(self.cells.items()):
            out.setdefault(period, {})[category] = {
                "uav": fence.uav,
                "lav": fence.lav,
            }
        return out

    @classmethod
    def from_dict(cls, payload: Mapping, source: str = "file") -> "ThresholdTable":
        cells = {}
        for period, row in payload.items():
            for category, fences in row.items():
                cells[(str(period), str(category))] = Fence(
                    uav=None if fences.get("uav") is None else float(fences["uav"]),
                    lav=None if fences.get("lav") is None else float(fences["lav"]),
                )
        return cls(cells=cells, source=source)


def fit_thresholds(profiles: Sequence[DeviationProfile]) -> ThresholdTable:
    """Fit quartile fences over the cohort for every rule-period cell.

    UAV = Q3 + 1.5*IQR and LAV = Q1 - 1.5*IQR with nearest-rank quartiles,
    clamped to [0, 1]. Residents whose period is absent simply do not
    contribute to that cell. Needs at least 5 profiles.
    """
    if len(profiles) < MIN_PROFILES_FOR_FENCES:
        raise ValidationError(
            f"need at least {MIN_PROFILES_FOR_FENCES} profiles, got {len(profiles)}"
        )
    cells: dict[tuple[str, str], Fence] = {}
    for period in RULE_PERIODS:
        for category in CombinedCategory:
            values = [
                p.rule_probs[period][category.value]
                for p in profiles
                if period in p.rule_probs
            ]
            if not values:
                continue
            q1 = nearest_rank_quantile(values, 0.25)
            q3 = nearest_rank_quantile(values, 0.75)
            iqr = q3 - q1
            cells[(period, category.value)] = Fence(
                uav=min(1.0, max(0.0, q3 + 1.5 * iqr)),
                lav=min(1.0, max(0.0, q1 - 1.5 * iqr)),
            )
    return ThresholdTable(cells=cells, source="fit")


def reference_thresholds() -> ThresholdTable:
    """Fixed fence table shipped for regression testing and reuse on cohorts
    too small to fit their own."""
    cells = {
        ("midnight", "c1"): Fence(lav=0.8762),
        ("morning", "c1"): Fence(lav=0.7323),
        ("evening", "c1"): Fence(lav=0.7522),
        ("pre_group", "c2"): Fence(uav=0.2717),
        ("morning", "c4"): Fence(uav=0.0118),
        ("pre_group", "c4"): Fence(uav=0.0312),
        ("group", "c4"): Fence(uav=0.0521),
        ("post_group", "c4"): Fence(uav=0.0223),
        ("evening", "c4"): Fence(uav=0.0174),
    }
    return ThresholdTable(cells=cells, source="reference")


# --- rules -----------------------------------------------------------------------

_PRIVATE_VISIT_PERIODS = ("morning", "pre_group", "group", "post_group", "evening")


def _below_lav(profile: DeviationProfile, thresholds: ThresholdTable,
               period: str, category: str) -> bool:
    row = profile.rule_probs.get(period)
    fence = thresholds.fence(period, category)
    if row is None or fence is None or fence.lav is None:
        return False
    return row[category] < fence.lav


def _above_uav(profile: DeviationProfile, thresholds: ThresholdTable,
               period: str, category: str) -> bool:
    row = profile.rule_probs.get(period)
    fence = thresholds.fence(period, category)
    if row is None or fence is None or fence.uav is None:
        return False
    return row[category] > fence.uav


def classify(
    profile: DeviationProfile,
    thresholds: ThresholdTable,
    awake_rule: str = "uav",
) -> frozenset[BehaviorLabel]:
    """Apply the three behavior rules; labels are independent.

    Sleep: too little midnight or evening conformity. Awake: too little
    morning conformity, or (default "uav" mode) unusually much origin dwell in
    the pre-group hour; "lav" mode tests that origin cell against its lower
    fence instead. Private visiting: unusually much private-room dwell in any
    waking period. Absent periods or fences make a disjunct false.
    """
    if awake_rule not in ("uav", "lav"):
        raise ValidationError(f"awake_rule must be 'uav' or 'lav', got {awake_rule!r}")
    labels = set()
    if _below_lav(profile, thresholds, "midnight", "c1") or _below_lav(
        profile, thresholds, "evening", "c1"
    ):
        labels.add(BehaviorLabel.SLEEP_IRREGULARITY)
    awake = _below_lav(profile, thresholds, "morning", "c1")
    if awake_rule == "uav":
        awake = awake or _above_uav(profile, thresholds, "pre_group", "c2")
    else:
        awake = awake or _below_lav(profile, thresholds, "pre_group", "c2")
    if awake:
        labels.add(BehaviorLabel.AWAKE_IRREGULARITY)
    if any(
        _above_uav(profile, thresholds, period, "c4")
        for period in _PRIVATE_VISIT_PERIODS
    ):
        labels.add(BehaviorLabel.PRIVATE_VISITING)
    return frozenset(labels)


def cohort_report(profiles: Sequence[DeviationProfile]) -> dict:
    """Distribution of label counts across the cohort plus per-label totals."""
    n = len(profiles)
    if n == 0:
        raise ValidationError("no profiles to report on")
    zero = sum(1 for p in profiles if len(p.labels) == 0)
    one = sum(1 for p in profiles if len(p.labels) == 1)
    two_plus = n - zero - one
    per_label = {label.value: 0 for label in BehaviorLabel}
    for p in profiles:
        for label in p.labels:
            per_label[label.value] += 1
    return {
        "n_residents": n,
        "zero": zero / n,
        "one": one / n,
        "two_plus": two_plus / n,
        "per_label": per_label,
    }


# --- report files -----------------------------------------------------------------

def profile_payload(profile: DeviationProfile) -> dict:
    return {
        "resident_id": profile.resident_id,
        "P": {p: dict(row) for p, row in sorted(profile.probs.items())},
        "P_rules": {p: dict(row) for p, row in sorted(profile.rule_probs.items())},
        "labels": sorted(label.value for label in profile.labels),
    }


def write_classification_json(
    path, thresholds: ThresholdTable, profiles: Sequence[DeviationProfile]
) -> None:
    payload = {
        "thresholds": thresholds.as_dict(),
        "thresholds_source": thresholds.source,
        "profiles": [profile_payload(p) for p in profiles],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_json(
    path,
    thresholds: ThresholdTable,
    profiles: Sequence[DeviationProfile],
) -> None:
    payload = {
        "thresholds": thresholds.as_dict(),
        "thresholds_source": thresholds.source,
        "profiles": [profile_payload(p) for p in profiles],
        "cohort": cohort_report(profiles),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
