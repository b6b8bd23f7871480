"""Pipeline configuration.

One flat, versioned config object covers every stage. JSON files carry a
subset of keys; CLI flags override file values; unset keys fall back to the
defaults below.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import ValidationError

CONFIG_VERSION = 1

WEIGHT_KINDS = ("uniform", "active_day_focus", "only_active_day")
AWAKE_RULES = ("uav", "lav")


@dataclass(frozen=True)
class PipelineConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    jobs: int = 1
    # ingestion
    rssi_threshold_dbm: int = -70
    utc_offset_minutes: int = 0
    # preprocessing
    min_stay_slots: int = 2
    min_valid_fraction: float = 0.5
    # clustering
    h_slots: int = 6
    weight: str = "active_day_focus"
    focus_ratio: float = 4.0
    k: int | None = None  # None means pick k from the SSD curve over k_range
    k_range: tuple[int, int] = (2, 7)
    # norms
    h_gap_slots: int = 6
    prefer_earliest: bool = False
    leave_one_out: bool = False
    # classification
    awake_rule: str = "uav"
    thresholds: str = "fit"  # "fit", "reference", or a path to a JSON table

    def __post_init__(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ValidationError(f"unsupported config version {self.version}")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
        if self.weight not in WEIGHT_KINDS:
            raise ValidationError(f"weight must be one of {WEIGHT_KINDS}")
        if self.awake_rule not in AWAKE_RULES:
            raise ValidationError(f"awake_rule must be one of {AWAKE_RULES}")
        if not (0.0 <= self.min_valid_fraction <= 1.0):
            raise ValidationError("min_valid_fraction must be in [0, 1]")
        if self.min_stay_slots < 1:
            raise ValidationError("min_stay_slots must be >= 1")
        if self.h_slots < 0 or self.h_gap_slots < 0:
            raise ValidationError("window half-widths must be >= 0")
        lo, hi = self.k_range
        if not (2 <= lo <= hi):
            raise ValidationError(f"bad k_range {self.k_range}")
        if self.k is not None and self.k < 2:
            raise ValidationError("k must be >= 2")

    def merged(self, **overrides) -> "PipelineConfig":
        """A copy with the given non-None overrides applied."""
        updates = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **updates) if updates else self

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["k_range"] = list(self.k_range)
        return out


def parse_k_range(text: str) -> tuple[int, int]:
    """"2:7" style inclusive range."""
    parts = text.split(":")
    if len(parts) != 2:
        raise ValidationError(f"k range must look like LO:HI, got {text!r}")
    try:
        lo, hi = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ValidationError(f"k range must be integers, got {text!r}") from exc
    return lo, hi


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(payload) - known
    if unknown:
        raise ValidationError(f"{path}: unknown config keys {sorted(unknown)}")
    if "k_range" in payload:
        raw = payload["k_range"]
        if isinstance(raw, str):
            payload["k_range"] = parse_k_range(raw)
        elif isinstance(raw, (list, tuple)) and len(raw) == 2:
            payload["k_range"] = (int(raw[0]), int(raw[1]))
        else:
            raise ValidationError(f"{path}: bad k_range {raw!r}")
    try:
        return PipelineConfig(**payload)
    except TypeError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def write_config(path, config: PipelineConfig) -> None:
    with open(path, "w") as fh:
        json.dump(config.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
