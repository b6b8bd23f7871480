"""Room-level daily trajectories from BLE scans: voting, clustering on a
windowed similarity kernel, hybrid norms, deviation extraction, and behavior
labels."""

from .classify import (
    BehaviorLabel,
    CombinedCategory,
    DeviationProfile,
    PeriodKind,
    PeriodLayout,
    ThresholdTable,
    classify,
    cohort_report,
    deviation_probabilities,
    fit_thresholds,
    period_layout,
    reference_thresholds,
)
from .cluster import (
    AggregatedTrajectory,
    ClusterAssignment,
    WeightKind,
    WeightVector,
    aggregate,
    best_k,
    mismatch_profile,
    overlap_similarity,
    similarity,
    spectral_cluster,
    ssd_curve,
    weights_for,
    wwo_distance,
)
from .config import PipelineConfig, load_config
from .deviation import DeviationDay, Episode, deviation_history, episodes, filter_day
from .errors import (
    DegeneracyWarning,
    NoOriginDetectable,
    NormGap,
    NoValidDays,
    PipelineError,
    ValidationError,
)
from .localize import (
    LocationFix,
    Receiver,
    ReceiverMap,
    Room,
    ScanRecord,
    localize_stream,
    vote_cycle,
)
from .model import (
    SLOTS_PER_DAY,
    DayTrajectory,
    EncodedLocation,
    SpatioTemporalMatrix,
    group_by_resident,
    read_trajectory_csv,
    write_trajectory_csv,
)
from .norms import (
    GroupNorm,
    HybridNorm,
    Provenance,
    TransitionPoints,
    build_norms,
    day_start_end,
    group_norm,
    hybrid_norm,
    transition_points,
)
from .preprocess import build_day, detect_origin, fit_windows, preprocess_fixes, smooth
from .synth import CohortSpec, DeviationKind, NoiseModel, PlantedBehavior, generate

__version__ = "0.1.0"

__all__ = [
    "AggregatedTrajectory",
    "BehaviorLabel",
    "ClusterAssignment",
    "CohortSpec",
    "CombinedCategory",
    "DayTrajectory",
    "DegeneracyWarning",
    "DeviationDay",
    "DeviationKind",
    "DeviationProfile",
    "EncodedLocation",
    "Episode",
    "GroupNorm",
    "HybridNorm",
    "LocationFix",
    "NoOriginDetectable",
    "NoValidDays",
    "NoiseModel",
    "NormGap",
    "PeriodKind",
    "PeriodLayout",
    "PipelineConfig",
    "PipelineError",
    "PlantedBehavior",
    "Provenance",
    "Receiver",
    "ReceiverMap",
    "Room",
    "SLOTS_PER_DAY",
    "ScanRecord",
    "SpatioTemporalMatrix",
    "ThresholdTable",
    "TransitionPoints",
    "ValidationError",
    "WeightKind",
    "WeightVector",
    "aggregate",
    "best_k",
    "build_day",
    "build_norms",
    "classify",
    "cohort_report",
    "day_start_end",
    "detect_origin",
    "deviation_history",
    "deviation_probabilities",
    "episodes",
    "filter_day",
    "fit_thresholds",
    "fit_windows",
    "generate",
    "group_by_resident",
    "group_norm",
    "hybrid_norm",
    "load_config",
    "localize_stream",
    "mismatch_profile",
    "overlap_similarity",
    "period_layout",
    "preprocess_fixes",
    "read_trajectory_csv",
    "reference_thresholds",
    "similarity",
    "smooth",
    "spectral_cluster",
    "ssd_curve",
    "transition_points",
    "vote_cycle",
    "weights_for",
    "write_trajectory_csv",
    "wwo_distance",
]
