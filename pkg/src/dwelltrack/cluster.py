"""Trajectory aggregation, windowed similarity, and spectral grouping.

Residents are compared through a windowed mismatch kernel: per slot, the
mismatch is averaged over a sliding window of +-h slots (so nearby slots
soften exact-time disagreement), then weighted over the day and mapped to a
similarity in (0, 1]. Clustering runs k-means on the row-normalized smallest
eigenvectors of the normalized Laplacian of the similarity graph.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .errors import DegeneracyWarning, NoValidDays, ValidationError
from .model import (
    SLOTS_PER_DAY,
    EncodedLocation,
    SpatioTemporalMatrix,
)

DEFAULT_H_SLOTS = 6  # +-30 minutes

_MISSING = int(EncodedLocation.MISSING)
_N_CODES = len(EncodedLocation)

# Slot windows behind the non-uniform weights (local time).
ACTIVE_DAY = (84, 240)   # 07:00-20:00
FOCUS_DAY = (72, 288)    # 06:00-23:59
DEFAULT_FOCUS_RATIO = 4.0

_WEIGHT_SUM_TOL = 1e-9


class WeightKind(str, Enum):
    UNIFORM = "uniform"
    ACTIVE_DAY_FOCUS = "active_day_focus"
    ONLY_ACTIVE_DAY = "only_active_day"


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Per-slot weights for the similarity kernel; always sums to 1."""

    kind: WeightKind
    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (SLOTS_PER_DAY,):
            raise ValidationError(f"weight vector must have {SLOTS_PER_DAY} entries")
        if np.any(w < 0):
            raise ValidationError("weights must be non-negative")
        if abs(float(w.sum()) - 1.0) > _WEIGHT_SUM_TOL:
            raise ValidationError(f"weights must sum to 1, got {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def uniform_weights() -> WeightVector:
    w = np.full(SLOTS_PER_DAY, 1.0 / SLOTS_PER_DAY)
    return WeightVector(WeightKind.UNIFORM, w)


def active_day_focus_weights(ratio: float = DEFAULT_FOCUS_RATIO) -> WeightVector:
    """Piecewise weights favoring the waking day over the small hours."""
    if ratio <= 0:
        raise ValidationError("focus ratio must be positive")
    w = np.ones(SLOTS_PER_DAY)
    w[FOCUS_DAY[0]:FOCUS_DAY[1]] = ratio
    w /= w.sum()
    return WeightVector(WeightKind.ACTIVE_DAY_FOCUS, w)


def only_active_day_weights() -> WeightVector:
    """All weight inside 07:00-20:00, zero elsewhere."""
    w = np.zeros(SLOTS_PER_DAY)
    w[ACTIVE_DAY[0]:ACTIVE_DAY[1]] = 1.0
    w /= w.sum()
    return WeightVector(WeightKind.ONLY_ACTIVE_DAY, w)


def weights_for(kind: WeightKind | str, ratio: float = DEFAULT_FOCUS_RATIO) -> WeightVector:
    kind = WeightKind(kind)
    if kind is WeightKind.UNIFORM:
        return uniform_weights()
    if kind is WeightKind.ACTIVE_DAY_FOCUS:
        return active_day_focus_weights(ratio)
    return only_active_day_weights()


@dataclass(frozen=True)
class AggregatedTrajectory:
    """One resident's per-slot modal day over their valid days."""

    resident_id: str
    slots: tuple[EncodedLocation, ...]

    def __post_init__(self) -> None:
        if len(self.slots) != SLOTS_PER_DAY:
            raise ValidationError(f"expected {SLOTS_PER_DAY} slots, got {len(self.slots)}")

    def codes(self) -> np.ndarray:
        return np.fromiter((int(s) for s in self.slots), dtype=np.uint8, count=SLOTS_PER_DAY)


def modal_slots(rows: np.ndarray, origin: int | None = None) -> np.ndarray:
    """Per-slot mode over day rows, ignoring Missing.

    Ties go to the origin code when it is among the tied values, else to the
    lowest code. Slots where every row is Missing stay Missing.
    """
    rows = np.asarray(rows, dtype=np.uint8)
    if rows.ndim != 2 or rows.shape[1] != SLOTS_PER_DAY:
        raise ValidationError("rows must be (n_days, 288)")
    counts = np.zeros((SLOTS_PER_DAY, _N_CODES - 1), dtype=np.int64)
    for code in range(_N_CODES - 1):  # Missing never competes
        counts[:, code] = (rows == code).sum(axis=0)
    best = counts.max(axis=1)
    out = np.where(best > 0, counts.argmax(axis=1), _MISSING).astype(np.uint8)
    if origin is not None:
        origin_tied = (counts[:, int(origin)] == best) & (best > 0)
        out = np.where(origin_tied, np.uint8(int(origin)), out)
    return out


def _infer_origin(matrix: SpatioTemporalMatrix) -> int | None:
    codes = matrix.codes()
    counts = [(codes == int(cat)).sum() for cat in
              (EncodedLocation.ORIGIN_L2, EncodedLocation.ORIGIN_L3)]
    if counts[0] == 0 and counts[1] == 0:
        return None
    return int(EncodedLocation.ORIGIN_L2) if counts[0] >= counts[1] else int(
        EncodedLocation.ORIGIN_L3
    )


def aggregate(
    matrix: SpatioTemporalMatrix,
    min_valid_fraction: float = 0.5,
    origin: EncodedLocation | None = None,
) -> AggregatedTrajectory:
    """Collapse a resident's valid days into one modal day.

    Days below the validity threshold are dropped first. When origin is not
    given it is inferred from the matrix (the dominant origin symbol), falling
    back to pure lowest-code tie-breaking when none is present.
    """
    days = matrix.valid_days(min_valid_fraction)
    if not days:
        raise NoValidDays(
            f"resident {matrix.resident_id!r} has no days with valid fraction "
            f">= {min_valid_fraction}"
        )
    rows = np.stack([d.codes() for d in days])
    origin_code = int(origin) if origin is not None else _infer_origin(matrix)
    slots = modal_slots(rows, origin_code)
    return AggregatedTrajectory(
        resident_id=matrix.resident_id,
        slots=tuple(EncodedLocation(int(c)) for c in slots),
    )


# --- kernel -----------------------------------------------------------------

def _codes_of(traj) -> np.ndarray:
    if isinstance(traj, np.ndarray):
        arr = np.asarray(traj, dtype=np.uint8)
        if arr.shape != (SLOTS_PER_DAY,):
            raise ValidationError("trajectory array must have 288 entries")
        return arr
    return traj.codes()


def mismatch_profile(a, b, h_slots: int = DEFAULT_H_SLOTS) -> np.ndarray:
    """Windowed per-slot mismatch between two day vectors.

    m[i] averages the slot-disagreement indicator over slots [i-h, i+h],
    clamped at the day edges with the divisor equal to the actual window
    width. Missing disagrees with everything, including Missing.
    """
    if h_slots < 0:
        raise ValidationError("h_slots must be >= 0")
    ca, cb = _codes_of(a), _codes_of(b)
    neq = (ca != cb) | (ca == _MISSING) | (cb == _MISSING)
    csum = np.concatenate([[0], np.cumsum(neq, dtype=np.float64)])
    idx = np.arange(SLOTS_PER_DAY)
    lo = np.maximum(idx - h_slots, 0)
    hi = np.minimum(idx + h_slots, SLOTS_PER_DAY - 1)
    return (csum[hi + 1] - csum[lo]) / (hi - lo + 1)


def wwo_distance(a, b, h_slots: int = DEFAULT_H_SLOTS) -> float:
    """Unweighted windowed distance: the day-mean of the mismatch profile."""
    return float(mismatch_profile(a, b, h_slots).mean())


def similarity(a, b, w: WeightVector | None = None, h_slots: int = DEFAULT_H_SLOTS) -> float:
    """Weighted windowed similarity in (0, 1]: 1 / (1 + sum_i w_i * m_i)."""
    if w is None:
        w = uniform_weights()
    dist_w = float(np.dot(w.weights, mismatch_profile(a, b, h_slots)))
    return 1.0 / (1.0 + dist_w)


def overlap_similarity(a, b) -> float:
    """Plain fraction of slots in exact agreement (Missing never agrees)."""
    ca, cb = _codes_of(a), _codes_of(b)
    eq = (ca == cb) & (ca != _MISSING) & (cb != _MISSING)
    return float(eq.mean())


def similarity_matrix(
    trajs: Sequence[AggregatedTrajectory],
    w: WeightVector | None = None,
    h_slots: int = DEFAULT_H_SLOTS,
) -> np.ndarray:
    """Symmetric pairwise similarity with a zero diagonal."""
    if w is None:
        w = uniform_weights()
    n = len(trajs)
    codes = np.stack([t.codes() for t in trajs]) if n else np.zeros((0, SLOTS_PER_DAY))
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = similarity(codes[i], codes[j], w, h_slots)
            out[i, j] = out[j, i] = s
    return out


def distance_matrix(
    trajs: Sequence[AggregatedTrajectory], h_slots: int = DEFAULT_H_SLOTS
) -> np.ndarray:
    n = len(trajs)
    codes = np.stack([t.codes() for t in trajs]) if n else np.zeros((0, SLOTS_PER_DAY))
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = wwo_distance(codes[i], codes[j], h_slots)
            out[i, j] = out[j, i] = d
    return out


# --- spectral clustering ------------------------------------------------------

def normalized_laplacian(affinity: np.ndarray) -> np.ndarray:
    """L = I - D^{-1/2} A D^{-1/2}, symmetrized against round-off."""
    a = np.asarray(affinity, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError("affinity must be square")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValidationError("affinity must be symmetric")
    deg = a.sum(axis=1)
    if np.any(deg <= 0):
        raise ValidationError("every node needs positive degree")
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(len(a)) - (inv_sqrt[:, None] * a) * inv_sqrt[None, :]
    return (lap + lap.T) / 2.0


def spectral_embedding(lap: np.ndarray, k: int) -> np.ndarray:
    """Rows of the k smallest eigenvectors, L2-normalized per row."""
    try:
        eigvals, eigvecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"eigendecomposition failed: {exc}") from exc
    emb = eigvecs[:, :k]
    norms = np.linalg.norm(emb, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return emb / safe[:, None]


def _farthest_first(points: np.ndarray, k: int, first: int) -> np.ndarray:
    centers = [first]
    dist = np.linalg.norm(points - points[first], axis=1)
    while len(centers) < k:
        nxt = int(np.argmax(dist))  # argmax takes the lowest index on ties
        centers.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return points[centers].copy()


def _lloyd(
    points: np.ndarray, centers: np.ndarray, tol: float, max_iter: int = 300
) -> tuple[np.ndarray, float]:
    inertia = np.inf
    labels = np.zeros(len(points), dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new_inertia = float(d2[np.arange(len(points)), labels].sum())
        for c in range(len(centers)):
            mask = labels == c
            if mask.any():
                centers[c] = points[mask].mean(axis=0)
        if inertia - new_inertia <= tol * max(new_inertia, 1e-12):
            inertia = new_inertia
            break
        inertia = new_inertia
    return labels, inertia


def _kmeans(
    points: np.ndarray,
    k: int,
    seed: int,
    restarts: int = 100,
    tol: float = 1e-6,
) -> np.ndarray:
    rng = np.random.default_rng(seed)
    best_labels = None
    best_inertia = np.inf
    for _ in range(restarts):
        first = int(rng.integers(len(points)))
        centers = _farthest_first(points, k, first)
        labels, inertia = _lloyd(points, centers, tol)
        if inertia < best_inertia - 1e-12:
            best_inertia = inertia
            best_labels = labels
    return best_labels


@dataclass(frozen=True)
class ClusterAssignment:
    """Cluster labels per resident, contiguous from 0."""

    k: int
    labels: Mapping[str, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", dict(self.labels))
        used = sorted(set(self.labels.values()))
        if used and used != list(range(len(used))):
            raise ValidationError(f"labels must be contiguous from 0, got {used}")


def spectral_cluster(
    trajs: Sequence[AggregatedTrajectory],
    k: int,
    w: WeightVector | None = None,
    h_slots: int = DEFAULT_H_SLOTS,
    seed: int = 0,
) -> ClusterAssignment:
    """Cluster residents on the normalized-Laplacian embedding of the
    similarity graph. Deterministic for a given seed and input order; label
    numbers follow first appearance in input order."""
    n = len(trajs)
    if n < 3:
        raise ValidationError("need at least 3 residents to cluster")
    if not (2 <= k < n):
        raise ValidationError(f"k must be in [2, {n - 1}], got {k}")
    ids = [t.resident_id for t in trajs]
    if len(set(ids)) != n:
        raise ValidationError("duplicate resident ids in clustering input")
    affinity = similarity_matrix(trajs, w, h_slots)
    lap = normalized_laplacian(affinity)
    emb = spectral_embedding(lap, k)
    raw = _kmeans(emb, k, seed)
    # Degenerate either way: fewer distinct inputs than requested clusters, or
    # k-means could not keep k clusters apart.
    distinct_inputs = len({t.slots for t in trajs})
    distinct_found = len(set(int(v) for v in raw))
    if distinct_inputs < k or distinct_found < k:
        warnings.warn(
            f"requested k={k} with {distinct_inputs} distinct trajectories; "
            f"{distinct_found} distinct clusters emerged",
            DegeneracyWarning,
            stacklevel=2,
        )
    remap: dict[int, int] = {}
    labels: dict[str, int] = {}
    for rid, lab in zip(ids, raw):
        lab = int(lab)
        if lab not in remap:
            remap[lab] = len(remap)
        labels[rid] = remap[lab]
    return ClusterAssignment(k=k, labels=labels)


def cluster_ssd(
    assignment: ClusterAssignment,
    trajs: Sequence[AggregatedTrajectory],
    h_slots: int = DEFAULT_H_SLOTS,
    dist: np.ndarray | None = None,
) -> float:
    """Sum over clusters of squared pairwise distances between members."""
    if dist is None:
        dist = distance_matrix(trajs, h_slots)
    ids = [t.resident_id for t in trajs]
    total = 0.0
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            if assignment.labels[ids[i]] == assignment.labels[ids[j]]:
                total += float(dist[i, j]) ** 2
    return total


def ssd_curve(
    trajs: Sequence[AggregatedTrajectory],
    k_range: tuple[int, int] = (2, 7),
    w: WeightVector | None = None,
    h_slots: int = DEFAULT_H_SLOTS,
    seed: int = 0,
) -> list[tuple[int, float]]:
    """Cluster at every k in [k_min, k_max] and report (k, ssd) pairs."""
    k_min, k_max = k_range
    if k_min > k_max:
        raise ValidationError(f"bad k range [{k_min}, {k_max}]")
    dist = distance_matrix(trajs, h_slots)
    curve = []
    for k in range(k_min, k_max + 1):
        assignment = spectral_cluster(trajs, k, w, h_slots, seed)
        curve.append((k, cluster_ssd(assignment, trajs, h_slots, dist)))
    return curve


def best_k(curve: Sequence[tuple[int, float]]) -> int:
    """The smallest k achieving the minimum ssd."""
    if not curve:
        raise ValidationError("empty ssd curve")
    lowest = min(ssd for _, ssd in curve)
    return min(k for k, ssd in curve if ssd == lowest)


# --- cluster file ------------------------------------------------------------

def write_cluster_json(
    path,
    assignment: ClusterAssignment,
    seed: int,
    weight_kind: WeightKind,
    ssd: Sequence[tuple[int, float]],
) -> None:
    payload = {
        "k": assignment.k,
        "seed": seed,
        "weight_kind": WeightKind(weight_kind).value,
        "labels": {rid: int(lab) for rid, lab in sorted(assignment.labels.items())},
        "ssd_curve": [[int(k), float(s)] for k, s in ssd],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_cluster_json(path) -> tuple[ClusterAssignment, dict]:
    with open(path) as fh:
        payload = json.load(fh)
    try:
        assignment = ClusterAssignment(
            k=int(payload["k"]),
            labels={str(r): int(l) for r, l in payload["labels"].items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad cluster file {path}: {exc}") from exc
    return assignment, payload
