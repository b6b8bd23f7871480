import datetime as dt
import itertools
import random
import warnings

import numpy as np
import pytest

from dwelltrack.cluster import (
    AggregatedTrajectory,
    ClusterAssignment,
    WeightKind,
    active_day_focus_weights,
    aggregate,
    best_k,
    cluster_ssd,
    distance_matrix,
    mismatch_profile,
    modal_slots,
    normalized_laplacian,
    only_active_day_weights,
    overlap_similarity,
    read_cluster_json,
    similarity,
    similarity_matrix,
    spectral_cluster,
    ssd_curve,
    uniform_weights,
    weights_for,
    write_cluster_json,
    wwo_distance,
)
from dwelltrack.errors import DegeneracyWarning, NoValidDays, ValidationError
from dwelltrack.model import SLOTS_PER_DAY, EncodedLocation, SpatioTemporalMatrix

from conftest import DATE, day_of


def agg_of(slots, rid="r000"):
    codes = list(slots)
    if len(codes) < SLOTS_PER_DAY:
        codes = codes + [codes[-1]] * (SLOTS_PER_DAY - len(codes))
    return AggregatedTrajectory(rid, tuple(EncodedLocation(c) for c in codes))


def random_agg(rng, rid, allow_missing=False):
    codes = rng.choices(range(9 if allow_missing else 8), k=SLOTS_PER_DAY)
    return agg_of(codes, rid)


# --- aggregation ---------------------------------------------------------------

def test_modal_slots_plain_mode():
    rows = np.array(
        [[0] * SLOTS_PER_DAY, [0] * SLOTS_PER_DAY, [4] * SLOTS_PER_DAY], dtype=np.uint8
    )
    out = modal_slots(rows)
    assert (out == 0).all()


def test_modal_slots_tie_prefers_origin_else_lowest_code():
    rows = np.zeros((2, SLOTS_PER_DAY), dtype=np.uint8)
    rows[0, :] = 4
    rows[1, :] = 0
    assert (modal_slots(rows) == 0).all()          # lowest code on a 1-1 tie
    assert (modal_slots(rows, origin=0) == 0).all()
    rows[1, :] = 5
    assert (modal_slots(rows) == 4).all()
    assert (modal_slots(rows, origin=5) == 5).all()
    assert (modal_slots(rows, origin=0) == 4).all()  # origin not among the tied


def test_modal_slots_missing_excluded_and_all_missing():
    rows = np.full((3, SLOTS_PER_DAY), 8, dtype=np.uint8)
    rows[0, 0] = 6
    out = modal_slots(rows)
    assert out[0] == 6            # single observation beats two Missing
    assert out[1] == 8            # nothing observed stays Missing


def test_aggregate_filters_invalid_days_and_errors_when_none():
    good = day_of([0] * 288, date=DATE)
    bad = day_of([8] * 200 + [4] * 88, date=DATE + dt.timedelta(days=1))
    matrix = SpatioTemporalMatrix("r000", (good, bad))
    agg = aggregate(matrix, 0.5)
    assert agg.slots[0] is EncodedLocation.ORIGIN_L2

    only_bad = SpatioTemporalMatrix("r000", (bad,))
    with pytest.raises(NoValidDays):
        aggregate(only_bad, 0.5)


def test_aggregate_mode_oracle_three_days():
    days = (
        day_of([2] * 288, date=DATE),
        day_of([2] * 288, date=DATE + dt.timedelta(days=1)),
        day_of([5] * 288, date=DATE + dt.timedelta(days=2)),
    )
    agg = aggregate(SpatioTemporalMatrix("r000", days))
    assert set(agg.slots) == {EncodedLocation.PRIVATE_L2}


# --- kernel ----------------------------------------------------------------------

def oracle_profile(a, b, h):
    """Direct two-loop evaluation of the windowed mismatch."""
    ca = [int(s) for s in a.slots]
    cb = [int(s) for s in b.slots]
    out = []
    for i in range(SLOTS_PER_DAY):
        lo, hi = max(i - h, 0), min(i + h, SLOTS_PER_DAY - 1)
        window = [
            1.0 if (ca[j] != cb[j] or ca[j] == 8 or cb[j] == 8) else 0.0
            for j in range(lo, hi + 1)
        ]
        out.append(sum(window) / len(window))
    return out


def test_mismatch_profile_against_oracle():
    rng = random.Random(5)
    for h in (0, 1, 6, 20):
        a = random_agg(rng, "ra", allow_missing=True)
        b = random_agg(rng, "rb", allow_missing=True)
        got = mismatch_profile(a, b, h)
        want = oracle_profile(a, b, h)
        assert np.allclose(got, want, atol=1e-12)


def test_mismatch_profile_edge_clamping():
    a = agg_of([0] * 288)
    b = agg_of([4] + [0] * 287)  # single mismatch at slot 0
    m = mismatch_profile(a, b, 6)
    assert m[0] == pytest.approx(1 / 7)    # window [0,6], width 7
    assert m[6] == pytest.approx(1 / 13)   # full window [0,12], width 13
    assert m[7] == pytest.approx(0.0)


def test_wwo_distance_frozen_values():
    a = agg_of([0] * 288)
    assert wwo_distance(a, a, 6) == 0.0
    b = agg_of([4] * 288)
    assert wwo_distance(a, b, 6) == 1.0
    one_off = agg_of([4] + [0] * 287)
    assert wwo_distance(a, one_off, 0) == pytest.approx(1 / 288, abs=1e-15)


def test_missing_disagrees_with_missing():
    a = agg_of([8] * 288, "ra")
    assert wwo_distance(a, a, 0) == 1.0
    assert overlap_similarity(a, a) == 0.0
    assert similarity(a, a, uniform_weights(), 0) == pytest.approx(0.5)


def test_similarity_identities():
    rng = random.Random(11)
    w = uniform_weights()
    for _ in range(50):
        a = random_agg(rng, "ra")
        b = random_agg(rng, "rb")
        assert similarity(a, a, w, 6) == 1.0
        s_ab = similarity(a, b, w, 6)
        s_ba = similarity(b, a, w, 6)
        assert abs(s_ab - s_ba) <= 1e-12
        assert 0.5 < s_ab <= 1.0
        # uniform weight, h=0 reduces WWO to the overlap baseline
        lhs = 1.0 / similarity(a, b, w, 0) - 1.0
        rhs = 1.0 - overlap_similarity(a, b)
        assert abs(lhs - rhs) <= 1e-12


def test_fully_disjoint_uniform_similarity_is_half():
    a = agg_of([0] * 288)
    b = agg_of([4] * 288)
    assert similarity(a, b, uniform_weights(), 6) == pytest.approx(0.5)


# --- weights -----------------------------------------------------------------------

def test_weight_vectors_sum_to_one():
    for w in (uniform_weights(), active_day_focus_weights(), only_active_day_weights()):
        assert abs(float(w.weights.sum()) - 1.0) <= 1e-9
        assert (w.weights >= 0).all()


def test_uniform_weights_flat():
    w = uniform_weights()
    assert np.allclose(w.weights, 1.0 / SLOTS_PER_DAY)


def test_active_day_focus_ratio():
    w = active_day_focus_weights(4.0)
    assert w.weights[100] == pytest.approx(4.0 * w.weights[10])
    # constant within each regime
    assert np.allclose(w.weights[72:], w.weights[72])
    assert np.allclose(w.weights[:72], w.weights[0])


def test_only_active_day_support():
    w = only_active_day_weights()
    assert (w.weights[:84] == 0).all()
    assert (w.weights[240:] == 0).all()
    assert (w.weights[84:240] > 0).all()


def test_weights_for_lookup():
    assert weights_for("uniform").kind is WeightKind.UNIFORM
    assert weights_for(WeightKind.ONLY_ACTIVE_DAY).kind is WeightKind.ONLY_ACTIVE_DAY
    with pytest.raises(ValueError):
        weights_for("nope")


def test_weighting_orders_like_reference_comparison():
    # all mismatch confined to 07:00-20:00 (slots 84..239)
    slots_a = [0] * 288
    slots_b = [0] * 288
    for i in range(100, 160):
        slots_b[i] = 4
    a, b = agg_of(slots_a, "ra"), agg_of(slots_b, "rb")
    s_only = similarity(a, b, only_active_day_weights(), 6)
    s_focus = similarity(a, b, active_day_focus_weights(), 6)
    s_uniform = similarity(a, b, uniform_weights(), 6)
    assert s_only < s_focus < s_uniform


# --- spectral machinery --------------------------------------------------------------

def test_normalized_laplacian_eigenvalue_bounds():
    rng = np.random.default_rng(3)
    n = 12
    raw = rng.uniform(0.51, 1.0, size=(n, n))
    affinity = (raw + raw.T) / 2
    np.fill_diagonal(affinity, 0.0)
    lap = normalized_laplacian(affinity)
    eig = np.linalg.eigvalsh(lap)
    assert eig.min() >= -1e-8
    assert eig.max() <= 2.0 + 1e-8
    assert abs(eig[0]) <= 1e-8  # smallest is always ~0


def test_normalized_laplacian_rejects_bad_input():
    with pytest.raises(ValidationError):
        normalized_laplacian(np.ones((3, 4)))
    asym = np.array([[0, 1.0, 0.2], [0.5, 0, 0.2], [0.2, 0.2, 0]])
    with pytest.raises(ValidationError):
        normalized_laplacian(asym)


def planted_cohort(spread=(0, 4)):
    """Six residents, two schedules differing across the whole active day."""
    trajs = []
    for i in range(6):
        code = spread[0] if i % 2 == 0 else spread[1]
        slots = [0] * 84 + [code] * 156 + [0] * 48
        trajs.append(agg_of(slots, f"r{i:03d}"))
    return trajs


def brute_force_two_partition(trajs):
    """The 2-partition minimizing the SSD objective, by exhaustive search."""
    n = len(trajs)
    dist = [[wwo_distance(a, b, 6) for b in trajs] for a in trajs]
    best_val, best_parts = None, None
    for bits in range(1, 2 ** (n - 1)):  # resident 0 always in part 0
        parts = [[], []]
        for i in range(n):
            parts[(bits >> i) & 1].append(i)
        if not parts[0] or not parts[1]:
            continue
        val = sum(
            dist[a][b] ** 2
            for part in parts
            for a, b in itertools.combinations(part, 2)
        )
        if best_val is None or val < best_val:
            best_val, best_parts = val, parts
    return {frozenset(trajs[i].resident_id for i in part) for part in best_parts}


def as_partition(assignment, trajs):
    groups = {}
    for t in trajs:
        groups.setdefault(assignment.labels[t.resident_id], set()).add(t.resident_id)
    return {frozenset(g) for g in groups.values()}


def test_spectral_cluster_matches_brute_force_partition():
    trajs = planted_cohort()
    assignment = spectral_cluster(trajs, 2, seed=0)
    assert as_partition(assignment, trajs) == brute_force_two_partition(trajs)


def test_spectral_cluster_labels_contiguous_first_appearance():
    trajs = planted_cohort()
    assignment = spectral_cluster(trajs, 2, seed=0)
    # first resident defines label 0, first different resident label 1
    assert assignment.labels["r000"] == 0
    assert assignment.labels["r001"] == 1
    assert set(assignment.labels.values()) == {0, 1}


def test_spectral_cluster_order_invariant_partition():
    trajs = planted_cohort()
    shuffled = [trajs[i] for i in (3, 0, 5, 1, 4, 2)]
    p1 = as_partition(spectral_cluster(trajs, 2, seed=0), trajs)
    p2 = as_partition(spectral_cluster(shuffled, 2, seed=0), shuffled)
    assert p1 == p2


def test_spectral_cluster_degenerate_warns_and_terminates():
    trajs = [agg_of([0] * 288, f"r{i}") for i in range(3)]
    with pytest.warns(DegeneracyWarning):
        assignment = spectral_cluster(trajs, 2, seed=0)
    assert assignment.k == 2
    assert set(assignment.labels) == {"r0", "r1", "r2"}


def test_spectral_cluster_validates_k_and_n():
    trajs = planted_cohort()
    with pytest.raises(ValidationError):
        spectral_cluster(trajs[:2], 2)
    with pytest.raises(ValidationError):
        spectral_cluster(trajs, 6)
    with pytest.raises(ValidationError):
        spectral_cluster(trajs, 1)


def test_similarity_matrix_contract():
    trajs = planted_cohort()
    A = similarity_matrix(trajs)
    assert np.allclose(A, A.T)
    assert (np.diag(A) == 0).all()
    off = A[~np.eye(len(trajs), dtype=bool)]
    assert ((off > 0) & (off <= 1)).all()


# --- SSD / model order ------------------------------------------------------------

def test_ssd_curve_and_best_k_on_planted_pair():
    trajs = planted_cohort()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegeneracyWarning)
        curve = ssd_curve(trajs, (2, 4), seed=0)
    ssd = dict(curve)
    assert ssd[2] == pytest.approx(0.0, abs=1e-12)   # planted groups are identical
    assert ssd[3] <= ssd[2] + 1e-12                   # splitting never raises SSD here
    assert best_k(curve) == 2                         # first k reaching the minimum


def test_cluster_ssd_direct_value():
    trajs = planted_cohort()
    labels = {t.resident_id: i % 2 for i, t in enumerate(trajs)}
    assignment = ClusterAssignment(k=2, labels=labels)
    # within each planted group distances are 0, so SSD collapses to 0
    assert cluster_ssd(assignment, trajs, 6) == pytest.approx(0.0)
    mixed = ClusterAssignment(
        k=2, labels={t.resident_id: 0 if i < 2 else 1 for i, t in enumerate(trajs)}
    )
    d = wwo_distance(trajs[0], trajs[1], 6)
    dist = distance_matrix(trajs, 6)
    expected = float(
        sum(
            dist[a, b] ** 2
            for part in ([0, 1], [2, 3, 4, 5])
            for a, b in itertools.combinations(part, 2)
        )
    )
    assert cluster_ssd(mixed, trajs, 6) == pytest.approx(expected)
    assert d > 0


def test_cluster_json_round_trip(tmp_path):
    trajs = planted_cohort()
    assignment = spectral_cluster(trajs, 2, seed=3)
    curve = [(2, 0.0), (3, 0.0)]
    path = tmp_path / "clusters.json"
    write_cluster_json(path, assignment, 3, WeightKind.UNIFORM, curve)
    back, payload = read_cluster_json(path)
    assert back == assignment
    assert payload["seed"] == 3
    assert payload["weight_kind"] == "uniform"
    assert payload["ssd_curve"] == [[2, 0.0], [3, 0.0]]
