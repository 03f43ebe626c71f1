"""Association: box geometry, score terms, gating and the optimal assignment."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmtrack.association import (
    Detection,
    ScoreMatrix,
    assignment_total,
    build_score_matrix,
    corners_to_cxcyah,
    cxcyah_to_corners,
    iou,
    iou_matrix,
    match_score,
    solve_assignment,
    trend_sim,
    uncertainty_penalty,
)
from dmtrack.errors import InvalidMeasurementError


def brute_force_best(scores: np.ndarray, valid: np.ndarray) -> float:
    """Best total over every partial matching that uses only valid pairs."""
    n, m = scores.shape
    best = 0.0
    for k in range(1, min(n, m) + 1):
        for rows in itertools.combinations(range(n), k):
            for cols in itertools.permutations(range(m), k):
                if all(valid[r, c] for r, c in zip(rows, cols)):
                    best = max(best, math.fsum(scores[r, c] for r, c in zip(rows, cols)))
    return best


def brute_force_best_nonnegative(scores: np.ndarray, valid: np.ndarray) -> float:
    """Same optimum when all scores are >= 0: enumerate full injections, gated pairs count as unmatched."""
    n, m = scores.shape
    s = np.where(valid, scores, 0.0)
    if n > m:
        s, n, m = s.T, m, n
    best = 0.0
    for cols in itertools.permutations(range(m), n):
        best = max(best, math.fsum(s[r, c] for r, c in enumerate(cols)))
    return best


def random_problem(seed: int, max_size: int = 7):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, max_size + 1)), int(rng.integers(1, max_size + 1))
    if seed % 2:
        scores = rng.integers(0, 17, size=(n, m)) / 16.0  # coarse grid: many exact ties
    else:
        scores = rng.uniform(0.0, 1.0, size=(n, m))
    valid = rng.random((n, m)) > 0.3
    return scores, valid


class TestGeometry:
    def test_unit_aspect(self):
        np.testing.assert_array_equal(cxcyah_to_corners([10, 10, 1.0, 4]), [8, 8, 12, 12])

    def test_wide_box(self):
        np.testing.assert_array_equal(cxcyah_to_corners([0, 0, 2.0, 2]), [-2, -1, 2, 1])

    @pytest.mark.parametrize("box", [[0, 0, 0.0, 2], [0, 0, 1.0, -1]])
    def test_invalid_extent(self, box):
        with pytest.raises(InvalidMeasurementError):
            cxcyah_to_corners(box)

    @given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0.1, 5), st.floats(1, 300))
    def test_round_trip(self, cx, cy, a, h):
        c = cxcyah_to_corners([cx, cy, a, h])
        assert c[0] < c[2] and c[1] < c[3]
        np.testing.assert_allclose(cxcyah_to_corners(corners_to_cxcyah(c)), c, rtol=0, atol=1e-12 * max(1, abs(c).max()))

    def test_iou_cases(self):
        assert iou([0, 0, 2, 2], [0, 0, 2, 2]) == 1.0
        assert iou([0, 0, 1, 1], [2, 2, 3, 3]) == 0.0
        assert iou([0, 0, 2, 2], [1, 0, 3, 2]) == pytest.approx(1 / 3, abs=1e-15)

    @given(st.lists(st.floats(-50, 50), min_size=4, max_size=4), st.lists(st.floats(-50, 50), min_size=4, max_size=4),
           st.floats(0.5, 20), st.floats(0.5, 20))
    def test_iou_symmetric_and_bounded(self, a, b, wa, wb):
        A = [a[0], a[1], a[0] + wa, a[1] + wa]
        B = [b[0], b[1], b[0] + wb, b[1] + 2 * wb]
        v = iou(A, B)
        assert v == iou(B, A)
        assert 0.0 <= v <= 1.0

    def test_iou_matrix_shape(self):
        assert iou_matrix(np.zeros((0, 4)), np.ones((3, 4))).shape == (0, 3)


class TestScoreTerms:
    def test_trend_aligned(self):
        # v_track = pred - prev = (1, 0); v_det = pred - det = (1, 0)
        assert trend_sim([1, 0, 1, 1, 0, 0, 0, 0], [0, 0, 1, 1, 0, 0, 0, 0], [0, 0, 1, 1]) == 1.0

    def test_trend_orthogonal(self):
        assert trend_sim([1, 0, 1, 1, 0, 0, 0, 0], [0, 0, 1, 1, 0, 0, 0, 0], [1, -1, 1, 1]) == 0.0

    def test_trend_stationary_track(self):
        assert trend_sim([5, 5, 1, 1, 0, 0, 0, 0], [5, 5, 1, 1, 0, 0, 0, 0], [9, 9, 1, 1]) == 0.0

    def test_trend_cold_start(self):
        assert trend_sim([5, 5, 1, 1, 0, 0, 0, 0], None, [9, 9, 1, 1]) == 0.0

    def test_trend_sign_flag(self):
        args = ([1, 0, 1, 1], [0, 0, 1, 1], [3, 0, 1, 1])
        assert trend_sim(*args) == -1.0
        assert trend_sim(*args, trend_sign="reversed") == 1.0
        with pytest.raises(ValueError):
            trend_sim(*args, trend_sign="sideways")

    @given(st.floats(0.01, 100))
    def test_trend_scale_invariant(self, k):
        pred, prev, det = np.array([3.0, 4.0]), np.array([1.0, 1.5]), np.array([0.5, 6.0])
        a = trend_sim(pred, prev, det)
        b = trend_sim(pred * k, prev * k, det * k)
        assert a == pytest.approx(b, abs=1e-12)

    def test_penalty_cases(self):
        s = np.ones(8)
        assert uncertainty_penalty([2, 3], s, [2, 3]) == 1.0
        assert uncertainty_penalty([0, 0], s, [1, 0]) == pytest.approx(math.exp(-1), abs=1e-15)
        assert uncertainty_penalty([0, 0], s, [3, 0]) == pytest.approx(1.234098e-4, rel=1e-6)
        assert uncertainty_penalty([0, 0], [2.0, 4.0], [3, 0]) == pytest.approx(math.exp(-1), abs=1e-15)

    def test_penalty_sigma_floor(self):
        assert uncertainty_penalty([0, 0], [1e-9, 1e-9], [0.01, 0]) == pytest.approx(math.exp(-1), abs=1e-12)

    def test_score_weights(self):
        assert match_score(1, 1, 1) == 1.0
        assert match_score(0, 0, 1) == 0.1
        assert match_score(0.5, -1, math.exp(-1)) == pytest.approx(0.1867879, abs=1e-7)

    @given(st.floats(0, 1), st.floats(-1, 1), st.floats(1e-9, 1), st.floats(0, 0.5))
    def test_score_monotone(self, i, t, p, d):
        base = match_score(i, t, p)
        assert match_score(min(i + d, 1), t, p) >= base
        assert match_score(i, min(t + d, 1), p) >= base
        assert match_score(i, t, min(p + d, 1)) >= base

    def test_detection_validation(self):
        with pytest.raises(InvalidMeasurementError):
            Detection([0, 0, 1, 0], 0.5)
        with pytest.raises(ValueError):
            Detection([0, 0, 1, 1], 1.5)


class TestScoreMatrix:
    def test_gate_marks_low_iou(self):
        preds = np.array([[10, 10, 1, 10, 0, 0, 0, 0], [100, 100, 1, 10, 0, 0, 0, 0]], float)
        dets = np.array([[11, 10, 1, 10], [50, 50, 1, 10]], float)
        sm = build_score_matrix(preds, np.ones((2, 8)), [None, None], dets)
        assert sm.valid.tolist() == [[True, False], [False, False]]
        assert np.isnan(sm.scores[0, 1]) and np.isfinite(sm.scores[0, 0])
        assert np.array_equal(np.isfinite(sm.scores), sm.iou >= 0.3)

    def test_iou_only(self):
        preds = np.array([[10, 10, 1, 10, 0, 0, 0, 0]], float)
        dets = np.array([[11, 10, 1, 10]], float)
        sm = build_score_matrix(preds, np.ones((1, 8)), [None], dets, iou_only=True)
        assert sm.scores[0, 0] == sm.iou[0, 0]

    def test_class_gating(self):
        preds = np.array([[10, 10, 1, 10, 0, 0, 0, 0]], float)
        dets = np.array([[10, 10, 1, 10]], float)
        sm = build_score_matrix(preds, np.ones((1, 8)), [None], dets, track_cls=[0], det_cls=[1])
        assert not sm.valid.any()


class TestSolveAssignment:
    def test_single_match(self):
        a = solve_assignment(ScoreMatrix.from_dense([[0.9]], iou=[[0.8]]))
        assert a.matches == [(0, 0)]

    def test_single_gated(self):
        iou_v = np.array([[0.2]])
        a = solve_assignment(ScoreMatrix.from_dense([[0.5]], valid=iou_v >= 0.3, iou=iou_v))
        assert a.matches == [] and a.unmatched_tracks == [0] and a.unmatched_detections == [0]

    def test_cross_pairing(self):
        a = solve_assignment(ScoreMatrix.from_dense([[0.9, 0.8], [0.8, 0.1]]))
        assert a.matches == [(0, 1), (1, 0)]

    def test_empty(self):
        a = solve_assignment(ScoreMatrix.from_dense(np.zeros((0, 3))))
        assert a.matches == [] and a.unmatched_detections == [0, 1, 2]
        a = solve_assignment(ScoreMatrix.from_dense(np.zeros((2, 0))))
        assert a.unmatched_tracks == [0, 1]

    def test_partition_and_gating(self):
        for seed in range(100):
            scores, valid = random_problem(seed)
            a = solve_assignment(ScoreMatrix.from_dense(scores, valid))
            rows = [r for r, _ in a.matches] + a.unmatched_tracks
            cols = [c for _, c in a.matches] + a.unmatched_detections
            assert sorted(rows) == list(range(scores.shape[0]))
            assert sorted(cols) == list(range(scores.shape[1]))
            assert all(valid[r, c] for r, c in a.matches)

    def test_deterministic(self):
        scores = np.full((4, 4), 0.5)
        first = solve_assignment(ScoreMatrix.from_dense(scores)).matches
        for _ in range(5):
            assert solve_assignment(ScoreMatrix.from_dense(scores)).matches == first

    def test_brute_force_up_to_7x7(self):
        for seed in range(500):
            scores, valid = random_problem(seed)
            sm = ScoreMatrix.from_dense(scores, valid)
            assert assignment_total(sm, solve_assignment(sm)) == brute_force_best_nonnegative(scores, valid), seed

    def test_signed_scores_against_partial_enumeration(self):
        for seed in range(200):
            rng = np.random.default_rng(10_000 + seed)
            n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            scores = rng.integers(-8, 9, size=(n, m)) / 8.0
            valid = rng.random((n, m)) > 0.2
            sm = ScoreMatrix.from_dense(scores, valid)
            assert assignment_total(sm, solve_assignment(sm)) == brute_force_best(scores, valid), seed

    def test_two_oracles_agree_on_nonnegative(self):
        for seed in range(50):
            scores, valid = random_problem(seed, max_size=4)
            assert brute_force_best(scores, valid) == brute_force_best_nonnegative(scores, valid)
