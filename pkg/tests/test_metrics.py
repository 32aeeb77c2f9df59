"""Tracking metric suite versus the exhaustive oracle."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import hota_oracle
from reftrack.domain import BoundingBox, Expression, ObjectState, PredictionRecord, Track
from reftrack.metrics import (
    ALPHAS,
    EvalCase,
    FrameObservations,
    aggregate,
    build_case,
    compute_case,
    evaluate_cases,
)

_METRICS = ("hota", "deta", "assa", "det_re", "det_pr", "ass_re", "ass_pr", "loc_a")


def case_from_dicts(gt: dict, pred: dict, key="case") -> EvalCase:
    frames = []
    for t in sorted(set(gt) | set(pred)):
        g = gt.get(t, {})
        p = pred.get(t, {})
        frames.append(
            FrameObservations(
                gt_ids=sorted(g),
                gt_boxes=np.array([g[i] for i in sorted(g)], dtype=float).reshape(-1, 4),
                pred_ids=sorted(p),
                pred_boxes=np.array([p[i] for i in sorted(p)], dtype=float).reshape(-1, 4),
            )
        )
    return EvalCase(key, frames)


def assert_matches_oracle(gt, pred):
    report = compute_case(case_from_dicts(gt, pred))
    want = hota_oracle(gt, pred)
    for name in _METRICS:
        assert getattr(report, name) == pytest.approx(want[name], abs=1e-9), name


BOX = (0.5, 0.5, 0.2, 0.2)
BOX_B = (0.2, 0.2, 0.1, 0.1)
BOX_C = (0.8, 0.8, 0.15, 0.15)


class TestComputeCase:
    def test_perfect_single_track(self):
        gt = {t: {1: BOX} for t in range(3)}
        report = compute_case(case_from_dicts(gt, gt))
        assert report.hota == pytest.approx(1.0)
        assert report.deta == pytest.approx(1.0)
        assert report.assa == pytest.approx(1.0)
        assert report.loc_a == pytest.approx(1.0)

    def test_no_predictions(self):
        gt = {0: {1: BOX}}
        report = compute_case(case_from_dicts(gt, {}))
        assert report.hota == 0.0 and report.deta == 0.0

    def test_identity_swap_hurts_association_only(self):
        gt = {0: {1: BOX, 2: BOX_B}, 1: {1: BOX, 2: BOX_B}}
        swapped = {0: {7: BOX, 8: BOX_B}, 1: {8: BOX, 7: BOX_B}}
        report = compute_case(case_from_dicts(gt, swapped))
        assert report.deta == pytest.approx(1.0)
        # every TP pairs tracks that coincide on 1 of their 2 frames:
        # A = TPA / (TPA + FNA + FPA) = 1 / 3
        assert report.assa == pytest.approx(1 / 3)
        assert report.hota == pytest.approx(math.sqrt(1 / 3))

    def test_hota_is_geometric_mean_every_alpha(self):
        gt = {0: {1: BOX, 2: BOX_B}, 1: {1: BOX}, 2: {1: BOX, 3: BOX_C}}
        pred = {0: {5: BOX}, 1: {5: (0.52, 0.5, 0.2, 0.2)}, 2: {5: BOX, 6: BOX_B}}
        report = compute_case(case_from_dicts(gt, pred))
        for a in range(len(ALPHAS)):
            want = math.sqrt(report.per_alpha["deta"][a] * report.per_alpha["assa"][a])
            assert report.per_alpha["hota"][a] == pytest.approx(want, abs=1e-12)

    def test_scalar_is_alpha_mean(self):
        gt = {0: {1: BOX}, 1: {1: BOX}}
        pred = {0: {5: (0.55, 0.5, 0.2, 0.2)}, 1: {5: BOX}}
        report = compute_case(case_from_dicts(gt, pred))
        for name in _METRICS:
            assert getattr(report, name) == pytest.approx(
                float(np.mean(report.per_alpha[name])), abs=1e-12
            )

    def test_alpha_threshold_is_inclusive(self):
        # a similarity of exactly 0.5 must count as matched at alpha = 0.5
        # (iou of half-overlapping equal boxes: offset w/3 gives 0.5)
        w = 0.3
        off = w / 3
        a = (0.5, 0.5, w, w)
        b = (0.5 + off, 0.5, w, w)
        gt = {0: {1: a}}
        pred = {0: {5: b}}
        report = compute_case(case_from_dicts(gt, pred))
        idx = list(np.round(ALPHAS, 2)).index(0.5)
        assert report.per_alpha["deta"][idx] == pytest.approx(1.0)

    def test_fragmented_track_matches_oracle(self):
        gt = {t: {1: BOX} for t in range(3)}
        pred = {0: {5: BOX}, 1: {6: BOX}, 2: {6: BOX}}
        assert_matches_oracle(gt, pred)

    def test_extra_predictions_matches_oracle(self):
        gt = {0: {1: BOX}}
        pred = {0: {5: BOX, 6: BOX_B}, 1: {5: BOX_C}}
        assert_matches_oracle(gt, pred)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10**9))
    def test_random_sequences_match_oracle(self, seed):
        rng = np.random.default_rng(seed)
        frames = int(rng.integers(1, 4))
        gt_ids = list(range(1, int(rng.integers(1, 4)) + 1))
        pred_ids = list(range(5, 5 + int(rng.integers(0, 4))))

        def rand_box():
            return (
                float(rng.uniform(0.2, 0.8)), float(rng.uniform(0.2, 0.8)),
                float(rng.uniform(0.05, 0.4)), float(rng.uniform(0.05, 0.4)),
            )

        gt = {}
        pred = {}
        for t in range(frames):
            gt[t] = {i: rand_box() for i in gt_ids if rng.random() < 0.8}
            pred[t] = {i: rand_box() for i in pred_ids if rng.random() < 0.8}
        if not any(gt.values()) and not any(pred.values()):
            gt[0] = {1: BOX}
        assert_matches_oracle(gt, pred)


class TestAggregate:
    def test_mean_of_reports(self):
        gt_a = {t: {1: BOX} for t in range(2)}
        r1 = compute_case(case_from_dicts(gt_a, gt_a, key="a"))
        r2 = compute_case(case_from_dicts(gt_a, {}, key="b"))
        agg = aggregate([r1, r2])
        assert agg.hota == pytest.approx((r1.hota + r2.hota) / 2)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_evaluate_cases_skips_empty_and_scores_ghost_predictions(self):
        gt = {0: {1: BOX}}
        full = case_from_dicts(gt, gt, key="full")
        empty = case_from_dicts({}, {}, key="empty")
        ghosts = case_from_dicts({}, {0: {5: BOX}}, key="ghosts")
        per_case, overall = evaluate_cases([full, empty, ghosts])
        assert set(per_case) == {"full", "ghosts"}
        assert per_case["ghosts"].hota == 0.0
        assert overall.hota == pytest.approx((1.0 + 0.0) / 2)

    def test_all_empty_raises(self):
        with pytest.raises(ValueError):
            evaluate_cases([case_from_dicts({}, {}, key="empty")])


def _track(oid: int, boxes: dict[int, tuple]) -> Track:
    return Track(
        oid,
        tuple(
            ObjectState(f, oid, BoundingBox(*b), {}) for f, b in sorted(boxes.items())
        ),
    )


def _pred(key, frame, tid, box, cls, ref) -> PredictionRecord:
    return PredictionRecord(key, frame, tid, BoundingBox(*box), cls, ref)


class TestBuildCase:
    def make_tracks(self):
        return {
            1: _track(1, {0: BOX, 1: BOX}),
            2: _track(2, {0: BOX_B}),
        }

    def test_gt_covers_only_referents(self):
        expr = Expression("things", {0: [1], 1: [1]})
        case = build_case("k", self.make_tracks(), expr, [], num_frames=2)
        assert [f.gt_ids for f in case.frames] == [[1], [1]]

    def test_class_threshold_is_strict(self):
        expr = Expression("things", {0: [1]})
        tracks = self.make_tracks()
        at = build_case("k", tracks, expr, [_pred("k", 0, 9, BOX, 0.60, 0.9)], num_frames=1)
        above = build_case("k", tracks, expr, [_pred("k", 0, 9, BOX, 0.601, 0.9)], num_frames=1)
        assert [f.pred_ids for f in at.frames] == [[]]
        assert [f.pred_ids for f in above.frames] == [[9]]

    def test_referring_threshold_is_strict(self):
        expr = Expression("things", {0: [1]})
        tracks = self.make_tracks()
        at = build_case("k", tracks, expr, [_pred("k", 0, 9, BOX, 0.9, 0.40)], num_frames=1)
        above = build_case("k", tracks, expr, [_pred("k", 0, 9, BOX, 0.9, 0.401)], num_frames=1)
        assert [f.pred_ids for f in at.frames] == [[]]
        assert [f.pred_ids for f in above.frames] == [[9]]

    def test_duplicate_track_frame_rejected(self):
        expr = Expression("things", {0: [1]})
        preds = [_pred("k", 0, 9, BOX, 0.9, 0.9), _pred("k", 0, 9, BOX_B, 0.9, 0.9)]
        with pytest.raises(ValueError):
            build_case("k", self.make_tracks(), expr, preds, num_frames=1)

    def test_referent_must_be_visible(self):
        expr = Expression("things", {1: [2]})  # object 2 exists only at frame 0
        with pytest.raises(ValueError):
            build_case("k", self.make_tracks(), expr, [], num_frames=2)

    def test_round_trip_perfect_predictions_score_one(self):
        tracks = self.make_tracks()
        expr = Expression("things", {0: [1, 2], 1: [1]})
        preds = [
            _pred("k", 0, 1, BOX, 0.99, 0.99),
            _pred("k", 0, 2, BOX_B, 0.99, 0.99),
            _pred("k", 1, 1, BOX, 0.99, 0.99),
        ]
        case = build_case("k", tracks, expr, preds, num_frames=2)
        assert compute_case(case).hota == pytest.approx(1.0)
