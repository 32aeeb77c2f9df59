"""Inference session: promotion, keep/miss lifecycle, identity bookkeeping."""

from __future__ import annotations

import pytest
import torch

from reftrack.harness.config import TemporalConfig, ThresholdConfig
from reftrack.model.network import FramePass, TrackSlot, TrackingSession, propagate_track_queries

DIM = 4


class ScriptedOutput:
    """Stands in for a head output, holding exact float64 probabilities."""

    def __init__(self, class_probs, boxes, ref_probs):
        self.class_probs = class_probs
        self.boxes = boxes
        self.ref_probs = ref_probs


class ScriptedModel:
    """Duck-typed stand-in whose frame outputs follow a per-frame script.

    Each script entry is a dict:
      detect: list of (class_score, ref_score) per detect query
      track:  identity -> (class_score, ref_score)
    Probabilities are stored as float64 so decimal literals reach the
    session's threshold comparisons unchanged.
    """

    def __init__(self, script, n_detect=3):
        self.script = script
        self.n_detect = n_detect
        self.temporal_cfg = TemporalConfig(enabled=False)
        self.track_transform = lambda x: x

    def eval(self):
        return self

    def new_memory(self, capacity=None, dtype=torch.float32):
        return None

    def encode_frame(self, image, token_ids):
        return None

    def frame_pass(self, front, track_embeddings, track_boxes, identities, memory, frame, window):
        entry = self.script[frame]
        cls, ref, boxes = [], [], []
        for q, (c, r) in enumerate(entry["detect"]):
            cls.append(c)
            ref.append(r)
            boxes.append([0.1 + 0.2 * q, 0.5, 0.1, 0.1])
        for identity in identities:
            c, r = entry["track"][identity]
            cls.append(c)
            ref.append(r)
            boxes.append([0.5, 0.5, 0.2, 0.2])
        out = ScriptedOutput(
            torch.tensor(cls, dtype=torch.float64),
            torch.tensor(boxes, dtype=torch.float64),
            torch.tensor(ref, dtype=torch.float64),
        )
        n = self.n_detect + len(identities)
        return FramePass(torch.randn(n, DIM), self.n_detect, out, out, None)


def run_session(script, thresholds=None):
    thr = thresholds or ThresholdConfig()
    model = ScriptedModel(script)
    session = TrackingSession(model, torch.tensor([1]), thr, expression_key="k")
    records = []
    for t in range(len(script)):
        records.append(session.step(torch.zeros(3, 64, 64)))
    return session, records


BG = (0.01, 0.01)


class TestPromotion:
    def test_class_threshold_strict_at_promotion(self):
        script = [{"detect": [(0.60, 0.9), (0.601, 0.9), BG], "track": {}}]
        session, records = run_session(script)
        assert [s.identity for s in session.slots] == [1]
        assert len(records[0]) == 1
        assert records[0][0].class_score == pytest.approx(0.601, abs=1e-6)

    def test_identities_assigned_in_query_order(self):
        script = [{"detect": [(0.9, 0.9), (0.8, 0.9), (0.7, 0.9)], "track": {}}]
        session, records = run_session(script)
        assert [r.track_id for r in records[0]] == [1, 2, 3]
        assert [s.identity for s in session.slots] == [1, 2, 3]

    def test_promoted_slot_becomes_track_query(self):
        script = [
            {"detect": [(0.9, 0.9), BG, BG], "track": {}},
            {"detect": [BG, BG, BG], "track": {1: (0.9, 0.8)}},
        ]
        session, records = run_session(script)
        assert [r.track_id for r in records[1]] == [1]
        assert records[1][0].class_score == pytest.approx(0.9, abs=1e-6)

    def test_referring_score_carried_not_gated(self):
        # the session emits low-ref boxes; filtering happens at evaluation
        script = [{"detect": [(0.9, 0.05), BG, BG], "track": {}}]
        _, records = run_session(script)
        assert len(records[0]) == 1
        assert records[0][0].referring_score == pytest.approx(0.05, abs=1e-6)


class TestLifecycle:
    def test_low_score_track_suppressed_but_kept(self):
        script = [
            {"detect": [(0.9, 0.9), BG, BG], "track": {}},
            {"detect": [BG, BG, BG], "track": {1: (0.3, 0.9)}},
            {"detect": [BG, BG, BG], "track": {1: (0.9, 0.9)}},
        ]
        session, records = run_session(script)
        assert records[1] == []  # below class threshold: no emission
        assert [r.track_id for r in records[2]] == [1]  # survived the miss

    def test_drop_after_miss_tolerance(self):
        thr = ThresholdConfig(miss_tolerance=2)
        script = [
            {"detect": [(0.9, 0.9), BG, BG], "track": {}},
            {"detect": [BG, BG, BG], "track": {1: (0.3, 0.9)}},
            {"detect": [BG, BG, BG], "track": {1: (0.3, 0.9)}},
            {"detect": [BG, BG, BG], "track": {}},
        ]
        session, _ = run_session(script, thr)
        assert session.slots == []

    def test_confirmation_resets_miss_count(self):
        thr = ThresholdConfig(miss_tolerance=2)
        script = [
            {"detect": [(0.9, 0.9), BG, BG], "track": {}},
            {"detect": [BG, BG, BG], "track": {1: (0.3, 0.9)}},   # miss 1
            {"detect": [BG, BG, BG], "track": {1: (0.8, 0.9)}},   # reset
            {"detect": [BG, BG, BG], "track": {1: (0.3, 0.9)}},   # miss 1 again
        ]
        session, _ = run_session(script, thr)
        assert [s.identity for s in session.slots] == [1]
        assert session.slots[0].miss_count == 1

    def test_keep_threshold_strict(self):
        # a score exactly at keep_score does not count as a miss
        thr = ThresholdConfig(keep_score=0.5, miss_tolerance=1)
        script = [
            {"detect": [(0.9, 0.9), BG, BG], "track": {}},
            {"detect": [BG, BG, BG], "track": {1: (0.5, 0.9)}},
            {"detect": [BG, BG, BG], "track": {1: (0.4999, 0.9)}},
        ]
        session, _ = run_session(script, thr)
        assert session.slots == []  # dropped only on the strict miss

    def test_dropped_identity_never_reused(self):
        thr = ThresholdConfig(miss_tolerance=1)
        script = [
            {"detect": [(0.9, 0.9), BG, BG], "track": {}},
            {"detect": [BG, BG, BG], "track": {1: (0.1, 0.9)}},
            {"detect": [(0.9, 0.9), BG, BG], "track": {}},
        ]
        session, records = run_session(script, thr)
        assert [r.track_id for r in records[2]] == [2]

    def test_parallel_tracks_keep_slot_order(self):
        script = [
            {"detect": [(0.9, 0.9), (0.8, 0.9), BG], "track": {}},
            {"detect": [BG, BG, BG], "track": {1: (0.9, 0.9), 2: (0.7, 0.9)}},
        ]
        session, records = run_session(script)
        assert [r.track_id for r in records[1]] == [1, 2]


class TestPropagateHelper:
    def make_slots(self, n):
        return [TrackSlot(i + 1, torch.zeros(DIM), torch.zeros(4)) for i in range(n)]

    def test_scores_length_enforced(self):
        with pytest.raises(ValueError):
            propagate_track_queries(self.make_slots(2), [0.9], 0.5, 3)

    def test_miss_accumulation_and_drop(self):
        slots = self.make_slots(1)
        for _ in range(2):
            slots = propagate_track_queries(slots, [0.1], 0.5, 3)
        assert slots[0].miss_count == 2
        slots = propagate_track_queries(slots, [0.1], 0.5, 3)
        assert slots == []

    def test_confirm_resets(self):
        slots = self.make_slots(1)
        slots = propagate_track_queries(slots, [0.2], 0.5, 3)
        slots = propagate_track_queries(slots, [0.9], 0.5, 3)
        assert slots[0].miss_count == 0

    def test_independent_counters(self):
        slots = self.make_slots(2)
        slots = propagate_track_queries(slots, [0.9, 0.1], 0.5, 2)
        slots = propagate_track_queries(slots, [0.9, 0.1], 0.5, 2)
        assert [s.identity for s in slots] == [1]


class TestDeterminism:
    def test_identical_runs_identical_records(self, tiny_model, tiny_cfg):
        frames = torch.rand(3, 3, 64, 64)
        from reftrack.model.network import run_video

        a = run_video(tiny_model, frames, torch.tensor([1, 2]), tiny_cfg.thresholds)
        b = run_video(tiny_model, frames, torch.tensor([1, 2]), tiny_cfg.thresholds)
        assert a == b
