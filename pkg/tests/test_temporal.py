"""Temporal memory, identity-masked history attention, residual refinement."""

from __future__ import annotations

import pytest
import torch

from reftrack.model.temporal import (
    LOGIT_CLAMP,
    QueryMemory,
    RefinementHead,
    TemporalDecoder,
    TemporalModule,
    history_mask,
)
from reftrack.model.tracker import HeadOutput, ReferentHead

torch.manual_seed(0)

DIM = 8


def push_frame(mem: QueryMemory, ids: list[int], frame: int, fill: float = 0.0):
    n = len(ids)
    emb = torch.full((n, mem.dim), fill)
    mem.push(emb, ids, torch.linspace(0.9, 0.1, n), frame)


class TestQueryMemory:
    @pytest.mark.parametrize("capacity", range(1, 7))
    @pytest.mark.parametrize("pushes", range(1, 13))
    def test_fifo_keeps_last_min_of_pushes_and_capacity(self, capacity, pushes):
        mem = QueryMemory(capacity, slots=2, dim=DIM)
        for t in range(pushes):
            push_frame(mem, [t], frame=t)
        assert len(mem) == min(pushes, capacity)
        stamps = [f.frame for f in mem.frames]
        assert stamps == list(range(pushes))[-capacity:]

    def test_overflow_keeps_highest_scores_in_slot_order(self):
        mem = QueryMemory(2, slots=2, dim=DIM)
        emb = torch.arange(12, dtype=torch.float32).reshape(4, 3)
        mem2 = QueryMemory(2, slots=2, dim=3)
        mem2.push(emb, [10, 11, 12, 13], torch.tensor([0.1, 0.9, 0.2, 0.8]), 0)
        frame = mem2.frames[0]
        assert frame.identities.tolist() == [11, 13]  # best scores, original order
        assert torch.equal(frame.embeddings, emb[[1, 3]])

    def test_underfill_pads_with_empty_identity(self):
        mem = QueryMemory(1, slots=4, dim=DIM)
        push_frame(mem, [5], frame=0, fill=1.0)
        frame = mem.frames[0]
        assert frame.identities.tolist() == [5, -1, -1, -1]
        assert torch.equal(frame.embeddings[1:], torch.zeros(3, DIM))

    def test_length_mismatch_rejected(self):
        mem = QueryMemory(1, slots=2, dim=DIM)
        with pytest.raises(ValueError):
            mem.push(torch.zeros(2, DIM), [1], torch.zeros(2), 0)

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError):
            QueryMemory(0, slots=2, dim=DIM)
        with pytest.raises(ValueError):
            QueryMemory(2, slots=0, dim=DIM)

    def test_resize_keeps_most_recent(self):
        mem = QueryMemory(4, slots=1, dim=DIM)
        for t in range(4):
            push_frame(mem, [t], frame=t)
        mem.resize(2)
        assert [f.frame for f in mem.frames] == [2, 3]
        push_frame(mem, [9], frame=4)
        assert [f.frame for f in mem.frames] == [3, 4]
        with pytest.raises(ValueError):
            mem.resize(0)

    def test_snapshot_empty_is_none(self):
        assert QueryMemory(2, slots=2, dim=DIM).snapshot() is None

    def test_snapshot_shapes(self):
        mem = QueryMemory(3, slots=2, dim=DIM)
        push_frame(mem, [1, 2], frame=0)
        push_frame(mem, [3], frame=1)
        emb, ids, stamps = mem.snapshot()
        assert emb.shape == (4, DIM)
        assert ids.tolist() == [1, 2, 3, -1]
        assert stamps.tolist() == [0, 0, 1, 1]


class TestHistoryMask:
    def setup_method(self):
        self.ids = torch.tensor([7, 8, -1])
        self.stamps = torch.tensor([3, 2, 3])

    def test_identity_and_validity(self):
        mask = history_mask([7, None], self.ids, self.stamps, frame=4, window=3)
        assert mask.tolist() == [[True, False, False], [False, False, False]]

    def test_window_boundaries(self):
        ids = torch.tensor([5, 5, 5, 5])
        stamps = torch.tensor([4, 3, 2, 1])
        mask = history_mask([5], ids, stamps, frame=4, window=2)
        # offsets 0,1,2,3 with window 2: same-frame excluded, 1..2 included
        assert mask.tolist() == [[False, True, True, False]]

    def test_negative_identity_queries_never_match(self):
        # distractor slots carry negative identities; -1 marks empty memory
        mask = history_mask([-1], self.ids, self.stamps, frame=4, window=3)
        assert not mask.any()


def tiny_temporal(refine=True, confidence_target="class"):
    torch.manual_seed(1)
    return TemporalModule(
        DIM, num_heads=2, ffn_dim=8, temporal_layers=1, object_layers=1,
        confidence_target=confidence_target, refine=refine,
    )


def rand_raw(n):
    return HeadOutput(
        class_logits=torch.randn(n),
        boxes=torch.rand(n, 4) * 0.6 + 0.2,
        ref_logits=torch.randn(n),
    )


class TestTemporalModule:
    def test_masked_slots_cannot_influence_output(self):
        module = tiny_temporal()
        module.eval()
        mem_a = QueryMemory(2, slots=3, dim=DIM)
        mem_b = QueryMemory(2, slots=3, dim=DIM)
        base = torch.randn(2, DIM)
        scores = torch.tensor([0.9, 0.8])
        mem_a.push(base, [1, 2], scores, 0)
        # same memory, but the slot belonging to identity 2 (never queried)
        # and the padding slot are perturbed arbitrarily
        noisy = base.clone()
        noisy[1] += 123.456
        mem_b.push(noisy, [1, 2], scores, 0)
        mem_b.frames[0].embeddings[2] += 77.0  # padding slot

        queries = torch.randn(1, 3, DIM)
        raw = rand_raw(3)
        identities = [None, 1, -5]
        with torch.no_grad():
            sum_a, ref_a = module(queries, identities, raw, mem_a, 1, 2)
            sum_b, ref_b = module(queries, identities, raw, mem_b, 1, 2)
        assert torch.equal(sum_a, sum_b)
        assert torch.equal(ref_a.class_logits, ref_b.class_logits)
        assert torch.equal(ref_a.boxes, ref_b.boxes)
        assert torch.equal(ref_a.ref_logits, ref_b.ref_logits)

    def test_out_of_window_frames_cannot_influence_output(self):
        module = tiny_temporal()
        module.eval()
        mem_a = QueryMemory(4, slots=1, dim=DIM)
        mem_b = QueryMemory(4, slots=1, dim=DIM)
        old = torch.randn(1, DIM)
        recent = torch.randn(1, DIM)
        for mem, first in ((mem_a, old), (mem_b, old + 50.0)):
            mem.push(first, [1], torch.tensor([0.5]), 0)
            mem.push(recent, [1], torch.tensor([0.5]), 3)
        queries = torch.randn(1, 1, DIM)
        raw = rand_raw(1)
        with torch.no_grad():
            sum_a, _ = module(queries, [1], raw, mem_a, 4, 2)  # window 2: frame 0 excluded
            sum_b, _ = module(queries, [1], raw, mem_b, 4, 2)
        assert torch.equal(sum_a, sum_b)

    def test_empty_memory_matches_no_memory(self):
        module = tiny_temporal()
        module.eval()
        queries = torch.randn(1, 2, DIM)
        raw = rand_raw(2)
        with torch.no_grad():
            sum_none, ref_none = module(queries, [1, 2], raw, None, 0, 2)
            sum_empty, ref_empty = module(queries, [1, 2], raw, QueryMemory(2, 2, DIM), 0, 2)
        assert torch.equal(sum_none, sum_empty)
        assert torch.equal(ref_none.boxes, ref_empty.boxes)


class TestRefinementHead:
    def test_zero_init_is_bit_exact_identity(self):
        head = RefinementHead(DIM)
        raw = rand_raw(4)
        refined = head(torch.randn(4, DIM), raw)
        assert torch.equal(refined.class_logits, raw.class_logits)
        assert torch.equal(refined.boxes, raw.boxes)
        assert torch.equal(refined.ref_logits, raw.ref_logits)

    def test_zero_init_module_refinement_is_identity(self):
        module = tiny_temporal()
        module.eval()
        raw = rand_raw(3)
        with torch.no_grad():
            _, refined = module(torch.randn(1, 3, DIM), [None, 1, 2], raw, None, 0, 2)
        assert torch.equal(refined.boxes, raw.boxes)
        assert torch.equal(refined.class_logits, raw.class_logits)

    def test_refine_off_passes_raw_through(self):
        module = tiny_temporal(refine=False)
        raw = rand_raw(2)
        with torch.no_grad():
            _, refined = module(torch.randn(1, 2, DIM), [1, 2], raw, None, 0, 2)
        assert refined is raw

    def trained_head(self, target):
        head = RefinementHead(DIM, confidence_target=target)
        with torch.no_grad():
            last = head.mlp.layers[-1]
            last.bias.copy_(torch.tensor([0.05, -0.05, 0.0, 0.0, 100.0]))
        return head

    def test_confidence_target_class(self):
        head = self.trained_head("class")
        raw = rand_raw(2)
        out = head(torch.zeros(2, DIM), raw)
        assert torch.equal(out.class_logits, torch.full((2,), LOGIT_CLAMP))
        assert torch.equal(out.ref_logits, raw.ref_logits)

    def test_confidence_target_referring(self):
        head = self.trained_head("referring")
        raw = rand_raw(2)
        out = head(torch.zeros(2, DIM), raw)
        assert torch.equal(out.ref_logits, torch.full((2,), LOGIT_CLAMP))
        assert torch.equal(out.class_logits, raw.class_logits)

    def test_bad_target_rejected(self):
        with pytest.raises(ValueError):
            RefinementHead(DIM, confidence_target="iou")

    def test_box_residual_clamped_to_unit_box(self):
        head = RefinementHead(DIM)
        with torch.no_grad():
            head.mlp.layers[-1].bias.copy_(torch.tensor([10.0, -10.0, 10.0, -10.0, 0.0]))
        raw = rand_raw(1)
        out = head(torch.zeros(1, DIM), raw)
        assert out.boxes[0, 0] == 1.0 and out.boxes[0, 1] == 0.0
        assert out.boxes[0, 2] == 1.0 and out.boxes[0, 3] > 0.0


class TestTemporalDecoderShapes:
    def test_queries_pass_through_shape(self):
        dec = TemporalDecoder(DIM, num_heads=2, ffn_dim=8, num_layers=2)
        mem = QueryMemory(2, slots=2, dim=DIM)
        push_frame(mem, [1, 2], frame=0, fill=0.3)
        out = dec(torch.randn(1, 3, DIM), [1, 2, None], mem, 1, 2)
        assert out.shape == (1, 3, DIM)
