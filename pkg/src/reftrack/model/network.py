"""Full model assembly and the stateful per-video inference session.

The session owns identity bookkeeping: detect queries that clear the class
threshold are promoted to track queries with fresh identities; track queries
below the keep threshold accumulate misses and drop once the tolerance is
reached; surviving embeddings pass through the propagation transform before
the next frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import Tensor, nn

from reftrack.domain import BoundingBox, PredictionRecord
from reftrack.harness.config import ModelConfig, TemporalConfig, ThresholdConfig
from reftrack.model.frontend import CrossModalFrontend, FrontendOutput
from reftrack.model.temporal import QueryMemory, TemporalModule
from reftrack.model.tracker import (
    Decoder,
    DetectQueryBank,
    HeadOutput,
    ReferentHead,
    TrackQueryTransform,
    track_query_positions,
)


@dataclass
class FramePass:
    """Everything one frame produces, batch dimension squeezed away."""

    embeddings: Tensor       # (Nq, d) decoder outputs
    n_detect: int
    raw: HeadOutput
    refined: HeadOutput      # == raw when the temporal module is off
    summary: Tensor | None   # (Nq, d) temporal summary, None when off


class TrackingModel(nn.Module):
    def __init__(self, model_cfg: ModelConfig, temporal_cfg: TemporalConfig, vocab_size: int):
        super().__init__()
        self.cfg = model_cfg
        self.temporal_cfg = temporal_cfg
        self.frontend = CrossModalFrontend(
            dim=model_cfg.dim,
            vocab_size=vocab_size,
            text_dim=model_cfg.text_dim,
            num_heads=model_cfg.heads,
            ffn_dim=model_cfg.ffn_dim,
            encoder_layers=model_cfg.encoder_layers,
            backbone_channels=model_cfg.backbone_channels,
            freeze_text=model_cfg.freeze_text,
            fusion_row_softmax=model_cfg.fusion_row_softmax,
        )
        self.detect_bank = DetectQueryBank(model_cfg.detect_queries, model_cfg.dim)
        self.track_transform = TrackQueryTransform(model_cfg.dim, model_cfg.heads, model_cfg.ffn_dim)
        self.decoder = Decoder(
            model_cfg.dim, model_cfg.heads, model_cfg.ffn_dim, model_cfg.decoder_layers
        )
        self.head = ReferentHead(model_cfg.dim)
        self.temporal = (
            TemporalModule(
                model_cfg.dim,
                model_cfg.heads,
                model_cfg.ffn_dim,
                temporal_cfg.temporal_layers,
                temporal_cfg.object_layers,
                confidence_target=temporal_cfg.confidence_target,
                refine=temporal_cfg.refine,
            )
            if temporal_cfg.enabled
            else None
        )

    def new_memory(self, capacity: int | None = None, dtype=torch.float32) -> QueryMemory | None:
        if self.temporal is None:
            return None
        cap = capacity if capacity is not None else self.temporal_cfg.memory_frames
        return QueryMemory(cap, self.temporal_cfg.memory_slots, self.cfg.dim, dtype=dtype)

    def encode_frame(self, image: Tensor, token_ids: Tensor) -> FrontendOutput:
        if image.dim() == 3:
            image = image.unsqueeze(0)
        return self.frontend(image, token_ids)

    def frame_pass(
        self,
        front: FrontendOutput,
        track_embeddings: Tensor | None,  # (Nt, d)
        track_boxes: Tensor | None,       # (Nt, 4)
        track_identities: list[int],
        memory: QueryMemory | None,
        frame: int,
        window: int,
    ) -> FramePass:
        n_detect = self.detect_bank.count
        content = self.detect_bank.content
        pos = self.detect_bank.position
        if track_embeddings is not None and track_embeddings.shape[0] > 0:
            content = torch.cat([content, track_embeddings], dim=0)
            pos = torch.cat(
                [pos, track_query_positions(track_boxes, self.cfg.dim).to(pos.dtype)], dim=0
            )
        queries = content.unsqueeze(0)
        embeddings = self.decoder(queries, pos.unsqueeze(0), front.tokens, front.positions).squeeze(0)
        raw = self.head(embeddings)
        refined, summary = raw, None
        if self.temporal is not None:
            identities: list[int | None] = [None] * n_detect + list(track_identities)
            summary_b, refined = self.temporal(
                embeddings.unsqueeze(0), identities, raw, memory, frame, window
            )
            summary = summary_b.squeeze(0)
        return FramePass(embeddings, n_detect, raw, refined, summary)


# ---------------------------------------------------------------------------
# inference


@dataclass
class TrackSlot:
    identity: int
    embedding: Tensor        # (d,) decoder output from the previous frame
    box: Tensor              # (4,) last predicted box
    miss_count: int = 0


def propagate_track_queries(
    slots: list[TrackSlot],
    scores: list[float],
    keep_score: float,
    miss_tolerance: int,
) -> list[TrackSlot]:
    """Apply the keep/miss rule. A slot whose score sits below ``keep_score``
    (strictly) accumulates a miss; hitting the tolerance drops it before the
    next frame. Confirmed slots reset their miss count."""
    if len(slots) != len(scores):
        raise ValueError("one score per slot required")
    survivors = []
    for slot, score in zip(slots, scores):
        if score < keep_score:
            slot.miss_count += 1
        else:
            slot.miss_count = 0
        if slot.miss_count < miss_tolerance:
            survivors.append(slot)
    return survivors


class TrackingSession:
    """Runs one (video, expression) pair frame by frame."""

    def __init__(
        self,
        model: TrackingModel,
        token_ids: Tensor,
        thresholds: ThresholdConfig,
        expression_key: str = "expr",
        memory_frames: int | None = None,
    ):
        self.model = model
        self.token_ids = token_ids
        self.thresholds = thresholds
        self.expression_key = expression_key
        self.memory = model.new_memory(memory_frames)
        self.window = model.temporal_cfg.window(memory_frames)
        self.slots: list[TrackSlot] = []
        self.next_identity = 1
        self.frame_index = 0

    @torch.no_grad()
    def step(self, image: Tensor) -> list[PredictionRecord]:
        model, thr = self.model, self.thresholds
        frame = self.frame_index

        if self.slots:
            stacked = torch.stack([s.embedding for s in self.slots])
            track_embeddings = model.track_transform(stacked.unsqueeze(0)).squeeze(0)
            track_boxes = torch.stack([s.box for s in self.slots])
        else:
            track_embeddings = track_boxes = None
        identities = [s.identity for s in self.slots]

        front = model.encode_frame(image, self.token_ids)
        fp = model.frame_pass(
            front, track_embeddings, track_boxes, identities, self.memory, frame, self.window
        )
        scores = fp.refined.class_probs
        refs = fp.refined.ref_probs
        boxes = fp.refined.boxes

        records: list[PredictionRecord] = []
        emitted: list[tuple[int, int]] = []  # (query row, identity)

        # track slots update in place
        n_detect = fp.n_detect
        for k, slot in enumerate(self.slots):
            row = n_detect + k
            slot.embedding = fp.embeddings[row]
            slot.box = boxes[row]
            if float(scores[row]) > thr.class_score:
                emitted.append((row, slot.identity))

        # detect promotions, scanned in query order
        promoted: list[TrackSlot] = []
        for row in range(n_detect):
            if float(scores[row]) > thr.class_score:
                slot = TrackSlot(self.next_identity, fp.embeddings[row], boxes[row])
                self.next_identity += 1
                promoted.append(slot)
                emitted.append((row, slot.identity))

        for row, identity in emitted:
            b = boxes[row]
            records.append(
                PredictionRecord(
                    expression_key=self.expression_key,
                    frame=frame,
                    track_id=identity,
                    box=BoundingBox(*(float(v) for v in b)),
                    class_score=float(scores[row]),
                    referring_score=float(refs[row]),
                )
            )

        if self.memory is not None:
            rows = list(range(n_detect, n_detect + len(self.slots))) + [
                row for row in range(n_detect) if float(scores[row]) > thr.class_score
            ]
            if rows:
                source = fp.summary if fp.summary is not None else fp.embeddings
                ids = [s.identity for s in self.slots] + [s.identity for s in promoted]
                self.memory.push(
                    source[rows], ids, scores[rows], frame
                )

        track_scores = [float(scores[n_detect + k]) for k in range(len(self.slots))]
        self.slots = propagate_track_queries(
            self.slots, track_scores, thr.keep_score, thr.miss_tolerance
        )
        self.slots.extend(promoted)
        self.frame_index += 1
        return records


def run_video(
    model: TrackingModel,
    frames: Tensor,  # (T, 3, H, W)
    token_ids: Tensor,
    thresholds: ThresholdConfig,
    expression_key: str = "expr",
    memory_frames: int | None = None,
) -> list[PredictionRecord]:
    model.eval()
    session = TrackingSession(model, token_ids, thresholds, expression_key, memory_frames)
    records: list[PredictionRecord] = []
    for t in range(frames.shape[0]):
        records.extend(session.step(frames[t]))
    return records
