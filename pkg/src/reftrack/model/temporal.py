"""Temporal enhancement: a FIFO per-frame query memory, a temporal decoder
whose cross-frame attention only links a query to memory slots carrying the
same identity inside the history window, an object decoder mixing queries
with box positional codes, and a zero-initialized residual refinement head.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from reftrack.model.layers import (
    FeedForwardLayer,
    MLP,
    MultiHeadAttention,
    SelfAttentionLayer,
    box_positions,
    offset_positions,
)
from reftrack.model.tracker import HeadOutput

LOGIT_CLAMP = 15.0
MIN_BOX_SIZE = 1e-4


@dataclass
class MemoryFrame:
    embeddings: Tensor   # (K, d)
    identities: Tensor   # (K,) long, -1 marks an empty slot
    frame: int


class QueryMemory:
    """FIFO memory of the last ``capacity`` frames, ``slots`` entries each.

    Pushing more than ``slots`` queries keeps the highest-scoring ones;
    pushing fewer pads with empty slots (identity -1).
    """

    def __init__(self, capacity: int, slots: int, dim: int, dtype=torch.float32):
        if capacity < 1 or slots < 1:
            raise ValueError(f"bad memory shape: capacity={capacity} slots={slots}")
        self.capacity = capacity
        self.slots = slots
        self.dim = dim
        self.dtype = dtype
        self.frames: deque[MemoryFrame] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.frames)

    def push(self, embeddings: Tensor, identities: list[int], scores: Tensor, frame: int) -> None:
        n = embeddings.shape[0]
        if n != len(identities) or n != scores.shape[0]:
            raise ValueError("embeddings, identities, and scores disagree in length")
        if n > self.slots:
            order = torch.argsort(scores.detach(), descending=True, stable=True)[: self.slots]
            order = order.sort().values  # keep original slot order among survivors
            embeddings = embeddings[order]
            scores = scores[order]
            identities = [identities[i] for i in order.tolist()]
            n = self.slots
        emb = torch.zeros(self.slots, self.dim, dtype=self.dtype)
        ids = torch.full((self.slots,), -1, dtype=torch.long)
        if n:
            emb = torch.cat([embeddings, torch.zeros(self.slots - n, self.dim, dtype=embeddings.dtype)])
            ids[:n] = torch.tensor(identities, dtype=torch.long)
        self.frames.append(MemoryFrame(emb, ids, frame))

    def resize(self, capacity: int) -> None:
        """Change the frame capacity, keeping the most recent entries."""
        if capacity < 1:
            raise ValueError(f"bad capacity: {capacity}")
        kept = list(self.frames)[-capacity:]
        self.capacity = capacity
        self.frames = deque(kept, maxlen=capacity)

    def snapshot(self):
        """(F*K, d) embeddings, (F*K,) identities, (F*K,) frame stamps."""
        if not self.frames:
            return None
        emb = torch.cat([f.embeddings for f in self.frames], dim=0)
        ids = torch.cat([f.identities for f in self.frames], dim=0)
        stamps = torch.cat(
            [torch.full((self.slots,), f.frame, dtype=torch.long) for f in self.frames]
        )
        return emb, ids, stamps


def history_mask(
    query_ids: list[int | None],
    memory_ids: Tensor,
    memory_stamps: Tensor,
    frame: int,
    window: int,
) -> Tensor:
    """(Nq, F*K) boolean mask: same identity, valid slot, offset <= window."""
    nq = len(query_ids)
    qid = torch.tensor(
        [i if i is not None else -2 for i in query_ids], dtype=torch.long
    )
    same = qid[:, None] == memory_ids[None, :]
    valid = (memory_ids != -1)[None, :]
    offsets = frame - memory_stamps
    inside = ((offsets >= 1) & (offsets <= window))[None, :]
    return same & valid & inside


class TemporalLayer(nn.Module):
    """Self-attention, identity-masked cross-frame attention, FFN."""

    def __init__(self, dim: int, num_heads: int, ffn_dim: int):
        super().__init__()
        self.self_attn = SelfAttentionLayer(dim, num_heads)
        self.norm = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, num_heads)
        self.ffn = FeedForwardLayer(dim, ffn_dim)

    def forward(
        self,
        x: Tensor,
        memory: Tensor | None,
        mask: Tensor | None,
        q_pos: Tensor | None,
        k_pos: Tensor | None,
    ) -> Tensor:
        x = self.self_attn(x)
        if memory is not None and memory.shape[-2] > 0:
            x = x + self.cross_attn(self.norm(x), memory, memory, mask=mask, q_pos=q_pos, k_pos=k_pos)
        return self.ffn(x)


class TemporalDecoder(nn.Module):
    def __init__(self, dim: int, num_heads: int, ffn_dim: int, num_layers: int):
        super().__init__()
        self.dim = dim
        self.layers = nn.ModuleList(
            TemporalLayer(dim, num_heads, ffn_dim) for _ in range(num_layers)
        )

    def forward(
        self,
        queries: Tensor,           # (B, Nq, d)
        identities: list[int | None],
        memory: QueryMemory | None,
        frame: int,
        window: int,
    ) -> Tensor:
        snap = memory.snapshot() if memory is not None else None
        mem = mask = q_pos = k_pos = None
        if snap is not None:
            mem_emb, mem_ids, mem_stamps = snap
            mask = history_mask(identities, mem_ids, mem_stamps, frame, window)
            mem = mem_emb.unsqueeze(0).to(queries.dtype)
            offsets = (frame - mem_stamps).clamp(min=0)
            k_pos = offset_positions(offsets, window, self.dim, dtype=queries.dtype)
            q_pos = offset_positions(
                torch.zeros(queries.shape[1], dtype=torch.long), window, self.dim, dtype=queries.dtype
            )
        x = queries
        for layer in self.layers:
            x = layer(x, mem, mask, q_pos, k_pos)
        return x


class ObjectLayer(nn.Module):
    """Self-attention, box-position attention over the same set, FFN."""

    def __init__(self, dim: int, num_heads: int, ffn_dim: int):
        super().__init__()
        self.self_attn = SelfAttentionLayer(dim, num_heads)
        self.box_attn = SelfAttentionLayer(dim, num_heads)
        self.ffn = FeedForwardLayer(dim, ffn_dim)

    def forward(self, x: Tensor, box_pos: Tensor) -> Tensor:
        x = self.self_attn(x)
        x = self.box_attn(x, pos=box_pos)
        return self.ffn(x)


class ObjectDecoder(nn.Module):
    def __init__(self, dim: int, num_heads: int, ffn_dim: int, num_layers: int):
        super().__init__()
        self.dim = dim
        self.layers = nn.ModuleList(
            ObjectLayer(dim, num_heads, ffn_dim) for _ in range(num_layers)
        )

    def forward(self, queries: Tensor, boxes: Tensor) -> Tensor:
        box_pos = box_positions(boxes, self.dim).to(queries.dtype)
        x = queries
        for layer in self.layers:
            x = layer(x, box_pos)
        return x


class RefinementHead(nn.Module):
    """Residual (dcx, dcy, dw, dh, s) from the temporal summary.

    The final projection starts at zero, so refinement is exactly the
    identity until trained. ``confidence_target`` picks which logit the
    confidence residual s shifts.
    """

    def __init__(self, dim: int, confidence_target: str = "class"):
        super().__init__()
        if confidence_target not in ("class", "referring"):
            raise ValueError(f"bad confidence target: {confidence_target!r}")
        self.confidence_target = confidence_target
        self.mlp = MLP(dim, dim, 5, num_layers=3)
        last = self.mlp.layers[-1]
        nn.init.zeros_(last.weight)
        nn.init.zeros_(last.bias)

    def forward(self, summary: Tensor, raw: HeadOutput) -> HeadOutput:
        residual = self.mlp(summary)
        boxes = raw.boxes + residual[..., :4]
        centers = boxes[..., :2].clamp(0.0, 1.0)
        sizes = boxes[..., 2:].clamp(MIN_BOX_SIZE, 1.0)
        boxes = torch.cat([centers, sizes], dim=-1)
        s = residual[..., 4]
        class_logits, ref_logits = raw.class_logits, raw.ref_logits
        if self.confidence_target == "class":
            class_logits = (class_logits + s).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
        else:
            ref_logits = (ref_logits + s).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
        return HeadOutput(class_logits, boxes, ref_logits)


class TemporalModule(nn.Module):
    """Temporal decoder -> object decoder -> residual refinement."""

    def __init__(
        self,
        dim: int,
        num_heads: int,
        ffn_dim: int,
        temporal_layers: int,
        object_layers: int,
        confidence_target: str = "class",
        refine: bool = True,
    ):
        super().__init__()
        self.temporal_decoder = TemporalDecoder(dim, num_heads, ffn_dim, temporal_layers)
        self.object_decoder = ObjectDecoder(dim, num_heads, ffn_dim, object_layers)
        self.refinement = RefinementHead(dim, confidence_target) if refine else None

    def forward(
        self,
        embeddings: Tensor,            # (B, Nq, d) decoder outputs
        identities: list[int | None],
        raw: HeadOutput,
        memory: QueryMemory | None,
        frame: int,
        window: int,
    ) -> tuple[Tensor, HeadOutput]:
        x = self.temporal_decoder(embeddings, identities, memory, frame, window)
        x = self.object_decoder(x, raw.boxes)
        refined = self.refinement(x.squeeze(0), raw) if self.refinement else raw
        return x, refined
