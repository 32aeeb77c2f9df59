"""Query-based detection/tracking head.

A frame is decoded by a transformer decoder over the fused image-text tokens,
driven by a fixed bank of detect queries concatenated with the track queries
carried over from the previous frame. Detect queries always come first; track
queries keep their slot order and identities.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from reftrack.model.layers import (
    DecoderLayer,
    FeedForwardLayer,
    MLP,
    SelfAttentionLayer,
    anchor_grid,
    center_positions,
)


@dataclass
class HeadOutput:
    """Per-query predictions. Probabilities are sigmoids of the logits."""

    class_logits: Tensor  # (N,)
    boxes: Tensor         # (N, 4) normalized center-size in (0, 1)
    ref_logits: Tensor    # (N,)

    @property
    def class_probs(self) -> Tensor:
        return torch.sigmoid(self.class_logits)

    @property
    def ref_probs(self) -> Tensor:
        return torch.sigmoid(self.ref_logits)

    def detach(self) -> "HeadOutput":
        return HeadOutput(self.class_logits.detach(), self.boxes.detach(), self.ref_logits.detach())


class DetectQueryBank(nn.Module):
    """Learned content and positional embeddings for the detect queries."""

    def __init__(self, count: int, dim: int):
        super().__init__()
        self.content = nn.Parameter(torch.zeros(count, dim))
        # unit-scale content init: queries must start distinguishable from
        # each other or specialization through bipartite matching stalls
        nn.init.normal_(self.content, std=1.0)
        # positions start as sine codes of a uniform anchor grid, giving each
        # query a home region in the image from the first step; they remain
        # free parameters afterwards
        self.position = nn.Parameter(center_positions(anchor_grid(count), dim))

    @property
    def count(self) -> int:
        return self.content.shape[0]


class ReferentHead(nn.Module):
    """Class (linear), box (3-layer MLP, sigmoid), referring (linear) heads.

    Class and referring logits start at a low-probability prior so focal
    training does not have to fight a half-on initialization.
    """

    def __init__(self, dim: int, prior_prob: float = 0.01):
        super().__init__()
        self.class_proj = nn.Linear(dim, 1)
        self.ref_proj = nn.Linear(dim, 1)
        self.box_mlp = MLP(dim, dim, 4, num_layers=3)
        bias = -torch.log(torch.tensor((1.0 - prior_prob) / prior_prob))
        nn.init.constant_(self.class_proj.bias, bias.item())
        nn.init.constant_(self.ref_proj.bias, bias.item())

    def forward(self, embeddings: Tensor) -> HeadOutput:
        return HeadOutput(
            class_logits=self.class_proj(embeddings).squeeze(-1),
            boxes=torch.sigmoid(self.box_mlp(embeddings)),
            ref_logits=self.ref_proj(embeddings).squeeze(-1),
        )


class Decoder(nn.Module):
    """Stack of decoder layers running queries against the fused tokens."""

    def __init__(self, dim: int, num_heads: int, ffn_dim: int, num_layers: int):
        super().__init__()
        self.layers = nn.ModuleList(
            DecoderLayer(dim, num_heads, ffn_dim) for _ in range(num_layers)
        )

    def forward(
        self,
        queries: Tensor,
        query_pos: Tensor,
        tokens: Tensor,
        token_pos: Tensor,
    ) -> Tensor:
        x = queries
        for layer in self.layers:
            x = layer(x, tokens, query_pos=query_pos, memory_pos=token_pos)
        return x


class TrackQueryTransform(nn.Module):
    """Self-attention + FFN applied to surviving track queries between frames."""

    def __init__(self, dim: int, num_heads: int, ffn_dim: int):
        super().__init__()
        self.self_attn = SelfAttentionLayer(dim, num_heads)
        self.ffn = FeedForwardLayer(dim, ffn_dim)

    def forward(self, embeddings: Tensor) -> Tensor:
        if embeddings.shape[-2] == 0:
            return embeddings
        return self.ffn(self.self_attn(embeddings))


def track_query_positions(boxes: Tensor, dim: int) -> Tensor:
    """Positional codes for track queries from their last predicted boxes.

    Uses the grid-aligned center code so a track query attends near where
    its object last was."""
    return center_positions(boxes[..., :2], dim)
