"""Visual/text encoding and early cross-modal fusion.

The image side is a small strided conv pyramid (strides 8/16/32/64) with 1x1
lateral projections to the shared width. The text side is an embedding table
plus a linear projection. Fusion follows the scaled dot-product form
``(Q K^T / sqrt(d)) V + I`` per level (no softmax unless configured), after
which all levels are flattened, tagged with level embeddings, and run through
a joint self-attention encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from reftrack.domain import tokenize
from reftrack.model.layers import EncoderLayer, grid_positions, token_positions

STRIDES = (8, 16, 32, 64)


# ---------------------------------------------------------------------------
# visual backbone


class VisualBackbone(nn.Module):
    """Conv pyramid emitting one feature grid per stride in ``STRIDES``.

    ``channels`` widens the three stem stages; deeper levels reuse the last
    width. Every level ends in a 1x1 lateral projection to ``dim``.
    """

    def __init__(self, dim: int, channels: tuple[int, int, int] = (16, 32, 64)):
        super().__init__()
        c1, c2, c3 = channels
        self.stem = nn.ModuleList(
            [
                nn.Conv2d(3, c1, 3, stride=2, padding=1),
                nn.Conv2d(c1, c2, 3, stride=2, padding=1),
                nn.Conv2d(c2, c3, 3, stride=2, padding=1),
            ]
        )
        self.down4 = nn.Conv2d(c3, c3, 3, stride=2, padding=1)
        self.down5 = nn.Conv2d(c3, c3, 3, stride=2, padding=1)
        self.down6 = nn.Conv2d(c3, c3, 3, stride=2, padding=1)
        self.laterals = nn.ModuleList(nn.Conv2d(c, dim, 1) for c in (c3, c3, c3, c3))
        # ReLU-correct init: the default conv init attenuates activations
        # roughly 2x per layer, which starves the fused tokens of image signal
        for conv in (*self.stem, self.down4, self.down5, self.down6):
            nn.init.kaiming_normal_(conv.weight, nonlinearity="relu")
            nn.init.zeros_(conv.bias)

    def conv_chains(self) -> list[list[tuple[int, int, int]]]:
        """Per level: the (kernel, stride, padding) chain that produced it."""
        stem = [(3, 2, 1)] * 3
        chains = [stem[:]]
        for _ in range(3):
            chains.append(chains[-1] + [(3, 2, 1)])
        for chain in chains:
            chain.append((1, 1, 0))  # lateral
        return chains

    def forward(self, image: Tensor) -> list[Tensor]:
        if image.dim() != 4 or image.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) image, got {tuple(image.shape)}")
        h, w = image.shape[-2:]
        coarsest = STRIDES[-1]
        if h < coarsest or w < coarsest:
            raise ValueError(f"image {h}x{w} smaller than coarsest stride {coarsest}")
        if h % coarsest or w % coarsest:
            raise ValueError(f"image {h}x{w} not divisible by coarsest stride {coarsest}")
        # center [0, 1] inputs; an uncentered mid-gray background otherwise
        # dominates every activation and drowns the object signal
        x = (image - 0.5) * 2.0
        for conv in self.stem:
            x = torch.relu(conv(x))
        f3 = x
        f4 = torch.relu(self.down4(f3))
        f5 = torch.relu(self.down5(f4))
        f6 = self.down6(f5)
        return [lat(f) for lat, f in zip(self.laterals, (f3, f4, f5, f6))]


# ---------------------------------------------------------------------------
# text encoder


class Vocabulary:
    """Token -> id table with id 0 reserved for unknown tokens."""

    UNK = "<unk>"

    def __init__(self, tokens: list[str]):
        self.tokens = [self.UNK] + [t for t in tokens if t != self.UNK]
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def from_texts(cls, texts) -> "Vocabulary":
        seen = sorted({tok for text in texts for tok in tokenize(text)})
        return cls(seen)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        toks = tokenize(text)
        if not toks:
            raise ValueError(f"expression has no tokens: {text!r}")
        return [self.index.get(t, 0) for t in toks]


class TextEncoder(nn.Module):
    """Embedding table -> linear projection into the shared width.

    ``freeze`` stops gradient flow into the table, mirroring a frozen
    pretrained language encoder; the projection always stays trainable.
    """

    def __init__(self, vocab_size: int, text_dim: int, dim: int, freeze: bool = False):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, text_dim)
        self.project = nn.Linear(text_dim, dim)
        if freeze:
            self.embed.weight.requires_grad_(False)

    def forward(self, token_ids: Tensor) -> Tensor:
        if token_ids.dim() == 1:
            token_ids = token_ids.unsqueeze(0)
        if token_ids.numel() == 0:
            raise ValueError("empty token sequence")
        return self.project(self.embed(token_ids))


# ---------------------------------------------------------------------------
# fusion and joint encoder


class CrossModalFusion(nn.Module):
    """Per-level early fusion: ``(Q K^T / sqrt(d)) V + I``.

    Q projects position-tagged visual tokens, K projects position-tagged text
    tokens, V projects raw text. ``row_softmax`` optionally normalizes the
    attention rows; the default leaves the raw scaled scores in place.
    """

    def __init__(self, dim: int, row_softmax: bool = False):
        super().__init__()
        self.dim = dim
        self.row_softmax = row_softmax
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)

    def forward(self, visual: Tensor, text: Tensor, visual_pos: Tensor, text_pos: Tensor) -> Tensor:
        q = self.q_proj(visual + visual_pos)
        k = self.k_proj(text + text_pos)
        v = self.v_proj(text)
        scores = q @ k.transpose(-2, -1) / (self.dim ** 0.5)
        if self.row_softmax:
            scores = torch.softmax(scores, dim=-1)
        return scores @ v + visual


@dataclass
class FrontendOutput:
    """Flattened multi-scale token sequence plus its positional codes."""

    tokens: Tensor          # (B, T, d)
    positions: Tensor       # (T, d) grid codes + level embedding
    level_shapes: list[tuple[int, int]]
    text: Tensor            # (B, L, d) projected text tokens
    text_positions: Tensor  # (L, d)


class CrossModalFrontend(nn.Module):
    """Backbone + text encoder + fusion + joint self-attention encoder."""

    def __init__(
        self,
        dim: int,
        vocab_size: int,
        text_dim: int,
        num_heads: int,
        ffn_dim: int,
        encoder_layers: int,
        backbone_channels: tuple[int, int, int] = (16, 32, 64),
        freeze_text: bool = False,
        fusion_row_softmax: bool = False,
    ):
        super().__init__()
        self.dim = dim
        self.backbone = VisualBackbone(dim, backbone_channels)
        self.text_encoder = TextEncoder(vocab_size, text_dim, dim, freeze=freeze_text)
        self.fusion = CrossModalFusion(dim, row_softmax=fusion_row_softmax)
        # per-level norm keeps the visual stream at unit scale so the text
        # contribution cannot drown it (or vice versa)
        self.level_norms = nn.ModuleList(nn.LayerNorm(dim) for _ in STRIDES)
        self.level_embed = nn.Parameter(torch.zeros(len(STRIDES), dim))
        nn.init.normal_(self.level_embed)
        self.layers = nn.ModuleList(
            EncoderLayer(dim, num_heads, ffn_dim) for _ in range(encoder_layers)
        )

    def forward(self, image: Tensor, token_ids: Tensor) -> FrontendOutput:
        feats = self.backbone(image)
        bsz = image.shape[0]
        dtype = image.dtype

        text = self.text_encoder(token_ids)
        if text.shape[0] == 1 and bsz > 1:
            text = text.expand(bsz, -1, -1)
        text_pos = token_positions(text.shape[1], self.dim, dtype=dtype).to(text.device)

        fused_levels = []
        positions = []
        shapes = []
        for lvl, feat in enumerate(feats):
            _, _, h, w = feat.shape
            vis = self.level_norms[lvl](feat.flatten(2).transpose(1, 2))  # (B, h*w, d)
            pos = grid_positions(h, w, self.dim, dtype=dtype).to(feat.device)
            fused_levels.append(self.fusion(vis, text, pos, text_pos))
            positions.append(pos + self.level_embed[lvl].to(dtype))
            shapes.append((h, w))

        tokens = torch.cat(fused_levels, dim=1)
        pos_all = torch.cat(positions, dim=0)
        for layer in self.layers:
            tokens = layer(tokens, pos=pos_all)
        return FrontendOutput(tokens, pos_all, shapes, text, text_pos)
