"""Transformer building blocks shared by the frontend, decoders, and memory
stages: multi-head attention with optional boolean masks, pre-norm residual
layers, and sinusoidal position helpers.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn


# ---------------------------------------------------------------------------
# positional codes


def sine_features(values: Tensor, dim: int, temperature: float = 10000.0) -> Tensor:
    """Sin/cos features of ``values`` (any shape) -> (..., dim). ``dim`` even."""
    if dim % 2:
        raise ValueError(f"sine feature dim must be even, got {dim}")
    half = dim // 2
    freqs = temperature ** (
        -torch.arange(half, dtype=values.dtype, device=values.device) / half
    )
    ang = values.unsqueeze(-1) * freqs
    return torch.cat([ang.sin(), ang.cos()], dim=-1)


def token_positions(length: int, dim: int, dtype=torch.float32) -> Tensor:
    """Classic absolute-index codes for a 1-d sequence -> (length, dim)."""
    idx = torch.arange(length, dtype=dtype)
    return sine_features(idx, dim)


def grid_positions(h: int, w: int, dim: int, dtype=torch.float32) -> Tensor:
    """Row/column codes for an h x w grid, flattened row-major -> (h*w, dim).

    Half the channels encode the normalized row coordinate, half the column,
    so the code depends only on the grid shape.
    """
    if dim % 4:
        raise ValueError(f"grid position dim must be divisible by 4, got {dim}")
    ys = (torch.arange(h, dtype=dtype) + 0.5) / h * (2 * math.pi)
    xs = (torch.arange(w, dtype=dtype) + 0.5) / w * (2 * math.pi)
    ycode = sine_features(ys, dim // 2)  # (h, dim/2)
    xcode = sine_features(xs, dim // 2)  # (w, dim/2)
    full = torch.cat(
        [
            ycode[:, None, :].expand(h, w, dim // 2),
            xcode[None, :, :].expand(h, w, dim // 2),
        ],
        dim=-1,
    )
    return full.reshape(h * w, dim)


def box_positions(boxes: Tensor, dim: int) -> Tensor:
    """Codes for normalized center-size boxes (..., 4) -> (..., dim)."""
    if dim % 8:
        raise ValueError(f"box position dim must be divisible by 8, got {dim}")
    quarter = dim // 4
    parts = [
        sine_features(boxes[..., i] * (2 * math.pi), quarter) for i in range(4)
    ]
    return torch.cat(parts, dim=-1)


def center_positions(centers: Tensor, dim: int) -> Tensor:
    """Codes for normalized (cx, cy) points (..., 2) -> (..., dim).

    Channel layout matches ``grid_positions`` (y first, then x) so query
    positions built from box centers align with the encoder token codes.
    """
    if dim % 4:
        raise ValueError(f"center position dim must be divisible by 4, got {dim}")
    ycode = sine_features(centers[..., 1] * (2 * math.pi), dim // 2)
    xcode = sine_features(centers[..., 0] * (2 * math.pi), dim // 2)
    return torch.cat([ycode, xcode], dim=-1)


def anchor_grid(count: int, dtype=torch.float32) -> Tensor:
    """(count, 2) normalized (cx, cy) anchors on a near-square grid."""
    rows = max(1, int(math.floor(math.sqrt(count))))
    cols = (count + rows - 1) // rows
    pts = []
    for r in range(rows):
        for c in range(cols):
            pts.append(((c + 0.5) / cols, (r + 0.5) / rows))
    return torch.tensor(pts[:count], dtype=dtype)


def offset_positions(offsets: Tensor, window: int, dim: int, dtype=torch.float32) -> Tensor:
    """Codes for integer frame offsets in [0, window] -> (..., dim).

    Normalized by window + 1 so the largest offset never wraps onto 0.
    """
    scaled = offsets.to(dtype) / float(max(window, 1) + 1) * (2 * math.pi)
    return sine_features(scaled, dim)


# ---------------------------------------------------------------------------
# attention


def _with_pos(x: Tensor, pos: Tensor | None) -> Tensor:
    return x if pos is None else x + pos


class MultiHeadAttention(nn.Module):
    """Standard multi-head attention over (B, L, d) tensors.

    ``mask`` is boolean with True = may attend, broadcastable to
    (B, Lq, Lk). Query rows with no permitted key contribute exactly zero
    output (post-projection), so an empty key set leaves the residual path
    untouched.
    """

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by heads {num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(
        self,
        query: Tensor,
        key: Tensor,
        value: Tensor,
        mask: Tensor | None = None,
        q_pos: Tensor | None = None,
        k_pos: Tensor | None = None,
        need_weights: bool = False,
    ):
        bsz, lq, _ = query.shape
        lk = key.shape[1]
        h, hd = self.num_heads, self.head_dim

        q = self.q_proj(_with_pos(query, q_pos)).view(bsz, lq, h, hd).transpose(1, 2)
        k = self.k_proj(_with_pos(key, k_pos)).view(bsz, lk, h, hd).transpose(1, 2)
        v = self.v_proj(value).view(bsz, lk, h, hd).transpose(1, 2)

        scores = q @ k.transpose(-2, -1) / math.sqrt(hd)
        row_alive = None
        if mask is not None:
            mask = mask.to(torch.bool)
            while mask.dim() < 4:  # -> (B, 1, Lq, Lk), head axis broadcast
                mask = mask.unsqueeze(0) if mask.dim() == 2 else mask.unsqueeze(1)
            row_alive = mask.any(dim=-1, keepdim=True)  # (B, 1, Lq, 1)
            scores = scores.masked_fill(~mask, float("-inf"))
            # rows with no allowed key would softmax to NaN; make them uniform
            # here and zero the final output instead
            scores = torch.where(row_alive, scores, torch.zeros_like(scores))

        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(bsz, lq, self.dim)
        out = self.out_proj(out)
        if row_alive is not None:
            out = out * row_alive[:, 0].to(out.dtype)  # (B, Lq, 1)
        if need_weights:
            return out, attn
        return out


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, hidden), nn.ReLU(), nn.Linear(hidden, dim))

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class MLP(nn.Module):
    """Plain ReLU MLP; ReLU after every layer except the last."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, num_layers: int):
        super().__init__()
        dims = [in_dim] + [hidden] * (num_layers - 1) + [out_dim]
        self.layers = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(num_layers)
        )

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i + 1 < len(self.layers):
                x = torch.relu(x)
        return x


# ---------------------------------------------------------------------------
# pre-norm residual layers


class SelfAttentionLayer(nn.Module):
    """x + Attn(LN(x)) with optional shared positional codes."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, num_heads)

    def forward(self, x: Tensor, pos: Tensor | None = None, mask: Tensor | None = None) -> Tensor:
        y = self.norm(x)
        return x + self.attn(y, y, y, mask=mask, q_pos=pos, k_pos=pos)


class CrossAttentionLayer(nn.Module):
    """x + Attn(LN(x) -> memory); memory is used un-normalized."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, num_heads)

    def forward(
        self,
        x: Tensor,
        memory: Tensor,
        q_pos: Tensor | None = None,
        k_pos: Tensor | None = None,
        mask: Tensor | None = None,
    ) -> Tensor:
        return x + self.attn(self.norm(x), memory, memory, mask=mask, q_pos=q_pos, k_pos=k_pos)


class FeedForwardLayer(nn.Module):
    """x + FFN(LN(x))."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, hidden)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.ffn(self.norm(x))


class EncoderLayer(nn.Module):
    """Self-attention + FFN, both pre-norm residual."""

    def __init__(self, dim: int, num_heads: int, ffn_dim: int):
        super().__init__()
        self.self_attn = SelfAttentionLayer(dim, num_heads)
        self.ffn = FeedForwardLayer(dim, ffn_dim)

    def forward(self, x: Tensor, pos: Tensor | None = None, mask: Tensor | None = None) -> Tensor:
        return self.ffn(self.self_attn(x, pos=pos, mask=mask))


class DecoderLayer(nn.Module):
    """Query self-attention, cross-attention into a memory, FFN."""

    def __init__(self, dim: int, num_heads: int, ffn_dim: int):
        super().__init__()
        self.self_attn = SelfAttentionLayer(dim, num_heads)
        self.cross_attn = CrossAttentionLayer(dim, num_heads)
        self.ffn = FeedForwardLayer(dim, ffn_dim)

    def forward(
        self,
        queries: Tensor,
        memory: Tensor,
        query_pos: Tensor | None = None,
        memory_pos: Tensor | None = None,
        memory_mask: Tensor | None = None,
    ) -> Tensor:
        x = self.self_attn(queries, pos=query_pos)
        x = self.cross_attn(x, memory, q_pos=query_pos, k_pos=memory_pos, mask=memory_mask)
        return self.ffn(x)
