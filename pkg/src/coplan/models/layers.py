"""Shared transformer building blocks."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embeddings for (possibly fractional) scalar timesteps.

    t: (B,) float tensor. Returns (B, dim).
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=t.dtype, device=t.device) / half
    )
    args = t[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def rope_rotate(x: torch.Tensor, positions: torch.Tensor, base: float = 10000.0) -> torch.Tensor:
    """Rotary position embedding.

    x: (..., L, D) with even D; positions: (L,) scalar positions. Rotates
    feature pairs (x[j], x[j + D/2]) by angle pos * base^(-2j/D). The map is
    an isometry per token, and dot products between rotated queries and keys
    depend on positions only through their difference.
    """
    d = x.shape[-1]
    if d % 2 != 0:
        raise ValueError(f"feature dim must be even for rotation, got {d}")
    if positions.shape != x.shape[-2:-1]:
        raise ValueError(
            f"positions shape {tuple(positions.shape)} must match sequence length {x.shape[-2]}"
        )
    half = d // 2
    freqs = base ** (
        -torch.arange(half, dtype=x.dtype, device=x.device) * 2.0 / d
    )
    angles = positions.to(x.dtype)[:, None] * freqs[None, :]  # (L, half)
    cos, sin = torch.cos(angles), torch.sin(angles)
    x1, x2 = x[..., :half], x[..., half:]
    return torch.cat([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1)


class Attention(nn.Module):
    """Multi-head attention over an input sequence, optionally cross-attending.

    When rope_positions is given, queries and keys are rotated before the
    dot product (self-attention only; query and key positions may differ for
    cross-shaped uses via a (q_pos, k_pos) tuple).
    """

    def __init__(self, dim: int, n_heads: int, rope_base: float | None = None):
        super().__init__()
        if dim % n_heads != 0:
            raise ValueError(f"dim {dim} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.rope_base = rope_base
        self.to_q = nn.Linear(dim, dim)
        self.to_k = nn.Linear(dim, dim)
        self.to_v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, l, _ = x.shape
        return x.view(b, l, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(
        self,
        x: torch.Tensor,
        context: torch.Tensor | None = None,
        attn_mask: torch.Tensor | None = None,
        rope_positions: torch.Tensor | None = None,
    ) -> torch.Tensor:
        kv = x if context is None else context
        q = self._split(self.to_q(x))
        k = self._split(self.to_k(kv))
        v = self._split(self.to_v(kv))
        if rope_positions is not None:
            if self.rope_base is None:
                raise ValueError("attention was built without a rope_base")
            if isinstance(rope_positions, tuple):
                q_pos, k_pos = rope_positions
            else:
                q_pos = k_pos = rope_positions
            q = rope_rotate(q, q_pos, self.rope_base)
            k = rope_rotate(k, k_pos, self.rope_base)
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=attn_mask)
        b, _, l, _ = out.shape
        return self.proj(out.transpose(1, 2).reshape(b, l, self.n_heads * self.head_dim))


class Mlp(nn.Module):
    def __init__(self, dim: int, ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm transformer block: optional self-attention, optional
    cross-attention to a context sequence, then an MLP."""

    def __init__(
        self,
        dim: int,
        n_heads: int,
        mlp_ratio: float = 4.0,
        self_attn: bool = True,
        cross_attn: bool = False,
        rope_base: float | None = None,
    ):
        super().__init__()
        self.attn = Attention(dim, n_heads, rope_base=rope_base) if self_attn else None
        self.norm1 = nn.LayerNorm(dim) if self_attn else None
        self.cross = Attention(dim, n_heads) if cross_attn else None
        self.norm2 = nn.LayerNorm(dim) if cross_attn else None
        self.norm_ctx = nn.LayerNorm(dim) if cross_attn else None
        self.norm3 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(
        self,
        x: torch.Tensor,
        context: torch.Tensor | None = None,
        attn_mask: torch.Tensor | None = None,
        rope_positions: torch.Tensor | None = None,
    ) -> torch.Tensor:
        if self.attn is not None:
            x = x + self.attn(
                self.norm1(x), attn_mask=attn_mask, rope_positions=rope_positions
            )
        if self.cross is not None:
            if context is None:
                raise ValueError("cross-attention block requires a context")
            x = x + self.cross(self.norm2(x), context=self.norm_ctx(context))
        x = x + self.mlp(self.norm3(x))
        return x
