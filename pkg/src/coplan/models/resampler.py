"""Token-space autoencoder: compress N encoder tokens to M learned latents
and reconstruct them.

compress uses M learned queries that self-attend and cross-attend to the
input tokens; the latent count is fixed by the query table, independent of
the input length. reconstruct uses per-position output queries cross
attending to the latents, so it can target any token count up to the
position-table size.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .layers import Block


@dataclass(frozen=True)
class ResamplerConfig:
    m_tokens: int = 16
    d: int = 128
    d_input: int = 128
    enc_depth: int = 4
    dec_depth: int = 2
    n_heads: int = 4
    mlp_ratio: float = 4.0
    max_input_tokens: int = 256


class Resampler(nn.Module):
    def __init__(self, cfg: ResamplerConfig):
        super().__init__()
        self.cfg = cfg
        self.in_proj = nn.Linear(cfg.d_input, cfg.d)
        self.in_pos = nn.Parameter(torch.zeros(1, cfg.max_input_tokens, cfg.d))
        self.queries = nn.Parameter(torch.zeros(1, cfg.m_tokens, cfg.d))
        nn.init.trunc_normal_(self.in_pos, std=0.02)
        nn.init.trunc_normal_(self.queries, std=0.02)
        self.enc_blocks = nn.ModuleList(
            Block(cfg.d, cfg.n_heads, cfg.mlp_ratio, self_attn=True, cross_attn=True)
            for _ in range(cfg.enc_depth)
        )
        self.norm_z = nn.LayerNorm(cfg.d)
        self.out_queries = nn.Parameter(torch.zeros(1, cfg.max_input_tokens, cfg.d))
        nn.init.trunc_normal_(self.out_queries, std=0.02)
        self.dec_blocks = nn.ModuleList(
            Block(cfg.d, cfg.n_heads, cfg.mlp_ratio, self_attn=False, cross_attn=True)
            for _ in range(cfg.dec_depth)
        )
        self.out_norm = nn.LayerNorm(cfg.d)
        self.out_proj = nn.Linear(cfg.d, cfg.d_input)

    def _check_n(self, n: int) -> None:
        if n > self.cfg.max_input_tokens:
            raise ValueError(
                f"{n} tokens exceed max_input_tokens={self.cfg.max_input_tokens}"
            )

    def compress(self, u: torch.Tensor) -> torch.Tensor:
        """(B, N, d_input) -> (B, m_tokens, d); M is set by the query table."""
        if u.ndim != 3 or u.shape[2] != self.cfg.d_input:
            raise ValueError(
                f"expected (B, N, {self.cfg.d_input}), got {tuple(u.shape)}"
            )
        self._check_n(u.shape[1])
        ctx = self.in_proj(u) + self.in_pos[:, : u.shape[1]]
        z = self.queries.expand(u.shape[0], -1, -1)
        for blk in self.enc_blocks:
            z = blk(z, context=ctx)
        return self.norm_z(z)

    def reconstruct(self, z: torch.Tensor, n_tokens: int) -> torch.Tensor:
        """(B, m_tokens, d) -> (B, n_tokens, d_input)."""
        if z.ndim != 3 or z.shape[1:] != (self.cfg.m_tokens, self.cfg.d):
            raise ValueError(
                f"expected latents (B, {self.cfg.m_tokens}, {self.cfg.d}), "
                f"got {tuple(z.shape)}"
            )
        self._check_n(n_tokens)
        x = self.out_queries[:, :n_tokens].expand(z.shape[0], -1, -1)
        for blk in self.dec_blocks:
            x = blk(x, context=z)
        return self.out_proj(self.out_norm(x))

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        return self.reconstruct(self.compress(u), u.shape[1])
