"""Action-conditioned latent world predictor.

A block-causal transformer over the token sequence

    [ condition | action chunk | current latents | frame 1 | ... | frame T ]

The prefix (condition, action, current latents) forms block 0 and is visible
everywhere. Future frame t occupies its own block of m_tokens positions; a
token may attend to any token whose block index is <= its own, so a whole
frame is decoded jointly while later frames stay invisible.

Inputs are shifted: the tokens feeding frame block t are the embedded
latents of frame t-1 (a learned start embedding for t=1) plus per-slot
embeddings, and the block's outputs are read as the prediction for frame t.
Teacher forcing feeds ground-truth latents in one pass; free-running rollout
feeds back its own predictions frame by frame. Both paths share the same
forward, so rollout(t) is bit-identical to a teacher-forced pass whose
inputs happen to match.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .layers import Block


@dataclass(frozen=True)
class PredictorConfig:
    d: int = 128
    depth: int = 4
    n_heads: int = 4
    mlp_ratio: float = 4.0
    d_latent: int = 128
    m_tokens: int = 16
    d_cond: int = 128
    horizon: int = 8
    t_w_max: int = 8
    rope_base: float = 10000.0


class WorldPredictor(nn.Module):
    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        self.cfg = cfg
        self.cond_proj = nn.Linear(cfg.d_cond, cfg.d)
        self.action_proj = nn.Linear(3, cfg.d)
        self.action_time_emb = nn.Parameter(torch.zeros(1, cfg.horizon, cfg.d))
        self.latent_proj = nn.Linear(cfg.d_latent, cfg.d)
        self.slot_emb = nn.Parameter(torch.zeros(1, cfg.m_tokens, cfg.d))
        self.start_emb = nn.Parameter(torch.zeros(1, 1, cfg.d))
        # Segments: 0 condition, 1 action, 2 current latents, 3 future frames.
        self.seg_emb = nn.Parameter(torch.zeros(4, cfg.d))
        for p in (self.action_time_emb, self.slot_emb, self.start_emb, self.seg_emb):
            nn.init.trunc_normal_(p, std=0.02)
        self.blocks = nn.ModuleList(
            Block(cfg.d, cfg.n_heads, cfg.mlp_ratio, rope_base=cfg.rope_base)
            for _ in range(cfg.depth)
        )
        self.out_norm = nn.LayerNorm(cfg.d)
        self.head = nn.Linear(cfg.d, cfg.d_latent)

    def _embed_action(self, action: torch.Tensor | None, batch: int) -> torch.Tensor:
        """Action pose tokens; a missing action zeroes the content embedding
        but keeps the slots, so coupling ablations keep parameter shapes."""
        if action is None:
            content = torch.zeros(
                batch, self.cfg.horizon, self.cfg.d,
                device=self.action_time_emb.device, dtype=self.action_time_emb.dtype,
            )
        else:
            if action.ndim != 3 or action.shape[1:] != (self.cfg.horizon, 3):
                raise ValueError(
                    f"expected action (B, {self.cfg.horizon}, 3), got {tuple(action.shape)}"
                )
            content = self.action_proj(action)
        return content + self.action_time_emb + self.seg_emb[1]

    def _check_latents(self, z: torch.Tensor, name: str) -> None:
        if z.ndim != 3 or z.shape[1:] != (self.cfg.m_tokens, self.cfg.d_latent):
            raise ValueError(
                f"expected {name} (B, {self.cfg.m_tokens}, {self.cfg.d_latent}), "
                f"got {tuple(z.shape)}"
            )

    def _forward_blocks(
        self,
        z: torch.Tensor,
        c: torch.Tensor,
        action: torch.Tensor | None,
        frame_inputs: torch.Tensor,
    ) -> torch.Tensor:
        """Run the block-causal transformer.

        frame_inputs: (B, T, m_tokens, d_latent) input latents for the first
        T future blocks (already shifted by the caller). The sequence is
        always padded to t_w_max frame blocks (zero latents) so every pass
        uses identical tensor shapes: block-causal masking makes the padding
        invisible to earlier blocks, which keeps frame outputs bit-identical
        across calls that share a prefix of inputs. Returns predicted latents
        (B, T, m_tokens, d_latent) for the T requested blocks.
        """
        b, t_req, m, _ = frame_inputs.shape
        t_w = self.cfg.t_w_max
        if t_req < t_w:
            pad = torch.zeros(
                b, t_w - t_req, m, self.cfg.d_latent,
                device=frame_inputs.device, dtype=frame_inputs.dtype,
            )
            frame_inputs = torch.cat([frame_inputs, pad], dim=1)
        cond = self.cond_proj(c) + self.seg_emb[0]
        act = self._embed_action(action, b)
        cur = self.latent_proj(z) + self.slot_emb + self.seg_emb[2]
        fut = (
            self.latent_proj(frame_inputs.reshape(b, t_w * m, self.cfg.d_latent))
            .reshape(b, t_w, m, self.cfg.d)
            + self.slot_emb[:, None]
            + self.seg_emb[3]
        )
        # Mark the begin-of-rollout block; its latent input is all zeros.
        fut = torch.cat([fut[:, :1] + self.start_emb[:, None], fut[:, 1:]], dim=1)
        tokens = torch.cat([cond, act, cur, fut.reshape(b, t_w * m, self.cfg.d)], dim=1)

        n_prefix = cond.shape[1] + act.shape[1] + cur.shape[1]
        block_ids = torch.cat(
            [
                torch.zeros(n_prefix, dtype=torch.long, device=tokens.device),
                torch.arange(1, t_w + 1, device=tokens.device).repeat_interleave(m),
            ]
        )
        attn_mask = block_ids[None, :] <= block_ids[:, None]  # query attends to <= blocks
        positions = torch.arange(tokens.shape[1], device=tokens.device)

        x = tokens
        for blk in self.blocks:
            x = blk(x, attn_mask=attn_mask, rope_positions=positions)
        out = self.head(self.out_norm(x[:, n_prefix:]))
        return out.reshape(b, t_w, m, self.cfg.d_latent)[:, :t_req]

    def _start_block(self, batch: int, ref: torch.Tensor) -> torch.Tensor:
        """Zero latent input for frame block 1; start_emb marks it post-projection."""
        return torch.zeros(
            batch, 1, self.cfg.m_tokens, self.cfg.d_latent,
            device=ref.device, dtype=ref.dtype,
        )

    def forward_teacher_forced(
        self,
        z: torch.Tensor,
        c: torch.Tensor,
        action: torch.Tensor | None,
        target_frames: torch.Tensor,
    ) -> torch.Tensor:
        """One-pass prediction with ground-truth frames as shifted inputs.

        target_frames: (B, T, m_tokens, d_latent). Block t is fed
        target_frames[t-2] (start block for t=1) and predicts frame t.
        """
        self._check_latents(z, "current latents")
        if target_frames.ndim != 4 or target_frames.shape[2:] != (
            self.cfg.m_tokens,
            self.cfg.d_latent,
        ):
            raise ValueError(
                f"expected target frames (B, T, {self.cfg.m_tokens}, "
                f"{self.cfg.d_latent}), got {tuple(target_frames.shape)}"
            )
        t_w = target_frames.shape[1]
        if not (1 <= t_w <= self.cfg.t_w_max):
            raise ValueError(f"T={t_w} outside [1, {self.cfg.t_w_max}]")
        inputs = torch.cat(
            [self._start_block(z.shape[0], z), target_frames[:, :-1]], dim=1
        )
        return self._forward_blocks(z, c, action, inputs)

    def rollout(
        self,
        z: torch.Tensor,
        c: torch.Tensor,
        action: torch.Tensor | None,
        t_w: int,
    ) -> torch.Tensor:
        """Free-running prediction of t_w future latent frames.

        Each step re-runs the sequence with all previously predicted frames
        as inputs; by block causality the first t-1 frame outputs repeat
        bit-identically, so prefixes of longer rollouts match shorter ones.
        """
        self._check_latents(z, "current latents")
        if not (1 <= t_w <= self.cfg.t_w_max):
            raise ValueError(f"t_w={t_w} outside [1, {self.cfg.t_w_max}]")
        frames: list[torch.Tensor] = []
        for t in range(1, t_w + 1):
            inputs = torch.cat(
                [self._start_block(z.shape[0], z)]
                + [f[:, None] for f in frames],
                dim=1,
            )
            out = self._forward_blocks(z, c, action, inputs)
            frames.append(out[:, t - 1])
        return torch.stack(frames, dim=1)

    @staticmethod
    def rollout_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        """Mean squared error between predicted and target latent frames."""
        if pred.shape != target.shape:
            raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
        return torch.mean((pred - target) ** 2)
