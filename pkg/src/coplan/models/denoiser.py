"""Multi-mode diffusion action denoiser with adaLN-Zero conditioning.

The denoiser jointly refines K trajectory modes. Each mode contributes
horizon pose tokens plus one score token; all tokens self-attend, cross
attend to scene context (condition tokens, world latents, and optionally the
previous hypothesis), and pass through an MLP. Every branch is modulated by
a conditioning vector built from the diffusion timestep, the ego status, the
query role, and (for refinement) the round index:

    x <- x + gate * Branch(scale * norm(x) + shift)

Modulation parameters come from a zero-initialized projection whose bias is
(shift=0, scale=1, gate=0) per branch, so a fresh block is the identity map
while its inner weights still receive gradients.

The network predicts clean normalized actions (data prediction) and a scalar
score per mode via the action head (final layer norm + linear maps).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .layers import Attention, Mlp, timestep_embedding


class Role(enum.IntEnum):
    """Query role selecting the denoiser's operating mode. All roles share
    the same weights; only the injected role embedding (plus, for REFINE,
    a round-index embedding) differs.

    INIT: inference-time round 0, from the current latents (optionally with
    a trajectory prompt in context). PROPOSAL: training-time round 0, from
    the current latents. REFINE: conditions on the previous hypothesis and
    a world rollout (or the current latents when the world->action coupling
    is severed)."""

    INIT = 0
    PROPOSAL = 1
    REFINE = 2


@dataclass(frozen=True)
class DenoiserConfig:
    d: int = 128
    depth: int = 4
    n_heads: int = 4
    mlp_ratio: float = 4.0
    modes: int = 6
    horizon: int = 8
    d_latent: int = 128
    m_tokens: int = 16
    d_cond: int = 128
    status_dim: int = 5
    k_max: int = 8  # round-embedding table size
    t_w_max: int = 8  # world-frame index table size (index 0 = current)
    trained_rounds: int = 4  # rounds actually trained; later rounds reuse the last


class AdaLNZeroBlock(nn.Module):
    """Transformer block with three modulated branches (self-attention,
    cross-attention, MLP). At init the block is exactly the identity."""

    def __init__(self, d: int, n_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(d, elementwise_affine=False)
        self.attn = Attention(d, n_heads)
        self.norm2 = nn.LayerNorm(d, elementwise_affine=False)
        self.cross = Attention(d, n_heads)
        self.norm_ctx = nn.LayerNorm(d)
        self.norm3 = nn.LayerNorm(d, elementwise_affine=False)
        self.mlp = Mlp(d, mlp_ratio)
        self.modulation = nn.Sequential(nn.SiLU(), nn.Linear(d, 9 * d))
        nn.init.zeros_(self.modulation[1].weight)
        # Bias layout per branch: shift=0, scale=1, gate=0.
        bias = torch.zeros(9, d)
        bias[1] = 1.0  # scale, self-attention branch
        bias[4] = 1.0  # scale, cross-attention branch
        bias[7] = 1.0  # scale, MLP branch
        with torch.no_grad():
            self.modulation[1].bias.copy_(bias.reshape(-1))

    def forward(
        self, x: torch.Tensor, context: torch.Tensor, cond_vec: torch.Tensor
    ) -> torch.Tensor:
        mods = self.modulation(cond_vec)[:, None, :].chunk(9, dim=-1)
        sh1, sc1, g1, sh2, sc2, g2, sh3, sc3, g3 = mods
        x = x + g1 * self.attn(self.norm1(x) * sc1 + sh1)
        x = x + g2 * self.cross(self.norm2(x) * sc2 + sh2, context=self.norm_ctx(context))
        x = x + g3 * self.mlp(self.norm3(x) * sc3 + sh3)
        return x


class ActionDenoiser(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d
        self.pose_in = nn.Linear(3, d)
        self.step_emb = nn.Parameter(torch.zeros(1, cfg.horizon, d))
        self.mode_emb = nn.Parameter(torch.zeros(1, cfg.modes, d))
        self.score_query = nn.Parameter(torch.zeros(1, 1, d))
        self.prev_flag = nn.Parameter(torch.zeros(1, 1, d))
        for p in (self.step_emb, self.mode_emb, self.score_query, self.prev_flag):
            nn.init.trunc_normal_(p, std=0.02)

        self.cond_proj = nn.Linear(cfg.d_cond, d)
        self.world_proj = nn.Linear(cfg.d_latent, d)
        self.frame_emb = nn.Parameter(torch.zeros(1 + cfg.t_w_max, d))
        nn.init.trunc_normal_(self.frame_emb, std=0.02)

        self.t_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.status_proj = nn.Linear(cfg.status_dim, d)
        self.role_emb = nn.Embedding(len(Role), d)
        self.round_emb = nn.Embedding(cfg.k_max, d)
        nn.init.zeros_(self.round_emb.weight)

        self.blocks = nn.ModuleList(
            AdaLNZeroBlock(d, cfg.n_heads, cfg.mlp_ratio) for _ in range(cfg.depth)
        )
        # Action head: final layer norm + linear maps for poses and scores.
        self.out_norm = nn.LayerNorm(d)
        self.pose_out = nn.Linear(d, 3)
        self.score_out = nn.Linear(d, 1)

    def _round_index(self, round_index: int) -> int:
        """Rounds beyond the trained count reuse the last trained embedding."""
        limit = min(self.cfg.trained_rounds, self.cfg.k_max) - 1
        return max(0, min(round_index, limit))

    def _action_tokens(self, poses: torch.Tensor, n_modes: int) -> torch.Tensor:
        b = poses.shape[0]
        tok = self.pose_in(poses) + self.step_emb[:, None] + self.mode_emb[:, :n_modes, None]
        return tok.reshape(b, n_modes * self.cfg.horizon, self.cfg.d)

    def _world_tokens(self, world: torch.Tensor) -> torch.Tensor:
        """world: (B, M, d_latent) current latents (frame index 0) or
        (B, T, M, d_latent) rollout frames (indices 1..T)."""
        cfg = self.cfg
        if world.ndim == 3:
            if world.shape[1:] != (cfg.m_tokens, cfg.d_latent):
                raise ValueError(
                    f"expected world (B, {cfg.m_tokens}, {cfg.d_latent}), "
                    f"got {tuple(world.shape)}"
                )
            return self.world_proj(world) + self.frame_emb[0]
        if world.ndim == 4:
            b, t_w, m, _ = world.shape
            if (m, world.shape[3]) != (cfg.m_tokens, cfg.d_latent):
                raise ValueError(
                    f"expected world (B, T, {cfg.m_tokens}, {cfg.d_latent}), "
                    f"got {tuple(world.shape)}"
                )
            if t_w > cfg.t_w_max:
                raise ValueError(f"T={t_w} exceeds t_w_max={cfg.t_w_max}")
            tok = self.world_proj(world) + self.frame_emb[1 : 1 + t_w][None, :, None, :]
            return tok.reshape(b, t_w * m, cfg.d)
        raise ValueError(f"world must be 3D or 4D, got shape {tuple(world.shape)}")

    def forward(
        self,
        noisy: torch.Tensor,
        t: torch.Tensor,
        *,
        role: Role,
        status: torch.Tensor,
        cond_tokens: torch.Tensor,
        world: torch.Tensor,
        prev_action: torch.Tensor | None = None,
        round_index: int = 0,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Denoise one batch of mode sets.

        noisy: (B, K, H, 3) normalized noisy actions; t: (B,) float timestep
        indices; status: (B, status_dim); cond_tokens: (B, Nc, d_cond);
        world: rollout frames (B, T, M, d_latent) when the world model is
        coupled, or current latents (B, M, d_latent) otherwise; prev_action:
        (B, Kp, H, 3) normalized previous hypothesis (required for REFINE,
        optional prompt for INIT).

        Returns (pose_pred (B, K, H, 3) normalized clean-action prediction,
        scores (B, K)).
        """
        cfg = self.cfg
        if noisy.ndim != 4 or noisy.shape[1:] != (cfg.modes, cfg.horizon, 3):
            raise ValueError(
                f"expected noisy (B, {cfg.modes}, {cfg.horizon}, 3), "
                f"got {tuple(noisy.shape)}"
            )
        b = noisy.shape[0]
        if t.shape != (b,):
            raise ValueError(f"t must be shape ({b},), got {tuple(t.shape)}")
        if role == Role.REFINE and prev_action is None:
            raise ValueError("REFINE requires the previous hypothesis")

        cond_vec = (
            self.t_mlp(timestep_embedding(t, cfg.d))
            + self.status_proj(status)
            + self.role_emb.weight[int(role)]
        )
        if role == Role.REFINE:
            cond_vec = cond_vec + self.round_emb.weight[self._round_index(round_index)]

        context = [self.cond_proj(cond_tokens), self._world_tokens(world)]
        if prev_action is not None:
            if prev_action.ndim != 4 or prev_action.shape[2:] != (cfg.horizon, 3):
                raise ValueError(
                    f"expected prev_action (B, Kp, {cfg.horizon}, 3), "
                    f"got {tuple(prev_action.shape)}"
                )
            kp = prev_action.shape[1]
            if kp > cfg.modes:
                raise ValueError(f"prev_action has {kp} modes > {cfg.modes}")
            context.append(self._action_tokens(prev_action, kp) + self.prev_flag)
        context = torch.cat(context, dim=1)

        pose_tok = self._action_tokens(noisy, cfg.modes)
        score_tok = (self.score_query + self.mode_emb).expand(b, -1, -1)
        x = torch.cat([pose_tok, score_tok], dim=1)
        for blk in self.blocks:
            x = blk(x, context=context, cond_vec=cond_vec)
        x = self.out_norm(x)
        n_pose = cfg.modes * cfg.horizon
        pose_pred = self.pose_out(x[:, :n_pose]).reshape(b, cfg.modes, cfg.horizon, 3)
        scores = self.score_out(x[:, n_pose:]).squeeze(-1)
        return pose_pred, scores


def wrap_angle_tensor(theta: torch.Tensor, period: float = 2.0 * math.pi) -> torch.Tensor:
    """Wrap values to (-period/2, period/2]."""
    wrapped = theta - period * torch.round(theta / period)
    return torch.where(wrapped <= -period / 2.0, wrapped + period, wrapped)


def planning_loss(
    pose_pred: torch.Tensor,
    scores: torch.Tensor,
    expert: torch.Tensor,
    yaw_period: float = 2.0,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Winner-takes-all imitation loss over trajectory modes.

    pose_pred: (B, K, H, 3); scores: (B, K); expert: (B, H, 3). All poses in
    normalized units (positions scaled, yaw in units of pi so its period is
    2). The winner per sample is the mode with the smallest mean position L2
    to the expert. The loss is

        CE(scores, winner)
        + L1(winner positions)
        + 0.5 * L1(finite-difference velocities, first step from the origin)
        + 0.5 * L1(wrapped yaw error)

    averaged over the batch. Returns (total, parts).
    """
    if pose_pred.ndim != 4 or expert.ndim != 3 or pose_pred.shape[2:] != expert.shape[1:]:
        raise ValueError(
            f"shape mismatch: pose_pred {tuple(pose_pred.shape)}, "
            f"expert {tuple(expert.shape)}"
        )
    if scores.shape != pose_pred.shape[:2]:
        raise ValueError(
            f"scores shape {tuple(scores.shape)} != modes {tuple(pose_pred.shape[:2])}"
        )
    b, k, h, _ = pose_pred.shape
    pos_pred = pose_pred[..., :2]
    pos_exp = expert[:, None, :, :2]
    with torch.no_grad():
        dist = torch.linalg.norm(pos_pred - pos_exp, dim=-1).mean(dim=-1)  # (B, K)
        winner = dist.argmin(dim=1)  # (B,)

    ce = torch.nn.functional.cross_entropy(scores, winner)

    sel = winner[:, None, None, None].expand(b, 1, h, 3)
    best = torch.gather(pose_pred, 1, sel).squeeze(1)  # (B, H, 3)

    pos_l1 = torch.mean(torch.abs(best[..., :2] - expert[..., :2]))

    def finite_diff(p: torch.Tensor) -> torch.Tensor:
        # First step measured from the origin of the ego frame.
        return torch.cat([p[:, :1], p[:, 1:] - p[:, :-1]], dim=1)

    vel_l1 = torch.mean(
        torch.abs(finite_diff(best[..., :2]) - finite_diff(expert[..., :2]))
    )
    yaw_err = wrap_angle_tensor(best[..., 2] - expert[..., 2], period=yaw_period)
    yaw_l1 = torch.mean(torch.abs(yaw_err))

    total = ce + pos_l1 + 0.5 * vel_l1 + 0.5 * yaw_l1
    parts = {
        "ce": float(ce.detach()),
        "pos_l1": float(pos_l1.detach()),
        "vel_l1": float(vel_l1.detach()),
        "yaw_l1": float(yaw_l1.detach()),
    }
    return total, parts
