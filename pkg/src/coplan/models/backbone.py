"""Video encoder over rendered observation clips, with an EMA teacher and a
masked-latent pretraining objective.

The encoder patchifies a (T, H, W, C) binary clip with a 3D convolution
(tubelet x patch x patch), adds learned positions, and runs a small
transformer. The teacher is a frozen structural copy updated by exponential
moving average of the student weights. Pretraining regresses the student's
latents onto the teacher's at a random subset of token positions; the input
itself is not corrupted, masking only selects which positions are scored.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .layers import Block


@dataclass(frozen=True)
class EncoderConfig:
    d_e: int = 128
    depth: int = 4
    n_heads: int = 4
    mlp_ratio: float = 4.0
    patch: int = 8
    tubelet: int = 2
    px: int = 64
    t_obs: int = 4
    channels: int = 3

    def __post_init__(self) -> None:
        if self.px % self.patch != 0:
            raise ValueError(f"px {self.px} not divisible by patch {self.patch}")
        if self.t_obs % self.tubelet != 0:
            raise ValueError(f"t_obs {self.t_obs} not divisible by tubelet {self.tubelet}")

    @property
    def n_tokens(self) -> int:
        return (self.t_obs // self.tubelet) * (self.px // self.patch) ** 2


class VideoEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.patchify = nn.Conv3d(
            cfg.channels,
            cfg.d_e,
            kernel_size=(cfg.tubelet, cfg.patch, cfg.patch),
            stride=(cfg.tubelet, cfg.patch, cfg.patch),
        )
        self.pos_emb = nn.Parameter(torch.zeros(1, cfg.n_tokens, cfg.d_e))
        nn.init.trunc_normal_(self.pos_emb, std=0.02)
        self.blocks = nn.ModuleList(
            Block(cfg.d_e, cfg.n_heads, cfg.mlp_ratio) for _ in range(cfg.depth)
        )
        self.norm = nn.LayerNorm(cfg.d_e)

    def forward(self, clips: torch.Tensor) -> torch.Tensor:
        """clips: (B, T, H, W, C) float in [0, 1] -> tokens (B, N, d_e)."""
        cfg = self.cfg
        if clips.ndim != 5 or clips.shape[1:] != (cfg.t_obs, cfg.px, cfg.px, cfg.channels):
            raise ValueError(
                f"expected clips (B, {cfg.t_obs}, {cfg.px}, {cfg.px}, {cfg.channels}), "
                f"got {tuple(clips.shape)}"
            )
        x = clips.permute(0, 4, 1, 2, 3)  # (B, C, T, H, W)
        x = self.patchify(x)  # (B, d_e, T', H', W')
        x = x.flatten(2).transpose(1, 2)  # (B, N, d_e)
        x = x + self.pos_emb
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


def make_teacher(student: nn.Module) -> nn.Module:
    """Frozen structural copy of the student, to be tracked by EMA."""
    teacher = copy.deepcopy(student)
    for p in teacher.parameters():
        p.requires_grad_(False)
    teacher.eval()
    return teacher


@torch.no_grad()
def ema_update(teacher: nn.Module, student: nn.Module, momentum: float) -> None:
    """theta_t <- momentum * theta_t + (1 - momentum) * theta_s."""
    if not (0.0 <= momentum <= 1.0):
        raise ValueError(f"momentum must lie in [0, 1], got {momentum}")
    t_params = dict(teacher.named_parameters())
    s_params = dict(student.named_parameters())
    if t_params.keys() != s_params.keys():
        raise ValueError("teacher/student parameter sets differ")
    for name, tp in t_params.items():
        sp = s_params[name]
        if tp.shape != sp.shape:
            raise ValueError(f"shape mismatch for {name}: {tp.shape} vs {sp.shape}")
        tp.mul_(momentum).add_(sp.detach(), alpha=1.0 - momentum)
    for (name, tb), (_, sb) in zip(teacher.named_buffers(), student.named_buffers()):
        if tb.dtype.is_floating_point:
            tb.mul_(momentum).add_(sb.detach(), alpha=1.0 - momentum)


def pretrain_step(
    student: nn.Module,
    teacher: nn.Module,
    clips: torch.Tensor,
    mask_ratio: float,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Masked-latent regression loss between student and EMA teacher.

    Both networks see the full clip. A per-sample random subset of
    k = round(mask_ratio * N) token positions is selected and the loss is
    the mean squared error between student and teacher latents at those
    positions (averaging exactly k * d_e terms per sample). Gradients reach
    the student only.
    """
    if not (0.0 < mask_ratio < 1.0):
        raise ValueError(f"mask_ratio must lie in (0, 1), got {mask_ratio}")
    s_tokens = student(clips)
    with torch.no_grad():
        t_tokens = teacher(clips)
    b, n, d = s_tokens.shape
    k = int(round(mask_ratio * n))
    if k < 1:
        raise ValueError(
            f"mask_ratio {mask_ratio} selects zero of {n} tokens; need at least one"
        )
    scores = torch.rand(b, n, generator=generator, device=s_tokens.device)
    idx = torch.argsort(scores, dim=1)[:, :k]  # (B, k) random positions
    gather = idx[:, :, None].expand(b, k, d)
    s_sel = torch.gather(s_tokens, 1, gather)
    t_sel = torch.gather(t_tokens, 1, gather)
    return torch.mean((s_sel - t_sel) ** 2)
