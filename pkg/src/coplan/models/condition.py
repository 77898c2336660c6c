"""Driving-condition encoding: command plus ego status."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

N_COMMANDS = 4


@dataclass(frozen=True)
class ConditionConfig:
    d: int = 128
    n_commands: int = N_COMMANDS


class ConditionEncoder(nn.Module):
    """Produces two condition tokens: a command embedding and a speed token."""

    def __init__(self, cfg: ConditionConfig):
        super().__init__()
        self.cfg = cfg
        self.cmd_emb = nn.Embedding(cfg.n_commands, cfg.d)
        self.speed_proj = nn.Linear(1, cfg.d)

    def forward(self, command: torch.Tensor, speed: torch.Tensor) -> torch.Tensor:
        """command: (B,) long; speed: (B,) float -> (B, 2, d)."""
        if command.ndim != 1 or speed.ndim != 1 or command.shape != speed.shape:
            raise ValueError(
                f"command/speed must be matching 1D tensors, got "
                f"{tuple(command.shape)} and {tuple(speed.shape)}"
            )
        if command.min() < 0 or command.max() >= self.cfg.n_commands:
            raise ValueError("command index out of range")
        cmd = self.cmd_emb(command)  # (B, d)
        spd = self.speed_proj(speed[:, None])  # (B, d)
        return torch.stack([cmd, spd], dim=1)


def status_features(command: torch.Tensor, speed: torch.Tensor) -> torch.Tensor:
    """Raw ego-status vector for modulation: [speed, one-hot command] (B, 5)."""
    onehot = torch.nn.functional.one_hot(command, num_classes=N_COMMANDS)
    return torch.cat([speed[:, None], onehot.to(speed.dtype)], dim=1)
