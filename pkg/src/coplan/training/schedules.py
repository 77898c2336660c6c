"""Optimizer and EMA-momentum schedules.

Learning rate: linear ramp from the initial to the peak value over the warmup
span, then cosine decay from the peak to zero at the final step. EMA teacher
momentum: linear ramp between its start and end values over the whole run.
"""

from __future__ import annotations

import math


def lr_at(
    step: int,
    total_steps: int,
    *,
    init_lr: float,
    peak_lr: float,
    warmup_steps: int,
) -> float:
    """Learning rate at an integer step in [0, total_steps]."""
    _check_step(step, total_steps)
    if not 0 <= warmup_steps <= total_steps:
        raise ValueError(
            f"warmup_steps must lie in [0, {total_steps}], got {warmup_steps}"
        )
    if init_lr > peak_lr:
        raise ValueError(f"init_lr {init_lr} exceeds peak_lr {peak_lr}")
    if step < warmup_steps:
        return init_lr + (peak_lr - init_lr) * step / warmup_steps
    if total_steps == warmup_steps:
        return peak_lr
    frac = (step - warmup_steps) / (total_steps - warmup_steps)
    return peak_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def ema_momentum_at(
    step: int,
    total_steps: int,
    *,
    start: float = 0.996,
    end: float = 0.999,
) -> float:
    """EMA momentum linearly interpolated from start to end over the run."""
    _check_step(step, total_steps)
    if total_steps == 0:
        return end
    return start + (end - start) * step / total_steps


def _check_step(step: int, total_steps: int) -> None:
    if total_steps < 0:
        raise ValueError(f"total_steps must be >= 0, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
