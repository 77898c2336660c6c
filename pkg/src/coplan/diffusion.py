"""Cosine noise schedule and a data-prediction DPM-Solver++(2M) sampler.

The forward process is x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps over
n_train_steps discrete indices, with the squared-cosine schedule

    abar_t = f(t / (T-1)) / f(0),   f(u) = cos(((u + s) / (1 + s)) * pi/2)^2

so abar_0 == 1 exactly. A small floor keeps the tail positive; the floor is
chosen below the next-to-last unclamped value so the sequence stays strictly
decreasing.

Sampling integrates the probability-flow ODE in log-SNR space
lambda = 0.5 * log(abar / (1 - abar)) on a uniform lambda grid with the
multistep second-order (midpoint) data-prediction update:

    first order:  x_t = (sigma_t / sigma_s) x_s - alpha_t (e^{-h} - 1) m_s
    second order: ... - 0.5 alpha_t (e^{-h} - 1) D1,  D1 = (m_s - m_prev)/r0

with h = lambda_t - lambda_s and r0 the previous-to-current interval ratio.
The model is evaluated `steps` times; the final evaluation's clean-data
prediction is returned (the exact h -> infinity limit of the update).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

POS_SCALE = 25.0  # meters; positions are normalized by this
YAW_SCALE = math.pi  # yaw is normalized to units of pi


@dataclass(frozen=True)
class DiffusionConfig:
    n_train_steps: int = 1000
    s: float = 0.008
    alpha_bar_min: float = 1e-6
    sample_steps: int = 5


class CosineSchedule:
    def __init__(self, cfg: DiffusionConfig | None = None):
        cfg = cfg or DiffusionConfig()
        self.cfg = cfg
        n, s = cfg.n_train_steps, cfg.s
        u = np.arange(n, dtype=np.float64) / (n - 1)
        f = np.cos(((u + s) / (1.0 + s)) * (np.pi / 2.0)) ** 2
        abar = np.maximum(f / f[0], cfg.alpha_bar_min)
        if abar[0] != 1.0:
            raise AssertionError("alpha_bar[0] must be exactly 1")
        if not np.all(np.diff(abar) < 0.0):
            raise AssertionError("alpha_bar must be strictly decreasing")
        self.alpha_bar = abar
        self.lambdas = 0.5 * np.log(abar / (1.0 - abar + 1e-300))
        # lambda at t=0 is +inf in theory; the table entry is finite only
        # because abar[0]=1 makes it degenerate, so index 0 is never used as
        # a sampling grid point.
        self.lambdas[0] = np.inf

    @property
    def n_steps(self) -> int:
        return self.cfg.n_train_steps

    def alpha_bar_at(self, t: torch.Tensor) -> torch.Tensor:
        """abar at integer timestep indices t (validated)."""
        if t.min() < 0 or t.max() >= self.n_steps:
            raise ValueError(
                f"timestep indices must lie in [0, {self.n_steps - 1}]"
            )
        table = torch.from_numpy(self.alpha_bar).to(t.device)
        return table[t.long()]

    def index_for_lambda(self, lam: np.ndarray) -> np.ndarray:
        """Fractional timestep index with the given log-SNR (monotone interp)."""
        # lambdas decrease with index (index 0 excluded); interp wants
        # increasing x, so flip.
        lam_table = self.lambdas[1:]
        idx = np.interp(lam, lam_table[::-1], np.arange(1, self.n_steps)[::-1].astype(float))
        return idx


def q_sample(
    x0: torch.Tensor, t: torch.Tensor, noise: torch.Tensor, schedule: CosineSchedule
) -> torch.Tensor:
    """Forward diffusion: x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) noise."""
    if x0.shape != noise.shape:
        raise ValueError(f"x0 {tuple(x0.shape)} and noise {tuple(noise.shape)} differ")
    if t.shape != (x0.shape[0],):
        raise ValueError(f"t must be (B,), got {tuple(t.shape)}")
    abar = schedule.alpha_bar_at(t).to(x0.dtype)
    shape = (-1,) + (1,) * (x0.ndim - 1)
    a = torch.sqrt(abar).reshape(shape)
    sig = torch.sqrt(1.0 - abar).reshape(shape)
    return a * x0 + sig * noise


def dpm_solver_sample(
    model_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    noise: torch.Tensor,
    schedule: CosineSchedule,
    steps: int | None = None,
) -> torch.Tensor:
    """Sample with DPM-Solver++(2M), data-prediction parameterization.

    model_fn(x, t) -> predicted clean data, where t is a (B,) tensor of
    (possibly fractional) timestep indices. noise is a standard normal draw
    of the target shape. Uses `steps` model evaluations on a uniform log-SNR
    grid from the noisiest index to index 1; the last evaluation's
    prediction is the sample.
    """
    steps = schedule.cfg.sample_steps if steps is None else steps
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    b = noise.shape[0]
    device, dtype = noise.device, noise.dtype

    if steps == 1:
        t = torch.full((b,), float(schedule.n_steps - 1), device=device, dtype=dtype)
        return model_fn(noise, t)

    lam_grid = np.linspace(
        schedule.lambdas[schedule.n_steps - 1], schedule.lambdas[1], steps
    )
    idx_grid = schedule.index_for_lambda(lam_grid)
    # alpha/sigma from lambda: alpha^2 = sigmoid(2 lambda), sigma^2 = 1 - alpha^2.
    alphas = np.sqrt(1.0 / (1.0 + np.exp(-2.0 * lam_grid)))
    sigmas = np.sqrt(1.0 / (1.0 + np.exp(2.0 * lam_grid)))

    x = noise
    m_prev: torch.Tensor | None = None
    for i in range(steps):
        t = torch.full((b,), float(idx_grid[i]), device=device, dtype=dtype)
        m = model_fn(x, t)
        if i == steps - 1:
            return m
        h = float(lam_grid[i + 1] - lam_grid[i])
        coef_x = float(sigmas[i + 1] / sigmas[i])
        coef_m = float(alphas[i + 1] * (math.exp(-h) - 1.0))
        if m_prev is None:
            x = coef_x * x - coef_m * m
        else:
            r0 = float((lam_grid[i] - lam_grid[i - 1]) / h)
            d1 = (m - m_prev) / r0
            x = coef_x * x - coef_m * (m + 0.5 * d1)
        m_prev = m
    return x


def normalize_poses(poses: torch.Tensor) -> torch.Tensor:
    """(..., 3) world-scale poses -> normalized (positions /25 m, yaw /pi)."""
    if poses.shape[-1] != 3:
        raise ValueError(f"poses must end in 3 dims, got {tuple(poses.shape)}")
    scale = torch.tensor(
        [POS_SCALE, POS_SCALE, YAW_SCALE], device=poses.device, dtype=poses.dtype
    )
    return poses / scale


def denormalize_poses(poses: torch.Tensor) -> torch.Tensor:
    if poses.shape[-1] != 3:
        raise ValueError(f"poses must end in 3 dims, got {tuple(poses.shape)}")
    scale = torch.tensor(
        [POS_SCALE, POS_SCALE, YAW_SCALE], device=poses.device, dtype=poses.dtype
    )
    return poses * scale
