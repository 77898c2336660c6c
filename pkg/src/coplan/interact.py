"""Fixed-point interactive inference: the world predictor and the action
denoiser refine each other's outputs over K rounds.

Round 0 samples an initial hypothesis from the INIT-role denoiser given the
current scene latents (optionally conditioned on a prompt trajectory). Each
refinement round then (a) rolls the world predictor forward conditioned on
the current best action mode and (b) re-denoises the action chunk with the
REFINE role, cross-attending to the rolled-out world and to the previous
hypothesis. Severing either direction of the coupling is supported exactly:

* world_to_action=False (or t_w=0): the predictor is never invoked; refine
  rounds condition on the current latents instead, so results are bitwise
  invariant to predictor weights.
* action_to_world=False: the predictor receives a zeroed action embedding;
  its rollout is computed once and reused from a cache on later rounds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .diffusion import CosineSchedule, denormalize_poses, dpm_solver_sample
from .models.condition import ConditionEncoder, status_features
from .models.denoiser import ActionDenoiser, Role
from .models.predictor import WorldPredictor
from .models.resampler import Resampler
from .models.backbone import VideoEncoder


@dataclass(frozen=True)
class InteractionConfig:
    rounds: int = 4  # K refinement rounds
    t_w: int = 8  # rollout horizon in frames (0 = no rollout)
    world_to_action: bool = True
    action_to_world: bool = True
    sample_steps: int = 5
    mode: str = "from_scratch"  # or "refine_prompt"

    def __post_init__(self) -> None:
        if self.rounds < 0:
            raise ValueError(f"rounds must be >= 0, got {self.rounds}")
        if self.t_w < 0:
            raise ValueError(f"t_w must be >= 0, got {self.t_w}")
        if self.rounds >= 1 and self.world_to_action and self.t_w < 1:
            raise ValueError(
                "refinement rounds with world_to_action need t_w >= 1; "
                "set world_to_action=False to refine on current latents"
            )
        if self.mode not in ("from_scratch", "refine_prompt"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.sample_steps < 1:
            raise ValueError(f"sample_steps must be >= 1, got {self.sample_steps}")


@dataclass
class PlannerModels:
    """Bundle of the trained modules used at inference."""

    encoder: VideoEncoder
    resampler: Resampler | None
    condition: ConditionEncoder
    predictor: WorldPredictor | None
    denoiser: ActionDenoiser
    schedule: CosineSchedule
    use_latents: bool = True  # False: denoiser consumes raw encoder tokens

    def modules(self) -> dict[str, torch.nn.Module]:
        out = {"encoder": self.encoder, "condition": self.condition, "denoiser": self.denoiser}
        if self.resampler is not None:
            out["resampler"] = self.resampler
        if self.predictor is not None:
            out["predictor"] = self.predictor
        return out

    def eval_mode(self) -> "PlannerModels":
        for m in self.modules().values():
            m.eval()
        return self


@dataclass
class HypothesisPair:
    """One (world, action) hypothesis produced at a refinement round."""

    action: torch.Tensor  # (B, K, H, 3), normalized units
    scores: torch.Tensor  # (B, K)
    world: torch.Tensor | None  # (B, T, M, d_latent) rollout, or None
    round_index: int


def _winner_action(pair: HypothesisPair) -> torch.Tensor:
    """Best-scoring mode of a hypothesis, (B, H, 3)."""
    b, _, h, _ = pair.action.shape
    sel = pair.scores.argmax(dim=1)[:, None, None, None].expand(b, 1, h, 3)
    return torch.gather(pair.action, 1, sel).squeeze(1)


def fixed_point_residual(a: HypothesisPair, b: HypothesisPair) -> float:
    """Self-consistency residual between consecutive hypotheses: the RMS
    difference of the winner-mode actions plus, when both rounds carry a
    world rollout, the RMS difference of the rollout tokens. A +1 offset in
    every action coordinate with identical worlds yields exactly 1; zero iff
    the pair is an exact fixed point.
    """
    if a.action.shape != b.action.shape:
        raise ValueError(
            f"action shapes differ: {tuple(a.action.shape)} vs {tuple(b.action.shape)}"
        )
    diff = _winner_action(b) - _winner_action(a)
    residual = float(torch.sqrt(torch.mean(diff**2)))
    if a.world is not None and b.world is not None:
        if a.world.shape != b.world.shape:
            raise ValueError(
                f"world shapes differ: {tuple(a.world.shape)} vs {tuple(b.world.shape)}"
            )
        residual += float(torch.sqrt(torch.mean((b.world - a.world) ** 2)))
    return residual


def sample_action_chunk(
    denoiser: ActionDenoiser,
    schedule: CosineSchedule,
    noise: torch.Tensor,
    role: Role,
    status: torch.Tensor,
    cond_tokens: torch.Tensor,
    world: torch.Tensor,
    prev_action: torch.Tensor | None,
    round_index: int,
    steps: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Run the diffusion sampler; returns (actions, scores of final call)."""
    final_scores: list[torch.Tensor] = []

    def model_fn(x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        pose, scores = denoiser(
            x,
            t,
            role=role,
            status=status,
            cond_tokens=cond_tokens,
            world=world,
            prev_action=prev_action,
            round_index=round_index,
        )
        final_scores.clear()
        final_scores.append(scores)
        return pose

    sample = dpm_solver_sample(model_fn, noise, schedule, steps)
    return sample, final_scores[0]


@torch.no_grad()
def infer_batch(
    models: PlannerModels,
    obs: torch.Tensor,
    command: torch.Tensor,
    speed: torch.Tensor,
    cfg: InteractionConfig,
    prompt: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> dict:
    """Plan for a batch of scenes.

    obs: (B, T, H, W, C) rendered history; command: (B,) long; speed: (B,)
    float; prompt: (B, H, 3) normalized ego-frame poses, required when
    cfg.mode == "refine_prompt".

    Returns a dict with 'trajectory' (B, H, 3) ego-frame poses at world
    scale, 'modes', 'scores', 'hypotheses' (one HypothesisPair per round,
    including round 0), 'residuals', and 'diagnostics'.
    """
    if cfg.mode == "refine_prompt" and prompt is None:
        raise ValueError("refine_prompt mode requires a prompt trajectory")
    if prompt is not None and (prompt.ndim != 3 or prompt.shape[-1] != 3):
        raise ValueError(f"prompt must be (B, H, 3), got {tuple(prompt.shape)}")

    den_cfg = models.denoiser.cfg
    b = obs.shape[0]
    u = models.encoder(obs)
    z = models.resampler.compress(u) if models.use_latents else u
    cond_tokens = models.condition(command, speed)
    status = status_features(command, speed)

    if cfg.world_to_action and cfg.t_w > 0 and models.predictor is None:
        raise ValueError("world_to_action requires a predictor")

    def draw_noise() -> torch.Tensor:
        return torch.randn(
            b, den_cfg.modes, den_cfg.horizon, 3, generator=generator, dtype=z.dtype
        )

    prev_for_init = prompt[:, None] if prompt is not None else None
    actions, scores = sample_action_chunk(
        models.denoiser, models.schedule, draw_noise(), Role.INIT, status,
        cond_tokens, z, prev_for_init, 0, cfg.sample_steps,
    )
    current = HypothesisPair(action=actions, scores=scores, world=None, round_index=0)
    hypotheses = [current]
    residuals: list[float] = []
    rollout_cache: dict = {}
    diagnostics = {"predictor_calls": 0, "rollout_cache_hits": 0}

    for r in range(cfg.rounds):
        use_world = cfg.world_to_action and cfg.t_w > 0
        if use_world:
            if cfg.action_to_world:
                action_in = _winner_action(current)
                key = action_in.numpy().tobytes()
            else:
                action_in = None
                key = None
            if key in rollout_cache:
                world_ctx = rollout_cache[key]
                diagnostics["rollout_cache_hits"] += 1
            else:
                world_ctx = models.predictor.rollout(z, cond_tokens, action_in, cfg.t_w)
                rollout_cache[key] = world_ctx
                diagnostics["predictor_calls"] += 1
        else:
            world_ctx = z

        actions, scores = sample_action_chunk(
            models.denoiser, models.schedule, draw_noise(), Role.REFINE, status,
            cond_tokens, world_ctx, current.action, r, cfg.sample_steps,
        )
        new = HypothesisPair(
            action=actions,
            scores=scores,
            world=world_ctx if use_world else None,
            round_index=r + 1,
        )
        residuals.append(fixed_point_residual(current, new))
        current = new
        hypotheses.append(current)

    best = current.scores.argmax(dim=1)
    final_norm = _winner_action(current)
    return {
        "trajectory": denormalize_poses(final_norm),
        "modes": denormalize_poses(current.action),
        "scores": current.scores,
        "best_mode": best,
        "hypotheses": hypotheses,
        "residuals": residuals,
        "diagnostics": diagnostics,
    }


def infer(
    models: PlannerModels,
    obs: torch.Tensor,
    command: int,
    speed: float,
    cfg: InteractionConfig,
    prompt: torch.Tensor | None = None,
    seed: int = 0,
) -> dict:
    """Single-scene convenience wrapper around infer_batch."""
    if obs.ndim == 4:
        obs = obs[None]
    gen = torch.Generator().manual_seed(seed)
    return infer_batch(
        models,
        obs,
        torch.tensor([command], dtype=torch.long),
        torch.tensor([speed], dtype=obs.dtype),
        cfg,
        prompt=prompt if prompt is None else prompt.reshape(1, -1, 3),
        generator=gen,
    )


def measure_latency(
    models: PlannerModels,
    cfg: InteractionConfig,
    n_trials: int = 10,
    warmup: int = 2,
    seed: int = 0,
) -> dict:
    """Wall-clock per-scene planning latency on a fixed synthetic input."""
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    enc = models.encoder.cfg
    obs = torch.zeros(1, enc.t_obs, enc.px, enc.px, enc.channels)
    models.eval_mode()
    times = []
    for trial in range(warmup + n_trials):
        gen = torch.Generator().manual_seed(seed + trial)
        t0 = time.perf_counter()
        infer_batch(
            models,
            obs,
            torch.tensor([0], dtype=torch.long),
            torch.tensor([2.0]),
            cfg,
            generator=gen,
        )
        dt = (time.perf_counter() - t0) * 1000.0
        if trial >= warmup:
            times.append(dt)
    arr = np.asarray(times)
    return {
        "mean_ms": float(arr.mean()),
        "std_ms": float(arr.std()),
        "min_ms": float(arr.min()),
        "n_trials": n_trials,
    }
