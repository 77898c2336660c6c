"""Four-stage training driver.

Stage 1 pretrains the video encoder with masked-latent regression against an
EMA teacher (skippable: later stages accept a random encoder). Stage 2 trains
the token resampler as an autoencoder on frozen encoder tokens, with an
auxiliary diffusion planner head (private denoiser + condition encoder,
discarded afterwards) that shapes the latents for planning. Stage 3 trains
the world predictor teacher-forced against teacher-branch latents of the
future windows, with the encoder and resampler frozen. Stage 4 jointly
trains the denoiser, condition encoder, and predictor: per batch it computes
proposal- and init-role denoising losses on the current latents, then plays
out detached refinement rounds — sample a hypothesis, roll out the world
conditioned on its best mode, and score a refine-role denoising loss on the
(gradient-carrying) rollout plus a rollout MSE against the teacher targets.

Every stage runs AdamW with a warmup+cosine learning-rate schedule, writes a
per-step loss CSV, and saves a checkpoint directory whose manifest records
held-out losses measured with fixed evaluation noise before and after
training, so identical runs can be compared exactly.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..diffusion import CosineSchedule, q_sample
from ..interact import PlannerModels, sample_action_chunk
from ..models.backbone import ema_update, make_teacher, pretrain_step
from ..models.condition import ConditionConfig, ConditionEncoder, status_features
from ..models.denoiser import ActionDenoiser, Role, planning_loss
from ..models.predictor import WorldPredictor
from .checkpoint import (
    append_losses,
    load_manifest,
    load_modules,
    require_stage,
    save_checkpoint,
    state_fingerprint,
)
from .data import N_WINDOWS, DeskDataset, PlanningBatch, iter_batches, split_indices
from .schedules import ema_momentum_at, lr_at

_WEIGHT_DEFAULTS: dict[int, dict[str, float]] = {
    1: {"pretrain": 1.0},
    2: {"recon": 1.0, "aux": 0.5},
    3: {"world": 1.0},
    4: {"init": 1.0, "proposal": 1.0, "refine": 1.0, "world": 1.0},
}

LATENT_CACHE_FILE = "latents.npz"


@dataclass
class StageConfig:
    stage: int
    epochs: int = 10
    batch_size: int = 32
    peak_lr: float = 1e-4
    init_lr: float = 5e-5
    warmup_epochs: int = 8
    weight_decay: float = 0.04
    ema_start: float = 0.996
    ema_end: float = 0.999
    loss_weights: dict[str, float] = field(default_factory=dict)
    refine_rounds: int = 4  # stage 4: training-time refinement rounds R
    t_w: int = 8  # stages 3/4: rollout horizon in frames
    action_to_world: bool = True  # stage 4: condition rollouts on the hypothesis
    mask_ratio: float = 0.5  # stage 1: fraction of scored token positions
    prompt_prob: float = 0.5  # stage 4: chance the init role sees a prompt
    prompt_sigma: float = 0.1  # stage 4: prompt noise, normalized units
    sample_steps: int = 5  # stage 4: sampler budget for hypothesis advancement
    holdout_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.stage not in (1, 2, 3, 4):
            raise ValueError(f"stage must be 1..4, got {self.stage}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.init_lr > self.peak_lr:
            raise ValueError(
                f"init_lr {self.init_lr} must not exceed peak_lr {self.peak_lr}"
            )
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError(
                f"warmup_epochs must lie in [0, epochs={self.epochs}], "
                f"got {self.warmup_epochs}"
            )
        if not 0.0 <= self.ema_start <= self.ema_end <= 1.0:
            raise ValueError(
                f"need 0 <= ema_start <= ema_end <= 1, got "
                f"{self.ema_start}, {self.ema_end}"
            )
        unknown = set(self.loss_weights) - set(_WEIGHT_DEFAULTS[self.stage])
        if unknown:
            raise ValueError(
                f"unknown loss_weights for stage {self.stage}: {sorted(unknown)}; "
                f"known: {sorted(_WEIGHT_DEFAULTS[self.stage])}"
            )
        bad = {k: v for k, v in self.loss_weights.items() if v < 0}
        if bad:
            raise ValueError(f"loss weights must be >= 0, got {bad}")
        if self.refine_rounds < 0:
            raise ValueError(f"refine_rounds must be >= 0, got {self.refine_rounds}")
        if self.stage == 3 and self.t_w < 1:
            raise ValueError(f"t_w must be >= 1 for the predictor stage, got {self.t_w}")
        if self.t_w < 0:
            raise ValueError(f"t_w must be >= 0, got {self.t_w}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if not 0.0 <= self.prompt_prob <= 1.0:
            raise ValueError(f"prompt_prob must lie in [0, 1], got {self.prompt_prob}")
        if self.prompt_sigma < 0:
            raise ValueError(f"prompt_sigma must be >= 0, got {self.prompt_sigma}")
        if self.sample_steps < 1:
            raise ValueError(f"sample_steps must be >= 1, got {self.sample_steps}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError(
                f"holdout_fraction must lie in (0, 1), got {self.holdout_fraction}"
            )

    def resolved_weights(self) -> dict[str, float]:
        """Stage defaults overridden by any explicit loss_weights entries."""
        out = dict(_WEIGHT_DEFAULTS[self.stage])
        out.update(self.loss_weights)
        return out


def seed_from(*parts: int) -> int:
    """Well-mixed 32-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint32)[0])


def draw_timesteps(n: int, n_steps: int, generator: torch.Generator) -> torch.Tensor:
    """n uniform integer timesteps over [0, n_steps)."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    return torch.randint(0, n_steps, (n,), generator=generator)


def denoiser_planning_loss(
    denoiser: ActionDenoiser,
    schedule: CosineSchedule,
    expert: torch.Tensor,
    status: torch.Tensor,
    cond_tokens: torch.Tensor,
    world: torch.Tensor,
    *,
    role: Role,
    generator: torch.Generator,
    prev_action: torch.Tensor | None = None,
    round_index: int = 0,
) -> tuple[torch.Tensor, dict[str, float]]:
    """One denoising training term: noise the expert chunk at a random
    timestep (tiled across modes, independent noise per mode), predict the
    clean actions, and score the winner-takes-all planning loss."""
    b, h, _ = expert.shape
    k = denoiser.cfg.modes
    t = draw_timesteps(b, schedule.n_steps, generator)
    noise = torch.randn(b, k, h, 3, generator=generator, dtype=expert.dtype)
    x_t = q_sample(expert[:, None].expand(b, k, h, 3), t, noise, schedule)
    pred, scores = denoiser(
        x_t,
        t.to(expert.dtype),
        role=role,
        status=status,
        cond_tokens=cond_tokens,
        world=world,
        prev_action=prev_action,
        round_index=round_index,
    )
    return planning_loss(pred, scores, expert)


@dataclass
class AuxPlanner:
    """Private planner head used only while training the resampler."""

    denoiser: ActionDenoiser
    condition: ConditionEncoder
    schedule: CosineSchedule

    def modules(self) -> dict[str, torch.nn.Module]:
        return {"aux_denoiser": self.denoiser, "aux_condition": self.condition}


def stage2_step(
    encoder: torch.nn.Module,
    resampler: torch.nn.Module,
    aux: AuxPlanner,
    batch: PlanningBatch,
    generator: torch.Generator,
    recon_obs: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Resampler losses for one batch: token reconstruction MSE (on
    `recon_obs` when given, else the planning observation) and the auxiliary
    diffusion-planner loss on the compressed planning-observation latents.
    The encoder is consumed frozen (no gradients flow into it)."""
    with torch.no_grad():
        u0 = encoder(batch.obs)
        u_recon = u0 if recon_obs is None else encoder(recon_obs)
    recon = torch.mean((resampler(u_recon) - u_recon) ** 2)
    z0 = resampler.compress(u0)
    cond = aux.condition(batch.command, batch.speed)
    status = status_features(batch.command, batch.speed)
    aux_loss, _ = denoiser_planning_loss(
        aux.denoiser,
        aux.schedule,
        batch.expert_norm,
        status,
        cond,
        z0,
        role=Role.PROPOSAL,
        generator=generator,
    )
    return recon, aux_loss


def _freeze(*modules: torch.nn.Module | None) -> None:
    for m in modules:
        if m is None:
            continue
        m.eval()
        for p in m.parameters():
            p.requires_grad_(False)


def _unfreeze(*modules: torch.nn.Module | None) -> None:
    for m in modules:
        if m is None:
            continue
        m.train()
        for p in m.parameters():
            p.requires_grad_(True)


def _winner(actions: torch.Tensor, scores: torch.Tensor) -> torch.Tensor:
    """Best-scoring mode, (B, H, 3)."""
    b, _, h, _ = actions.shape
    sel = scores.argmax(dim=1)[:, None, None, None].expand(b, 1, h, 3)
    return torch.gather(actions, 1, sel).squeeze(1)


def _latent_cache_key(models: PlannerModels, teachers: dict, dataset: DeskDataset) -> str:
    frozen = {"encoder": models.encoder, **teachers}
    if models.resampler is not None:
        frozen["resampler"] = models.resampler
    h = hashlib.sha256()
    h.update(state_fingerprint(frozen).encode())
    h.update(dataset.fingerprint.encode())
    h.update(str(N_WINDOWS).encode())
    return h.hexdigest()


def _encode_all(
    models: PlannerModels,
    teachers: dict[str, torch.nn.Module],
    dataset: DeskDataset,
    *,
    need_targets: bool,
    chunk: int = 32,
) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Frozen-branch latents for every episode: current-window context z0
    (N, M, d) and, when requested, teacher-branch targets for the future
    windows (N, N_WINDOWS-1, M, d)."""
    z0_parts: list[torch.Tensor] = []
    tar_parts: list[torch.Tensor] = []
    with torch.no_grad():
        for start in range(0, len(dataset), chunk):
            idx = np.arange(start, min(start + chunk, len(dataset)))
            if need_targets:
                wins = dataset.all_windows(idx)
                u0 = models.encoder(wins[:, 0])
                z0_parts.append(
                    models.resampler.compress(u0) if models.use_latents else u0
                )
                per_window = [
                    teachers["resampler_teacher"].compress(
                        teachers["encoder_teacher"](wins[:, j])
                    )
                    for j in range(1, N_WINDOWS)
                ]
                tar_parts.append(torch.stack(per_window, dim=1))
            else:
                u0 = models.encoder(dataset.observations(idx, window=0))
                z0_parts.append(
                    models.resampler.compress(u0)
                    if models.use_latents and models.resampler is not None
                    else u0
                )
    z0 = torch.cat(z0_parts)
    return z0, torch.cat(tar_parts) if need_targets else None


class _StageRunner:
    """Per-stage behavior behind the shared run_stage loop."""

    loss_name = "loss"

    def __init__(
        self,
        cfg: StageConfig,
        models: PlannerModels,
        dataset: DeskDataset,
        ckpt_in: str | Path | None,
    ):
        self.cfg = cfg
        self.models = models
        self.dataset = dataset
        self.weights = cfg.resolved_weights()
        self.provenance: list[str] = []
        self.trained: dict[str, torch.nn.Module] = {}
        self.saved: dict[str, torch.nn.Module] = {}
        self.eval_seed = seed_from(cfg.seed, cfg.stage, 0xE7A1)

    def _load_upstream(
        self,
        ckpt_in: str | Path,
        groups: dict[str, torch.nn.Module],
        expected_stage: int,
    ) -> None:
        manifest = load_manifest(ckpt_in)
        require_stage(manifest, expected_stage)
        load_modules(ckpt_in, groups)
        self.provenance = list(manifest["provenance"])

    def _eval_generator(self) -> torch.Generator:
        return torch.Generator().manual_seed(self.eval_seed)

    def _planning_inputs(self, idx: np.ndarray):
        cmd = torch.from_numpy(self.dataset.command[idx])
        spd = torch.from_numpy(self.dataset.speed[idx])
        expert = torch.from_numpy(self.dataset.expert_norm[idx])
        return cmd, spd, expert

    def prepare(self) -> None:
        """Heavy one-time setup (latent precomputation)."""

    def step(
        self, idx: np.ndarray, gen: torch.Generator
    ) -> tuple[torch.Tensor, dict[str, float]]:
        raise NotImplementedError

    def post_step(self, momentum: float) -> None:
        """EMA teacher updates, where the stage maintains one."""

    def holdout_loss(self, idx: np.ndarray) -> float:
        raise NotImplementedError

    def extra_metrics(self) -> dict:
        return {}

    def save_extras(self, out_dir: Path) -> None:
        """Stage-specific artifacts written next to the checkpoint."""


class _Stage1(_StageRunner):
    def __init__(self, cfg, models, dataset, ckpt_in):
        super().__init__(cfg, models, dataset, ckpt_in)
        if ckpt_in is not None:
            raise ValueError(
                "encoder pretraining starts the checkpoint chain; "
                "it does not accept an input checkpoint"
            )
        self.teacher = make_teacher(models.encoder)
        _unfreeze(models.encoder)
        self.trained = {"encoder": models.encoder}
        self.saved = {"encoder": models.encoder, "encoder_teacher": self.teacher}

    def step(self, idx, gen):
        window = int(torch.randint(0, N_WINDOWS, (1,), generator=gen))
        clips = self.dataset.observations(idx, window)
        loss = pretrain_step(
            self.models.encoder, self.teacher, clips, self.cfg.mask_ratio, generator=gen
        )
        total = self.weights["pretrain"] * loss
        return total, {"pretrain": float(loss.detach())}

    def post_step(self, momentum):
        ema_update(self.teacher, self.models.encoder, momentum)

    def holdout_loss(self, idx):
        gen = self._eval_generator()
        total = 0.0
        with torch.no_grad():
            for bidx in iter_batches(idx, self.cfg.batch_size, np.random.default_rng(0), shuffle=False):
                clips = self.dataset.observations(bidx, window=0)
                loss = pretrain_step(
                    self.models.encoder, self.teacher, clips, self.cfg.mask_ratio, generator=gen
                )
                total += float(loss) * len(bidx)
        return total / len(idx)


class _Stage2(_StageRunner):
    def __init__(self, cfg, models, dataset, ckpt_in):
        super().__init__(cfg, models, dataset, ckpt_in)
        if models.resampler is None:
            raise ValueError("resampler training requires a resampler in the bundle")
        self.enc_teacher = make_teacher(models.encoder)
        if ckpt_in is not None:
            self._load_upstream(
                ckpt_in,
                {"encoder": models.encoder, "encoder_teacher": self.enc_teacher},
                expected_stage=1,
            )
        _freeze(models.encoder, self.enc_teacher)
        self.res_teacher = make_teacher(models.resampler)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed_from(cfg.seed, cfg.stage, 0xA0C))
            self.aux = AuxPlanner(
                ActionDenoiser(models.denoiser.cfg),
                ConditionEncoder(ConditionConfig(d=models.denoiser.cfg.d_cond)),
                models.schedule,
            )
        _unfreeze(models.resampler, self.aux.denoiser, self.aux.condition)
        self.trained = {"resampler": models.resampler, **self.aux.modules()}
        self.saved = {
            "encoder": models.encoder,
            "encoder_teacher": self.enc_teacher,
            "resampler": models.resampler,
            "resampler_teacher": self.res_teacher,
        }

    def step(self, idx, gen):
        window = int(torch.randint(0, N_WINDOWS, (1,), generator=gen))
        batch = self.dataset.planning_batch(idx)
        recon_obs = self.dataset.observations(idx, window) if window != 0 else None
        recon, aux_loss = stage2_step(
            self.models.encoder, self.models.resampler, self.aux, batch, gen, recon_obs
        )
        total = self.weights["recon"] * recon + self.weights["aux"] * aux_loss
        return total, {"recon": float(recon.detach()), "aux": float(aux_loss.detach())}

    def post_step(self, momentum):
        ema_update(self.res_teacher, self.models.resampler, momentum)

    def holdout_loss(self, idx):
        """Held-out reconstruction MSE on the planning window (noise-free)."""
        total = 0.0
        with torch.no_grad():
            for bidx in iter_batches(idx, self.cfg.batch_size, np.random.default_rng(0), shuffle=False):
                u = self.models.encoder(self.dataset.observations(bidx, window=0))
                recon = torch.mean((self.models.resampler(u) - u) ** 2)
                total += float(recon) * len(bidx)
        return total / len(idx)


class _Stage3(_StageRunner):
    def __init__(self, cfg, models, dataset, ckpt_in):
        super().__init__(cfg, models, dataset, ckpt_in)
        if models.resampler is None or models.predictor is None:
            raise ValueError(
                "world-predictor training requires both a resampler and a predictor"
            )
        if ckpt_in is None:
            raise ValueError(
                "world-predictor training requires the trained autoencoder checkpoint"
            )
        if not 1 <= cfg.t_w <= min(models.predictor.cfg.t_w_max, N_WINDOWS - 1):
            raise ValueError(
                f"t_w={cfg.t_w} outside [1, {min(models.predictor.cfg.t_w_max, N_WINDOWS - 1)}]"
            )
        self.teachers = {
            "encoder_teacher": make_teacher(models.encoder),
            "resampler_teacher": make_teacher(models.resampler),
        }
        self._load_upstream(
            ckpt_in,
            {"encoder": models.encoder, "resampler": models.resampler, **self.teachers},
            expected_stage=2,
        )
        _freeze(models.encoder, models.resampler, *self.teachers.values())
        _unfreeze(models.predictor, models.condition)
        self.trained = {"predictor": models.predictor, "condition": models.condition}
        self.saved = {
            "encoder": models.encoder,
            "resampler": models.resampler,
            **self.teachers,
            "predictor": models.predictor,
            "condition": models.condition,
        }
        self.z0: torch.Tensor | None = None
        self.z_tar: torch.Tensor | None = None

    def prepare(self):
        self.z0, self.z_tar = _encode_all(
            self.models, self.teachers, self.dataset, need_targets=True
        )

    def _world_loss(self, idx: np.ndarray) -> torch.Tensor:
        tidx = torch.as_tensor(idx, dtype=torch.long)
        cmd, spd, _ = self._planning_inputs(idx)
        c = self.models.condition(cmd, spd)
        target = self.z_tar[tidx][:, : self.cfg.t_w]
        pred = self.models.predictor.forward_teacher_forced(
            self.z0[tidx], c, None, target
        )
        return WorldPredictor.rollout_loss(pred, target)

    def step(self, idx, gen):
        loss = self._world_loss(idx)
        total = self.weights["world"] * loss
        return total, {"world": float(loss.detach())}

    def holdout_loss(self, idx):
        total = 0.0
        with torch.no_grad():
            for bidx in iter_batches(idx, self.cfg.batch_size, np.random.default_rng(0), shuffle=False):
                total += float(self._world_loss(bidx)) * len(bidx)
        return total / len(idx)

    def save_extras(self, out_dir):
        key = _latent_cache_key(self.models, self.teachers, self.dataset)
        np.savez(
            out_dir / LATENT_CACHE_FILE,
            z0=self.z0.numpy(),
            z_tar=self.z_tar.numpy(),
            key=np.array(key),
        )


class _Stage4(_StageRunner):
    def __init__(self, cfg, models, dataset, ckpt_in):
        super().__init__(cfg, models, dataset, ckpt_in)
        self.ckpt_in = Path(ckpt_in) if ckpt_in is not None else None
        self.teachers: dict[str, torch.nn.Module] = {}
        if models.predictor is not None:
            if ckpt_in is None:
                raise ValueError(
                    "joint training with a world predictor requires the "
                    "trained predictor checkpoint"
                )
            if cfg.refine_rounds > 0 and not 1 <= cfg.t_w <= min(
                models.predictor.cfg.t_w_max, N_WINDOWS - 1
            ):
                raise ValueError(
                    f"t_w={cfg.t_w} outside "
                    f"[1, {min(models.predictor.cfg.t_w_max, N_WINDOWS - 1)}]"
                )
            self.teachers = {
                "encoder_teacher": make_teacher(models.encoder),
                "resampler_teacher": make_teacher(models.resampler),
            }
            self._load_upstream(
                ckpt_in,
                {
                    "encoder": models.encoder,
                    "resampler": models.resampler,
                    **self.teachers,
                    "predictor": models.predictor,
                    "condition": models.condition,
                },
                expected_stage=3,
            )
        elif models.resampler is not None:
            if ckpt_in is None:
                raise ValueError(
                    "joint training on resampler latents requires the "
                    "trained autoencoder checkpoint"
                )
            self.teachers = {
                "encoder_teacher": make_teacher(models.encoder),
                "resampler_teacher": make_teacher(models.resampler),
            }
            self._load_upstream(
                ckpt_in,
                {"encoder": models.encoder, "resampler": models.resampler, **self.teachers},
                expected_stage=2,
            )
        else:
            if cfg.refine_rounds > 0:
                raise ValueError("refine_rounds > 0 requires a world predictor")
            if ckpt_in is not None:
                enc_teacher = make_teacher(models.encoder)
                self.teachers = {"encoder_teacher": enc_teacher}
                self._load_upstream(
                    ckpt_in,
                    {"encoder": models.encoder, "encoder_teacher": enc_teacher},
                    expected_stage=1,
                )
        if models.predictor is None and cfg.refine_rounds > 0:
            raise ValueError("refine_rounds > 0 requires a world predictor")

        _freeze(models.encoder, models.resampler, *self.teachers.values())
        _unfreeze(models.denoiser, models.condition, models.predictor)
        self.trained = {"denoiser": models.denoiser, "condition": models.condition}
        if models.predictor is not None:
            self.trained["predictor"] = models.predictor
        self.saved = dict(models.modules())
        self.saved.update(self.teachers)
        self.z0: torch.Tensor | None = None
        self.z_tar: torch.Tensor | None = None

    def prepare(self):
        need_targets = self.models.predictor is not None and self.cfg.refine_rounds > 0
        if need_targets:
            key = _latent_cache_key(self.models, self.teachers, self.dataset)
            cache = self.ckpt_in / LATENT_CACHE_FILE
            if cache.exists():
                with np.load(cache) as d:
                    if str(d["key"]) == key:
                        self.z0 = torch.from_numpy(d["z0"])
                        self.z_tar = torch.from_numpy(d["z_tar"])
                        return
            self.z0, self.z_tar = _encode_all(
                self.models, self.teachers, self.dataset, need_targets=True
            )
        else:
            self.z0, _ = _encode_all(
                self.models, self.teachers, self.dataset, need_targets=False
            )

    def _denoise(self, expert, status, c, world, *, role, gen, prev=None, round_index=0):
        return denoiser_planning_loss(
            self.models.denoiser,
            self.models.schedule,
            expert,
            status,
            c,
            world,
            role=role,
            generator=gen,
            prev_action=prev,
            round_index=round_index,
        )

    def step(self, idx, gen):
        cfg = self.cfg
        den = self.models.denoiser
        tidx = torch.as_tensor(idx, dtype=torch.long)
        cmd, spd, expert = self._planning_inputs(idx)
        z = self.z0[tidx]
        c = self.models.condition(cmd, spd)
        status = status_features(cmd, spd)
        b, h = expert.shape[0], expert.shape[1]

        l_prop, _ = self._denoise(expert, status, c, z, role=Role.PROPOSAL, gen=gen)
        prompt = None
        if float(torch.rand((), generator=gen)) < cfg.prompt_prob:
            jitter = torch.randn(expert.shape, generator=gen, dtype=expert.dtype)
            prompt = (expert + cfg.prompt_sigma * jitter)[:, None]
        l_init, _ = self._denoise(
            expert, status, c, z, role=Role.INIT, gen=gen, prev=prompt
        )
        total = self.weights["proposal"] * l_prop + self.weights["init"] * l_init
        parts = {"proposal": float(l_prop.detach()), "init": float(l_init.detach())}

        if cfg.refine_rounds > 0:
            target = self.z_tar[tidx][:, : cfg.t_w]
            k = den.cfg.modes
            with torch.no_grad():
                noise = torch.randn(b, k, h, 3, generator=gen, dtype=expert.dtype)
                act, sc = sample_action_chunk(
                    den, self.models.schedule, noise, Role.PROPOSAL,
                    status, c, z, None, 0, cfg.sample_steps,
                )
            refine_terms, world_terms = [], []
            for r in range(cfg.refine_rounds):
                a_in = _winner(act, sc) if cfg.action_to_world else None
                roll = self.models.predictor.rollout(z, c, a_in, cfg.t_w)
                world_terms.append(WorldPredictor.rollout_loss(roll, target))
                # Random rollout-prefix length so every inference horizon
                # (including none: refine on the current latents) is trained.
                t_r = int(torch.randint(0, cfg.t_w + 1, (1,), generator=gen))
                w_ctx = z if t_r == 0 else roll[:, :t_r]
                l_ref, _ = self._denoise(
                    expert, status, c, w_ctx, role=Role.REFINE, gen=gen,
                    prev=act, round_index=r,
                )
                refine_terms.append(l_ref)
                if r + 1 < cfg.refine_rounds:
                    with torch.no_grad():
                        w_det = z if t_r == 0 else roll[:, :t_r].detach()
                        noise = torch.randn(b, k, h, 3, generator=gen, dtype=expert.dtype)
                        act, sc = sample_action_chunk(
                            den, self.models.schedule, noise, Role.REFINE,
                            status, c, w_det, act, r, cfg.sample_steps,
                        )
            l_refine = sum(refine_terms) / cfg.refine_rounds
            l_world = sum(world_terms) / cfg.refine_rounds
            total = total + self.weights["refine"] * l_refine
            total = total + self.weights["world"] * l_world
            parts["refine"] = float(l_refine.detach())
            parts["world"] = float(l_world.detach())
        return total, parts

    def holdout_loss(self, idx):
        """Held-out proposal-role denoising loss with fixed evaluation noise."""
        gen = self._eval_generator()
        total = 0.0
        with torch.no_grad():
            for bidx in iter_batches(idx, self.cfg.batch_size, np.random.default_rng(0), shuffle=False):
                tidx = torch.as_tensor(bidx, dtype=torch.long)
                cmd, spd, expert = self._planning_inputs(bidx)
                c = self.models.condition(cmd, spd)
                status = status_features(cmd, spd)
                loss, _ = self._denoise(
                    expert, status, c, self.z0[tidx], role=Role.PROPOSAL, gen=gen
                )
                total += float(loss) * len(bidx)
        return total / len(idx)


_RUNNERS = {1: _Stage1, 2: _Stage2, 3: _Stage3, 4: _Stage4}


def run_stage(
    cfg: StageConfig,
    models: PlannerModels,
    dataset: DeskDataset,
    out_dir: str | Path,
    ckpt_in: str | Path | None = None,
) -> dict:
    """Train one stage and write a checkpoint directory; returns the manifest.

    Aborts with RuntimeError (carrying the loss breakdown) the moment any
    training loss turns non-finite.
    """
    out = Path(out_dir)
    runner = _RUNNERS[cfg.stage](cfg, models, dataset, ckpt_in)
    runner.prepare()
    train_idx, holdout_idx = split_indices(
        len(dataset), cfg.holdout_fraction, cfg.seed
    )

    params = [p for m in runner.trained.values() for p in m.parameters()]
    opt = torch.optim.AdamW(params, lr=cfg.init_lr, weight_decay=cfg.weight_decay)
    steps_per_epoch = math.ceil(len(train_idx) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = cfg.warmup_epochs * steps_per_epoch
    gen = torch.Generator().manual_seed(seed_from(cfg.seed, cfg.stage, 1))

    holdout_init = runner.holdout_loss(holdout_idx)
    out.mkdir(parents=True, exist_ok=True)
    (out / "losses.csv").unlink(missing_ok=True)

    t_start = time.perf_counter()
    step = 0
    for epoch in range(cfg.epochs):
        rows: list[tuple[int, int, str, float]] = []
        epoch_rng = np.random.default_rng([cfg.seed, 17, epoch])
        for bidx in iter_batches(train_idx, cfg.batch_size, epoch_rng):
            lr = lr_at(
                step,
                total_steps,
                init_lr=cfg.init_lr,
                peak_lr=cfg.peak_lr,
                warmup_steps=warmup_steps,
            )
            for group in opt.param_groups:
                group["lr"] = lr
            total, parts = runner.step(bidx, gen)
            value = float(total.detach())
            if not math.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss at stage {cfg.stage}, epoch {epoch}, "
                    f"step {step}: total={value}, parts={parts}"
                )
            opt.zero_grad(set_to_none=True)
            total.backward()
            opt.step()
            runner.post_step(
                ema_momentum_at(
                    step, total_steps, start=cfg.ema_start, end=cfg.ema_end
                )
            )
            rows.append((step, cfg.stage, "total", value))
            rows.extend((step, cfg.stage, name, v) for name, v in parts.items())
            step += 1
        append_losses(out, rows)

    holdout_final = runner.holdout_loss(holdout_idx)
    metrics = {
        "holdout_loss_init": holdout_init,
        "holdout_loss_final": holdout_final,
        "train_steps": total_steps,
        "train_seconds": time.perf_counter() - t_start,
        **runner.extra_metrics(),
    }
    gen_digest = hashlib.sha256(gen.get_state().numpy().tobytes()).hexdigest()
    manifest = save_checkpoint(
        out,
        stage=cfg.stage,
        modules=runner.saved,
        config=asdict(cfg),
        provenance=runner.provenance,
        metrics=metrics,
        rng={"seed": cfg.seed, "generator_state_sha256": gen_digest},
    )
    runner.save_extras(out)
    return manifest
