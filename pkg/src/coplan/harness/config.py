"""Experiment configuration.

One nested dataclass tree covers every module (rendering, model sizes,
stage schedules, evaluation), serializes to YAML/JSON, and is addressable
by dotted keys (``model.denoiser.d=64``). A single master seed propagates
into the model-init and per-stage seeds, so an experiment is identified by
its config fingerprint plus that one seed.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Sequence, get_origin, get_type_hints

import torch
import yaml

from ..diffusion import CosineSchedule, DiffusionConfig
from ..interact import InteractionConfig, PlannerModels
from ..models import (
    ActionDenoiser,
    ConditionConfig,
    ConditionEncoder,
    DenoiserConfig,
    EncoderConfig,
    PredictorConfig,
    Resampler,
    ResamplerConfig,
    VideoEncoder,
    WorldPredictor,
)
from ..synthworld import RenderConfig
from ..synthworld.types import T_FUTURE
from ..training import StageConfig, load_modules, seed_from

CONFIG_FILE = "config.yaml"


@dataclass
class EvalConfig:
    """Inference-time settings used by evaluation and sweeps."""

    rounds: int = 4
    t_w: int = 8  # rollout horizon in frames; 0 severs world->action
    world_to_action: bool = True
    action_to_world: bool = True
    sample_steps: int = 5
    mode: str = "from_scratch"
    batch_size: int = 64

    def interaction(self) -> InteractionConfig:
        return InteractionConfig(
            rounds=self.rounds,
            t_w=self.t_w,
            world_to_action=self.world_to_action and self.t_w > 0,
            action_to_world=self.action_to_world,
            sample_steps=self.sample_steps,
            mode=self.mode,
        )


@dataclass
class ModelConfig:
    """Architecture sizes plus the toggles that define the component presets."""

    seed: int = 0
    use_resampler: bool = True
    use_predictor: bool = True
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    resampler: ResamplerConfig = field(default_factory=ResamplerConfig)
    condition: ConditionConfig = field(default_factory=ConditionConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)


@dataclass
class ExperimentConfig:
    seed: int = 0
    render: RenderConfig = field(default_factory=RenderConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    stage1: StageConfig = field(default_factory=lambda: StageConfig(stage=1))
    stage2: StageConfig = field(default_factory=lambda: StageConfig(stage=2))
    stage3: StageConfig = field(default_factory=lambda: StageConfig(stage=3))
    stage4: StageConfig = field(default_factory=lambda: StageConfig(stage=4))
    eval: EvalConfig = field(default_factory=EvalConfig)


def to_dict(cfg) -> dict:
    """Plain nested dict (dataclasses expanded), suitable for YAML/JSON."""
    if not is_dataclass(cfg):
        raise TypeError(f"expected a dataclass, got {type(cfg).__name__}")
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = to_dict(v) if is_dataclass(v) else copy.deepcopy(v)
    return out


def _coerce(value, hint, path: str):
    origin = get_origin(hint)
    if origin is dict:
        if not isinstance(value, dict):
            raise ValueError(f"{path}: expected a mapping, got {type(value).__name__}")
        return {str(k): float(v) for k, v in value.items()}
    if hint is bool:
        if not isinstance(value, bool):
            raise ValueError(f"{path}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ValueError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data: dict, path: str = "config"):
    """Construct a (possibly nested) config dataclass, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping, got {type(data).__name__}")
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"{path}: unknown keys {unknown}; known: {sorted(known)}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        hint = hints[f.name]
        sub = f"{path}.{f.name}"
        if is_dataclass(hint):
            kwargs[f.name] = from_dict(hint, data[f.name], sub)
        else:
            kwargs[f.name] = _coerce(data[f.name], hint, sub)
    return cls(**kwargs)


def _deep_merge(base: dict, patch: dict, path: str = "config") -> dict:
    out = copy.deepcopy(base)
    for k, v in patch.items():
        if k in out and isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _deep_merge(out[k], v, f"{path}.{k}")
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    """Apply ``dotted.key=value`` overrides to a config dict. Values parse as
    YAML scalars; every path segment must already exist."""
    out = copy.deepcopy(data)
    for ov in overrides:
        key, sep, raw = ov.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"override must look like dotted.key=value, got {ov!r}")
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ValueError(f"unknown config section {p!r} in override {ov!r}")
            node = node[p]
        leaf = parts[-1]
        if leaf not in node:
            raise ValueError(f"unknown config key {key.strip()!r} in override {ov!r}")
        node[leaf] = yaml.safe_load(raw) if raw.strip() else ""
    return out


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Propagate the master seed into model init and every stage schedule."""
    return replace(
        cfg,
        seed=seed,
        model=replace(cfg.model, seed=seed),
        stage1=replace(cfg.stage1, seed=seed),
        stage2=replace(cfg.stage2, seed=seed),
        stage3=replace(cfg.stage3, seed=seed),
        stage4=replace(cfg.stage4, seed=seed),
    )


def config_fingerprint(cfg: ExperimentConfig | dict) -> str:
    """Configuration identity: sha256 over the canonical JSON form with all
    seeds normalized to zero (the seed travels in its own metrics column)."""
    data = to_dict(cfg) if is_dataclass(cfg) else copy.deepcopy(cfg)
    data["seed"] = 0
    data["model"]["seed"] = 0
    for k in ("stage1", "stage2", "stage3", "stage4"):
        data[k]["seed"] = 0
    return hashlib.sha256(
        json.dumps(data, sort_keys=True).encode()
    ).hexdigest()


def train_signature(cfg: ExperimentConfig) -> str:
    """Identity of the trained artifact: everything except the eval section,
    with the actual seed included."""
    data = to_dict(cfg)
    data.pop("eval")
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


def desk_small() -> ExperimentConfig:
    """Benchmark profile sized for single-core CPU training."""
    d = 64
    return ExperimentConfig(
        render=RenderConfig(px=64),
        model=ModelConfig(
            encoder=EncoderConfig(
                d_e=d, depth=2, n_heads=4, mlp_ratio=2.0, patch=8, tubelet=2,
                px=64, t_obs=4,
            ),
            resampler=ResamplerConfig(
                m_tokens=8, d=d, d_input=d, enc_depth=2, dec_depth=2, n_heads=4,
                mlp_ratio=2.0, max_input_tokens=128,
            ),
            condition=ConditionConfig(d=d),
            predictor=PredictorConfig(
                d=d, depth=2, n_heads=4, mlp_ratio=2.0, d_latent=d, m_tokens=8,
                d_cond=d, horizon=8, t_w_max=8,
            ),
            denoiser=DenoiserConfig(
                d=d, depth=2, n_heads=4, mlp_ratio=2.0, modes=6, horizon=8,
                d_latent=d, m_tokens=8, d_cond=d, status_dim=5, k_max=8,
                t_w_max=8, trained_rounds=2,
            ),
        ),
        stage1=StageConfig(
            stage=1, epochs=2, batch_size=64, peak_lr=3e-4, init_lr=1e-4,
            warmup_epochs=1,
        ),
        stage2=StageConfig(
            stage=2, epochs=4, batch_size=64, peak_lr=3e-4, init_lr=1e-4,
            warmup_epochs=1,
        ),
        stage3=StageConfig(
            stage=3, epochs=11, batch_size=64, peak_lr=3e-4, init_lr=1e-4,
            warmup_epochs=1, t_w=8,
        ),
        stage4=StageConfig(
            stage=4, epochs=6, batch_size=64, peak_lr=2e-4, init_lr=5e-5,
            warmup_epochs=1, refine_rounds=2, t_w=8, sample_steps=5,
        ),
        eval=EvalConfig(rounds=4, t_w=8, sample_steps=5, batch_size=64),
    )


def tiny() -> ExperimentConfig:
    """Minutes-scale profile for smoke tests and CI."""
    return ExperimentConfig(
        render=RenderConfig(px=32),
        model=ModelConfig(
            encoder=EncoderConfig(
                d_e=32, depth=1, n_heads=2, mlp_ratio=2.0, patch=8, tubelet=2,
                px=32, t_obs=4,
            ),
            resampler=ResamplerConfig(
                m_tokens=4, d=16, d_input=32, enc_depth=1, dec_depth=1,
                n_heads=2, mlp_ratio=2.0, max_input_tokens=32,
            ),
            condition=ConditionConfig(d=24),
            predictor=PredictorConfig(
                d=32, depth=1, n_heads=2, mlp_ratio=2.0, d_latent=16,
                m_tokens=4, d_cond=24, horizon=8, t_w_max=8,
            ),
            denoiser=DenoiserConfig(
                d=32, depth=1, n_heads=2, mlp_ratio=2.0, modes=3, horizon=8,
                d_latent=16, m_tokens=4, d_cond=24, status_dim=5, k_max=8,
                t_w_max=8, trained_rounds=2,
            ),
        ),
        stage1=StageConfig(
            stage=1, epochs=2, batch_size=4, peak_lr=1e-3, init_lr=5e-4,
            warmup_epochs=1, holdout_fraction=0.2,
        ),
        stage2=StageConfig(
            stage=2, epochs=2, batch_size=4, peak_lr=1e-3, init_lr=5e-4,
            warmup_epochs=1, holdout_fraction=0.2,
        ),
        stage3=StageConfig(
            stage=3, epochs=2, batch_size=4, peak_lr=1e-3, init_lr=5e-4,
            warmup_epochs=1, holdout_fraction=0.2, t_w=4,
        ),
        stage4=StageConfig(
            stage=4, epochs=2, batch_size=4, peak_lr=1e-3, init_lr=5e-4,
            warmup_epochs=1, holdout_fraction=0.2, refine_rounds=2, t_w=4,
            sample_steps=2,
        ),
        eval=EvalConfig(rounds=2, t_w=4, sample_steps=2, batch_size=8),
    )


PROFILES = {"desk_small": desk_small, "tiny": tiny}


def validate_experiment(cfg: ExperimentConfig) -> None:
    m = cfg.model
    enc = m.encoder
    if (enc.px, enc.t_obs) != (cfg.render.px, cfg.render.t_obs):
        raise ValueError(
            f"encoder expects {enc.px}px x {enc.t_obs} frames but rendering "
            f"produces {cfg.render.px}px x {cfg.render.t_obs}"
        )
    if m.use_predictor and not m.use_resampler:
        raise ValueError("the world predictor runs on resampler latents; "
                         "use_predictor requires use_resampler")
    if m.use_resampler:
        if m.resampler.d_input != enc.d_e:
            raise ValueError(
                f"resampler d_input {m.resampler.d_input} != encoder d_e {enc.d_e}"
            )
        if m.resampler.max_input_tokens < enc.n_tokens:
            raise ValueError(
                f"resampler max_input_tokens {m.resampler.max_input_tokens} < "
                f"encoder token count {enc.n_tokens}"
            )
        d_latent, m_tokens = m.resampler.d, m.resampler.m_tokens
    else:
        d_latent, m_tokens = enc.d_e, enc.n_tokens
    if (m.denoiser.d_latent, m.denoiser.m_tokens) != (d_latent, m_tokens):
        raise ValueError(
            f"denoiser world interface ({m.denoiser.d_latent}, {m.denoiser.m_tokens}) "
            f"!= provided latents ({d_latent}, {m_tokens})"
        )
    if m.denoiser.d_cond != m.condition.d:
        raise ValueError(
            f"denoiser d_cond {m.denoiser.d_cond} != condition d {m.condition.d}"
        )
    if m.denoiser.horizon != T_FUTURE:
        raise ValueError(
            f"denoiser horizon {m.denoiser.horizon} != future pose count {T_FUTURE}"
        )
    if m.use_predictor:
        p = m.predictor
        if (p.d_latent, p.m_tokens) != (d_latent, m_tokens):
            raise ValueError(
                f"predictor latent interface ({p.d_latent}, {p.m_tokens}) != "
                f"provided latents ({d_latent}, {m_tokens})"
            )
        if p.d_cond != m.condition.d:
            raise ValueError(f"predictor d_cond {p.d_cond} != condition d {m.condition.d}")
        if p.horizon != m.denoiser.horizon:
            raise ValueError(
                f"predictor horizon {p.horizon} != denoiser horizon {m.denoiser.horizon}"
            )
        if cfg.eval.t_w > p.t_w_max:
            raise ValueError(f"eval.t_w {cfg.eval.t_w} exceeds predictor t_w_max {p.t_w_max}")
    for n in (1, 2, 3, 4):
        got = getattr(cfg, f"stage{n}").stage
        if got != n:
            raise ValueError(f"stage{n} section declares stage={got}")


def load_config(
    source: str | Path | None = None, overrides: Sequence[str] = ()
) -> ExperimentConfig:
    """Resolve a config from a profile name or a YAML/JSON file, apply dotted
    overrides, propagate the master seed, and validate.

    Files are partial trees merged over a base profile (top-level key
    ``profile`` selects it; default ``desk_small``).
    """
    if source is None:
        data = to_dict(desk_small())
    elif str(source) in PROFILES:
        data = to_dict(PROFILES[str(source)]())
    else:
        path = Path(source)
        if not path.exists():
            raise FileNotFoundError(
                f"config {source!r} is neither a profile {sorted(PROFILES)} "
                f"nor an existing file"
            )
        patch = yaml.safe_load(path.read_text()) or {}
        if not isinstance(patch, dict):
            raise ValueError(f"{path}: config file must hold a mapping")
        base = patch.pop("profile", "desk_small")
        if base not in PROFILES:
            raise ValueError(f"{path}: unknown profile {base!r}; known: {sorted(PROFILES)}")
        data = _deep_merge(to_dict(PROFILES[base]()), patch)
    data = apply_overrides(data, overrides)
    cfg = from_dict(ExperimentConfig, data)
    cfg = with_seed(cfg, cfg.seed)
    validate_experiment(cfg)
    return cfg


def save_config(cfg: ExperimentConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(to_dict(cfg), sort_keys=True))
    return path


def build_models(m: ModelConfig) -> PlannerModels:
    """Instantiate the planner bundle with an independent seed per module, so
    adding or removing one module never shifts another's initialization."""

    def seeded(tag: int, build):
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed_from(m.seed, 0xB11D, tag))
            return build()

    return PlannerModels(
        encoder=seeded(1, lambda: VideoEncoder(m.encoder)),
        resampler=seeded(2, lambda: Resampler(m.resampler)) if m.use_resampler else None,
        condition=seeded(3, lambda: ConditionEncoder(m.condition)),
        predictor=seeded(4, lambda: WorldPredictor(m.predictor)) if m.use_predictor else None,
        denoiser=seeded(5, lambda: ActionDenoiser(m.denoiser)),
        schedule=CosineSchedule(m.diffusion),
        use_latents=m.use_resampler,
    )


def load_planner(
    ckpt_dir: str | Path, *, expect_stage: int | None = 4
) -> tuple[PlannerModels, ExperimentConfig, dict]:
    """Rebuild the planner bundle from a checkpoint directory: the stored
    experiment config defines the architecture, the blobs fill the weights."""
    ckpt = Path(ckpt_dir)
    cfg_path = ckpt / CONFIG_FILE
    if not cfg_path.exists():
        raise FileNotFoundError(f"checkpoint {ckpt} has no {CONFIG_FILE}")
    cfg = load_config(cfg_path)
    models = build_models(cfg.model)
    manifest = load_modules(ckpt, models.modules())
    if expect_stage is not None and manifest["stage"] != expect_stage:
        raise ValueError(
            f"expected a stage-{expect_stage} checkpoint, got stage {manifest['stage']}"
        )
    models.eval_mode()
    return models, cfg, manifest
