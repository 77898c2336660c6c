from .schedules import ema_momentum_at, lr_at
from .checkpoint import (
    LOSS_COLUMNS,
    SCHEMA_VERSION,
    append_losses,
    load_manifest,
    load_modules,
    read_losses,
    require_stage,
    save_checkpoint,
    state_fingerprint,
)
from .data import (
    N_WINDOWS,
    DeskDataset,
    PlanningBatch,
    iter_batches,
    render_episode_windows,
    render_fingerprint,
    split_indices,
)
from .stages import (
    AuxPlanner,
    StageConfig,
    denoiser_planning_loss,
    draw_timesteps,
    run_stage,
    seed_from,
    stage2_step,
)

__all__ = [
    "AuxPlanner",
    "DeskDataset",
    "LOSS_COLUMNS",
    "N_WINDOWS",
    "PlanningBatch",
    "SCHEMA_VERSION",
    "StageConfig",
    "append_losses",
    "denoiser_planning_loss",
    "draw_timesteps",
    "ema_momentum_at",
    "iter_batches",
    "load_manifest",
    "load_modules",
    "lr_at",
    "read_losses",
    "render_episode_windows",
    "render_fingerprint",
    "require_stage",
    "run_stage",
    "save_checkpoint",
    "seed_from",
    "split_indices",
    "stage2_step",
    "state_fingerprint",
]
