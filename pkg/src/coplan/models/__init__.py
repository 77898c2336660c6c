from .layers import Attention, Block, Mlp, rope_rotate, timestep_embedding
from .backbone import EncoderConfig, VideoEncoder, ema_update, make_teacher, pretrain_step
from .condition import ConditionConfig, ConditionEncoder
from .resampler import Resampler, ResamplerConfig
from .predictor import PredictorConfig, WorldPredictor
from .denoiser import (
    ActionDenoiser,
    AdaLNZeroBlock,
    DenoiserConfig,
    Role,
    planning_loss,
)

__all__ = [
    "ActionDenoiser",
    "AdaLNZeroBlock",
    "Attention",
    "Block",
    "ConditionConfig",
    "ConditionEncoder",
    "DenoiserConfig",
    "EncoderConfig",
    "Mlp",
    "PredictorConfig",
    "Resampler",
    "ResamplerConfig",
    "Role",
    "VideoEncoder",
    "WorldPredictor",
    "ema_update",
    "make_teacher",
    "planning_loss",
    "pretrain_step",
    "rope_rotate",
    "timestep_embedding",
]
