from .policy import (
    DiffusionPolicy,
    EnvSetup,
    PolicyConfig,
    PolicyRollout,
    TrainLog,
    ddpm_sample,
    prepare_training_data,
    receding_horizon_rollout,
    rollout_batch,
    train_policy,
    train_step,
)
from .schedule import DiffusionSchedule, add_noise, cosine_schedule, reverse_step
from .windows import MinMaxNormalizer, StandardNormalizer, TrainingWindow, build_training_windows

__all__ = [
    "DiffusionPolicy",
    "DiffusionSchedule",
    "EnvSetup",
    "MinMaxNormalizer",
    "PolicyConfig",
    "PolicyRollout",
    "StandardNormalizer",
    "TrainLog",
    "TrainingWindow",
    "add_noise",
    "build_training_windows",
    "cosine_schedule",
    "ddpm_sample",
    "prepare_training_data",
    "receding_horizon_rollout",
    "reverse_step",
    "rollout_batch",
    "train_policy",
    "train_step",
]
