from .enhance import (
    Episode,
    PhaseConfig,
    PhaseResult,
    ablation_eval,
    clamped_trajectory,
    evaluate_records,
    filter_by_success,
    load_episodes,
    record_enhanced_dataset,
    save_episodes,
    train_phase,
)
from .env import OBS_DIM_DIFFUSION, OBS_DIM_RL, EnvConfig, Transition, build_observation, run_grasp_trial
from .td3 import ReplayBuffer, TD3Agent, TD3Config, td3_target

__all__ = [
    "OBS_DIM_DIFFUSION",
    "OBS_DIM_RL",
    "EnvConfig",
    "Episode",
    "PhaseConfig",
    "PhaseResult",
    "ReplayBuffer",
    "TD3Agent",
    "TD3Config",
    "Transition",
    "ablation_eval",
    "build_observation",
    "clamped_trajectory",
    "evaluate_records",
    "filter_by_success",
    "load_episodes",
    "record_enhanced_dataset",
    "run_grasp_trial",
    "save_episodes",
    "td3_target",
    "train_phase",
]
