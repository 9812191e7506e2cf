"""Seedable 1-D-track locomotion environments with multitask terrain and gait structure."""
from .config import (DT, PARAM_RANGES, DynamicsConfig, EnvConfig, NoiseAmplitudes, RandomizationRanges,
                     Segment, TaskSpec, TerrainSpec, TrackTemplate, builtin_tasks, load_randomization,
                     load_terrain)
from .env import (DelayBuffer, LocoEnv, TrajectoryRecorder, VectorEnv, check_termination, latency_steps,
                  make_rng, observe, reset, reward_bipedal, reward_quadruped, sample_initial_state,
                  step_state, vector_env)
from .state import C_DIM, E_DIM, I_DIM, P_DIM, P_NAMES, Command, EnvState, ObservationBundle
from .terrain import RealizedTrack, base_height, generate_track, midpoint_displacement

__all__ = [
    "C_DIM", "DT", "DelayBuffer", "DynamicsConfig", "E_DIM", "EnvConfig", "EnvState", "Command", "I_DIM",
    "LocoEnv", "NoiseAmplitudes", "ObservationBundle", "PARAM_RANGES", "P_DIM", "P_NAMES",
    "RandomizationRanges", "RealizedTrack", "Segment", "TaskSpec", "TerrainSpec", "TrackTemplate",
    "TrajectoryRecorder", "VectorEnv", "base_height", "builtin_tasks", "check_termination",
    "generate_track", "latency_steps", "load_randomization", "load_terrain", "make_rng",
    "midpoint_displacement", "observe", "reset", "reward_bipedal", "reward_quadruped",
    "sample_initial_state", "step_state", "vector_env",
]
