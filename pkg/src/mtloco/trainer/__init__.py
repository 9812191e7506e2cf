"""PPO training: oracle stage, annealed stage 2 and frozen-expert adaptation."""
from .config import NetworkConfig, TrainConfig
from .loop import (EvalResult, PASSchedule, Trainer, adaptation_trainable, build_policy, evaluate_policy,
                   load_checkpoint, prepare_adaptation, probability_selection, resume_trainer,
                   save_checkpoint, train_adaptation, train_stage1, train_stage2)
from .policy import (ACTION_DIM, PolicyGraph, gaussian_entropy, gaussian_kl, gaussian_log_prob,
                     matched_mono_hidden, recon_loss)
from .ppo import (RolloutBuffer, adaptive_lr, compute_gae, gae_reference, minibatch_losses, normalize,
                  ppo_loss_terms, ppo_update)

__all__ = [
    "ACTION_DIM", "EvalResult", "NetworkConfig", "PASSchedule", "PolicyGraph", "RolloutBuffer",
    "TrainConfig", "Trainer", "adaptation_trainable", "adaptive_lr", "build_policy", "compute_gae",
    "evaluate_policy", "gae_reference", "gaussian_entropy", "gaussian_kl", "gaussian_log_prob",
    "load_checkpoint", "matched_mono_hidden", "minibatch_losses", "normalize", "ppo_loss_terms",
    "ppo_update", "prepare_adaptation", "probability_selection", "recon_loss", "resume_trainer",
    "save_checkpoint", "train_adaptation", "train_stage1", "train_stage2",
]
