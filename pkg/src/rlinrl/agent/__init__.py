from .policy import PolicyArch, PolicyNetwork, deterministic_from_head, sample_actions, to_nchw
from .ppo import PPOConfig, RolloutBatch, TrainingError, compute_gae, ppo_update, surrogate_loss
from .pretrain import PretrainLog, VecRollout, arch_for_env, evaluate_policy, make_batch, pretrain
