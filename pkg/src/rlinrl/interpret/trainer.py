"""Interpreter training: one-step episodes, four matching modes, decoder-only updates."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from .. import numcore as nc
from ..agent.policy import PolicyNetwork
from ..agent.ppo import PPOConfig, RolloutBatch, TrainingError, ppo_update
from ..envsim import Env
from ..numcore import Tensor
from ..rng import derive_seed, stream
from .masknet import InterpreterPolicy, MaskNetwork
from .rewards import action_distance, batch_consistency

log = logging.getLogger(__name__)

MODES = ("reward", "reward_K", "action_rl", "action_supervised")
LOG_COLUMNS = ("epoch", "mean_reward", "mean_sparsity", "mean_reward_gap")


@dataclass
class InterpreterConfig:
    mode: str = "reward"
    alpha: float = 0.1
    beta: float = 0.1
    k: int = 1
    gamma: float = 0.99
    distance: str = "squared"
    episodes_per_epoch: int = 256
    epochs: int = 60
    lr: float = 1e-3
    ppo_epochs: int = 4
    minibatch: int = 64
    clip: float = 0.2
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    normalize_adv: bool = False
    reward_scale: float = 1.0  # multiplies the consistency term in every mode, supervised included
    sparsity_term: str = "loss"  # "loss": differentiable penalty; "reward": folded into episode reward
    freeze_encoder: bool = True
    reset_fraction: float = 0.5
    pool_episodes: int = 8
    dec_channels: int = 16
    init_bias: float = 3.0
    collapse_patience: int = 3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown interpreter mode {self.mode!r}; expected one of {MODES}")
        if self.alpha < 0:
            raise ValueError(f"sparsity weight alpha must be >= 0, got {self.alpha}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"threshold beta must lie in [0, 1), got {self.beta}")
        if self.k < 1:
            raise ValueError(f"observation length k must be >= 1, got {self.k}")
        if self.distance not in ("squared", "absolute"):
            raise ValueError(f"unknown distance {self.distance!r}")
        if self.sparsity_term not in ("loss", "reward"):
            raise ValueError(f"sparsity_term must be 'loss' or 'reward', got {self.sparsity_term!r}")
        if not 0.0 <= self.reset_fraction <= 1.0:
            raise ValueError("reset_fraction must lie in [0, 1]")

    @property
    def horizon_k(self) -> int:
        return self.k if self.mode == "reward_K" else 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values: dict) -> "InterpreterConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise KeyError(sorted(unknown)[0])
        return cls(**values)


@dataclass
class StartStates:
    snaps: list
    obs: np.ndarray


@dataclass
class InterpreterResult:
    interp: InterpreterPolicy
    log: list = field(default_factory=list)  # rows matching LOG_COLUMNS
    episode_rewards: list = field(default_factory=list)  # per-epoch arrays of consistency rewards

    @property
    def mask_net(self) -> MaskNetwork:
        return self.interp.mask_net

    def state_dict(self) -> dict[str, np.ndarray]:
        state = self.mask_net.state_dict()
        state["critic.weight"] = self.interp.critic.params["weight"].data.copy()
        state["critic.bias"] = self.interp.critic.params["bias"].data.copy()
        return state


def rollout_pool(policy: PolicyNetwork, make_env: Callable[[], Env], episodes: int, seed: int) -> StartStates:
    """Snapshots of every state visited by the policy's deterministic rollouts."""
    env = make_env()
    seeds = stream(seed, "pool-seeds")
    snaps, obs = [], []
    for _ in range(episodes):
        ob = env.reset(seed=int(seeds.integers(0, 2**31 - 1)))
        while True:
            snaps.append(env.snapshot())
            obs.append(ob)
            ob, _, done = env.step(policy.act_deterministic(ob))
            if done:
                break
    return StartStates(snaps, np.stack(obs).astype(np.float32))


def sample_start_states(make_env: Callable[[], Env], pool: StartStates, n: int, reset_fraction: float,
                        rng: np.random.Generator, env: Optional[Env] = None) -> StartStates:
    """Mix fresh resets with states drawn from the policy's own rollouts."""
    env = env or make_env()
    fresh = rng.random(n) < reset_fraction
    picks = rng.integers(0, len(pool.snaps), size=n)
    seeds = rng.integers(0, 2**31 - 1, size=n)
    snaps, obs = [], []
    for i in range(n):
        if fresh[i]:
            ob = env.reset(seed=int(seeds[i]))
            snaps.append(env.snapshot())
            obs.append(ob.copy())
        else:
            snaps.append(pool.snaps[picks[i]])
            obs.append(pool.obs[picks[i]])
    return StartStates(snaps, np.stack(obs).astype(np.float32))


def build_interpreter(policy: PolicyNetwork, config: InterpreterConfig, seed: int) -> InterpreterPolicy:
    mask_net = MaskNetwork(policy, beta=config.beta, dec_channels=config.dec_channels,
                           init_bias=config.init_bias, seed=derive_seed(seed, "mask-init"))
    if not config.freeze_encoder:
        for p in mask_net.named_parameters().values():
            p.requires_grad = True
    return InterpreterPolicy(policy, mask_net, alpha=config.alpha,
                             sparsity_as_loss=config.sparsity_term == "loss")


def _trainable(interp: InterpreterPolicy, config: InterpreterConfig) -> list[str]:
    names = interp.trainable_names()
    if not config.freeze_encoder:
        names += [k for k in interp.mask_net.named_parameters() if k.startswith("encoder.")]
    return names


def _supervised_loss(interp: InterpreterPolicy, obs: np.ndarray, targets: np.ndarray,
                     config: InterpreterConfig) -> Tensor:
    mask = interp.mask_net(obs)
    head = interp.head_on_masked(obs, mask)
    if interp.arch.discrete:
        pred = nc.softmax(head, -1)
        target = np.eye(interp.arch.action_dim, dtype=np.float32)[targets.astype(int)]
    else:
        pred = head
        target = targets.astype(np.float32)
    sq = nc.square(pred - Tensor(target)).sum(axis=1)
    dist = sq if config.distance == "squared" else nc.power(sq + 1e-8, 0.5)
    loss = dist.mean() * config.reward_scale
    if config.alpha > 0:
        loss = loss + mask.mean() * config.alpha
    return loss


def train_interpreter(policy: PolicyNetwork, make_env: Callable[[], Env], config: InterpreterConfig,
                      seed: int, callback: Optional[Callable[[dict], None]] = None) -> InterpreterResult:
    """Fit a mask decoder so the frozen policy on masked inputs keeps rewards (or actions) unchanged.

    The caller's policy is never modified; the interpreter works on a copy.
    """
    interp = build_interpreter(policy, config, seed)
    frozen = interp.policy
    names = _trainable(interp, config)
    params = interp.named_parameters()
    opt = nc.Adam({k: params[k] for k in names}, lr=config.lr)
    ppo_cfg = PPOConfig(gamma=1.0, lam=1.0, clip=config.clip, epochs=config.ppo_epochs,
                        minibatch=config.minibatch, vf_coef=config.vf_coef, lr=config.lr,
                        max_grad_norm=config.max_grad_norm, normalize_adv=config.normalize_adv)
    pool = rollout_pool(frozen, make_env, config.pool_episodes, derive_seed(seed, "pool"))
    start_rng = stream(seed, "interp", "starts")
    act_rng = stream(seed, "interp", "actions")
    upd_rng = stream(seed, "interp", "minibatches")
    sampler_env = make_env()
    branch_envs: list[Env] = []
    result = InterpreterResult(interp)
    zero_epochs = 0
    n_actions = frozen.arch.action_dim
    discrete = frozen.arch.discrete
    k = config.horizon_k

    for epoch in range(config.epochs):
        starts = sample_start_states(make_env, pool, config.episodes_per_epoch, config.reset_fraction,
                                     start_rng, sampler_env)
        obs = starts.obs
        a = frozen.act_deterministic(obs)
        if config.mode == "action_supervised":
            with nc.no_grad():
                masks = interp.mask_net(obs).data
            a_tilde = interp.act_deterministic(obs)
            rewards = -action_distance(a, a_tilde, discrete, n_actions, config.distance)
            _, r, r_prime = batch_consistency(make_env, branch_envs, starts.snaps, obs, frozen, a_tilde, 1,
                                              config.gamma, config.distance)
            gap = np.abs(r - r_prime)
            n = len(obs)
            mb = min(config.minibatch, n)
            for _ in range(config.ppo_epochs):
                order = upd_rng.permutation(n)
                for lo in range(0, n, mb):
                    idx = order[lo: lo + mb]
                    for p in params.values():
                        p.grad = None
                    loss = _supervised_loss(interp, obs[idx], a[idx], config)
                    if not np.isfinite(loss.data).all():
                        raise TrainingError("non-finite supervised loss", result.log)
                    loss.backward()
                    grads = {k_: (params[k_].grad if params[k_].grad is not None
                                  else np.zeros_like(params[k_].data)) for k_ in names}
                    nc.clip_grad_norm(grads, config.max_grad_norm)
                    nc.opt_step(opt.state, {k_: params[k_] for k_ in names}, grads)
            for p in params.values():
                p.grad = None
        else:
            a_tilde, logp, values, masks = interp.act(obs, act_rng)
            if config.mode == "action_rl":
                rewards = -action_distance(a, a_tilde, discrete, n_actions, config.distance)
                _, r, r_prime = batch_consistency(make_env, branch_envs, starts.snaps, obs, frozen, a_tilde, 1,
                                                  config.gamma, config.distance)
            else:
                rewards, r, r_prime = batch_consistency(make_env, branch_envs, starts.snaps, obs, frozen,
                                                        a_tilde, k, config.gamma, config.distance)
            gap = np.abs(r - r_prime)
            ep_reward = rewards * config.reward_scale
            if config.sparsity_term == "reward":
                ep_reward = ep_reward - config.alpha * masks.reshape(len(obs), -1).mean(axis=1)
            ep_reward = ep_reward.astype(np.float32)
            batch = RolloutBatch(obs, a_tilde, logp, ep_reward, values, np.ones(len(obs), bool),
                                 advantages=ep_reward - values, returns=ep_reward)
            ppo_update(interp, batch, ppo_cfg, opt, upd_rng, trainable=names)
        mean_mask = float(masks.mean())
        row = {"epoch": epoch, "mean_reward": float(np.mean(rewards)), "mean_sparsity": mean_mask,
               "mean_reward_gap": float(np.mean(gap))}
        result.log.append(row)
        result.episode_rewards.append(np.asarray(rewards, np.float64))
        if callback is not None:
            callback(row)
        if not all(np.isfinite(p.data).all() for p in params.values()) or not np.isfinite(row["mean_reward"]):
            raise TrainingError("interpreter diverged: non-finite parameters or rewards", result.log, row)
        zero_epochs = zero_epochs + 1 if mean_mask == 0.0 else 0
        if zero_epochs >= config.collapse_patience:
            raise TrainingError("mask collapsed to exactly zero", result.log,
                                {"epoch": epoch, "alpha": config.alpha, "beta": config.beta})
    return result
