"""Rollout collection and the PPO pretraining loop that produces the frozen policy."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .. import numcore as nc
from ..envsim import Env
from ..rng import derive_seed, stream
from .policy import PolicyArch, PolicyNetwork
from .ppo import PPOConfig, RolloutBatch, TrainingError, compute_gae, ppo_update

log = logging.getLogger(__name__)


def arch_for_env(env: Env, **overrides) -> PolicyArch:
    return PolicyArch(obs_shape=tuple(env.obs_shape), discrete=env.discrete, action_dim=env.action_dim,
                      **overrides)


class VecRollout:
    """Lock-step collection over several environment instances."""

    def __init__(self, make_env: Callable[[], Env], num_envs: int, seed: int):
        self.envs = [make_env() for _ in range(num_envs)]
        self._seeds = stream(seed, "episode-seeds")
        self.obs = np.stack([env.reset(seed=self._next_seed()) for env in self.envs])
        self.ep_returns = np.zeros(num_envs)
        self.ep_lengths = np.zeros(num_envs, dtype=int)

    def _next_seed(self) -> int:
        return int(self._seeds.integers(0, 2**31 - 1))

    def collect(self, net: PolicyNetwork, steps: int, rng: np.random.Generator):
        n = len(self.envs)
        obs_buf = np.zeros((steps, n) + self.obs.shape[1:], np.float32)
        act_shape = () if net.arch.discrete else (net.arch.action_dim,)
        act_buf = np.zeros((steps, n) + act_shape, np.int64 if net.arch.discrete else np.float32)
        logp_buf = np.zeros((steps, n), np.float32)
        val_buf = np.zeros((steps, n), np.float32)
        rew_buf = np.zeros((steps, n), np.float32)
        done_buf = np.zeros((steps, n), bool)
        finished: list[float] = []
        lengths: list[int] = []
        for t in range(steps):
            actions, logp, values = net.act_stochastic(self.obs, rng)
            obs_buf[t] = self.obs
            act_buf[t] = actions
            logp_buf[t] = logp
            val_buf[t] = values
            for i, env in enumerate(self.envs):
                ob, r, done = env.step(actions[i])
                rew_buf[t, i] = r
                done_buf[t, i] = done
                self.ep_returns[i] += r
                self.ep_lengths[i] += 1
                if done:
                    finished.append(float(self.ep_returns[i]))
                    lengths.append(int(self.ep_lengths[i]))
                    self.ep_returns[i] = 0.0
                    self.ep_lengths[i] = 0
                    ob = env.reset(seed=self._next_seed())
                self.obs[i] = ob
        last_values = net.values(self.obs)
        return (obs_buf, act_buf, logp_buf, val_buf, rew_buf, done_buf, last_values), finished, lengths


def make_batch(raw, gamma: float, lam: float) -> RolloutBatch:
    obs, acts, logp, vals, rews, dones, last = raw
    adv, ret = compute_gae(rews, vals, dones, last, gamma, lam)
    flat = lambda a: a.reshape((-1,) + a.shape[2:])
    return RolloutBatch(flat(obs), flat(acts), flat(logp), flat(rews), flat(vals), flat(dones),
                        flat(adv), flat(ret))


@dataclass
class PretrainLog:
    curve: list = field(default_factory=list)  # (env steps, mean episode return of the update)
    updates: int = 0
    steps: int = 0
    stopped: str = "budget"

    def moving_average(self, window: int) -> float:
        vals = [r for _, r in self.curve[-window:]]
        return float(np.mean(vals)) if vals else float("nan")


def pretrain(make_env: Callable[[], Env], config: PPOConfig, seed: int,
             arch: Optional[PolicyArch] = None,
             callback: Optional[Callable[[PretrainLog, dict], None]] = None) -> tuple[PolicyNetwork, PretrainLog]:
    """Train an actor-critic with PPO until the return plateaus or the budget runs out."""
    probe = make_env()
    arch = arch or arch_for_env(probe)
    net = PolicyNetwork(arch, seed=derive_seed(seed, "init"))
    opt = nc.Adam(net.named_parameters(), lr=config.lr)
    roll = VecRollout(make_env, config.num_envs, derive_seed(seed, "envs"))
    act_rng = stream(seed, "actions")
    upd_rng = stream(seed, "minibatches")
    record = PretrainLog()
    last_mean = float("nan")
    best_ma = -np.inf
    w = config.ma_window
    while record.steps < config.total_steps:
        raw, finished, _ = roll.collect(net, config.rollout_len, act_rng)
        record.steps += config.rollout_len * config.num_envs
        batch = make_batch(raw, config.gamma, config.lam)
        stats = ppo_update(net, batch, config, opt, upd_rng)
        record.updates += 1
        if finished:
            last_mean = float(np.mean(finished))
        record.curve.append((record.steps, last_mean))
        if callback is not None:
            callback(record, stats)
        if not all(np.isfinite(p.data).all() for p in net.named_parameters().values()):
            raise TrainingError("parameters became non-finite", record.curve, stats)
        if len(record.curve) >= 2 * w:
            ma_now = record.moving_average(w)
            ma_prev = float(np.mean([r for _, r in record.curve[-2 * w:-w]]))
            best_ma = max(best_ma, ma_now)
            first = float(np.mean([r for _, r in record.curve[:w]]))
            if best_ma > first and ma_now < best_ma - 0.5 * (best_ma - first) and ma_now < first:
                raise TrainingError("return collapsed below its starting level", record.curve, stats)
            if record.steps >= config.min_steps and ma_now - ma_prev < config.plateau_tol * abs(ma_prev):
                record.stopped = "plateau"
                break
    return net, record


def evaluate_policy(net: PolicyNetwork, make_env: Callable[[], Env], seeds, act=None) -> np.ndarray:
    """Deterministic episode returns, one per seed. ``act`` overrides the action map."""
    act = act or net.act_deterministic
    returns = []
    for s in seeds:
        env = make_env()
        obs = env.reset(seed=int(s))
        total, done = 0.0, False
        while not done:
            obs, r, done = env.step(act(obs))
            total += r
        returns.append(total)
    return np.array(returns)
