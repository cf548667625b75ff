"""Clipped-surrogate PPO with GAE, usable for any model exposing ``evaluate``."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterable, Optional

import numpy as np

from .. import numcore as nc
from ..numcore import Tensor


class TrainingError(RuntimeError):
    def __init__(self, message: str, curve: Optional[list] = None, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.curve = curve or []
        self.diagnostics = diagnostics or {}


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 256
    ent_coef: float = 0.0
    vf_coef: float = 0.5
    lr: float = 3e-4
    total_steps: int = 200_000
    num_envs: int = 8
    rollout_len: int = 128
    max_grad_norm: float = 0.5
    normalize_adv: bool = True
    ma_window: int = 20
    plateau_tol: float = 0.01
    min_steps: int = 50_000

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.clip <= 0:
            raise ValueError(f"clip ratio must be positive, got {self.clip}")

    @classmethod
    def from_mapping(cls, values: dict) -> "PPOConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in values.items():
            if k not in known:
                raise KeyError(k)
            kwargs[k] = v
        return cls(**kwargs)


@dataclass
class RolloutBatch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.log_probs)

    def __post_init__(self):
        n = len(self.log_probs)
        for name in ("obs", "actions", "rewards", "values", "dones"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"rollout field {name!r} has length {len(getattr(self, name))}, expected {n}")


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, last_values: np.ndarray,
                gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates over (T, N) arrays.

    ``dones[t]`` marks that the episode ended with step t, so nothing is
    bootstrapped past it. ``last_values`` holds V(s_T) for each column.
    """
    rewards = np.asarray(rewards, np.float64)
    values = np.asarray(values, np.float64)
    dones = np.asarray(dones, bool)
    if rewards.ndim == 1:
        rewards, values, dones = rewards[:, None], values[:, None], dones[:, None]
        last_values = np.atleast_1d(last_values)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError(f"length mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")
    last_values = np.asarray(last_values, np.float64).reshape(rewards.shape[1])
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1])
    for t in range(len(rewards) - 1, -1, -1):
        nxt = last_values if t == len(rewards) - 1 else values[t + 1]
        live = ~dones[t]
        delta = rewards[t] + gamma * nxt * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
    return adv, adv + values


def surrogate_loss(logp: Tensor, old_logp: np.ndarray, adv: np.ndarray, clip: float) -> Tensor:
    ratio = nc.exp(logp - Tensor(old_logp.astype(np.float32)))
    a = Tensor(adv.astype(np.float32))
    unclipped = ratio * a
    clipped = nc.clip(ratio, 1.0 - clip, 1.0 + clip) * a
    return -nc.minimum(unclipped, clipped).mean()


def ppo_update(model, batch: RolloutBatch, config: PPOConfig, optimizer: nc.Adam,
               rng: np.random.Generator, trainable: Optional[Iterable[str]] = None) -> dict:
    """Run the configured epochs of minibatch updates in place.

    ``trainable`` restricts which named parameters receive updates; all
    others stay bit-identical.
    """
    if batch.advantages is None or batch.returns is None:
        raise ValueError("batch advantages must be computed before ppo_update")
    params = model.named_parameters()
    names = list(params) if trainable is None else [n for n in params if n in set(trainable)]
    adv = batch.advantages.astype(np.float64)
    if config.normalize_adv and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(batch)
    mb = min(config.minibatch, n)
    stats = {"policy_loss": [], "value_loss": [], "entropy": [], "approx_kl": [], "clip_frac": [], "grad_norm": []}
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start: start + mb]
            for p in params.values():
                p.grad = None
            logp, ent, value, extra = model.evaluate(batch.obs[idx], batch.actions[idx])
            pl = surrogate_loss(logp, batch.log_probs[idx], adv[idx], config.clip)
            vl = nc.square(value - Tensor(batch.returns[idx].astype(np.float32))).mean()
            el = ent.mean()
            loss = pl + vl * config.vf_coef - el * config.ent_coef
            if extra is not None:
                loss = loss + extra
            if not np.isfinite(loss.data).all():
                raise TrainingError("non-finite PPO loss", diagnostics={k: np.mean(v) if v else None
                                                                        for k, v in stats.items()})
            loss.backward()
            grads = {k: (params[k].grad if params[k].grad is not None else np.zeros_like(params[k].data))
                     for k in names}
            gn = nc.clip_grad_norm(grads, config.max_grad_norm)
            nc.opt_step(optimizer.state, {k: params[k] for k in names}, grads)
            ratio_log = logp.data - batch.log_probs[idx]
            stats["policy_loss"].append(float(pl.data))
            stats["value_loss"].append(float(vl.data))
            stats["entropy"].append(float(el.data))
            stats["approx_kl"].append(float(np.mean(-ratio_log)))
            stats["clip_frac"].append(float(np.mean(np.abs(np.exp(ratio_log) - 1.0) > config.clip)))
            stats["grad_norm"].append(gn)
    for p in params.values():
        p.grad = None
    return {k: float(np.mean(v)) for k, v in stats.items()}
