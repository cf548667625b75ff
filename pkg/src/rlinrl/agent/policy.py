"""Actor-critic network with a shared convolutional feature extractor."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .. import numcore as nc
from ..numcore import Tensor

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


@dataclass
class PolicyArch:
    obs_shape: tuple  # (H, W, C)
    discrete: bool
    action_dim: int
    channels: tuple = (16, 32, 32)
    strides: tuple = (1, 2, 2)
    hidden: int = 128
    init_log_std: float = -0.5

    def to_dict(self) -> dict:
        d = asdict(self)
        d["obs_shape"] = list(self.obs_shape)
        d["channels"] = list(self.channels)
        d["strides"] = list(self.strides)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyArch":
        d = dict(d)
        for key in ("obs_shape", "channels", "strides"):
            d[key] = tuple(d[key])
        return cls(**d)


def to_nchw(obs) -> Tensor:
    """(N,H,W,C) array or tensor -> (N,C,H,W) tensor."""
    if isinstance(obs, Tensor):
        return obs.transpose(0, 3, 1, 2)
    obs = np.asarray(obs, dtype=np.float32)
    if obs.ndim == 3:
        obs = obs[None]
    return Tensor(np.ascontiguousarray(obs.transpose(0, 3, 1, 2)))


class PolicyNetwork:
    def __init__(self, arch: PolicyArch, seed: int = 0):
        self.arch = arch
        rng = np.random.default_rng(seed)
        h, w, c = arch.obs_shape
        self.convs: list[nc.Conv2d] = []
        cin = c
        for cout, stride in zip(arch.channels, arch.strides):
            self.convs.append(nc.Conv2d(cin, cout, 3, stride, 1, rng=rng))
            cin = cout
        shape = (1, c, h, w)
        for conv in self.convs:
            shape = conv.output_shape(shape)
        self.conv_out_shape = shape[1:]
        self.fc = nc.Dense(int(np.prod(shape[1:])), arch.hidden, rng=rng)
        out = arch.action_dim
        self.actor = nc.Dense(arch.hidden, out, rng=rng)
        # small actor init keeps the initial policy near-uniform / near-zero mean
        self.actor.params["weight"].data *= 0.01
        self.critic = nc.Dense(arch.hidden, 1, rng=rng)
        self.log_std: Optional[Tensor] = None
        if not arch.discrete:
            self.log_std = Tensor(np.full(out, arch.init_log_std, np.float32), requires_grad=True)

    # -- parameters -----------------------------------------------------------
    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, conv in enumerate(self.convs):
            out[f"extractor.conv{i}.weight"] = conv.params["weight"]
            out[f"extractor.conv{i}.bias"] = conv.params["bias"]
        out["extractor.fc.weight"] = self.fc.params["weight"]
        out["extractor.fc.bias"] = self.fc.params["bias"]
        out["actor.weight"] = self.actor.params["weight"]
        out["actor.bias"] = self.actor.params["bias"]
        if self.log_std is not None:
            out["actor.log_std"] = self.log_std
        out["critic.weight"] = self.critic.params["weight"]
        out["critic.bias"] = self.critic.params["bias"]
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters {sorted(missing)}")
        for k, p in params.items():
            if p.data.shape != state[k].shape:
                raise ValueError(f"shape mismatch for {k}: {p.data.shape} vs {state[k].shape}")
            p.data = np.array(state[k], dtype=np.float32)

    # -- forward pieces -------------------------------------------------------
    def conv_features(self, x: Tensor) -> list[Tensor]:
        """Activations after each conv+relu, input in NCHW."""
        feats = []
        for conv in self.convs:
            x = nc.relu(conv(x))
            feats.append(x)
        return feats

    def features(self, obs) -> Tensor:
        x = to_nchw(obs)
        x = self.conv_features(x)[-1]
        x = x.reshape(x.shape[0], -1)
        return nc.relu(self.fc(x))

    def actor_out(self, feat: Tensor) -> Tensor:
        """Logits (discrete) or tanh-squashed mean (continuous)."""
        out = self.actor(feat)
        return out if self.arch.discrete else nc.tanh(out)

    def value(self, feat: Tensor) -> Tensor:
        return self.critic(feat).reshape(-1)

    def clamped_log_std(self) -> Tensor:
        return nc.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    def log_prob(self, head: Tensor, actions: np.ndarray) -> Tensor:
        if self.arch.discrete:
            onehot = np.eye(self.arch.action_dim, dtype=np.float32)[np.asarray(actions, dtype=int)]
            return (nc.log_softmax(head, -1) * onehot).sum(axis=1)
        log_std = self.clamped_log_std()
        z = (Tensor(np.asarray(actions, np.float32)) - head) * nc.exp(-log_std)
        per_dim = nc.square(z) * -0.5 - log_std - 0.5 * math.log(2 * math.pi)
        return per_dim.sum(axis=1)

    def entropy(self, head: Tensor) -> Tensor:
        if self.arch.discrete:
            logp = nc.log_softmax(head, -1)
            return -(nc.exp(logp) * logp).sum(axis=1)
        per = self.clamped_log_std() + 0.5 * math.log(2 * math.pi * math.e)
        return per.sum() * Tensor(np.ones(head.shape[0], np.float32))

    def evaluate(self, obs, actions):
        """Tape-recorded (log_prob, entropy, value, extra_loss) for a PPO minibatch."""
        feat = self.features(obs)
        head = self.actor_out(feat)
        return self.log_prob(head, actions), self.entropy(head), self.value(feat), None

    # -- acting -------------------------------------------------------------
    def head_numpy(self, obs) -> np.ndarray:
        with nc.no_grad():
            return self.actor_out(self.features(obs)).data

    def act_stochastic(self, obs, rng: np.random.Generator):
        """Sample actions for a batch (or single) observation; returns (actions, log_probs, values)."""
        single = np.asarray(obs).ndim == 3
        with nc.no_grad():
            feat = self.features(obs)
            head = self.actor_out(feat)
            values = self.value(feat).data
            actions = sample_actions(self, head.data, rng)
            logp = self.log_prob(head, actions).data
        if single:
            return actions[0], float(logp[0]), float(values[0])
        return actions, logp, values

    def act_deterministic(self, obs):
        single = np.asarray(obs).ndim == 3
        head = self.head_numpy(obs)
        actions = deterministic_from_head(self, head)
        return actions[0] if single else actions

    def values(self, obs) -> np.ndarray:
        with nc.no_grad():
            return self.value(self.features(obs)).data

    def std(self) -> np.ndarray:
        if self.log_std is None:
            return np.zeros(0, np.float32)
        return np.exp(np.clip(self.log_std.data, LOG_STD_MIN, LOG_STD_MAX))


def sample_actions(net: PolicyNetwork, head: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if net.arch.discrete:
        logits = head - head.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        u = rng.random(len(probs))[:, None]
        return np.minimum((u > np.cumsum(probs, axis=1)).sum(axis=1), probs.shape[1] - 1)
    noise = rng.standard_normal(head.shape).astype(np.float32)
    return head + noise * net.std()


def deterministic_from_head(net: PolicyNetwork, head: np.ndarray) -> np.ndarray:
    if net.arch.discrete:
        return np.argmax(head, axis=1)
    return head.copy()
