"""Encoder-decoder mask network and the attentive-state composite policy."""
from __future__ import annotations

import copy

import numpy as np

from .. import numcore as nc
from ..agent.policy import PolicyNetwork, deterministic_from_head, sample_actions, to_nchw
from ..numcore import Tensor


class MaskUsageError(ValueError):
    pass


class MaskNetwork:
    """Per-pixel attention in [0, 1] with the input's spatial size.

    The encoder is a copy of the policy's convolutional extractor. The decoder
    walks back up the encoder stages, upsampling and concatenating each skip
    connection, and finishes with a conv over the raw input concatenated in.
    """

    def __init__(self, policy: PolicyNetwork, beta: float = 0.1, dec_channels: int = 16,
                 init_bias: float = 3.0, seed: int = 0):
        if not 0.0 <= beta < 1.0:
            raise nc.ConfigError(f"threshold beta must lie in [0, 1), got {beta}")
        self.beta = float(beta)
        self.obs_shape = tuple(policy.arch.obs_shape)
        self.encoder = [copy.deepcopy(conv) for conv in policy.convs]
        for conv in self.encoder:
            for p in conv.params.values():
                p.requires_grad = False
        h, w, c = self.obs_shape
        shapes = []
        shape = (1, c, h, w)
        for conv in self.encoder:
            shape = conv.output_shape(shape)
            shapes.append(shape)
        self._stage_shapes = shapes
        rng = np.random.default_rng(seed)
        self.decoder: list[nc.Conv2d] = []
        cin = shapes[-1][1]
        # one conv per skip merge, deepest first
        for skip in reversed(shapes[:-1]):
            self.decoder.append(nc.Conv2d(cin + skip[1], dec_channels, 3, 1, 1, rng=rng))
            cin = dec_channels
        self.out_conv = nc.Conv2d(cin + c, 1, 3, 1, 1, rng=rng)
        self.out_conv.params["weight"].data *= 0.1
        self.out_conv.params["bias"].data[:] = init_bias
        self._check_shapes()

    def _check_shapes(self) -> None:
        h, w, _ = self.obs_shape
        for shape in self._stage_shapes:
            if h % shape[2] or w % shape[3]:
                raise nc.ShapeError(f"encoder stage {shape[2]}x{shape[3]} does not divide input {h}x{w}")

    # -- parameters -----------------------------------------------------------
    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, conv in enumerate(self.encoder):
            out[f"encoder.conv{i}.weight"] = conv.params["weight"]
            out[f"encoder.conv{i}.bias"] = conv.params["bias"]
        for i, conv in enumerate(self.decoder):
            out[f"decoder.conv{i}.weight"] = conv.params["weight"]
            out[f"decoder.conv{i}.bias"] = conv.params["bias"]
        out["decoder.out.weight"] = self.out_conv.params["weight"]
        out["decoder.out.bias"] = self.out_conv.params["bias"]
        return out

    def decoder_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.named_parameters().items() if k.startswith("decoder.")}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict) -> None:
        for k, p in self.named_parameters().items():
            if k not in state:
                raise KeyError(f"checkpoint lacks parameter {k}")
            if state[k].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k}: {p.data.shape} vs {state[k].shape}")
            p.data = np.array(state[k], dtype=np.float32)

    # -- forward --------------------------------------------------------------
    def forward(self, obs) -> Tensor:
        """Mask tensor shaped (N, H, W, 1)."""
        x = to_nchw(obs)
        if tuple(x.shape[2:]) != self.obs_shape[:2] or x.shape[1] != self.obs_shape[2]:
            raise MaskUsageError(f"observation shape {x.shape} does not match network input {self.obs_shape}")
        feats = []
        hcur = x
        for conv in self.encoder:
            hcur = nc.relu(conv(hcur))
            feats.append(hcur)
        hcur = feats[-1]
        for conv, skip in zip(self.decoder, reversed(feats[:-1])):
            hcur = _upsample_to(hcur, skip.shape[2])
            hcur = nc.relu(conv(nc.concat([hcur, skip], axis=1)))
        hcur = _upsample_to(hcur, x.shape[2])
        logits = self.out_conv(nc.concat([hcur, x], axis=1))
        m = nc.thresholded_relu(nc.sigmoid(logits), self.beta)
        return m.transpose(0, 2, 3, 1)

    def __call__(self, obs) -> Tensor:
        return self.forward(obs)


def _upsample_to(x: Tensor, size: int) -> Tensor:
    factor = size // x.shape[2]
    return x if factor == 1 else nc.upsample2d(x, factor)


def compute_mask(net: MaskNetwork, obs) -> np.ndarray:
    """Mask values for one observation (H,W,1) or a batch (N,H,W,1)."""
    single = np.asarray(obs).ndim == 3
    with nc.no_grad():
        m = net(obs).data
    return m[0] if single else m


def attentive_state(obs, mask):
    """Observation scaled by the mask, broadcast over channels."""
    if isinstance(obs, Tensor) or isinstance(mask, Tensor):
        o, m = nc.as_tensor(obs), nc.as_tensor(mask)
        _check_pair(o.shape, m.shape)
        return o * m
    obs = np.asarray(obs, np.float32)
    mask = np.asarray(mask, np.float32)
    _check_pair(obs.shape, mask.shape)
    return obs * mask


def _check_pair(obs_shape: tuple, mask_shape: tuple) -> None:
    if len(obs_shape) != len(mask_shape) or mask_shape[-1] != 1 or obs_shape[:-1] != mask_shape[:-1]:
        raise MaskUsageError(f"mask of shape {mask_shape} cannot weight observation of shape {obs_shape}")


def sparsity(mask, normalized: bool = False) -> float:
    """L1 norm of a single mask, or its per-cell mean when ``normalized``."""
    m = np.abs(np.asarray(mask, np.float64))
    total = float(m.sum())
    if not normalized:
        return total
    cells = m.shape[0] * m.shape[1] if m.ndim >= 2 else m.size
    return total / cells


class InterpreterPolicy:
    """The frozen policy acting on masked observations, plus a retrained critic.

    Owns private copies of the policy so the caller's network is never touched.
    """

    def __init__(self, policy: PolicyNetwork, mask_net: MaskNetwork, alpha: float = 0.0,
                 sparsity_as_loss: bool = True):
        self.policy = copy.deepcopy(policy)
        for p in self.policy.named_parameters().values():
            p.requires_grad = False
        self.mask_net = mask_net
        self.critic = copy.deepcopy(policy.critic)
        for p in self.critic.params.values():
            p.requires_grad = True
        self.alpha = float(alpha)
        self.sparsity_as_loss = sparsity_as_loss
        self.arch = policy.arch

    def named_parameters(self) -> dict[str, Tensor]:
        out = dict(self.mask_net.named_parameters())
        out["critic.weight"] = self.critic.params["weight"]
        out["critic.bias"] = self.critic.params["bias"]
        for k, v in self.policy.named_parameters().items():
            out[f"policy.{k}"] = v
        return out

    def trainable_names(self) -> list[str]:
        return list(self.mask_net.decoder_parameters()) + ["critic.weight", "critic.bias"]

    def head_on_masked(self, obs, mask: Tensor) -> Tensor:
        masked = nc.as_tensor(np.asarray(obs, np.float32)) * mask
        return self.policy.actor_out(self.policy.features(masked))

    def critic_value(self, obs) -> Tensor:
        with nc.no_grad():
            feat = self.policy.features(obs)
        return self.critic(feat.detach()).reshape(-1)

    def evaluate(self, obs, actions):
        mask = self.mask_net(obs)
        head = self.head_on_masked(obs, mask)
        extra = mask.mean() * self.alpha if (self.sparsity_as_loss and self.alpha > 0) else None
        return (self.policy.log_prob(head, actions), self.policy.entropy(head),
                self.critic_value(obs), extra)

    def act(self, obs, rng: np.random.Generator):
        """Sample actions on masked observations; returns (actions, log_probs, values, masks)."""
        with nc.no_grad():
            mask = self.mask_net(obs)
            head = self.head_on_masked(obs, mask)
            actions = sample_actions(self.policy, head.data, rng)
            logp = self.policy.log_prob(head, actions).data
            values = self.critic_value(obs).data
        return actions, logp, values, mask.data

    def act_deterministic(self, obs) -> np.ndarray:
        with nc.no_grad():
            head = self.head_on_masked(obs, self.mask_net(obs))
        return deterministic_from_head(self.policy, head.data)
