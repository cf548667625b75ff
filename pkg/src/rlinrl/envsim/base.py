from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass
from typing import Any

import numpy as np


class EnvUsageError(RuntimeError):
    pass


class InitStateError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSnapshot:
    kind: str
    state: Any
    rng_state: dict
    t: int
    done: bool
    obs_hash: str


def obs_hash(obs: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(obs, dtype=np.float32).tobytes()).hexdigest()


class Env:
    """Shared reset/step/snapshot plumbing. Subclasses implement the dynamics."""

    kind = "base"
    discrete = False
    action_dim = 1

    def __init__(self, config):
        self.config = config
        self.rng = np.random.default_rng(0)
        self.state = None
        self.t = 0
        self.done = True
        self._obs: np.ndarray | None = None

    @property
    def obs_shape(self) -> tuple:
        raise NotImplementedError

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def observation(self) -> np.ndarray:
        if self._obs is None:
            self._obs = self.render()
        return self._obs

    def reset(self, seed: int | None = None, init=None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.t = 0
        self.done = False
        self.state = self._validate_init(init) if init is not None else self._sample_init()
        self._obs = None
        return self.observation()

    def step(self, action):
        if self.done:
            raise EnvUsageError("step() called on a finished episode; reset() first")
        reward, done = self._transition(action)
        self.t += 1
        if self.t >= self.horizon:
            done = True
        reward = self._finish_reward(reward, done)
        self.done = done
        self._obs = None
        return self.observation(), float(reward), done

    def _finish_reward(self, reward: float, done: bool) -> float:
        return reward

    def snapshot(self) -> EnvSnapshot:
        return EnvSnapshot(self.kind, copy.deepcopy(self.state), copy.deepcopy(self.rng.bit_generator.state),
                           self.t, self.done, obs_hash(self.observation()))

    def restore(self, snap: EnvSnapshot) -> np.ndarray:
        if not isinstance(snap, EnvSnapshot) or snap.kind != self.kind:
            got = getattr(snap, "kind", type(snap).__name__)
            raise TypeError(f"cannot restore a {got!r} snapshot into a {self.kind!r} environment")
        self.state = copy.deepcopy(snap.state)
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = copy.deepcopy(snap.rng_state)
        self.t = snap.t
        self.done = snap.done
        self._obs = None
        return self.observation()

    def clone(self) -> "Env":
        other = copy.copy(self)
        other.restore(self.snapshot())
        return other

    # subclass hooks
    def _sample_init(self):
        raise NotImplementedError

    def _validate_init(self, init):
        raise NotImplementedError

    def _transition(self, action) -> tuple[float, bool]:
        raise NotImplementedError

    def render(self) -> np.ndarray:
        raise NotImplementedError

    def region_masks(self) -> dict[str, np.ndarray]:
        raise NotImplementedError
