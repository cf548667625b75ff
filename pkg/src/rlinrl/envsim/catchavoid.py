"""Falling-ball grid where catch and avoid variants share states and actions.

Balls start staggered in height so that each lands after the previous one
with enough slack for a one-cell-per-step paddle to reach it.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .base import Env, InitStateError

LEFT, STAY, RIGHT = 0, 1, 2
CH_BALLS, CH_PADDLE = 0, 1


@dataclass(frozen=True)
class CatchAvoidConfig:
    h: int = 12
    w: int = 12
    n_balls: int = 3
    gap: int = 3
    task_variant: str = "catch"  # or "avoid"
    reward_mode: str = "dense"  # or "terminal_only"

    @property
    def horizon(self) -> int:
        return self.gap * self.n_balls

    @property
    def reward_range(self) -> tuple[float, float]:
        return (-1.0, 1.0)

    @property
    def return_range(self) -> tuple[float, float]:
        if self.task_variant == "catch":
            return (0.0, float(self.n_balls))
        return (-float(self.n_balls), 0.0)


@dataclass
class CatchAvoidState:
    paddle: int
    balls: list = field(default_factory=list)  # [col, row] pairs
    pending: float = 0.0  # rewards withheld in terminal_only mode


class CatchAvoid(Env):
    kind = "catchavoid"
    discrete = True
    action_dim = 3

    def __init__(self, config: CatchAvoidConfig | None = None, **overrides):
        config = replace(config or CatchAvoidConfig(), **overrides)
        if config.task_variant not in ("catch", "avoid"):
            raise ValueError(f"unknown task variant {config.task_variant!r}")
        if config.reward_mode not in ("dense", "terminal_only"):
            raise ValueError(f"unknown reward mode {config.reward_mode!r}")
        if config.h - 1 - config.n_balls * config.gap < 0:
            raise ValueError("grid too short for the requested balls and gap")
        super().__init__(config)

    @property
    def obs_shape(self) -> tuple:
        return (self.config.h, self.config.w, 2)

    def _sample_init(self) -> CatchAvoidState:
        c = self.config
        paddle = int(self.rng.integers(0, c.w))
        balls = []
        prev_col, prev_row = paddle, c.h - 1
        for k in range(c.n_balls):
            row = c.h - 1 - (k + 1) * c.gap
            reach = prev_row - row  # steps available to travel from the previous landing
            lo, hi = max(0, prev_col - reach), min(c.w - 1, prev_col + reach)
            col = int(self.rng.integers(lo, hi + 1))
            balls.append([col, row])
            prev_col, prev_row = col, row
        return CatchAvoidState(paddle, balls)

    def _validate_init(self, init) -> CatchAvoidState:
        c = self.config
        if isinstance(init, dict):
            init = CatchAvoidState(int(init["paddle"]), [list(b) for b in init.get("balls", [])])
        if not 0 <= init.paddle < c.w:
            raise InitStateError(f"paddle column {init.paddle} outside [0, {c.w})")
        rows = set()
        for col, row in init.balls:
            if not (0 <= col < c.w and 0 <= row < c.h - 1):
                raise InitStateError(f"ball at ({col}, {row}) outside the playable grid")
            if row in rows:
                raise InitStateError("balls must occupy distinct rows")
            rows.add(row)
        return CatchAvoidState(init.paddle, [list(b) for b in init.balls], 0.0)

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def _transition(self, action):
        c = self.config
        s = self.state
        a = int(np.argmax(action)) if np.ndim(action) else int(action)
        if a not in (LEFT, STAY, RIGHT):
            raise ValueError(f"invalid CatchAvoid action {action!r}")
        s.paddle = int(np.clip(s.paddle + (a - 1), 0, c.w - 1))
        reward = 0.0
        remaining = []
        for col, row in s.balls:
            row += 1
            if row >= c.h - 1:
                if col == s.paddle:
                    reward += 1.0 if c.task_variant == "catch" else -1.0
            else:
                remaining.append([col, row])
        s.balls = remaining
        return reward, not remaining

    def _finish_reward(self, reward: float, done: bool) -> float:
        if self.config.reward_mode == "dense":
            return reward
        self.state.pending += reward
        if done:
            out, self.state.pending = self.state.pending, 0.0
            return out
        return 0.0

    def render(self) -> np.ndarray:
        c = self.config
        obs = np.zeros((c.h, c.w, 2), dtype=np.float32)
        for col, row in self.state.balls:
            obs[row, col, CH_BALLS] = 1.0
        obs[c.h - 1, self.state.paddle, CH_PADDLE] = 1.0
        return obs

    def region_masks(self, obs: np.ndarray | None = None) -> dict[str, np.ndarray]:
        obs = self.observation() if obs is None else obs
        return {"balls": obs[..., CH_BALLS] > 0, "paddle": obs[..., CH_PADDLE] > 0}
