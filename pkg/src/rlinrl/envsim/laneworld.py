"""Egocentric lane-following world with four semantic channels.

Lateral coordinates are in lane widths, positive to the left, with 0 at the
centre of the right-hand lane. Lines sit at -0.5 (right white) and +0.5
(yellow, dashed). The left white line bounds an oncoming lane whose width is
drawn per episode, so only the right line and the yellow dashes fix the car's
own position. Grass begins a per-episode shoulder width outside each white
line.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .base import Env, InitStateError

PATTERNS = ("lane0", "lane1", "lane2", "lane3", "lane4", "zigzag")
CH_LEFT, CH_YELLOW, CH_RIGHT, CH_GRASS = 0, 1, 2, 3
REGIONS = ("left_white", "yellow", "right_white", "grass")

RIGHT_LINE = -0.5
YELLOW_LINE = 0.5


@dataclass(frozen=True)
class LaneWorldConfig:
    h: int = 16
    w: int = 16
    horizon: int = 128
    dt: float = 0.25
    k_omega: float = 0.5
    w_v: float = 0.5
    w_d: float = 1.0
    penalty: float = 5.0
    margin: float = 0.25
    pattern: str = "lane0"
    cell_forward: float = 0.25
    cell_lateral: float = 0.25
    line_width: float = 0.25
    dash_period: float = 1.0
    dash_length: float = 0.35
    extra_yellow_offset: float = 0.5
    grass_value: float = 0.5
    shoulder_min: float = 0.25
    shoulder_max: float = 1.0
    oncoming_min: float = 0.6
    oncoming_max: float = 1.4
    curvature_max: float = 0.15
    segment_min: float = 3.0
    segment_max: float = 8.0
    zigzag_curvature: float = 0.6
    zigzag_segment: float = 1.5
    init_offset: float = 0.3
    init_heading: float = 0.25

    @property
    def half_width(self) -> float:
        return 0.5

    @property
    def offroad_limit(self) -> float:
        return self.half_width + self.margin

    @property
    def reward_range(self) -> tuple[float, float]:
        # |d| can overshoot the off-road limit by at most one step of travel
        d_max = self.offroad_limit + self.dt
        return (-self.w_d * d_max - self.penalty, self.w_v)


@dataclass
class LaneWorldState:
    d: float
    theta: float
    p: float
    shoulder: float
    left_line: float
    seg_start: np.ndarray = field(repr=False)  # breakpoints along p
    seg_kappa: np.ndarray = field(repr=False)  # curvature on each segment
    pattern: str = "lane0"


class LaneWorld(Env):
    kind = "laneworld"
    discrete = False
    action_dim = 2

    def __init__(self, config: LaneWorldConfig | None = None, **overrides):
        config = replace(config or LaneWorldConfig(), **overrides)
        if config.pattern not in PATTERNS:
            raise ValueError(f"unknown lane pattern {config.pattern!r}")
        super().__init__(config)
        c = config
        rows = np.arange(c.h)
        cols = np.arange(c.w)
        self._f = ((c.h - 1 - rows + 0.5) * c.cell_forward)[:, None] * np.ones((1, c.w))
        self._l = np.ones((c.h, 1)) * (((c.w - 1) / 2.0 - cols) * c.cell_lateral)[None, :]
        reach = float(np.hypot(self._f.max(), np.abs(self._l).max())) + 1.0
        self._zgrid = np.arange(-reach, reach + 1e-9, 0.05)

    @property
    def obs_shape(self) -> tuple:
        return (self.config.h, self.config.w, 4)

    # -- episode setup --------------------------------------------------------
    def _road(self, pattern: str) -> tuple[np.ndarray, np.ndarray]:
        c = self.config
        length = c.horizon * c.dt + 40.0
        if pattern == "zigzag":
            n = int(np.ceil(length / c.zigzag_segment)) + 1
            starts = -20.0 + c.zigzag_segment * np.arange(n)
            sign = self.rng.choice([-1.0, 1.0])
            kappa = sign * c.zigzag_curvature * np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
            kappa[starts < 1.0] = 0.0
            return starts, kappa
        starts = [-20.0]
        kappa = [0.0]
        pos = 0.0
        while pos < length:
            starts.append(pos)
            straight = self.rng.random() < 0.3
            kappa.append(0.0 if straight else self.rng.uniform(-c.curvature_max, c.curvature_max))
            pos += self.rng.uniform(c.segment_min, c.segment_max)
        return np.array(starts), np.array(kappa)

    def _sample_init(self) -> LaneWorldState:
        c = self.config
        d = self.rng.uniform(-c.init_offset, c.init_offset)
        theta = self.rng.uniform(-c.init_heading, c.init_heading)
        shoulder = self.rng.uniform(c.shoulder_min, c.shoulder_max)
        p = self.rng.uniform(0.0, c.dash_period)
        left = YELLOW_LINE + self.rng.uniform(c.oncoming_min, c.oncoming_max)
        starts, kappa = self._road(c.pattern)
        return LaneWorldState(d, theta, p, shoulder, left, starts, kappa, c.pattern)

    def _validate_init(self, init) -> LaneWorldState:
        c = self.config
        if isinstance(init, dict):
            base = self._sample_init()
            fields = {k: init.get(k, getattr(base, k)) for k in ("d", "theta", "p", "shoulder", "left_line")}
            seg_start = np.asarray(init.get("seg_start", [-20.0]), dtype=float)
            seg_kappa = np.asarray(init.get("seg_kappa", [0.0]), dtype=float)
            init = LaneWorldState(seg_start=seg_start, seg_kappa=seg_kappa,
                                  pattern=init.get("pattern", c.pattern), **fields)
        values = np.array([init.d, init.theta, init.p, init.shoulder, init.left_line], dtype=float)
        if not np.all(np.isfinite(values)):
            raise InitStateError("initial state contains non-finite values")
        if abs(init.d) > c.offroad_limit:
            raise InitStateError(f"|d|={abs(init.d):.3f} starts off-road (limit {c.offroad_limit})")
        if abs(init.theta) >= np.pi / 2:
            raise InitStateError("initial heading must face along the road (|theta| < pi/2)")
        if init.shoulder < 0:
            raise InitStateError("shoulder width must be non-negative")
        if init.left_line <= YELLOW_LINE:
            raise InitStateError("the left white line must lie left of the yellow line")
        if init.pattern not in PATTERNS:
            raise InitStateError(f"unknown lane pattern {init.pattern!r}")
        if len(init.seg_start) != len(init.seg_kappa) or len(init.seg_start) == 0:
            raise InitStateError("curvature breakpoints and values must have equal non-zero length")
        return init

    def set_lane_pattern(self, pattern: str) -> np.ndarray:
        """Switch the render pattern of the running episode; dynamics are untouched."""
        if pattern not in PATTERNS:
            raise ValueError(f"unknown lane pattern {pattern!r}")
        self.state.pattern = pattern
        self._obs = None
        return self.observation()

    # -- dynamics -------------------------------------------------------------
    def _kappa_at(self, p):
        s = self.state
        idx = np.searchsorted(s.seg_start, p, side="right") - 1
        return s.seg_kappa[np.clip(idx, 0, len(s.seg_kappa) - 1)]

    def _transition(self, action):
        c = self.config
        s = self.state
        a = np.clip(np.asarray(action, dtype=float).reshape(-1)[:2], -1.0, 1.0)
        v, omega = float(a[0]), float(a[1])
        s.theta += c.k_omega * omega
        s.d += v * np.sin(s.theta) * c.dt
        advance = v * np.cos(s.theta) * c.dt
        s.p += advance
        s.theta -= float(self._kappa_at(s.p)) * advance
        if abs(s.theta) > np.pi:
            s.theta = float((s.theta + np.pi) % (2 * np.pi) - np.pi)
        offroad = abs(s.d) > c.offroad_limit
        reward = c.w_v * max(v, 0.0) - c.w_d * abs(s.d) - (c.penalty if offroad else 0.0)
        return reward, bool(offroad)

    # -- rendering ------------------------------------------------------------
    def _road_offset(self) -> np.ndarray:
        """Leftward displacement of the lane centre at each z on the grid."""
        s = self.state
        z = self._zgrid
        dz = z[1] - z[0]
        kappa = self._kappa_at(s.p + z)
        zero = int(np.argmin(np.abs(z)))
        heading = np.cumsum(kappa) * dz
        heading -= heading[zero]
        y = np.cumsum(np.sin(heading)) * dz
        return y - y[zero]

    def _lateral_map(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.state
        ct, st = np.cos(s.theta), np.sin(s.theta)
        z = self._f * ct - self._l * st
        x = s.d + self._f * st + self._l * ct
        xr = x - np.interp(z, self._zgrid, self._road_offset())
        return xr, z

    def render(self) -> np.ndarray:
        c = self.config
        s = self.state
        xr, z = self._lateral_map()
        obs = np.zeros((c.h, c.w, 4), dtype=np.float32)

        def line(offset):
            return np.clip(1.0 - np.abs(xr - offset) / c.line_width, 0.0, 1.0)

        pattern = s.pattern
        if pattern != "lane2":
            obs[..., CH_LEFT] = line(s.left_line)
        if pattern != "lane3":
            obs[..., CH_RIGHT] = line(RIGHT_LINE)
        if pattern != "lane1":
            dash = np.mod(s.p + z, c.dash_period) < c.dash_length
            yellow = line(YELLOW_LINE)
            if pattern == "lane4":
                yellow = np.maximum.reduce([
                    yellow, line(YELLOW_LINE - c.extra_yellow_offset), line(YELLOW_LINE + c.extra_yellow_offset)])
            obs[..., CH_YELLOW] = yellow * dash
        grass = (xr < RIGHT_LINE - s.shoulder) | (xr > s.left_line + s.shoulder)
        lines = obs[..., :3].max(axis=-1) > 0
        obs[..., CH_GRASS] = np.where(grass & ~lines, c.grass_value, 0.0)
        return obs

    def region_masks(self, obs: np.ndarray | None = None) -> dict[str, np.ndarray]:
        return lane_region_masks(self.observation() if obs is None else obs)

    def lateral_offset(self) -> float:
        return float(self.state.d)


def lane_region_masks(obs: np.ndarray) -> dict[str, np.ndarray]:
    masks = {name: obs[..., ch] > 0 for ch, name in enumerate(REGIONS)}
    covered = np.zeros(obs.shape[:2], dtype=bool)
    for m in masks.values():
        covered |= m
    masks["other"] = ~covered
    return masks
