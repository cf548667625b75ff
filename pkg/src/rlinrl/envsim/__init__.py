"""Snapshot-restorable synthetic environments."""
from .base import Env, EnvSnapshot, EnvUsageError, InitStateError, obs_hash
from .laneworld import LaneWorld, LaneWorldConfig, LaneWorldState, PATTERNS, REGIONS, lane_region_masks
from .catchavoid import CatchAvoid, CatchAvoidConfig, CatchAvoidState


def make_env(kind: str, **kwargs) -> Env:
    if kind == "laneworld":
        return LaneWorld(**kwargs)
    if kind == "catchavoid":
        return CatchAvoid(**kwargs)
    raise ValueError(f"unknown environment kind {kind!r}")
