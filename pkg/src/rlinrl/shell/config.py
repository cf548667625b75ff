"""Flat ``dotted.key = value`` run configuration with materialized defaults."""
from __future__ import annotations

import hashlib
import json
from dataclasses import fields
from pathlib import Path
from typing import Any

from ..agent.policy import PolicyArch
from ..agent.ppo import PPOConfig
from ..envsim.catchavoid import CatchAvoidConfig
from ..envsim.laneworld import LaneWorldConfig
from ..interpret.trainer import InterpreterConfig


class ConfigError(ValueError):
    """Bad or incomplete configuration (exit code 2)."""


ENV_KINDS = {"laneworld": LaneWorldConfig, "catchavoid": CatchAvoidConfig}
ARCH_KEYS = ("channels", "strides", "hidden", "init_log_std")
REQUIRED = ("env.kind",)
GENERAL_DEFAULTS = {
    "eval.seeds": 100,
    "eval.seed_base": 10_000,
    "eval.steps": 500,
    "eval.states": 100,
    "eval.q": 0.25,
    "eval.sigma": 1.5,
    "eval.radius": 2,
    "eval.stride": 1,
    "eval.bins": 21,
    "eval.smoothing": 1e-3,
}


def parse_value(text: str) -> Any:
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    if "," in text:
        return tuple(parse_value(t) for t in text.split(",") if t.strip())
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def load_file(path: str | Path) -> dict[str, Any]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_text(text, str(path))


def _section(flat: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in flat.items() if k.startswith(prefix + ".")}


def _coerce(cls, values: dict, section: str) -> dict:
    known = {f.name: f for f in fields(cls)}
    out = {}
    for k, v in values.items():
        if k not in known:
            raise ConfigError(f"unknown config key {section}.{k}")
        default = known[k].default
        if isinstance(default, bool) and not isinstance(v, bool):
            raise ConfigError(f"{section}.{k} must be true or false")
        if isinstance(default, float) and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if isinstance(default, tuple) and not isinstance(v, tuple):
            v = (v,)
        out[k] = v
    return out


class RunConfig:
    """Validated configuration; ``resolved`` holds every key with defaults filled in."""

    def __init__(self, flat: dict[str, Any], required: tuple = REQUIRED):
        flat = dict(flat)
        for key in required:
            if key not in flat:
                raise ConfigError(f"missing config key {key}")
        kind = flat.get("env.kind", "laneworld")
        if kind not in ENV_KINDS:
            raise ConfigError(f"env.kind must be one of {sorted(ENV_KINDS)}, got {kind!r}")
        env_vals = _section(flat, "env")
        env_vals.pop("kind", None)
        try:
            self.env = ENV_KINDS[kind](**_coerce(ENV_KINDS[kind], env_vals, "env"))
            self.ppo = PPOConfig(**_coerce(PPOConfig, _section(flat, "ppo"), "ppo"))
            self.interpret = InterpreterConfig(**_coerce(InterpreterConfig, _section(flat, "interpret"),
                                                         "interpret"))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
        arch = _section(flat, "policy")
        for k in arch:
            if k not in ARCH_KEYS:
                raise ConfigError(f"unknown config key policy.{k}")
        self.arch_overrides = {k: (tuple(v) if isinstance(v, tuple) else v) for k, v in arch.items()}
        general = {k: v for k, v in flat.items()
                   if not k.startswith(("env.", "ppo.", "interpret.", "policy."))}
        for k in general:
            if k != "seed" and k not in GENERAL_DEFAULTS:
                raise ConfigError(f"unknown config key {k}")
        self.general = {**GENERAL_DEFAULTS, **general}
        self.env_kind = kind
        self.seed = int(flat.get("seed", 0))

    @property
    def resolved(self) -> dict[str, Any]:
        out: dict[str, Any] = {"env.kind": self.env_kind}
        for f in fields(self.env):
            out[f"env.{f.name}"] = getattr(self.env, f.name)
        for f in fields(self.ppo):
            out[f"ppo.{f.name}"] = getattr(self.ppo, f.name)
        for f in fields(self.interpret):
            out[f"interpret.{f.name}"] = getattr(self.interpret, f.name)
        defaults = PolicyArch((1, 1, 1), False, 1)
        for k in ARCH_KEYS:
            out[f"policy.{k}"] = self.arch_overrides.get(k, getattr(defaults, k))
        out.update(self.general)
        return dict(sorted(out.items()))

    def env_kwargs(self) -> dict[str, Any]:
        return {f.name: getattr(self.env, f.name) for f in fields(self.env)}


def format_config(resolved: dict[str, Any]) -> str:
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (tuple, list)):
            return ", ".join(fmt(x) for x in v)
        return str(v)
    return "".join(f"{k} = {fmt(v)}\n" for k, v in resolved.items())


def config_hash(resolved: dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(resolved, sort_keys=True, default=list).encode()).hexdigest()
