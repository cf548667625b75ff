"""Checkpoints (parameter blob plus JSON sidecar), reports, and PGM heatmaps."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from ..agent.policy import PolicyArch, PolicyNetwork
from ..envsim import make_env
from ..interpret.masknet import MaskNetwork
from ..numcore import serialize


class IntegrityError(RuntimeError):
    """A checkpoint does not match what it claims to be (exit code 4)."""


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_sha256(path: str | Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def _clean(obj: Any) -> Any:
    """JSON-friendly copy: tuples to lists, numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(obj: Any) -> bytes:
    return (json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n").encode("utf-8")


def write_json(path: str | Path, obj: Any) -> None:
    serialize.atomic_write(str(path), dump_json(obj))


def write_csv(path: str | Path, rows: Iterable[Mapping], columns: Iterable[str]) -> None:
    columns = list(columns)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_csv_cell(row.get(c)) for c in columns])
    serialize.atomic_write(str(path), buf.getvalue().encode("utf-8"))


def _csv_cell(v: Any) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def env_signature(kind: str, obs_shape: tuple) -> str:
    h, w, c = obs_shape
    return sha256_bytes(f"{kind}:{h}x{w}x{c}".encode())[:16]


def save_checkpoint(path: str | Path, state: Mapping[str, np.ndarray], sidecar: Mapping[str, Any]) -> str:
    """Write the blob and ``<path>.json``; returns the blob's sha256."""
    blob = serialize.dumps(state)
    digest = sha256_bytes(blob)
    serialize.atomic_write(str(path), blob)
    write_json(str(path) + ".json", {**sidecar, "sha256": digest})
    return digest


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict, str]:
    """Returns (tensors, sidecar, sha256); raises OSError or IntegrityError."""
    blob = Path(path).read_bytes()
    sidecar = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    digest = sha256_bytes(blob)
    if sidecar.get("sha256") not in (None, digest):
        raise IntegrityError(f"{path}: content hash does not match its sidecar")
    try:
        state = serialize.loads(blob)
    except serialize.FormatError as exc:
        raise IntegrityError(f"{path}: {exc}") from None
    return state, sidecar, digest


def policy_from_checkpoint(path: str | Path) -> tuple[PolicyNetwork, dict, str]:
    state, side, digest = load_checkpoint(path)
    if side.get("type") != "policy":
        raise IntegrityError(f"{path} is not a policy checkpoint")
    net = PolicyNetwork(PolicyArch.from_dict(side["arch"]))
    try:
        net.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise IntegrityError(f"{path}: {exc}") from None
    return net, side, digest


def interpreter_from_checkpoint(path: str | Path) -> tuple[MaskNetwork, dict, str]:
    state, side, digest = load_checkpoint(path)
    if side.get("type") != "interpreter":
        raise IntegrityError(f"{path} is not an interpreter checkpoint")
    shell = PolicyNetwork(PolicyArch.from_dict(side["policy_arch"]))
    cfg = side["config"]
    net = MaskNetwork(shell, beta=cfg["beta"], dec_channels=cfg["dec_channels"], init_bias=cfg["init_bias"])
    try:
        net.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise IntegrityError(f"{path}: {exc}") from None
    return net, side, digest


def env_factory(sidecar_env: Mapping[str, Any], **overrides):
    """Environment constructor from a sidecar's recorded env kind and config."""
    kind = sidecar_env["kind"]
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in sidecar_env["config"].items()}
    kwargs.update(overrides)
    return lambda **extra: make_env(kind, **{**kwargs, **extra})


def pgm_bytes(image: np.ndarray) -> bytes:
    """Binary greyscale PGM from values in [0, 1]."""
    img = np.clip(np.asarray(image, np.float64), 0.0, 1.0)
    h, w = img.shape
    pixels = np.round(img * 255.0).astype(np.uint8)
    return f"P5 {w} {h} 255\n".encode("ascii") + pixels.tobytes()
