"""Gradient and perturbation saliency maps, and their conversion to masks."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .agent.policy import PolicyNetwork
from .numcore import Tensor


def _normalize(saliency: np.ndarray) -> np.ndarray:
    top = float(saliency.max()) if saliency.size else 0.0
    return saliency / top if top > 0 else np.zeros_like(saliency)


def jacobian_saliency(policy: PolicyNetwork, obs: np.ndarray, normalize: bool = True) -> np.ndarray:
    """|d head / d input| summed over channels, for one (H,W,C) observation.

    Discrete policies differentiate the chosen action's logit; continuous ones
    sum the absolute Jacobians of every mean dimension.
    """
    obs = np.asarray(obs, np.float32)
    head_np = policy.head_numpy(obs)
    dims = [int(np.argmax(head_np[0]))] if policy.arch.discrete else range(head_np.shape[1])
    total = np.zeros(obs.shape[:2], np.float64)
    for d in dims:
        x = Tensor(obs[None], requires_grad=True)
        head = policy.actor_out(policy.features(x))
        pick = np.zeros(head.shape, np.float32)
        pick[0, d] = 1.0
        (head * pick).sum().backward()
        total += np.abs(x.grad[0]).sum(axis=-1)
    return _normalize(total) if normalize else total


def perturbation_saliency(policy: PolicyNetwork, obs: np.ndarray, sigma: float = 1.5, stride: int = 1,
                          radius: int = 2, normalize: bool = True) -> np.ndarray:
    """Head change when a disk around each location is replaced by its blurred version."""
    if sigma <= 0:
        raise ValueError(f"blur sigma must be positive, got {sigma}")
    obs = np.asarray(obs, np.float32)
    h, w, _ = obs.shape
    blurred = ndimage.gaussian_filter(obs, sigma=(sigma, sigma, 0), mode="constant").astype(np.float32)
    rows = np.arange(0, h, stride)
    cols = np.arange(0, w, stride)
    batch = np.repeat(obs[None], len(rows) * len(cols), axis=0)
    yy, xx = np.mgrid[0:h, 0:w]
    for n, (i, j) in enumerate((i, j) for i in rows for j in cols):
        inside = ((yy - i) ** 2 + (xx - j) ** 2) <= radius * radius
        batch[n][inside] = blurred[inside]
    base = policy.head_numpy(obs)[0].astype(np.float64)
    heads = policy.head_numpy(batch).astype(np.float64)
    coarse = 0.5 * np.square(heads - base).sum(axis=1).reshape(len(rows), len(cols))
    if stride > 1:
        sal = ndimage.zoom(coarse, (h / len(rows), w / len(cols)), order=1)[:h, :w]
        sal = np.maximum(sal, 0.0)
    else:
        sal = coarse
    return _normalize(sal) if normalize else sal


def saliency_to_mask(saliency: np.ndarray, q: float = 0.25) -> np.ndarray:
    """Binary (H,W,1) mask keeping the highest cells until they hold fraction ``q`` of total mass."""
    if not 0.0 < q <= 1.0:
        raise ValueError(f"mass fraction q must lie in (0, 1], got {q}")
    s = np.asarray(saliency, np.float64)
    flat = s.ravel()
    total = flat.sum()
    mask = np.zeros(flat.shape, np.float32)
    if total > 0:
        order = np.argsort(-flat, kind="stable")
        cum = np.cumsum(flat[order])
        keep = int(np.searchsorted(cum, q * total, side="left")) + 1
        mask[order[:keep]] = 1.0
    return mask.reshape(s.shape + (1,))
