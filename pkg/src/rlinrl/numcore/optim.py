from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        opt_step(self.state, self.params, grads)


def opt_step(state: OptimizerState, params: dict[str, Tensor], grads: dict[str, np.ndarray] | None = None) -> None:
    """Adaptive-moment update in place. ``grads`` defaults to each parameter's ``.grad``."""
    if grads is None:
        grads = {}
        for name, p in params.items():
            if p.grad is None:
                raise RuntimeError(f"parameter {name!r} has no gradient")
            grads[name] = p.grad
    missing = set(params) - set(grads)
    if missing:
        raise RuntimeError(f"missing gradients for {sorted(missing)}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for k in grads:
            grads[k] = grads[k] * scale
    return total
