"""Tape gradients against central finite differences.

The finite-difference route runs a float64 copy of the stack so that the
check measures the derivative rules, not float32 round-off.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .layers import Stack
from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    non_smooth: int = 0  # entries skipped because a perturbation crossed a kink

    @property
    def flagged(self) -> bool:
        return self.non_smooth > 0


def _as64(stack: Stack) -> Stack:
    twin = copy.deepcopy(stack)
    for layer in twin.layers:
        for name, p in layer.params.items():
            layer.params[name] = Tensor(p.data, dtype=np.float64)
    return twin


def _loss(stack: Stack, x: np.ndarray, proj: np.ndarray, dtype, trace: Optional[list] = None) -> float:
    out = stack.forward(Tensor(x, dtype=dtype), trace=trace)
    return float(np.sum(out.data.astype(np.float64) * proj))


def _same_pattern(a: list, b: list) -> bool:
    return all((p is None and q is None) or np.array_equal(p, q) for p, q in zip(a, b))


def grad_check(stack: Stack, x: np.ndarray, eps: float = 1e-4, seed: int = 0,
               include_input: bool = True, atol_scale: float = 1e-3) -> GradCheckReport:
    x = np.asarray(x, dtype=np.float32)
    out_shape = stack.check_shape(x.shape)
    proj = np.random.default_rng(seed).standard_normal(out_shape)

    # tape route (float32)
    params = stack.named_parameters()
    for p in params.values():
        p.grad = None
    xin = Tensor(x, requires_grad=include_input)
    out = stack.forward(xin)
    loss = (out * Tensor(proj.astype(np.float32))).sum()
    tape: dict[str, np.ndarray] = {}
    if loss.requires_grad:
        loss.backward()
    for name, p in params.items():
        tape[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    if include_input:
        tape["input"] = xin.grad if xin.grad is not None else np.zeros_like(x)

    # finite-difference route (float64)
    twin = _as64(stack)
    twin_params = twin.named_parameters()
    x64 = x.astype(np.float64)
    base_trace: list = []
    _loss(twin, x64, proj, np.float64, base_trace)

    targets: dict[str, np.ndarray] = {n: p.data for n, p in twin_params.items()}
    if include_input:
        targets["input"] = x64

    fd: dict[str, np.ndarray] = {}
    skip: dict[str, np.ndarray] = {}
    for name, arr in targets.items():
        g = np.zeros(arr.shape)
        bad = np.zeros(arr.shape, dtype=bool)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            tr_p: list = []
            tr_m: list = []
            flat[i] = orig + eps
            fp = _loss(twin, x64, proj, np.float64, tr_p)
            flat[i] = orig - eps
            fm = _loss(twin, x64, proj, np.float64, tr_m)
            flat[i] = orig
            g.reshape(-1)[i] = (fp - fm) / (2 * eps)
            if not (_same_pattern(base_trace, tr_p) and _same_pattern(base_trace, tr_m)):
                bad.reshape(-1)[i] = True
        fd[name] = g
        skip[name] = bad

    scale = max(1.0, max((float(np.max(np.abs(g))) for g in fd.values() if g.size), default=1.0))
    floor = atol_scale * scale
    report = GradCheckReport(max_rel_error=0.0)
    for name in targets:
        a = tape[name].astype(np.float64)
        b = fd[name]
        ok = ~skip[name]
        report.non_smooth += int(np.sum(~ok))
        report.checked += int(np.sum(ok))
        if not ok.any():
            report.per_param[name] = 0.0
            continue
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        err = float(np.max((np.abs(a - b) / denom)[ok]))
        report.per_param[name] = err
        report.max_rel_error = max(report.max_rel_error, err)
    return report


def _case(kind: str, rng: np.random.Generator) -> tuple[Stack, np.ndarray]:
    """A small randomized stack exercising one layer kind."""
    from .layers import LAYER_KINDS, Conv2d, Dense, LayerSpec, ThresholdedReLU, Upsample2d, build_layer

    if kind == "dense":
        n_in, n_out = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        return Stack([Dense(n_in, n_out, rng=rng)]), rng.standard_normal((3, n_in))
    if kind == "conv2d":
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        k = int(rng.choice([1, 3]))
        layer = Conv2d(2, 3, k, stride, pad, rng=rng)
        return Stack([layer]), rng.standard_normal((2, 2, 5, 5))
    if kind == "upsample2d":
        return Stack([Upsample2d(int(rng.integers(1, 4)))]), rng.standard_normal((2, 2, 3, 3))
    if kind == "thresholded_relu":
        beta = float(rng.uniform(0.0, 0.9))
        return Stack([ThresholdedReLU(beta)]), rng.uniform(-0.5, 1.5, (2, 3, 4))
    if kind not in LAYER_KINDS:
        raise KeyError(kind)
    return Stack([build_layer(LayerSpec(kind, {}), rng)]), rng.standard_normal((2, 3, 4))


@dataclass
class KindResult:
    kind: str
    max_rel_error: float
    cases: int
    non_smooth: int
    passed: bool


def check_layer_kinds(cases: int = 50, seed: int = 0, tol: float = 1e-3,
                      kinds: Optional[list[str]] = None) -> list[KindResult]:
    """Run ``cases`` randomized gradient checks for every registered layer kind."""
    from .layers import LAYER_KINDS

    results = []
    for kind in kinds or list(LAYER_KINDS):
        rng = np.random.default_rng([seed, sum(kind.encode())])
        worst, skipped = 0.0, 0
        for i in range(cases):
            stack, x = _case(kind, rng)
            rep = grad_check(stack, x, seed=int(rng.integers(0, 2**31 - 1)))
            worst = max(worst, rep.max_rel_error)
            skipped += rep.non_smooth
        results.append(KindResult(kind, worst, cases, skipped, worst < tol))
    return results
