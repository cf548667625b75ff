"""Evaluation harnesses over trained policies and interpreters."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import baselines
from .agent.policy import PolicyArch, PolicyNetwork
from .agent.ppo import PPOConfig
from .agent.pretrain import pretrain
from .envsim import Env
from .envsim.laneworld import REGIONS, lane_region_masks
from .interpret.masknet import MaskNetwork, compute_mask
from .interpret.rewards import action_distance, batch_consistency
from .interpret.trainer import InterpreterConfig, rollout_pool, sample_start_states, train_interpreter
from .rng import derive_seed, stream

MaskFn = Callable[[np.ndarray], np.ndarray]  # (N,H,W,C) -> (N,H,W,1)


class AnalysisUsageError(ValueError):
    pass


# -- mask sources ---------------------------------------------------------------
def identity_masks(obs: np.ndarray) -> np.ndarray:
    return np.ones(obs.shape[:-1] + (1,), np.float32)


def zero_masks(obs: np.ndarray) -> np.ndarray:
    return np.zeros(obs.shape[:-1] + (1,), np.float32)


def interpreter_masks(mask_net: MaskNetwork) -> MaskFn:
    return lambda obs: compute_mask(mask_net, obs)


def saliency_masks(policy: PolicyNetwork, method: str, q: float = 0.25, **kwargs) -> MaskFn:
    if method == "jacobian":
        fn = lambda o: baselines.jacobian_saliency(policy, o)
    elif method == "perturbation":
        fn = lambda o: baselines.perturbation_saliency(policy, o, **kwargs)
    else:
        raise AnalysisUsageError(f"unknown saliency method {method!r}")
    return lambda obs: np.stack([baselines.saliency_to_mask(fn(o), q) for o in obs])


# -- episode running --------------------------------------------------------------
def run_episodes(policy: PolicyNetwork, make_env: Callable[[], Env], seeds: Sequence[int],
                 mask_fn: Optional[MaskFn] = None) -> np.ndarray:
    """Deterministic episode returns, stepping all seeds in lock step.

    With ``mask_fn`` the policy only ever sees the masked observation.
    """
    envs = [make_env() for _ in seeds]
    obs = [env.reset(seed=int(s)) for env, s in zip(envs, seeds)]
    returns = np.zeros(len(envs))
    live = list(range(len(envs)))
    while live:
        batch = np.stack([obs[i] for i in live]).astype(np.float32)
        if mask_fn is not None:
            batch = batch * mask_fn(batch)
        actions = policy.act_deterministic(batch)
        still = []
        for j, i in enumerate(live):
            obs[i], r, done = envs[i].step(actions[j])
            returns[i] += r
            if not done:
                still.append(i)
        live = still
    return returns


def masked_return_eval(policy: PolicyNetwork, make_env: Callable[[], Env], mask_fn: Optional[MaskFn],
                       seeds: Sequence[int]) -> dict:
    returns = run_episodes(policy, make_env, seeds, mask_fn)
    return {"mean": float(returns.mean()), "sd": float(returns.std()), "returns": returns.tolist()}


def lane_ablation(policy: PolicyNetwork, make_env: Callable[..., Env], seeds: Sequence[int],
                  patterns: Iterable[str] = ("lane0", "lane1", "lane2", "lane3")) -> list[dict]:
    """Unmasked return under each render pattern, as a percentage of lane0's."""
    patterns = list(patterns)
    means = {p: float(run_episodes(policy, lambda p=p: make_env(pattern=p), seeds).mean())
             for p in dict.fromkeys(["lane0"] + patterns)}
    base = means["lane0"]
    rows = []
    for p in patterns:
        pct = 100.0 if p == "lane0" else (100.0 * means[p] / base if base != 0 else float("nan"))
        rows.append({"pattern": p, "mean_return": means[p], "percent_of_lane0": pct})
    return rows


# -- action divergence ------------------------------------------------------------
def _histogram(values: np.ndarray, bins: int, lo: float, hi: float, eps: float) -> np.ndarray:
    counts, _ = np.histogram(np.clip(values, lo, hi), bins=bins, range=(lo, hi))
    freq = counts / max(len(values), 1)
    return (freq + eps) / (1.0 + bins * eps)


def histogram_kl(a: np.ndarray, b: np.ndarray, discrete: bool, n_actions: int = 0, bins: int = 21,
                 eps: float = 1e-3) -> float:
    """Summed per-dimension KL(a || b) between smoothed empirical action histograms."""
    a = np.asarray(a)
    b = np.asarray(b)
    if len(a) == 0 or len(b) == 0:
        raise AnalysisUsageError("action trajectories must be non-empty")
    if discrete:
        n = n_actions or int(max(a.max(), b.max())) + 1
        pa = (np.bincount(a.astype(int), minlength=n) / len(a) + eps) / (1.0 + n * eps)
        pb = (np.bincount(b.astype(int), minlength=n) / len(b) + eps) / (1.0 + n * eps)
        return float(np.sum(pa * np.log(pa / pb)))
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    total = 0.0
    for d in range(a.shape[1]):
        pa = _histogram(a[:, d], bins, -1.0, 1.0, eps)
        pb = _histogram(b[:, d], bins, -1.0, 1.0, eps)
        total += float(np.sum(pa * np.log(pa / pb)))
    return total


def action_trajectory(policy: PolicyNetwork, make_env: Callable[[], Env], steps: int, seed: int,
                      mask_fn: Optional[MaskFn] = None) -> np.ndarray:
    """Deterministic actions over ``steps`` interactions, resetting with fresh seeds when episodes end."""
    if steps <= 0:
        raise AnalysisUsageError(f"steps must be positive, got {steps}")
    env = make_env()
    seeds = stream(seed, "trajectory")
    ob = env.reset(seed=int(seeds.integers(0, 2**31 - 1)))
    actions = []
    for _ in range(steps):
        x = ob[None].astype(np.float32)
        if mask_fn is not None:
            x = x * mask_fn(x)
        act = policy.act_deterministic(x)[0]
        actions.append(act)
        ob, _, done = env.step(act)
        if done:
            ob = env.reset(seed=int(seeds.integers(0, 2**31 - 1)))
    return np.asarray(actions)


def action_divergence(policy: PolicyNetwork, mask_net: MaskNetwork, make_env: Callable[[], Env],
                      steps: int = 500, seed: int = 0, bins: int = 21, eps: float = 1e-3) -> float:
    a_orig = action_trajectory(policy, make_env, steps, seed)
    a_mask = action_trajectory(policy, make_env, steps, seed, interpreter_masks(mask_net))
    return histogram_kl(a_orig, a_mask, policy.arch.discrete, policy.arch.action_dim, bins, eps)


def divergence_report(policy: PolicyNetwork, mask_net: MaskNetwork, make_env: Callable[..., Env],
                      patterns: Sequence[str], seeds: Sequence[int], steps: int = 500, bins: int = 21,
                      eps: float = 1e-3) -> list[dict]:
    rows = []
    for p in patterns:
        vals = [action_divergence(policy, mask_net, lambda p=p: make_env(pattern=p), steps, s, bins, eps)
                for s in seeds]
        rows.append({"pattern": p, "kl_mean": float(np.mean(vals)), "kl_sd": float(np.std(vals)),
                     "kl": vals})
    base = next((r["kl_mean"] for r in rows if r["pattern"] == "lane0"), None)
    for r in rows:
        r["percent_of_lane0"] = 100.0 * r["kl_mean"] / base if base else float("nan")
    return rows


# -- region attention -------------------------------------------------------------
@dataclass
class RegionReport:
    masses: dict  # region -> mean mask value, or None when never visible
    visible: dict = field(default_factory=dict)  # region -> number of states where visible

    def ratio(self, num: str, den: str) -> float:
        a, b = self.masses.get(num), self.masses.get(den)
        if a is None or b is None or b == 0:
            return float("nan")
        return a / b


def region_attention(masks: np.ndarray, obs: np.ndarray,
                     region_fn: Callable[[np.ndarray], dict] = lane_region_masks) -> RegionReport:
    """Mean mask value inside each region, averaged over states where that region is visible."""
    masks = np.asarray(masks)
    if masks.ndim == 4:
        masks = masks[..., 0]
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for m, o in zip(masks, obs):
        for name, region in region_fn(o).items():
            counts.setdefault(name, 0)
            sums.setdefault(name, 0.0)
            if region.any():
                sums[name] += float(m[region].mean())
                counts[name] += 1
    masses = {k: (sums[k] / counts[k] if counts[k] else None) for k in counts}
    return RegionReport(masses, counts)


def sample_states(policy: PolicyNetwork, make_env: Callable[[], Env], n: int, seed: int,
                  reset_fraction: float = 0.5, pool_episodes: int = 4):
    """Held-out start states drawn like the interpreter's training states, from an independent stream."""
    pool = rollout_pool(policy, make_env, pool_episodes, derive_seed(seed, "heldout-pool"))
    return sample_start_states(make_env, pool, n, reset_fraction, stream(seed, "heldout"))


def region_report_for(mask_net: MaskNetwork, policy: PolicyNetwork, make_env: Callable[[], Env],
                      n: int = 100, seed: int = 0) -> RegionReport:
    states = sample_states(policy, make_env, n, seed)
    return region_attention(compute_mask(mask_net, states.obs), states.obs)


def consistency_eval(policy: PolicyNetwork, mask_net: MaskNetwork, make_env: Callable[[], Env],
                     n: int = 200, seed: int = 0, k: int = 1, gamma: float = 0.99) -> dict:
    """Reward and action gaps between original and masked deterministic actions on held-out states."""
    states = sample_states(policy, make_env, n, seed)
    masks = compute_mask(mask_net, states.obs)
    a = policy.act_deterministic(states.obs)
    a_tilde = policy.act_deterministic(states.obs * masks)
    _, r, r_prime = batch_consistency(make_env, [], states.snaps, states.obs, policy, a_tilde, k, gamma)
    dist = action_distance(a, a_tilde, policy.arch.discrete, policy.arch.action_dim, "absolute")
    return {"mean_reward_gap": float(np.mean(np.abs(r - r_prime))),
            "mean_action_gap": float(np.mean(dist)),
            "mean_mask": float(masks.mean()), "states": n}


# -- sparse rewards and attention shift ---------------------------------------------
def sparse_reward_stats(policy: PolicyNetwork, make_env: Callable[[], Env], seeds: Sequence[int]) -> dict:
    lengths, nonzero = [], []
    for s in seeds:
        env = make_env()
        ob = env.reset(seed=int(s))
        steps = hits = 0
        done = False
        while not done:
            ob, r, done = env.step(policy.act_deterministic(ob))
            steps += 1
            hits += r != 0.0
        lengths.append(steps)
        nonzero.append(hits)
    mean_len = float(np.mean(lengths))
    mean_nz = float(np.mean(nonzero))
    return {"mean_horizon": mean_len, "mean_nonzero_steps": mean_nz,
            "nonzero_percent": 100.0 * float(np.sum(nonzero)) / float(np.sum(lengths))}


def attention_shift_report(policy: PolicyNetwork, mask_fn: MaskFn, make_env: Callable[[], Env],
                           seed: int, steps: Optional[int] = None) -> list[dict]:
    """Per-step grass and right-line attention along one deterministic rollout."""
    env = make_env()
    ob = env.reset(seed=int(seed))
    limit = steps or env.horizon
    rows = []
    for t in range(limit):
        m = mask_fn(ob[None].astype(np.float32))[0, ..., 0]
        regions = lane_region_masks(ob)
        grass = float(m[regions["grass"]].mean()) if regions["grass"].any() else None
        right = float(m[regions["right_white"]].mean()) if regions["right_white"].any() else None
        flag = grass is not None and grass > (right or 0.0)
        rows.append({"step": t, "grass": grass, "right_white": right, "grass_exceeds_right": bool(flag)})
        ob, _, done = env.step(policy.act_deterministic(ob))
        if done:
            break
    return rows


def retrain_without_yellow_experiment(make_env: Callable[..., Env], seed: int, ppo_config: PPOConfig,
                                      action_config: InterpreterConfig, reward_config: InterpreterConfig,
                                      arch: Optional[PolicyArch] = None, policy: Optional[PolicyNetwork] = None,
                                      n_states: int = 100, ablation_seeds: Sequence[int] = range(20)) -> dict:
    """Interpret a policy that never saw the yellow line, on renders that show it.

    The policy is pretrained on lane1 (unless ``policy`` is given), then an
    action-matching and a reward-matching interpreter are both trained and
    evaluated on lane0 renders.
    """
    lane0 = lambda: make_env(pattern="lane0")
    if policy is None:
        policy, _ = pretrain(lambda: make_env(pattern="lane1"), ppo_config, derive_seed(seed, "no-yellow"), arch)
    without = run_episodes(policy, lambda: make_env(pattern="lane1"), ablation_seeds).mean()
    with_yellow = run_episodes(policy, lane0, ablation_seeds).mean()
    change = abs(with_yellow - without) / abs(without) * 100.0 if without else float("nan")
    out = {"policy": policy,
           "yellow_ablation": {"lane1_return": float(without), "lane0_return": float(with_yellow),
                               "change_percent": float(change)}}
    for name, cfg in (("action", action_config), ("reward", reward_config)):
        res = train_interpreter(policy, lane0, cfg, derive_seed(seed, "no-yellow", name))
        out[name] = region_report_for(res.mask_net, policy, lane0, n_states, seed)
        out[f"{name}_mask_net"] = res.mask_net
    return out


__all__ = [
    "AnalysisUsageError", "RegionReport", "REGIONS", "identity_masks", "zero_masks", "interpreter_masks",
    "saliency_masks", "run_episodes", "masked_return_eval", "lane_ablation", "histogram_kl",
    "action_trajectory", "action_divergence", "divergence_report", "region_attention", "sample_states",
    "region_report_for", "consistency_eval", "sparse_reward_stats", "attention_shift_report",
    "retrain_without_yellow_experiment",
]
