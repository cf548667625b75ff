"""Reward-consistency and action-matching rewards for one-step interpretation episodes."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..agent.policy import PolicyNetwork
from ..envsim import Env, EnvSnapshot, obs_hash


class IntegrityError(RuntimeError):
    """Counterfactual branches would not start from the same state."""


def reward_distance(r, r_prime, kind: str = "squared") -> np.ndarray:
    """Elementwise D over scalar rewards or returns."""
    diff = np.asarray(r, np.float64) - np.asarray(r_prime, np.float64)
    if kind == "squared":
        return np.square(diff)
    if kind == "absolute":
        return np.abs(diff)
    raise ValueError(f"unknown distance {kind!r}; expected 'squared' or 'absolute'")


def action_distance(a, a_tilde, discrete: bool, n_actions: int = 0, kind: str = "squared") -> np.ndarray:
    """D between (batches of) actions; discrete actions compare as one-hot vectors."""
    if discrete:
        a = np.asarray(a)
        b = np.asarray(a_tilde)
        if a.shape != b.shape:
            raise ValueError(f"action shapes differ: {a.shape} vs {b.shape}")
        n = n_actions or int(max(a.max(initial=0), b.max(initial=0))) + 1
        eye = np.eye(n)
        va, vb = eye[a.astype(int)], eye[b.astype(int)]
    else:
        va = np.asarray(a, np.float64)
        vb = np.asarray(a_tilde, np.float64)
        if va.shape != vb.shape:
            raise ValueError(f"action shapes differ: {va.shape} vs {vb.shape}")
        if va.ndim == 0:
            va, vb = va[None], vb[None]
    sq = np.square(va - vb).sum(axis=-1)
    if kind == "squared":
        return sq
    if kind == "absolute":
        return np.sqrt(sq)
    raise ValueError(f"unknown distance {kind!r}; expected 'squared' or 'absolute'")


def action_match_reward(a, a_tilde, discrete: bool, n_actions: int = 0, kind: str = "squared"):
    d = action_distance(a, a_tilde, discrete, n_actions, kind)
    return -d if np.ndim(d) else -float(d)


def _restore_checked(env: Env, snap: EnvSnapshot, expected_hash: str) -> None:
    if snap.obs_hash != expected_hash:
        raise IntegrityError("snapshot does not match the observation being interpreted")
    env.restore(snap)
    if obs_hash(env.observation()) != expected_hash:
        raise IntegrityError("restored environment renders a different observation than the snapshot")


def branch_returns(envs: Sequence[Env], snaps: Sequence[EnvSnapshot], first_actions, policy: PolicyNetwork,
                   k: int, gamma: float, hashes: Sequence[str] | None = None) -> np.ndarray:
    """Discounted k-step return of each branch: first action given, then the policy's deterministic actions.

    All branches advance in lock step so the policy runs once per step on the
    live batch. A branch that terminates early keeps its truncated sum.
    """
    if k < 1:
        raise ValueError(f"observation length must be >= 1, got {k}")
    n = len(envs)
    for i in range(n):
        _restore_checked(envs[i], snaps[i], hashes[i] if hashes is not None else snaps[i].obs_hash)
    returns = np.zeros(n, np.float64)
    live = np.ones(n, bool)
    actions = list(first_actions)
    obs = [None] * n
    discount = 1.0
    for step in range(k):
        if step > 0:
            idx = np.flatnonzero(live)
            if len(idx) == 0:
                break
            acts = policy.act_deterministic(np.stack([obs[i] for i in idx]))
            for j, i in enumerate(idx):
                actions[i] = acts[j]
        for i in np.flatnonzero(live):
            ob, r, done = envs[i].step(actions[i])
            returns[i] += discount * r
            obs[i] = ob
            if done:
                live[i] = False
        discount *= gamma
    return returns


def rlinrl_reward(env: Env, snap: EnvSnapshot, s: np.ndarray, policy: PolicyNetwork, a_tilde,
                  kind: str = "squared") -> tuple[float, float, float]:
    """Negative distance between the one-step rewards of the policy's action and ``a_tilde``.

    Returns (reward, r, r_prime).
    """
    h = obs_hash(s)
    a = policy.act_deterministic(s)
    _restore_checked(env, snap, h)
    _, r, _ = env.step(a)
    _restore_checked(env, snap, h)
    _, r_prime, _ = env.step(a_tilde)
    return -float(reward_distance(r, r_prime, kind)), r, r_prime


def rlinrl_reward_K(env: Env, snap: EnvSnapshot, s: np.ndarray, policy: PolicyNetwork, a_tilde, k: int,
                    gamma: float, kind: str = "squared") -> tuple[float, float, float]:
    """K-step version comparing discounted branch returns. Returns (reward, G_A, G_B)."""
    h = obs_hash(s)
    a = policy.act_deterministic(s)
    g_a = branch_returns([env], [snap], [a], policy, k, gamma, [h])[0]
    g_b = branch_returns([env], [snap], [a_tilde], policy, k, gamma, [h])[0]
    return -float(reward_distance(g_a, g_b, kind)), float(g_a), float(g_b)


def batch_consistency(make_env: Callable[[], Env], pool: list[Env], snaps: Sequence[EnvSnapshot],
                      obs: np.ndarray, policy: PolicyNetwork, a_tilde, k: int, gamma: float,
                      kind: str = "squared") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched reward-consistency over many start states. Returns (rewards, r, r_prime).

    ``pool`` is grown with fresh environments from ``make_env`` as needed and
    reused across calls.
    """
    n = len(snaps)
    while len(pool) < n:
        pool.append(make_env())
    envs = pool[:n]
    hashes = [obs_hash(o) for o in obs]
    a = policy.act_deterministic(obs)
    g_a = branch_returns(envs, snaps, list(a), policy, k, gamma, hashes)
    g_b = branch_returns(envs, snaps, list(a_tilde), policy, k, gamma, hashes)
    return -reward_distance(g_a, g_b, kind), g_a, g_b
