import math

import numpy as np
import pytest
from scipy import stats

from rlinrl.agent import PolicyArch, PolicyNetwork
from rlinrl.analysis import (AnalysisUsageError, action_trajectory, attention_shift_report, histogram_kl,
                             identity_masks, lane_ablation, masked_return_eval, region_attention, run_episodes,
                             sparse_reward_stats, zero_masks)
from rlinrl.envsim import CatchAvoid, LaneWorld

from oracles import ObsCatcher


def lane_policy(seed=0):
    return PolicyNetwork(PolicyArch((16, 16, 4), False, 2, channels=(4, 8), strides=(1, 2), hidden=16), seed)


def test_identity_mask_equals_unmasked():
    pol = lane_policy(1)
    seeds = range(4)
    bare = run_episodes(pol, LaneWorld, seeds)
    masked = masked_return_eval(pol, LaneWorld, identity_masks, seeds)
    assert masked["returns"] == bare.tolist()


def test_lane_ablation_rows_and_denominator():
    pol = lane_policy(2)
    rows = lane_ablation(pol, LaneWorld, range(3), ["lane0", "lane1", "lane3"])
    assert [r["pattern"] for r in rows] == ["lane0", "lane1", "lane3"]
    assert rows[0]["percent_of_lane0"] == 100.0
    assert rows[1]["percent_of_lane0"] == pytest.approx(100 * rows[1]["mean_return"] / rows[0]["mean_return"])


def test_identical_trajectories_have_zero_kl():
    a = np.random.default_rng(0).uniform(-1, 1, (500, 2))
    assert histogram_kl(a, a.copy(), False) == 0.0
    d = np.random.default_rng(1).integers(0, 3, 500)
    assert histogram_kl(d, d.copy(), True, 3) == 0.0


def test_disjoint_single_bin_kl_is_finite_closed_form():
    eps = 1e-3
    a, b = np.zeros(100, int), np.ones(100, int)
    floor = eps / (1 + 2 * eps)
    expected = (1 - 2 * floor) * math.log((1 - floor) / floor)
    assert histogram_kl(a, b, True, 2, eps=eps) == pytest.approx(expected, rel=1e-12)


def test_continuous_kl_matches_smoothed_histogram_oracle():
    rng = np.random.default_rng(3)
    a, b = rng.uniform(-1, 1, (300, 1)), np.clip(rng.normal(0.3, 0.4, (300, 1)), -1, 1)
    eps = 1e-3

    def smoothed(x):
        counts = np.histogram(x, bins=21, range=(-1, 1))[0]
        return (counts / len(x) + eps) / (1 + 21 * eps)

    assert histogram_kl(a, b, False, eps=eps) == pytest.approx(stats.entropy(smoothed(a), smoothed(b)))
    assert histogram_kl(a, b, False) > 0


def test_empty_trajectory_is_usage_error():
    with pytest.raises(AnalysisUsageError):
        histogram_kl(np.zeros(0), np.zeros(3), True, 2)
    with pytest.raises(AnalysisUsageError):
        action_trajectory(lane_policy(), LaneWorld, 0, seed=0)


def _lane_states(pattern="lane0", n=20):
    obs = []
    for s in range(n):
        obs.append(LaneWorld(pattern=pattern).reset(seed=s))
    return np.stack(obs)


def test_region_attention_of_constant_masks():
    obs = _lane_states()
    ones = region_attention(identity_masks(obs), obs)
    zeros = region_attention(zero_masks(obs), obs)
    for name, mass in ones.masses.items():
        if ones.visible[name]:
            assert mass == 1.0 and zeros.masses[name] == 0.0


def test_absent_region_is_not_applicable():
    obs = _lane_states("lane1")
    rep = region_attention(identity_masks(obs), obs)
    assert rep.masses["yellow"] is None
    assert math.isnan(rep.ratio("yellow", "right_white"))


def test_terminal_only_has_one_rewarded_step_per_episode():
    env = CatchAvoid(reward_mode="terminal_only")
    res = sparse_reward_stats(ObsCatcher(), lambda: CatchAvoid(reward_mode="terminal_only"), range(30))
    assert res["mean_nonzero_steps"] == 1.0
    assert res["mean_horizon"] == env.horizon
    assert res["nonzero_percent"] == pytest.approx(100.0 / env.horizon)


def test_dense_rewarded_steps_bounded_by_ball_count():
    res = sparse_reward_stats(ObsCatcher(), CatchAvoid, range(30))
    assert res["mean_nonzero_steps"] <= 3


def test_attention_shift_with_zero_mask():
    pol = lane_policy()
    rows = attention_shift_report(pol, zero_masks, lambda: LaneWorld(pattern="zigzag"), seed=0, steps=25)
    assert len(rows) == 25
    assert not any(r["grass_exceeds_right"] for r in rows)
    assert all(r["grass"] in (0.0, None) and r["right_white"] in (0.0, None) for r in rows)


def test_reports_are_deterministic():
    pol = lane_policy(3)
    a = action_trajectory(pol, LaneWorld, 60, seed=4)
    b = action_trajectory(pol, LaneWorld, 60, seed=4)
    assert np.array_equal(a, b)
