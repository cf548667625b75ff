"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Trained artifacts are cached (see acceptance_support), so the first run
trains everything and later runs only re-evaluate.
"""
import time

import numpy as np
import pytest

import acceptance_support as acc
from oracles import lane_follower, run_scripted
from rlinrl import analysis
from rlinrl.envsim import CatchAvoid
from rlinrl.interpret import InterpreterConfig, batch_consistency, train_interpreter
from rlinrl.numcore import check_layer_kinds
from rlinrl.shell import persist
from rlinrl.shell.cli import main

pytestmark = pytest.mark.acceptance

EVAL_SEEDS = list(range(10_000, 10_100))
FIVE_SEEDS = list(range(20_000, 20_005))
INTERP_SEEDS = (0, 1, 2)
ALPHAS = (0.0, 0.05, 0.1, 0.2, 0.4)
DEFAULT_ALPHA = 0.1  # interpret.alpha in laneworld.conf


# -- shared artifacts ---------------------------------------------------------------
@pytest.fixture(scope="session")
def lane0():
    return acc.policy("lane0", "laneworld.conf")


@pytest.fixture(scope="session")
def lane1():
    return acc.policy("lane1", "laneworld_lane1.conf")


@pytest.fixture(scope="session")
def catch():
    return acc.policy("catch", "catchavoid.conf")


CLI_MODES = {"reward": "reward", "action_rl": "actionRL", "action_supervised": "actionSup"}


def lane_interp(policy_path, mode, seed=0, alpha=None, name="lane0"):
    tag = f"{name}-{mode}-s{seed}" + ("" if alpha is None else f"-a{alpha}")
    return acc.interpreter(tag, policy_path, "laneworld.conf", CLI_MODES[mode], seed, alpha)


def load_policy(path):
    net, side, _ = persist.policy_from_checkpoint(path)
    return net, persist.env_factory(side["env"])


def load_mask(path):
    return persist.interpreter_from_checkpoint(path)[0]


# -- 1 ------------------------------------------------------------------------------
def test_criterion_01_gradient_correctness():
    start = time.perf_counter()
    results = check_layer_kinds(cases=50, seed=0, tol=1e-3)
    elapsed = time.perf_counter() - start
    worst = max(results, key=lambda r: r.max_rel_error)
    ok = all(r.passed for r in results) and elapsed < 30.0
    acc.record(1, ok, f"{len(results)} layer kinds, worst {worst.kind} rel err {worst.max_rel_error:.2e} "
                      f"(< 1e-3), {elapsed:.1f}s (< 30s)")
    assert ok


# -- 2 ------------------------------------------------------------------------------
def test_criterion_02_pretraining_competence(lane0, catch):
    lane_net, lane_env = load_policy(lane0)
    agent = analysis.run_episodes(lane_net, lane_env, EVAL_SEEDS).mean()
    oracle = run_scripted(lane_env, lane_follower, EVAL_SEEDS).mean()
    catch_net, catch_env = load_policy(catch)
    caught = analysis.run_episodes(catch_net, catch_env, EVAL_SEEDS).mean() / CatchAvoid().config.n_balls
    t_lane, t_catch = acc.build_seconds(lane0), acc.build_seconds(catch)
    ok = agent >= 0.9 * oracle and caught >= 0.8 and t_lane < 900 and t_catch < 900
    acc.record(2, ok, f"lane agent {agent:.2f} vs oracle {oracle:.2f} ({100 * agent / oracle:.1f}% >= 90%), "
                      f"catch rate {100 * caught:.1f}% (>= 80%), train {t_lane:.0f}s / {t_catch:.0f}s (< 900s)")
    assert ok


# -- 3 ------------------------------------------------------------------------------
def test_criterion_03_reward_consistency(lane0):
    net, make_env = load_policy(lane0)
    mask = load_mask(lane_interp(lane0, "reward"))
    res = analysis.consistency_eval(net, mask, make_env, n=200, seed=77)
    lo, hi = make_env().config.reward_range
    limit = 0.05 * (hi - lo)
    ok = res["mean_reward_gap"] <= limit and res["mean_action_gap"] > 0
    acc.record(3, ok, f"mean |r - r'| {res['mean_reward_gap']:.4f} (<= {limit:.3f}), "
                      f"mean |a - a~| {res['mean_action_gap']:.4f} (> 0), mean mask {res['mean_mask']:.3f}")
    assert ok


# -- 4 ------------------------------------------------------------------------------
def test_criterion_04_sparsity_sweep(lane0):
    net, make_env = load_policy(lane0)
    means = []
    for alpha in ALPHAS:
        # the configured alpha reuses the default reward interpreter
        mask = load_mask(lane_interp(lane0, "reward", alpha=None if alpha == DEFAULT_ALPHA else alpha))
        states = analysis.sample_states(net, make_env, 200, seed=78)
        means.append(float(analysis.compute_mask(mask, states.obs).mean()))
    monotone = all(b <= a + 0.05 for a, b in zip(means, means[1:]))
    ok = means[0] >= 0.9 and monotone
    acc.record(4, ok, "mask mean by alpha " + ", ".join(f"{a}:{m:.3f}" for a, m in zip(ALPHAS, means))
               + " (alpha 0 >= 0.9, non-increasing within 0.05)")
    assert ok


# -- 5 ------------------------------------------------------------------------------
def test_criterion_05_mode_reduction(lane0):
    net, make_env = load_policy(lane0)
    small = dict(epochs=3, episodes_per_epoch=64, minibatch=32, pool_episodes=1)
    a = train_interpreter(net, make_env, InterpreterConfig(mode="reward", **small), seed=5)
    b = train_interpreter(net, make_env, InterpreterConfig(mode="reward_K", k=1, **small), seed=5)
    identical = all(np.array_equal(x, y) for x, y in zip(a.episode_rewards, b.episode_rewards)) \
        and len(a.episode_rewards) == len(b.episode_rewards)
    states = analysis.sample_states(net, make_env, 64, seed=79)
    same = net.act_deterministic(states.obs)
    horizon = make_env().horizon
    zeros = {}
    for k in (1, 5, horizon):
        rewards, _, _ = batch_consistency(make_env, [], states.snaps, states.obs, net, same, k, 0.99)
        zeros[k] = bool(np.all(rewards == 0.0))
    ok = identical and all(zeros.values())
    acc.record(5, ok, f"K=1 episode rewards bit-identical: {identical}; a~ = a gives exactly 0 for K in "
                      f"{sorted(zeros)}: {all(zeros.values())}")
    assert ok


# -- 6 ------------------------------------------------------------------------------
def test_criterion_06_redundant_attention(lane0, lane1):
    net0, env0 = load_policy(lane0)
    yellow = {"reward": [], "action_supervised": [], "action_rl": []}
    for seed in INTERP_SEEDS:
        for mode in yellow:
            mask = load_mask(lane_interp(lane0, mode, seed=seed))
            yellow[mode].append(analysis.region_report_for(mask, net0, env0, 100, seed=80 + seed).masses["yellow"])
    y = {m: float(np.mean(v)) for m, v in yellow.items()}
    first = y["action_supervised"] >= 2 * y["reward"] and y["action_rl"] >= 2 * y["reward"]

    net1, env1 = load_policy(lane1)
    lane0_renders = lambda: env1(pattern="lane0")
    ratios = {}
    for mode in ("action_supervised", "action_rl", "reward"):
        mask = load_mask(lane_interp(lane1, mode, name="lane1"))
        ratios[mode] = analysis.region_report_for(mask, net1, lane0_renders, 100, seed=83).ratio("yellow",
                                                                                                "right_white")
    second = ratios["action_supervised"] > 0.2 and ratios["action_rl"] > 0.2 and ratios["reward"] < 0.1
    ok = first and second
    acc.record(6, ok, f"lane0 policy yellow mass: supervised {y['action_supervised']:.3f}, action-RL "
                      f"{y['action_rl']:.3f}, reward {y['reward']:.3f} (action >= 2x reward); lane1 policy "
                      f"yellow/right: supervised {ratios['action_supervised']:.3f}, action-RL "
                      f"{ratios['action_rl']:.3f} (> 0.2), reward {ratios['reward']:.3f} (< 0.1)")
    assert ok


# -- 7 ------------------------------------------------------------------------------
def test_criterion_07_lane_ablation(lane0):
    net, make_env = load_policy(lane0)
    rows = {r["pattern"]: r["percent_of_lane0"]
            for r in analysis.lane_ablation(net, make_env, EVAL_SEEDS, ["lane0", "lane1", "lane2", "lane3"])}
    between = min(rows["lane1"], rows["lane3"]) <= rows["lane2"] <= max(rows["lane1"], rows["lane3"])
    ok = rows["lane1"] >= 90 and rows["lane3"] <= 60 and between
    acc.record(7, ok, f"percent of lane0: lane1 {rows['lane1']:.1f} (>= 90), lane2 {rows['lane2']:.1f} "
                      f"(between), lane3 {rows['lane3']:.1f} (<= 60)")
    assert ok


# -- 8 ------------------------------------------------------------------------------
def test_criterion_08_kl_ordering(lane0):
    net, make_env = load_policy(lane0)
    mask = load_mask(lane_interp(lane0, "action_supervised"))
    rows = {r["pattern"]: r for r in analysis.divergence_report(net, mask, make_env, ["lane0", "lane1", "lane4"],
                                                                FIVE_SEEDS, steps=500)}
    k1, k0, k4 = (rows[p]["kl_mean"] for p in ("lane1", "lane0", "lane4"))
    s1, s0, s4 = (rows[p]["kl_sd"] for p in ("lane1", "lane0", "lane4"))
    ok = (k1 - k0) > max(s1, s0) and (k0 - k4) > max(s0, s4)
    acc.record(8, ok, f"KL lane1 {k1:.4f}+-{s1:.4f}, lane0 {k0:.4f}+-{s0:.4f}, lane4 {k4:.4f}+-{s4:.4f} "
                      f"(lane1 > lane0 > lane4, gaps above sd)")
    assert ok


# -- 9 ------------------------------------------------------------------------------
def test_criterion_09_masked_returns(lane0):
    net, make_env = load_policy(lane0)
    bare = analysis.masked_return_eval(net, make_env, None, FIVE_SEEDS)["mean"]
    sources = {
        "reward": analysis.interpreter_masks(load_mask(lane_interp(lane0, "reward"))),
        "supervised": analysis.interpreter_masks(load_mask(lane_interp(lane0, "action_supervised"))),
        "perturbation": analysis.saliency_masks(net, "perturbation"),
        "jacobian": analysis.saliency_masks(net, "jacobian"),
    }
    m = {k: analysis.masked_return_eval(net, make_env, fn, FIVE_SEEDS)["mean"] for k, fn in sources.items()}
    close = abs(m["reward"] - m["supervised"]) <= 0.1 * max(abs(m["reward"]), abs(m["supervised"]))
    ok = close and min(m["reward"], m["supervised"]) > m["perturbation"] > m["jacobian"] \
        and m["reward"] >= 0.9 * bare
    acc.record(9, ok, f"unmasked {bare:.2f}; reward {m['reward']:.2f}, supervised {m['supervised']:.2f} "
                      f"(within 10%), perturbation {m['perturbation']:.2f}, jacobian {m['jacobian']:.2f} "
                      f"(ordered), reward/unmasked {100 * m['reward'] / bare:.1f}% (>= 90%)")
    assert ok


# -- 10 -----------------------------------------------------------------------------
def test_criterion_10_sparse_rewards(catch):
    horizon = CatchAvoid().horizon
    path = acc.interpreter("catch-sparse-rewardK", catch, "catchavoid_sparse.conf", "rewardK", k=horizon)
    mask = load_mask(path)
    net, _ = load_policy(catch)
    sparse_env = lambda: CatchAvoid(reward_mode="terminal_only")
    res = analysis.consistency_eval(net, mask, sparse_env, n=200, seed=81, k=horizon, gamma=1.0)
    lo, hi = CatchAvoid().config.return_range
    limit = 0.1 * (hi - lo)
    ok = 0.02 < res["mean_mask"] < 0.9 and res["mean_reward_gap"] <= limit
    acc.record(10, ok, f"mask mean {res['mean_mask']:.3f} (in (0.02, 0.9)), mean |G_A - G_B| "
                       f"{res['mean_reward_gap']:.4f} (<= {limit:.2f})")
    assert ok


# -- 11 -----------------------------------------------------------------------------
TINY = """\
env.kind = laneworld
ppo.total_steps = 256
ppo.num_envs = 2
ppo.rollout_len = 128
ppo.minibatch = 64
policy.channels = 4, 8
policy.strides = 1, 2
policy.hidden = 16
interpret.epochs = 2
interpret.episodes_per_epoch = 32
interpret.pool_episodes = 1
"""


def _run_twice(tmp_path, capsys, argv, outputs):
    blobs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir(exist_ok=True)
        args = [a.replace("{d}", str(d)) for a in argv]
        code = main(args)
        stdout = capsys.readouterr().out.replace(str(d), "{d}")
        blobs.append((code, stdout, [(d / o).read_bytes() for o in outputs]))
    return blobs[0] == blobs[1] and blobs[0][0] == 0


def test_criterion_11_determinism(tmp_path, capsys, lane0):
    conf = tmp_path / "tiny.conf"
    conf.write_text(TINY, encoding="utf-8")
    base = tmp_path / "base"
    base.mkdir()
    pol, interp = base / "p.rlnr", base / "m.rlnr"
    assert main(["pretrain", "--config", str(conf), "--out", str(pol)]) == 0
    assert main(["interpret", "--policy", str(pol), "--config", str(conf), "--mode", "actionSup",
                 "--out", str(interp)]) == 0
    capsys.readouterr()
    p, m = str(pol), str(interp)
    commands = {
        "pretrain": (["pretrain", "--config", str(conf), "--out", "{d}/p.rlnr"],
                     ["p.rlnr", "p.rlnr.json", "p.rlnr.curve.csv"]),
        "interpret": (["interpret", "--policy", p, "--config", str(conf), "--out", "{d}/m.rlnr"],
                      ["m.rlnr", "m.rlnr.json", "m.rlnr.log.csv"]),
        "evaluate": (["evaluate", "--policy", p, "--mask", "interpreter", "--interpreter", m, "--seeds", "2",
                      "--out", "{d}/e.json"], ["e.json", "e.csv"]),
        "evaluate-perturbation": (["evaluate", "--policy", p, "--mask", "perturbation", "--seeds", "1",
                                   "--out", "{d}/e.json"], ["e.json", "e.csv"]),
        "ablate": (["ablate", "--policy", p, "--seeds", "2", "--out", "{d}/a.json"], ["a.json", "a.csv"]),
        "divergence": (["divergence", "--policy", p, "--interpreter", m, "--steps", "30", "--seeds", "2",
                        "--out", "{d}/k.json"], ["k.json", "k.csv"]),
        "regions": (["regions", "--policy", p, "--interpreter", m, "--states", "10", "--out", "{d}/r.json"],
                    ["r.json", "r.csv"]),
        "shift": (["shift", "--policy", p, "--interpreter", m, "--steps", "10", "--out", "{d}/s.json"],
                  ["s.json", "s.csv"]),
        "sparse-stats": (["sparse-stats", "--policy", str(acc.policy("catch", "catchavoid.conf")),
                          "--reward-mode", "terminal_only", "--seeds", "5", "--out", "{d}/x.json"],
                         ["x.json", "x.csv"]),
        "export-heatmap": (["export-heatmap", "--interpreter", m, "--states", "2", "--out", "{d}/h"],
                           ["h/masks.csv", "h/state000_mask.pgm", "h/state001_overlay.pgm"]),
        "grad-check": (["grad-check", "--cases", "3"], []),
    }
    verdict = {}
    for name, (argv, outs) in commands.items():
        (tmp_path / name).mkdir()
        verdict[name] = _run_twice(tmp_path / name, capsys, argv, outs)
    ok = all(verdict.values())
    bad = [k for k, v in verdict.items() if not v]
    acc.record(11, ok, f"{len(verdict)} commands repeated byte-identically" if ok else f"differs: {bad}")
    assert ok
