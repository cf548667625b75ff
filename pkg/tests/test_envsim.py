import numpy as np
import pytest

from rlinrl.envsim import (CatchAvoid, EnvUsageError, InitStateError, LaneWorld, PATTERNS, lane_region_masks,
                           make_env)
from rlinrl.envsim.catchavoid import CH_BALLS, RIGHT, STAY
from rlinrl.envsim.laneworld import CH_LEFT, CH_RIGHT, CH_YELLOW

from oracles import catcher, lane_follower, run_scripted


@pytest.mark.parametrize("kind", ["laneworld", "catchavoid"])
def test_same_seed_same_observation(kind):
    a = make_env(kind).reset(seed=7)
    b = make_env(kind).reset(seed=7)
    assert np.array_equal(a, b)
    assert a.dtype == np.float32 and a.min() >= 0 and a.max() <= 1


def test_lane1_has_no_yellow():
    obs = LaneWorld(pattern="lane1").reset(seed=3)
    assert not obs[..., CH_YELLOW].any()


def test_lane3_has_no_right_line_and_lane2_no_left():
    assert not LaneWorld(pattern="lane3").reset(seed=3)[..., CH_RIGHT].any()
    assert not LaneWorld(pattern="lane2").reset(seed=3)[..., CH_LEFT].any()


def test_lane4_yellow_is_about_three_times_lane0():
    ratios = []
    for seed in range(40):
        c0 = (LaneWorld(pattern="lane0").reset(seed=seed)[..., CH_YELLOW] > 0).sum()
        c4 = (LaneWorld(pattern="lane4").reset(seed=seed)[..., CH_YELLOW] > 0).sum()
        if c0:
            ratios.append(c4 / c0)
    assert 2.7 <= np.mean(ratios) <= 3.3


def test_region_masks_disjoint_and_cover_channels():
    env = LaneWorld()
    obs = env.reset(seed=11)
    masks = env.region_masks()
    names = ["left_white", "yellow", "right_white", "grass"]
    stacked = np.stack([masks[n] for n in names])
    for ch, n in enumerate(names):
        assert np.array_equal(masks[n], obs[..., ch] > 0)
    # lines may overlap only at anti-aliased edges of adjacent lines; grass never overlaps a line
    assert not np.any(masks["grass"] & (masks["left_white"] | masks["yellow"] | masks["right_white"]))
    assert np.array_equal(masks["other"], ~stacked.any(axis=0))


def test_set_lane_pattern_changes_render_only():
    env = LaneWorld()
    env.reset(seed=5)
    before = env.snapshot()
    obs = env.set_lane_pattern("lane1")
    assert not obs[..., CH_YELLOW].any()
    assert env.state.d == before.state.d and env.state.theta == before.state.theta
    with pytest.raises(ValueError):
        env.set_lane_pattern("lane9")


def test_catchavoid_reset_has_three_balls():
    obs = CatchAvoid().reset(seed=2)
    assert obs[..., CH_BALLS].sum() == 3.0


def test_lane_rest_step_only_pays_offset():
    env = LaneWorld()
    env.reset(seed=1)
    d, theta, p = env.state.d, env.state.theta, env.state.p
    _, r, _ = env.step([0.0, 0.0])
    assert r == pytest.approx(-env.config.w_d * abs(d))
    assert (env.state.d, env.state.theta, env.state.p) == (d, theta, p)
    assert env.t == 1


def test_lane_centred_full_speed_earns_speed_reward():
    env = LaneWorld()
    env.reset(seed=1, init={"d": 0.0, "theta": 0.0})
    _, r, _ = env.step([1.0, 0.0])
    assert r == pytest.approx(env.config.w_v)


def test_lane_actions_are_clipped():
    a, b = LaneWorld(), LaneWorld()
    a.reset(seed=4)
    b.reset(seed=4)
    assert a.step([5.0, -3.0])[1] == b.step([1.0, -1.0])[1]


def test_reward_stays_in_declared_range():
    env = LaneWorld()
    lo, hi = env.config.reward_range
    rng = np.random.default_rng(0)
    for seed in range(20):
        env.reset(seed=seed)
        done = False
        while not done:
            _, r, done = env.step(rng.uniform(-1, 1, 2))
            assert lo - 1e-9 <= r <= hi + 1e-9


def test_offroad_terminates_with_penalty():
    env = LaneWorld()
    env.reset(seed=0, init={"d": 0.7, "theta": 1.2})
    _, r, done = env.step([1.0, 1.0])
    assert done
    assert r < -env.config.penalty


def test_catch_ball_above_paddle_stay_scores():
    env = CatchAvoid()
    env.reset(seed=0, init={"paddle": 4, "balls": [[4, env.config.h - 2]]})
    _, r, done = env.step(STAY)
    assert r == 1.0 and done


def test_avoid_variant_same_event_costs():
    env = CatchAvoid(task_variant="avoid")
    env.reset(seed=0, init={"paddle": 4, "balls": [[4, env.config.h - 2]]})
    assert env.step(STAY)[1] == -1.0


def test_terminal_only_withholds_until_done():
    env = CatchAvoid(reward_mode="terminal_only")
    env.reset(seed=0, init={"paddle": 4, "balls": [[4, env.config.h - 2], [0, 2]]})
    _, r, done = env.step(STAY)
    assert r == 0.0 and not done
    rewards = []
    while not done:
        _, r, done = env.step(STAY)
        rewards.append(r)
    assert rewards[-1] == 1.0 and all(x == 0.0 for x in rewards[:-1])


def test_step_after_done_is_usage_error():
    env = CatchAvoid()
    env.reset(seed=0, init={"paddle": 0, "balls": [[0, env.config.h - 2]]})
    env.step(STAY)
    with pytest.raises(EnvUsageError):
        env.step(STAY)


@pytest.mark.parametrize("init", [{"d": 2.0}, {"theta": 2.0}, {"d": float("nan")}, {"pattern": "nope"},
                                  {"left_line": 0.4}])
def test_invalid_lane_init_rejected(init):
    with pytest.raises(InitStateError):
        LaneWorld().reset(seed=0, init=init)


def test_invalid_catch_init_rejected():
    with pytest.raises(InitStateError):
        CatchAvoid().reset(init={"paddle": 99, "balls": []})
    with pytest.raises(InitStateError):
        CatchAvoid().reset(init={"paddle": 1, "balls": [[1, 3], [2, 3]]})


@pytest.mark.parametrize("kind", ["laneworld", "catchavoid"])
def test_snapshot_restore_step_identical(kind):
    env = make_env(kind)
    env.reset(seed=9)
    snap = env.snapshot()
    action = [0.8, 0.3] if kind == "laneworld" else RIGHT
    first = env.step(action)
    env.restore(snap)
    second = env.step(action)
    assert np.array_equal(first[0], second[0]) and first[1:] == second[1:]


def test_restore_without_steps_keeps_observation():
    env = LaneWorld()
    obs = env.reset(seed=2).copy()
    env.restore(env.snapshot())
    assert np.array_equal(env.observation(), obs)


@pytest.mark.parametrize("kind", ["laneworld", "catchavoid"])
def test_ten_step_replay_is_identical(kind):
    env = make_env(kind)
    env.reset(seed=21)
    snap = env.snapshot()
    rng = np.random.default_rng(0)
    if kind == "laneworld":
        actions = [rng.uniform(-1, 1, 2) for _ in range(10)]
    else:
        actions = [int(rng.integers(0, 3)) for _ in range(10)]
    def play():
        out = []
        for a in actions:
            if env.done:
                break
            ob, r, d = env.step(a)
            out.append((ob.tobytes(), r, d))
        return out
    first = play()
    env.restore(snap)
    assert play() == first


def test_restore_across_kinds_is_type_error():
    lane, catch = LaneWorld(), CatchAvoid()
    lane.reset(seed=0)
    catch.reset(seed=0)
    with pytest.raises(TypeError):
        lane.restore(catch.snapshot())


def test_right_line_alone_locates_the_lane():
    """The lateral offset is recoverable from the right line's position in the nearest row."""
    env = LaneWorld()
    c = env.config
    lateral = ((c.w - 1) / 2.0 - np.arange(c.w)) * c.cell_lateral
    checked = 0
    for seed in range(60):
        obs = env.reset(seed=seed)
        row = obs[-1, :, CH_RIGHT]
        if row.sum() == 0 or row[0] > 0 or row[-1] > 0:
            continue
        centre = float((row * lateral).sum() / row.sum())
        d_hat = -0.5 - centre
        assert abs(d_hat - env.state.d) < 0.1
        checked += 1
    assert checked > 30


def test_left_line_position_varies_with_fixed_offset():
    """Same car pose, different episodes: the left line moves, the right line does not."""
    env = LaneWorld()
    pose = {"d": 0.0, "theta": 0.0, "p": 0.0, "shoulder": 0.5}
    rights, lefts = set(), set()
    for seed in range(10):
        obs = env.reset(seed=seed, init=pose)
        rights.add(obs[-1, :, CH_RIGHT].tobytes())
        lefts.add(obs[-1, :, CH_LEFT].tobytes())
    assert len(rights) == 1 and len(lefts) == 10


def test_scripted_lane_follower_is_strong():
    returns = run_scripted(LaneWorld, lane_follower, range(20))
    assert returns.mean() > 0.9 * LaneWorld().config.w_v * LaneWorld().config.horizon


def test_scripted_catcher_catches_everything():
    returns = run_scripted(CatchAvoid, catcher, range(50))
    assert np.all(returns == 3.0)


def test_all_patterns_render():
    for p in PATTERNS:
        obs = LaneWorld(pattern=p).reset(seed=0)
        assert obs.shape == (16, 16, 4)
        assert set(lane_region_masks(obs)) >= {"left_white", "yellow", "right_white", "grass", "other"}
