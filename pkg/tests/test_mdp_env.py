import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otpl.highway_sim import Road, Scenario, Traffic, Vehicle, generate_random_scenario, initial_world
from otpl.mdp_env import (
    Action,
    ActionBounds,
    EndReason,
    EpisodeFinished,
    FeatureScaling,
    HighwayEnv,
    RewardParams,
    VelocityBranch,
    clamp_action,
    compute_reward,
    featurize,
    plan_trajectory,
)
from otpl.poly_traj import ACC_MAX, ACC_MIN, LatState, LonState, sample_trajectory, solve_lateral, solve_longitudinal

ROAD = Road()
BOUNDS = ActionBounds()


def world(vehicles, ego=None):
    ego = ego or Vehicle(0, 1, 100.0, 3.5, 20.0)
    sc = Scenario(ROAD, ego, tuple(vehicles))
    return initial_world(sc)


def zero_jerk_traj(vel=30.0):
    return sample_trajectory(solve_longitudinal(LonState(0, vel, 0), vel, 2.0),
                             solve_lateral(LatState(3.5, 0, 0), 3.5, 2.0))


# ---------------------------------------------------------------- featurize

def test_featurize_example():
    w = world([Vehicle(1, 1, 130.0, 3.5, 25.0)])
    s = featurize(w, v_des=30.0)
    assert len(s.vehicles) == 1
    f = s.vehicles[0]
    assert f.d_rel == 30.0 and f.lane_rel == 0
    assert f.v_rel == pytest.approx(0.16667, abs=1e-5)


def test_featurize_lane_flags():
    s = featurize(world([], ego=Vehicle(0, 2, 0.0, 7.0, 20.0)))
    assert (s.ego.ll_valid, s.ego.rl_valid) == (0, 1)
    s = featurize(world([], ego=Vehicle(0, 0, 0.0, 0.0, 20.0)))
    assert (s.ego.ll_valid, s.ego.rl_valid) == (1, 0)


def test_featurize_empty_radius():
    s = featurize(world([Vehicle(1, 0, 300.0, 0.0, 20.0), Vehicle(2, 2, -100.0, 7.0, 20.0)]))
    assert s.vehicles == ()
    assert s.ego.v_rl == 20.0


def test_featurize_radius_is_symmetric():
    s = featurize(world([Vehicle(1, 0, 180.0, 0.0, 20.0), Vehicle(2, 2, 20.0, 7.0, 20.0),
                         Vehicle(3, 2, 19.9, 0.0, 20.0)]))
    assert sorted(v.d_rel for v in s.vehicles) == [-80.0, 80.0]
    assert {v.lane_rel for v in s.vehicles} == {-1, 1}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-500, 500))
def test_featurize_translation_invariant(seed, shift):
    w = initial_world(generate_random_scenario(30, seed))
    tr = w.traffic.copy()
    tr.lon = tr.lon + shift
    w2 = dataclasses.replace(w, ego=dataclasses.replace(w.ego, lon_pos=w.ego.lon_pos + shift), traffic=tr)
    a, b = featurize(w), featurize(w2)
    assert a.ego == b.ego
    assert len(a.vehicles) == len(b.vehicles)
    for x, y in zip(a.vehicles, b.vehicles):
        assert x.lane_rel == y.lane_rel and x.v_rel == y.v_rel
        assert x.d_rel == pytest.approx(y.d_rel, abs=1e-9)


def test_feature_scaling():
    sc = FeatureScaling()
    ego = featurize(world([])).ego
    arr = sc.ego_array(ego)
    assert arr[0] == pytest.approx(20.0 / 30.0)
    assert arr[3] == pytest.approx(3.5 / 10.5)
    veh = sc.vehicle_array(featurize(world([Vehicle(1, 1, 140.0, 3.5, 20.0)])).vehicles)
    assert veh.shape == (1, 3) and veh[0, 0] == pytest.approx(0.5)
    assert sc.vehicle_array(()).shape == (0, 3)


# ---------------------------------------------------------------- actions

def test_clamp_velocity_example():
    a = clamp_action(Action(40.0, 4.0, 2.0, 3.5), BOUNDS, LonState(0.0, 20.0, 0.0))
    assert a.a_tv == pytest.approx(30.6667, abs=1e-4)


def test_clamp_in_bounds_unchanged():
    raw = Action(22.0, 4.0, 2.0, 3.5)
    assert clamp_action(raw, BOUNDS, LonState(0.0, 20.0, 0.0)) == raw


def test_clamp_duration_lower_bound():
    a = clamp_action(Action(20.0, 0.3, 0.1, 3.5), BOUNDS, LonState(0.0, 20.0, 0.0))
    assert a.a_lon_d == 1.0 and a.a_lat_d == 1.0


def test_clamp_lateral_position_to_paved_width():
    a = clamp_action(Action(20.0, 4.0, 2.0, 50.0), BOUNDS, LonState(0.0, 20.0, 0.0))
    assert a.a_lp == 8.75


actions = st.builds(Action, st.floats(-10, 60), st.floats(-5, 20), st.floats(-5, 20), st.floats(-20, 20))
lon_states = st.builds(LonState, st.just(0.0), st.floats(0, 40), st.floats(ACC_MIN, ACC_MAX))


@settings(max_examples=300, deadline=None)
@given(actions, lon_states)
def test_clamp_idempotent_and_in_bounds(raw, lon):
    a = clamp_action(raw, BOUNDS, lon)
    assert clamp_action(a, BOUNDS, lon) == a
    assert 1.0 <= a.a_lon_d <= 10.0 and 1.0 <= a.a_lat_d <= 5.0 and -1.75 <= a.a_lp <= 8.75
    assert 0.0 <= a.a_tv


@settings(max_examples=200, deadline=None)
@given(actions, lon_states, st.floats(-1.75, 8.75), st.floats(-2, 2))
def test_clamped_action_respects_acceleration_limits(raw, lon, lat, lat_v):
    a = clamp_action(raw, BOUNDS, lon)
    prof = solve_longitudinal(lon, a.a_tv, a.a_lon_d)
    t = np.linspace(0.0, a.a_lon_d, 2001)
    acc = prof.evaluate(t)[2]
    assert acc.max() <= ACC_MAX + 1e-6 and acc.min() >= ACC_MIN - 1e-6


def test_normalize_round_trip():
    a = Action(17.0, 3.0, 2.5, 1.0)
    x = BOUNDS.normalize(a)
    assert np.all(np.abs(x) <= 1)
    back = BOUNDS.denormalize(x)
    np.testing.assert_allclose(back.as_array(), a.as_array(), atol=1e-12)
    np.testing.assert_allclose(BOUNDS.denormalize([-1, -1, -1, -1]).as_array(), BOUNDS.low)
    np.testing.assert_allclose(BOUNDS.denormalize([1, 1, 1, 1]).as_array(), BOUNDS.high)


def test_bounds_validation():
    with pytest.raises(ValueError):
        ActionBounds(a_tv=(5.0, 1.0))


# ---------------------------------------------------------------- reward

def test_reward_fail():
    assert compute_reward(zero_jerk_traj(), True, RewardParams(), 30.0) == -0.5


def test_reward_at_desired_velocity():
    assert compute_reward(zero_jerk_traj(), False, RewardParams(), 30.0) == 1.0


@pytest.mark.parametrize("branch", list(VelocityBranch))
def test_reward_above_desired(branch):
    r = compute_reward(zero_jerk_traj(), False, RewardParams(velocity_branch=branch), 33.0)
    assert r == pytest.approx(0.9, abs=1e-12)


def test_reward_branches_below_desired():
    traj = zero_jerk_traj(20.0)
    assert compute_reward(traj, False, RewardParams(velocity_branch="literal"), 20.0) == 1.0
    assert compute_reward(traj, False, RewardParams(), 20.0) == pytest.approx(1 - 10 / 30)


def test_reward_jerk_saturation():
    p = RewardParams()
    # scale a lateral-free trajectory until its mean squared jerk is twice the limit
    from otpl.poly_traj import mean_squared_jerk
    traj = sample_trajectory(solve_longitudinal(LonState(0, 0.0, 0.0), 30.0, 1.0),
                             solve_lateral(LatState(3.5, 0, 0), 3.5, 1.0))
    sqj_lon, sqj_lat = mean_squared_jerk(traj)
    assert sqj_lon >= 2 * p.j_max_lon and sqj_lat == 0.0
    assert compute_reward(traj, False, p, 30.0) == pytest.approx(0.8, abs=1e-12)


def test_reward_params_validation():
    with pytest.raises(ValueError):
        RewardParams(jp_lon=0.1)
    with pytest.raises(ValueError):
        RewardParams(j_max_lat=0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 40), st.floats(1, 10), st.floats(0, 60), st.booleans(),
       st.sampled_from(list(VelocityBranch)))
def test_reward_bounded(a_tv, T, v_next, fail, branch):
    traj = sample_trajectory(solve_longitudinal(LonState(0, 20, 0), a_tv, T),
                             solve_lateral(LatState(3.5, 0, 0), 0.0, 1.0))
    p = RewardParams(velocity_branch=branch)
    r = compute_reward(traj, fail, p, v_next)
    assert p.fail_penalty <= r <= 1.0


# ---------------------------------------------------------------- env

def empty_env(vel=30.0):
    sc = Scenario(ROAD, Vehicle(0, 1, 0.0, 3.5, vel), ())
    return HighwayEnv(sc)


def test_env_empty_road_step():
    env = empty_env()
    env.reset()
    s, r, done, info = env.step(Action(30.0, 3.0, 2.0, 3.5))
    assert r == 1.0 and not done and not info.fail
    assert env.time == pytest.approx(1.0, abs=1e-12)
    assert env.world.ego.lon_pos == pytest.approx(30.0, abs=1e-9)


def test_env_unsafe_trajectory_fails():
    sc = Scenario(ROAD, Vehicle(0, 1, 0.0, 3.5, 30.0), (Vehicle(1, 1, 10.0, 3.5, 10.0),))
    env = HighwayEnv(sc)
    env.reset()
    _, r, done, info = env.step(Action(30.0, 3.0, 2.0, 3.5))
    assert (r, done, info.fail, info.predicted) == (-0.5, True, True, True)
    assert info.reason is EndReason.COLLISION
    assert env.time == 0.0
    with pytest.raises(EpisodeFinished):
        env.step(Action(30.0, 3.0, 2.0, 3.5))


def test_env_road_departure():
    env = empty_env()
    env.reset()
    _, r, done, info = env.step(Action(30.0, 3.0, 1.0, 8.75))
    assert info.reason is EndReason.ROAD_DEPARTURE and done and r == -0.5


def test_env_timeout():
    sc = Scenario(Road(length=1e6), Vehicle(0, 1, 0.0, 3.5, 30.0), ())
    env = HighwayEnv(sc)
    env.reset()
    steps = 0
    done = False
    while not done:
        _, r, done, info = env.step(Action(30.0, 3.0, 2.0, 3.5))
        steps += 1
    assert steps == 60 and info.reason is EndReason.TIMEOUT and not info.fail


def test_env_road_end():
    sc = Scenario(Road(length=100.0), Vehicle(0, 1, 0.0, 3.5, 30.0), ())
    env = HighwayEnv(sc)
    env.reset()
    done, steps = False, 0
    while not done:
        _, _, done, info = env.step(Action(30.0, 3.0, 2.0, 3.5))
        steps += 1
    assert info.reason is EndReason.ROAD_END and steps == 4


def test_env_step_requires_reset():
    with pytest.raises(EpisodeFinished):
        empty_env().step(Action(30.0, 3.0, 2.0, 3.5))


def test_env_playback_matches_plan():
    env = HighwayEnv(generate_random_scenario(10, 2))
    env.reset()
    action = env.clamp(Action(28.0, 4.0, 3.0, 5.0))
    traj = plan_trajectory(env.world, action)
    env.step(action)
    s = traj.sample(5)
    e = env.world.ego
    assert (e.lon_pos, e.lat_pos, e.lon_vel) == (s["lon_pos"], s["lat_pos"], s["lon_vel"])
