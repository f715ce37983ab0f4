import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otpl.agents import (
    GreedyPolicy,
    IDMPolicy,
    OTPLPolicy,
    RandomPolicy,
    enumerate_gaps,
    greedy_act,
    greedy_candidates,
    idm_act,
    make_policy,
    otpl_act,
    random_act,
)
from otpl.evaluation import run_episode
from otpl.highway_sim import Road, Scenario, Vehicle, generate_random_scenario, initial_world, make_critical_scenario
from otpl.mdp_env import ActionBounds, EgoFeatures, RLState, VehicleFeatures, featurize, lon_state_of, plan_trajectory
from otpl.poly_traj import LonState, check_safety, velocity_bounds
from otpl.td3_offline import TD3Hyperparams, TrainedAgent

ROAD = Road()
TINY = TD3Hyperparams(hidden=(8,), d_phi=4, d_rho=3, phi_hidden=(4,), rho_hidden=(4,))


def world(vehicles, ego=None):
    ego = ego or Vehicle(0, 1, 100.0, 3.5, 25.0)
    return initial_world(Scenario(ROAD, ego, tuple(vehicles)))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 40), st.floats(-8, 4))
def test_random_act_feasible(seed, vel, acc):
    rng = np.random.default_rng(seed)
    lon = LonState(0.0, vel, acc)
    b = ActionBounds()
    a = random_act(None, lon, b, rng)
    v_min, v_max = velocity_bounds(lon, a.a_lon_d)
    assert v_min - 1e-9 <= a.a_tv <= v_max + 1e-9
    assert b.a_lon_d[0] <= a.a_lon_d <= b.a_lon_d[1] and b.a_lp[0] <= a.a_lp <= b.a_lp[1]


def test_gaps_on_empty_road():
    gaps = enumerate_gaps(world([]))
    assert sorted(g.lane for g in gaps) == [0, 1, 2]
    assert all(g.target_velocity == 30.0 and g.front_id is None for g in gaps)


def test_gaps_split_by_vehicles():
    w = world([Vehicle(1, 1, 140.0, 3.5, 20.0), Vehicle(2, 1, 60.0, 3.5, 22.0)])
    own = [g for g in enumerate_gaps(w) if g.lane == 1]
    assert [(g.rear_id, g.front_id) for g in own] == [(None, 2), (2, 1), (1, None)]
    middle = own[1]
    assert middle.span == pytest.approx(80.0 - 5.0) and middle.target_velocity == 20.0


def test_greedy_prefers_free_lane():
    w = world([Vehicle(1, 1, 140.0, 3.5, 15.0)])
    a = greedy_act(w)
    assert a.a_lp in (0.0, 7.0)
    assert a.a_tv > 15.0


def test_greedy_actions_are_safe_and_capped():
    w = initial_world(generate_random_scenario(40, 3))
    a = greedy_act(w)
    assert check_safety(plan_trajectory(w, a), w.prediction(), w.road).safe
    assert a.a_tv <= 30.0 + 1e-9
    assert all(abs(g.lane - w.ego_lane) <= 1 for g, _ in greedy_candidates(w))


def test_greedy_falls_back_to_brake():
    # boxed in tightly on every lane: no candidate is safe
    vs = []
    for k, lane in enumerate((0, 1, 2)):
        vs.append(Vehicle(10 + k, lane, 106.0, ROAD.lane_center(lane), 0.0))
        if lane != 1:
            vs.append(Vehicle(20 + k, lane, 100.0, ROAD.lane_center(lane), 25.0))
    w = world(vs)
    a = greedy_act(w)
    v_min, _ = velocity_bounds(lon_state_of(w.ego), 2.0)
    assert a.a_tv == v_min and a.a_lp == 3.5


def test_idm_keeps_lane_and_follows():
    a = idm_act(world([]))
    assert a.a_lp == 3.5 and a.a_lon_d == 2.0 and a.a_tv > 25.0
    slow = idm_act(world([Vehicle(1, 1, 115.0, 3.5, 10.0)]))
    assert slow.a_tv < 25.0 and slow.a_lp == 3.5


def test_idm_ignores_other_lanes():
    assert idm_act(world([Vehicle(1, 0, 110.0, 0.0, 0.0)])) == idm_act(world([]))


def test_baselines_on_empty_road():
    sc = Scenario(ROAD, Vehicle(0, 1, 0.0, 3.5, 25.0), ())
    for pol in (IDMPolicy(), GreedyPolicy()):
        r = run_episode(sc, pol)
        assert r.completed and r.avg_velocity == pytest.approx(30.0, abs=1.0)


def test_trapped_baselines_stay():
    sc = make_critical_scenario("trapped")
    for pol in (IDMPolicy(), GreedyPolicy()):
        r = run_episode(sc, pol, trace=True)
        assert set(r.lane_trace) == {1}


def test_otpl_act_clamped_and_deterministic():
    agent = TrainedAgent.initialize(TINY, 0)
    s = RLState((VehicleFeatures(20.0, 0.1, 0),), EgoFeatures(25.0, 1, 1, 3.5, 0.0, 0.0, 0.0))
    a = otpl_act(agent, s, ROAD)
    assert a == otpl_act(agent, s, ROAD)
    v_min, v_max = velocity_bounds(LonState(0.0, 25.0, 0.0), a.a_lon_d)
    assert v_min - 1e-9 <= a.a_tv <= v_max + 1e-9


def test_otpl_permutation_invariant():
    agent = TrainedAgent.initialize(TINY, 1)
    w = initial_world(generate_random_scenario(60, 5))
    s = featurize(w)
    assert len(s.vehicles) >= 3
    rev = RLState(tuple(reversed(s.vehicles)), s.ego)
    np.testing.assert_allclose(otpl_act(agent, rev, ROAD).as_array(),
                               otpl_act(agent, s, ROAD).as_array(), atol=1e-9, rtol=0)


def test_make_policy():
    assert isinstance(make_policy("idm"), IDMPolicy)
    assert isinstance(make_policy("greedy"), GreedyPolicy)
    assert isinstance(make_policy("random"), RandomPolicy)
    assert isinstance(make_policy("otpl", TrainedAgent.initialize(TINY, 0)), OTPLPolicy)
    with pytest.raises(ValueError):
        make_policy("otpl")
    with pytest.raises(ValueError):
        make_policy("nope")
