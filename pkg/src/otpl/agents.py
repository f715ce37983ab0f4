"""Deciding entities: the trained policy, the random collector and two rule-based baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .highway_sim import DriverParams, WorldState, idm_acceleration
from .mdp_env import (
    DESIRED_VELOCITY,
    FEATURE_RADIUS,
    Action,
    ActionBounds,
    RLState,
    clamp_action,
    lon_state_of,
    plan_trajectory,
)
from .poly_traj import LonState, check_safety, mean_squared_jerk, velocity_bounds
from .td3_offline import TrainedAgent

AGENT_NAMES = ("otpl", "random", "greedy", "idm")

GREEDY_N_VEL = 5
GREEDY_LON_D = (2.0, 4.0, 6.0)
GREEDY_LAT_D = (2.0, 3.0)
IDM_LON_D = 2.0
IDM_LAT_D = 2.0
IDM_BASELINE_DRIVER = DriverParams(v0=DESIRED_VELOCITY)


def otpl_act(agent: TrainedAgent, s: RLState, road=None) -> Action:
    """Deterministic action of a trained agent, de-normalised and clamped."""
    raw = agent.bounds.denormalize(agent.act_state(s))
    return clamp_action(raw, agent.bounds, lon_state_of(s.ego), road)


def random_act(s: RLState, lon_state: LonState, bounds: ActionBounds, rng) -> Action:
    """Uniform draw per component; the target velocity is drawn within the feasible range."""
    a_lon_d = rng.uniform(*bounds.a_lon_d)
    a_lat_d = rng.uniform(*bounds.a_lat_d)
    a_lp = rng.uniform(*bounds.a_lp)
    v_min, v_max = velocity_bounds(lon_state, a_lon_d)
    lo = min(max(v_min, bounds.a_tv[0]), v_max)
    hi = max(min(v_max, bounds.a_tv[1]), lo)
    return Action(float(rng.uniform(lo, hi)), float(a_lon_d), float(a_lat_d), float(a_lp))


@dataclass(frozen=True)
class Gap:
    lane: int
    rear_id: int | None
    front_id: int | None
    span: float
    target_velocity: float

    def __post_init__(self):
        if not self.span > 0:
            raise ValueError("gap span must be > 0")


def enumerate_gaps(world: WorldState, radius: float = FEATURE_RADIUS,
                   v_des: float = DESIRED_VELOCITY) -> list:
    """Gaps on the ego lane and its neighbours that reach into the radius around the ego.

    The open-road gap beyond the last leader gets the desired velocity as its
    achievable velocity; every other gap is bounded by its front vehicle.
    """
    road, ego, tr = world.road, world.ego, world.traffic
    ego_lane = world.ego_lane
    lanes_of = road.lane_of(tr.lat) if len(tr) else np.zeros(0, dtype=int)
    gaps = []
    for lane in (ego_lane, ego_lane + 1, ego_lane - 1):
        if not 0 <= lane < road.n_lanes:
            continue
        idx = np.flatnonzero(lanes_of == lane)
        idx = idx[np.argsort(tr.lon[idx], kind="stable")]
        bounds = [None, *idx.tolist(), None]
        for rear, front in zip(bounds[:-1], bounds[1:]):
            lo = -math.inf if rear is None else tr.lon[rear] + 0.5 * tr.length[rear]
            hi = math.inf if front is None else tr.lon[front] - 0.5 * tr.length[front]
            if hi <= lo or hi < ego.lon_pos - radius or lo > ego.lon_pos + radius:
                continue
            v_gap = v_des if front is None else float(tr.vel[front])
            gaps.append(Gap(lane, None if rear is None else int(tr.ids[rear]),
                            None if front is None else int(tr.ids[front]),
                            float(hi - lo), v_gap))
    return gaps


def _brake_action(world: WorldState) -> Action:
    lon = lon_state_of(world.ego)
    v_min, _ = velocity_bounds(lon, 2.0)
    return Action(v_min, 2.0, 2.0, float(world.road.lane_center(world.ego_lane)))


def greedy_candidates(world: WorldState, v_des: float = DESIRED_VELOCITY):
    """Candidate actions per gap, in a fixed enumeration order."""
    lon = lon_state_of(world.ego)
    road = world.road
    out, seen = [], set()
    for gap in enumerate_gaps(world, v_des=v_des):
        a_lp = float(road.lane_center(gap.lane))
        for a_lon_d in GREEDY_LON_D:
            v_min, v_max = velocity_bounds(lon, a_lon_d)
            v_hi = min(v_max, v_des, gap.target_velocity)
            v_lo = max(v_min, min(lon.vel, v_hi))
            v_hi = max(v_hi, v_lo)
            for a_tv in np.linspace(v_lo, v_hi, GREEDY_N_VEL):
                for a_lat_d in GREEDY_LAT_D:
                    key = (round(float(a_tv), 12), a_lon_d, a_lat_d, gap.lane)
                    if key not in seen:
                        seen.add(key)
                        out.append((gap, Action(float(a_tv), a_lon_d, a_lat_d, a_lp)))
    return out


def greedy_act(world: WorldState, v_des: float = DESIRED_VELOCITY) -> Action:
    """Highest safe target velocity over all gaps; ties go to lower jerk, then lane keeping."""
    ego_lane = world.ego_lane
    pred = world.prediction()
    best, best_key = None, None
    for gap, action in greedy_candidates(world, v_des):
        traj = plan_trajectory(world, action)
        if not check_safety(traj, pred, world.road).safe:
            continue
        sqj = sum(mean_squared_jerk(traj))
        key = (-round(action.a_tv, 9), round(sqj, 12), int(gap.lane != ego_lane))
        if best_key is None or key < best_key:
            best, best_key = action, key
    return best if best is not None else _brake_action(world)


def idm_act(world: WorldState, driver: DriverParams = IDM_BASELINE_DRIVER) -> Action:
    """Lane-keeping IDM follower expressed as a trajectory action."""
    ego, road, tr = world.ego, world.road, world.traffic
    lane_lat = float(road.lane_center(world.ego_lane))
    gap, v_lead = math.inf, 0.0
    if len(tr):
        ahead = (tr.lon > ego.lon_pos) & (np.abs(tr.lat - lane_lat) < 0.5 * (tr.width + ego.width))
        if np.any(ahead):
            i = np.flatnonzero(ahead)[np.argmin(tr.lon[ahead])]
            gap = float(tr.lon[i] - ego.lon_pos - 0.5 * (tr.length[i] + ego.length))
            gap = max(gap, 1e-3)
            v_lead = float(tr.vel[i])
    acc = idm_acceleration(ego.lon_vel, gap, v_lead, driver)
    raw = Action(ego.lon_vel + acc * IDM_LON_D, IDM_LON_D, IDM_LAT_D, lane_lat)
    return clamp_action(raw, ActionBounds(), lon_state_of(ego), road)


class Policy:
    """Uniform ``act(env)`` wrapper so episode runners can treat all agents alike."""

    name = "policy"

    def act(self, env) -> Action:
        raise NotImplementedError


class OTPLPolicy(Policy):
    name = "otpl"

    def __init__(self, agent: TrainedAgent):
        self.agent = agent

    def act(self, env):
        return otpl_act(self.agent, env.observe(), env.world.road)


class RandomPolicy(Policy):
    name = "random"

    def __init__(self, rng, bounds: ActionBounds | None = None):
        self.rng = rng
        self.bounds = bounds or ActionBounds()

    def act(self, env):
        return random_act(env.observe(), lon_state_of(env.world.ego), self.bounds, self.rng)


class GreedyPolicy(Policy):
    name = "greedy"

    def act(self, env):
        return greedy_act(env.world, env.config.reward.v_des)


class IDMPolicy(Policy):
    name = "idm"

    def act(self, env):
        return idm_act(env.world)


def make_policy(name: str, agent: TrainedAgent | None = None, rng=None) -> Policy:
    if name == "otpl":
        if agent is None:
            raise ValueError("the otpl agent needs a trained checkpoint")
        return OTPLPolicy(agent)
    if name == "random":
        return RandomPolicy(rng if rng is not None else np.random.default_rng(0))
    if name == "greedy":
        return GreedyPolicy()
    if name == "idm":
        return IDMPolicy()
    raise ValueError(f"unknown agent {name!r}; choose from {', '.join(AGENT_NAMES)}")
