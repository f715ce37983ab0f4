"""The driving MDP: state features, action clamping, reward and the 1 s decision step."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .highway_sim import (
    MAX_EPISODE_TIME,
    Outcome,
    Road,
    Scenario,
    WorldState,
    collision_outcome,
    initial_world,
    step_world,
)
from .poly_traj import (
    ACC_MAX,
    ACC_MIN,
    DT,
    LatState,
    LonState,
    SafetyReason,
    Trajectory,
    check_safety,
    mean_squared_jerk,
    sample_trajectory,
    solve_lateral,
    solve_longitudinal,
    velocity_bounds,
)

FEATURE_RADIUS = 80.0
DESIRED_VELOCITY = 30.0
TICKS_PER_DECISION = 5
ACC_SCALE = 4.0
VEHICLE_DIM = 3
EGO_DIM = 7
ACTION_DIM = 4


@dataclass(frozen=True)
class VehicleFeatures:
    d_rel: float
    v_rel: float
    lane_rel: int


@dataclass(frozen=True)
class EgoFeatures:
    v_rl: float
    ll_valid: int
    rl_valid: int
    pos_lat: float
    lon_a: float
    lat_v: float
    lat_a: float

    def as_tuple(self):
        return (self.v_rl, self.ll_valid, self.rl_valid, self.pos_lat, self.lon_a, self.lat_v, self.lat_a)


@dataclass(frozen=True)
class RLState:
    vehicles: tuple
    ego: EgoFeatures


@dataclass(frozen=True)
class Action:
    a_tv: float
    a_lon_d: float
    a_lat_d: float
    a_lp: float

    def as_array(self):
        return np.array([self.a_tv, self.a_lon_d, self.a_lat_d, self.a_lp])

    @classmethod
    def from_array(cls, x):
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class ActionBounds:
    a_tv: tuple = (0.0, 40.0)
    a_lon_d: tuple = (1.0, 10.0)
    a_lat_d: tuple = (1.0, 5.0)
    a_lp: tuple = (-1.75, 8.75)

    def __post_init__(self):
        for lo, hi in (self.a_tv, self.a_lon_d, self.a_lat_d, self.a_lp):
            if not lo <= hi:
                raise ValueError("action bounds need lo <= hi on every axis")

    @property
    def low(self):
        return np.array([self.a_tv[0], self.a_lon_d[0], self.a_lat_d[0], self.a_lp[0]])

    @property
    def high(self):
        return np.array([self.a_tv[1], self.a_lon_d[1], self.a_lat_d[1], self.a_lp[1]])

    def normalize(self, action: Action) -> np.ndarray:
        lo, hi = self.low, self.high
        span = np.where(hi > lo, hi - lo, 1.0)
        return np.where(hi > lo, 2.0 * (action.as_array() - lo) / span - 1.0, 0.0)

    def denormalize(self, x) -> Action:
        lo, hi = self.low, self.high
        x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
        return Action.from_array(lo + 0.5 * (x + 1.0) * (hi - lo))

    def to_dict(self):
        return {k: list(getattr(self, k)) for k in ("a_tv", "a_lon_d", "a_lat_d", "a_lp")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) for k, v in d.items()})


class VelocityBranch(enum.Enum):
    LITERAL = "literal"
    SYMMETRIC = "symmetric"


@dataclass(frozen=True)
class RewardParams:
    v_des: float = DESIRED_VELOCITY
    jp_lon: float = -0.2
    jp_lat: float = -0.2
    j_max_lon: float = 50.0
    j_max_lat: float = 50.0
    fail_penalty: float = -0.5
    velocity_branch: VelocityBranch = VelocityBranch.SYMMETRIC

    def __post_init__(self):
        if self.jp_lon > 0 or self.jp_lat > 0:
            raise ValueError("jerk penalties must be <= 0")
        if self.j_max_lon <= 0 or self.j_max_lat <= 0:
            raise ValueError("jerk normalisers must be > 0")
        object.__setattr__(self, "velocity_branch", VelocityBranch(self.velocity_branch))

    def to_dict(self):
        d = dict(self.__dict__)
        d["velocity_branch"] = self.velocity_branch.value
        return d


def featurize(world: WorldState, radius: float = FEATURE_RADIUS,
              v_des: float = DESIRED_VELOCITY) -> RLState:
    road, ego = world.road, world.ego
    ego_lane = road.lane_of(ego.lat_pos)
    tr = world.traffic
    d_rel = tr.lon - ego.lon_pos
    near = np.flatnonzero(np.abs(d_rel) <= radius)
    lanes = road.lane_of(tr.lat[near]) if len(near) else np.zeros(0, dtype=int)
    vehicles = tuple(
        VehicleFeatures(float(d_rel[i]), float((tr.vel[i] - ego.lon_vel) / v_des), int(lane) - ego_lane)
        for i, lane in zip(near, lanes)
    )
    ego_f = EgoFeatures(
        v_rl=float(ego.lon_vel),
        ll_valid=int(ego_lane < road.n_lanes - 1),
        rl_valid=int(ego_lane > 0),
        pos_lat=float(ego.lat_pos),
        lon_a=float(ego.lon_acc),
        lat_v=float(ego.lat_vel),
        lat_a=float(ego.lat_acc),
    )
    return RLState(vehicles, ego_f)


@dataclass(frozen=True)
class FeatureScaling:
    """Input normalisation applied before states reach the networks."""

    radius: float = FEATURE_RADIUS
    v_des: float = DESIRED_VELOCITY
    road_width: float = Road().width
    acc_scale: float = ACC_SCALE

    def vehicle_array(self, vehicles) -> np.ndarray:
        if not vehicles:
            return np.zeros((0, VEHICLE_DIM))
        raw = np.array([(v.d_rel, v.v_rel, v.lane_rel) for v in vehicles], dtype=float)
        return self.scale_vehicles(raw)

    def scale_vehicles(self, raw):
        out = np.array(raw, dtype=float, copy=True).reshape(-1, VEHICLE_DIM)
        out[:, 0] /= self.radius
        return out

    def ego_array(self, ego) -> np.ndarray:
        raw = np.array(ego.as_tuple() if isinstance(ego, EgoFeatures) else ego, dtype=float)
        return self.scale_ego(raw)

    def scale_ego(self, raw):
        out = np.array(raw, dtype=float, copy=True)
        out[..., 0] /= self.v_des
        out[..., 3] /= self.road_width
        out[..., 4] /= self.acc_scale
        out[..., 6] /= self.acc_scale
        return out

    def to_dict(self):
        return dict(self.__dict__)


def lon_state_of(ego) -> LonState:
    """Longitudinal state seen by the planner (position is irrelevant for bounds)."""
    if isinstance(ego, EgoFeatures):
        return LonState(0.0, max(ego.v_rl, 0.0), ego.lon_a)
    return LonState(ego.lon_pos, max(ego.lon_vel, 0.0), ego.lon_acc)


def clamp_action(raw: Action, bounds: ActionBounds, lon_state: LonState, road: Road | None = None,
                 acc_min: float = ACC_MIN, acc_max: float = ACC_MAX) -> Action:
    """Clip every component to its bounds and the target velocity to the feasible range."""
    road = road or Road()
    a_lon_d = float(np.clip(raw.a_lon_d, *bounds.a_lon_d))
    a_lat_d = float(np.clip(raw.a_lat_d, *bounds.a_lat_d))
    lp_lo = max(bounds.a_lp[0], road.paved_min)
    lp_hi = min(bounds.a_lp[1], road.paved_max)
    a_lp = float(np.clip(raw.a_lp, lp_lo, max(lp_lo, lp_hi)))
    v_min, v_max = velocity_bounds(lon_state, a_lon_d, acc_min, acc_max)
    a_tv = float(np.clip(raw.a_tv, *bounds.a_tv))
    # feasibility wins over the box when the two ranges do not intersect
    a_tv = float(np.clip(a_tv, v_min, v_max))
    return Action(a_tv, a_lon_d, a_lat_d, a_lp)


def compute_reward(traj: Trajectory, fail: bool, params: RewardParams, v_rl_next: float) -> float:
    if fail:
        return params.fail_penalty
    delta = abs(v_rl_next - params.v_des)
    if params.velocity_branch is VelocityBranch.LITERAL:
        r = 1.0 - delta / params.v_des if v_rl_next >= params.v_des else 1.0
    else:
        r = max(1.0 - delta / params.v_des, 0.0)
    sqj_lon, sqj_lat = mean_squared_jerk(traj)
    for sqj, jp, j_max in ((sqj_lon, params.jp_lon, params.j_max_lon),
                           (sqj_lat, params.jp_lat, params.j_max_lat)):
        r += jp if sqj >= j_max else jp * (sqj / j_max)
    return float(r)


def plan_trajectory(world: WorldState, action: Action) -> Trajectory:
    ego = world.ego
    lon = solve_longitudinal(LonState(ego.lon_pos, max(ego.lon_vel, 0.0), ego.lon_acc),
                             action.a_tv, action.a_lon_d)
    lat = solve_lateral(LatState(ego.lat_pos, ego.lat_vel, ego.lat_acc), action.a_lp, action.a_lat_d)
    return sample_trajectory(lon, lat)


class EpisodeFinished(RuntimeError):
    pass


class EndReason(enum.Enum):
    NONE = "none"
    COLLISION = "collision"
    ROAD_DEPARTURE = "road_departure"
    TIMEOUT = "timeout"
    ROAD_END = "road_end"


@dataclass
class StepInfo:
    fail: bool
    reason: EndReason
    action: Action
    trajectory: Trajectory
    predicted: bool = False


@dataclass
class EnvConfig:
    reward: RewardParams = field(default_factory=RewardParams)
    bounds: ActionBounds = field(default_factory=ActionBounds)
    radius: float = FEATURE_RADIUS
    acc_min: float = ACC_MIN
    acc_max: float = ACC_MAX
    max_time: float = MAX_EPISODE_TIME


class HighwayEnv:
    """One episode of decision making on a scenario.

    Every ``step`` clamps the action, plans the trajectory, screens it for
    safety and (if safe) plays back its first second in five ticks.
    """

    def __init__(self, scenario: Scenario, config: EnvConfig | None = None):
        self.scenario = scenario
        self.config = config or EnvConfig()
        self.world: WorldState | None = None
        self.done = True
        self.distance = 0.0

    def reset(self) -> RLState:
        self.world = initial_world(self.scenario, self.config.max_time)
        self.done = False
        self.start_lon = self.world.ego.lon_pos
        return self.observe()

    def observe(self) -> RLState:
        return featurize(self.world, self.config.radius, self.config.reward.v_des)

    @property
    def time(self) -> float:
        return self.world.time

    def clamp(self, action: Action) -> Action:
        cfg = self.config
        return clamp_action(action, cfg.bounds, lon_state_of(self.world.ego), self.world.road,
                            cfg.acc_min, cfg.acc_max)

    def step(self, action: Action):
        if self.done:
            raise EpisodeFinished("episode already finished; call reset()")
        cfg = self.config
        action = self.clamp(action)
        traj = plan_trajectory(self.world, action)
        verdict = check_safety(traj, self.world.prediction(), self.world.road)
        if not verdict.safe:
            self.done = True
            reason = (EndReason.ROAD_DEPARTURE if verdict.reason is SafetyReason.ROAD_DEPARTURE
                      else EndReason.COLLISION)
            info = StepInfo(True, reason, action, traj, predicted=True)
            return self.observe(), cfg.reward.fail_penalty, True, info

        world = self.world
        outcome = Outcome.NONE
        for k in range(1, TICKS_PER_DECISION + 1):
            world = step_world(world, traj.sample(k))
            outcome = collision_outcome(world)
            if outcome is not Outcome.NONE:
                break
        self.world = world
        fail = outcome is not Outcome.NONE
        reason = EndReason.NONE
        if fail:
            reason = EndReason(outcome.value)
        elif world.ego.lon_pos >= world.road.length:
            reason = EndReason.ROAD_END
        elif world.time >= world.max_time - 1e-9:
            reason = EndReason.TIMEOUT
        reward = compute_reward(traj, fail, cfg.reward, world.ego.lon_vel)
        self.done = reason is not EndReason.NONE
        return self.observe(), reward, self.done, StepInfo(fail, reason, action, traj)
