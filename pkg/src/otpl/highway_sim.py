"""Three-lane straight highway with IDM traffic and trajectory playback for the ego.

Surrounding vehicles follow their leader with the Intelligent Driver Model and
change lanes either when a scripted event fires or when a politeness-weighted
gap-acceptance test passes. The ego vehicle has no dynamics of its own: each
tick its state is overwritten by the next sample of the active trajectory.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .poly_traj import DT, EGO_LENGTH, EGO_WIDTH, LatState, Prediction, Trajectory, solve_lateral

B_EMERGENCY = 9.0
LANE_CHANGE_DURATION = 3.0
LANE_CHANGE_COOLDOWN = 4.0
LANE_CHANGE_THRESHOLD = 0.2
EGO_INITIAL_SPEED = 25.0
MAX_EPISODE_TIME = 60.0

SCENARIO_FORMAT = "otpl-scenario"
SCENARIO_VERSION = 1


class ScenarioError(ValueError):
    """Raised for invalid or unplaceable scenarios."""


@dataclass(frozen=True)
class Road:
    n_lanes: int = 3
    lane_width: float = 3.5
    length: float = 1000.0

    def lane_center(self, lane):
        return np.asarray(lane) * self.lane_width if np.ndim(lane) else lane * self.lane_width

    def lane_of(self, lat):
        """Index of the nearest lane center, clipped to the road."""
        idx = np.clip(np.rint(np.asarray(lat) / self.lane_width), 0, self.n_lanes - 1).astype(int)
        return int(idx) if idx.ndim == 0 else idx

    @property
    def paved_min(self) -> float:
        return -0.5 * self.lane_width

    @property
    def paved_max(self) -> float:
        return (self.n_lanes - 0.5) * self.lane_width

    @property
    def width(self) -> float:
        return self.n_lanes * self.lane_width


@dataclass(frozen=True)
class DriverParams:
    v0: float = 30.0
    a: float = 2.0
    b: float = 2.0
    delta: float = 4.0
    s0: float = 2.0
    T_hw: float = 1.2
    politeness: float = 0.5

    def __post_init__(self):
        for name in ("v0", "a", "b", "delta", "s0", "T_hw"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ScenarioError(f"driver parameter {name} must be positive, got {value!r}")
        if not 0.0 <= self.politeness <= 1.0:
            raise ScenarioError(f"politeness must lie in [0, 1], got {self.politeness!r}")


DEFAULT_DRIVER = DriverParams()


@dataclass(frozen=True)
class Vehicle:
    id: int
    lane_index: int
    lon_pos: float
    lat_pos: float
    lon_vel: float
    lat_vel: float = 0.0
    lon_acc: float = 0.0
    lat_acc: float = 0.0
    length: float = EGO_LENGTH
    width: float = EGO_WIDTH
    driver: DriverParams | None = None


@dataclass(frozen=True)
class ScriptedEvent:
    t: float
    vehicle: int
    target_lane: int


@dataclass(frozen=True)
class Scenario:
    road: Road
    ego: Vehicle
    vehicles: tuple
    script: tuple = ()
    seed: int | None = None
    name: str = ""

    def __post_init__(self):
        times = [ev.t for ev in self.script]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ScenarioError("script times must be non-decreasing")

    @property
    def n_veh(self) -> int:
        return len(self.vehicles)


def idm_acceleration(follower_vel, leader_gap, leader_vel, params: DriverParams):
    """IDM acceleration, clamped to ``[-B_EMERGENCY, params.a]``.

    ``leader_gap`` is the bumper-to-bumper distance; pass ``math.inf`` when there
    is no leader. Works elementwise on arrays as well as on scalars.
    """
    v = np.asarray(follower_vel, dtype=float)
    gap = np.asarray(leader_gap, dtype=float)
    free = 1.0 - (v / params.v0) ** params.delta
    with np.errstate(invalid="ignore", divide="ignore"):
        dv = v - np.asarray(leader_vel, dtype=float)
        s_star = params.s0 + np.maximum(0.0, v * params.T_hw + v * dv / (2.0 * math.sqrt(params.a * params.b)))
        interaction = np.where(np.isinf(gap), 0.0, (s_star / gap) ** 2)
    acc = np.clip(params.a * (free - interaction), -B_EMERGENCY, params.a)
    return float(acc) if acc.ndim == 0 else acc


def _idm_vec(v, gap, v_lead, v0, a, b, delta, s0, T_hw):
    """Vectorised IDM over per-vehicle parameter arrays (``gap`` may hold ``inf``)."""
    free = 1.0 - (v / v0) ** delta
    with np.errstate(invalid="ignore", divide="ignore"):
        s_star = s0 + np.maximum(0.0, v * T_hw + v * (v - v_lead) / (2.0 * np.sqrt(a * b)))
        interaction = np.where(np.isinf(gap), 0.0, (s_star / np.maximum(gap, 1e-3)) ** 2)
    return np.clip(a * (free - interaction), -B_EMERGENCY, a)


_PARAM_FIELDS = ("v0", "a", "b", "delta", "s0", "T_hw", "politeness")


@dataclass
class Traffic:
    """Surrounding vehicles stored column-wise; row ``i`` is one vehicle."""

    ids: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    vel: np.ndarray
    lat_vel: np.ndarray
    acc: np.ndarray
    lat_acc: np.ndarray
    length: np.ndarray
    width: np.ndarray
    params: np.ndarray  # (n, 7) columns in _PARAM_FIELDS order
    lc_target: np.ndarray  # target lane, -1 when lane keeping
    lc_start: np.ndarray  # start time of the active lane change
    lc_coeffs: np.ndarray  # (n, 6) lateral quintic of the active lane change
    last_lc: np.ndarray  # time the last lane change started

    @classmethod
    def from_vehicles(cls, vehicles):
        n = len(vehicles)
        col = lambda attr: np.array([getattr(v, attr) for v in vehicles], dtype=float)  # noqa: E731
        params = np.array([[getattr(v.driver or DEFAULT_DRIVER, f) for f in _PARAM_FIELDS]
                           for v in vehicles], dtype=float).reshape(n, len(_PARAM_FIELDS))
        return cls(
            ids=np.array([v.id for v in vehicles], dtype=int),
            lon=col("lon_pos"), lat=col("lat_pos"), vel=col("lon_vel"),
            lat_vel=col("lat_vel"), acc=col("lon_acc"), lat_acc=col("lat_acc"),
            length=col("length"), width=col("width"), params=params,
            lc_target=np.full(n, -1, dtype=int), lc_start=np.zeros(n),
            lc_coeffs=np.zeros((n, 6)), last_lc=np.full(n, -np.inf),
        )

    def copy(self):
        return Traffic(**{k: v.copy() for k, v in self.__dict__.items()})

    def __len__(self):
        return len(self.ids)

    def param(self, name):
        return self.params[:, _PARAM_FIELDS.index(name)]


@dataclass
class WorldState:
    time: float
    ego: Vehicle
    traffic: Traffic
    road: Road
    script: tuple = ()
    tick: int = 0
    max_time: float = MAX_EPISODE_TIME

    @property
    def others(self) -> list:
        tr, road = self.traffic, self.road
        lanes = road.lane_of(tr.lat) if len(tr) else np.zeros(0, dtype=int)
        out = []
        for i in range(len(tr)):
            driver = DriverParams(**dict(zip(_PARAM_FIELDS, map(float, tr.params[i]))))
            out.append(Vehicle(int(tr.ids[i]), int(lanes[i]), float(tr.lon[i]), float(tr.lat[i]),
                               float(tr.vel[i]), float(tr.lat_vel[i]), float(tr.acc[i]),
                               float(tr.lat_acc[i]), float(tr.length[i]), float(tr.width[i]), driver))
        return out

    def index_of(self, vehicle_id) -> int:
        hits = np.flatnonzero(self.traffic.ids == vehicle_id)
        if len(hits) == 0:
            raise KeyError(vehicle_id)
        return int(hits[0])

    def prediction(self) -> Prediction:
        tr = self.traffic
        return Prediction(tr.lon.copy(), tr.vel.copy(), tr.lat.copy(), tr.length.copy(), tr.width.copy())

    @property
    def ego_lane(self) -> int:
        return self.road.lane_of(self.ego.lat_pos)


def _overlap_1d(c1, h1, c2, h2):
    return np.abs(c1 - c2) < (h1 + h2)


def _rectangles_overlap(x1, y1, l1, w1, x2, y2, l2, w2):
    return _overlap_1d(x1, 0.5 * l1, x2, 0.5 * l2) & _overlap_1d(y1, 0.5 * w1, y2, 0.5 * w2)


def initial_world(scenario: Scenario, max_time: float = MAX_EPISODE_TIME) -> WorldState:
    validate_scenario(scenario)
    return WorldState(0.0, scenario.ego, Traffic.from_vehicles(scenario.vehicles),
                      scenario.road, tuple(scenario.script), 0, max_time)


def validate_scenario(scenario: Scenario):
    road = scenario.road
    everyone = (scenario.ego,) + tuple(scenario.vehicles)
    ids = [v.id for v in everyone]
    if len(set(ids)) != len(ids):
        raise ScenarioError("vehicle ids must be unique")
    for v in everyone:
        if not 0 <= v.lane_index < road.n_lanes:
            raise ScenarioError(f"vehicle {v.id}: lane {v.lane_index} not on the road")
        if v.lon_vel < 0 or not math.isfinite(v.lon_pos):
            raise ScenarioError(f"vehicle {v.id}: invalid longitudinal state")
        if v.lat_pos - 0.5 * v.width < road.paved_min or v.lat_pos + 0.5 * v.width > road.paved_max:
            raise ScenarioError(f"vehicle {v.id}: outside the paved width")
    for i, u in enumerate(everyone):
        for w in everyone[i + 1:]:
            if _rectangles_overlap(u.lon_pos, u.lat_pos, u.length, u.width,
                                   w.lon_pos, w.lat_pos, w.length, w.width):
                raise ScenarioError(f"vehicles {u.id} and {w.id} overlap")
    known = set(ids[1:])
    for ev in scenario.script:
        if ev.vehicle not in known:
            raise ScenarioError(f"script refers to unknown vehicle {ev.vehicle}")
        if not 0 <= ev.target_lane < road.n_lanes:
            raise ScenarioError(f"script target lane {ev.target_lane} not on the road")


def _start_lane_change(tr: Traffic, i, target_lane, now, road):
    lat = LatState(float(tr.lat[i]), float(tr.lat_vel[i]), float(tr.lat_acc[i]))
    prof = solve_lateral(lat, float(road.lane_center(target_lane)), LANE_CHANGE_DURATION)
    tr.lc_target[i] = target_lane
    tr.lc_start[i] = now
    tr.lc_coeffs[i] = prof.coeffs
    tr.last_lc[i] = now


def _leaders(lon, lat, length, road, ref_lats, exclude):
    """Nearest vehicle ahead of each follower that overlaps any of its reference lanes.

    ``ref_lats`` is a list of (n_followers,) arrays of lateral reference positions.
    Returns (leader index or -1, bumper gap or inf) for every follower.
    """
    n_f = len(ref_lats[0])
    ahead = lon[None, :] > lon[:n_f, None]
    relevant = np.zeros_like(ahead)
    for ref in ref_lats:
        relevant |= np.abs(lat[None, :] - ref[:, None]) < EGO_WIDTH
    mask = ahead & relevant
    mask[np.arange(n_f), exclude] = False
    dist = np.where(mask, lon[None, :] - lon[:n_f, None], np.inf)
    idx = np.argmin(dist, axis=1)
    has = np.isfinite(dist[np.arange(n_f), idx])
    gap = np.where(has, dist[np.arange(n_f), idx] - 0.5 * (length[:n_f] + length[idx]), np.inf)
    return np.where(has, idx, -1), gap


def _lane_neighbours(lon, occupies, query):
    """Nearest occupant ahead (``lon > query``) and behind (``lon < query``) per query."""
    idx = np.flatnonzero(occupies)
    if len(idx) == 0:
        none = np.full(len(query), -1)
        return none, none.copy()
    order = idx[np.argsort(lon[idx], kind="stable")]
    srt = lon[order]
    ahead = np.searchsorted(srt, query, side="right")
    behind = np.searchsorted(srt, query, side="left") - 1
    lead = np.where(ahead < len(order), order[np.minimum(ahead, len(order) - 1)], -1)
    follow = np.where(behind >= 0, order[np.maximum(behind, 0)], -1)
    return lead, follow


def _gap_accept(world: WorldState, tr: Traffic, acc_now: np.ndarray, leader_idx: np.ndarray):
    """Politeness-weighted lane-change decisions; returns a list of (vehicle index, lane).

    A change is accepted when both new neighbours keep ``s0 + v*T_hw`` bumper gap
    and own gain plus politeness times the followers' gains exceeds the threshold.
    """
    road, now, ego = world.road, world.time, world.ego
    n = len(tr)
    # the ego rides along as the last row so others account for it
    lon = np.append(tr.lon, ego.lon_pos)
    lat = np.append(tr.lat, ego.lat_pos)
    vel = np.append(tr.vel, ego.lon_vel)
    length = np.append(tr.length, ego.length)
    P = np.vstack([tr.params, np.array([getattr(DEFAULT_DRIVER, f) for f in _PARAM_FIELDS])])
    is_ego = np.arange(n + 1) == n

    def gap(rear, front):
        g = lon[front] - lon[rear] - 0.5 * (length[front] + length[rear])
        return np.where((front >= 0) & (rear >= 0), g, np.inf)

    def idm(rows, lead):
        p = P[rows]
        v_lead = np.where(lead >= 0, vel[np.maximum(lead, 0)], 0.0)
        return _idm_vec(vel[rows], gap(rows, lead), v_lead, p[:, 0], p[:, 1], p[:, 2], p[:, 3], p[:, 4], p[:, 5])

    rows = np.arange(n)
    eligible = (tr.lc_target < 0) & (now - tr.last_lc >= LANE_CHANGE_COOLDOWN)
    lanes = road.lane_of(tr.lat)
    occ = [np.abs(lat - road.lane_center(L)) < EGO_WIDTH for L in range(road.n_lanes)]

    old_follow = np.full(n, -1)
    for L in range(road.n_lanes):
        sel = lanes == L
        if np.any(sel):
            _, f = _lane_neighbours(lon, occ[L], lon[rows[sel]])
            old_follow[sel] = f
    old_lead = np.asarray(leader_idx)
    safe_f = np.maximum(old_follow, 0)
    old_follow_gain = np.where((old_follow >= 0) & ~is_ego[safe_f],
                               idm(safe_f, old_lead) - idm(safe_f, rows), 0.0)

    best_lane = np.full(n, -1)
    best_gain = np.full(n, LANE_CHANGE_THRESHOLD)
    for delta in (-1, 1):
        target = lanes + delta
        for L in range(road.n_lanes):
            sel = eligible & (target == L)
            if not np.any(sel):
                continue
            i = rows[sel]
            lead, follow = _lane_neighbours(lon, occ[L], lon[i])
            ok = gap(i, lead) >= P[i, 4] + vel[i] * P[i, 5]
            sf = np.maximum(follow, 0)
            ok &= (follow < 0) | (gap(follow, i) >= P[sf, 4] + vel[sf] * P[sf, 5])
            gain = idm(i, lead) - acc_now[i]
            new_follow_gain = np.where((follow >= 0) & ~is_ego[sf], idm(sf, i) - idm(sf, lead), 0.0)
            gain = gain + P[i, 6] * (new_follow_gain + old_follow_gain[i])
            better = ok & (gain > best_gain[i])
            best_lane[i[better]] = L
            best_gain[i[better]] = gain[better]
    return [(int(i), int(best_lane[i])) for i in np.flatnonzero(best_lane >= 0)]


def step_world(world: WorldState, ego_next: dict, dt: float = DT) -> WorldState:
    """Advance the world by one tick.

    ``ego_next`` is the trajectory sample the ego occupies at the end of the tick
    (a mapping with the ``Trajectory.sample`` keys).
    """
    if ego_next is None:
        raise ValueError("ego trajectory sample required for every tick")
    road = world.road
    tr = world.traffic.copy()
    now = world.time
    n = len(tr)

    script = list(world.script)
    while script and script[0].t <= now + 1e-9:
        ev = script.pop(0)
        _start_lane_change(tr, world.index_of(ev.vehicle), ev.target_lane, now, road)

    if n:
        ego = world.ego
        lon = np.append(tr.lon, ego.lon_pos)
        lat = np.append(tr.lat, ego.lat_pos)
        vel = np.append(tr.vel, ego.lon_vel)
        length = np.append(tr.length, ego.length)
        own = road.lane_center(road.lane_of(tr.lat))
        target = np.where(tr.lc_target >= 0, road.lane_center(np.maximum(tr.lc_target, 0)), own)
        lead, gap = _leaders(lon, lat, length, road, [own, target], np.arange(n))
        v_lead = np.where(lead >= 0, vel[np.maximum(lead, 0)], 0.0)
        P = tr.params
        acc = _idm_vec(tr.vel, gap, v_lead, P[:, 0], P[:, 1], P[:, 2], P[:, 3], P[:, 4], P[:, 5])

        if world.tick % int(round(1.0 / dt)) == 0:
            for i, lane in _gap_accept(world, tr, acc, lead):
                _start_lane_change(tr, i, lane, now, road)

        new_vel = np.maximum(tr.vel + acc * dt, 0.0)
        tr.acc = (new_vel - tr.vel) / dt
        tr.vel = new_vel
        tr.lon = tr.lon + new_vel * dt

        t_next = (world.tick + 1) * dt
        for i in np.flatnonzero(tr.lc_target >= 0):
            elapsed = t_next - tr.lc_start[i]
            if elapsed >= LANE_CHANGE_DURATION - 1e-9:
                tr.lat[i] = road.lane_center(int(tr.lc_target[i]))
                tr.lat_vel[i] = tr.lat_acc[i] = 0.0
                tr.lc_target[i] = -1
            else:
                c = tr.lc_coeffs[i]
                P_ = np.polynomial.polynomial
                tr.lat[i] = P_.polyval(elapsed, c)
                tr.lat_vel[i] = P_.polyval(elapsed, P_.polyder(c))
                tr.lat_acc[i] = P_.polyval(elapsed, P_.polyder(c, 2))

    ego = replace(
        world.ego,
        lon_pos=float(ego_next["lon_pos"]),
        lat_pos=float(ego_next["lat_pos"]),
        lon_vel=max(float(ego_next["lon_vel"]), 0.0),
        lat_vel=float(ego_next["lat_vel"]),
        lon_acc=float(ego_next["lon_acc"]),
        lat_acc=float(ego_next["lat_acc"]),
        lane_index=road.lane_of(float(ego_next["lat_pos"])),
    )
    tick = world.tick + 1
    return WorldState(tick * dt, ego, tr, road, tuple(script), tick, world.max_time)


def hold_sample(vehicle: Vehicle, dt: float = DT) -> dict:
    """Next-tick sample for a vehicle coasting at constant velocity."""
    return {"lon_pos": vehicle.lon_pos + vehicle.lon_vel * dt, "lat_pos": vehicle.lat_pos,
            "lon_vel": vehicle.lon_vel, "lat_vel": 0.0, "lon_acc": 0.0, "lat_acc": 0.0}


class Outcome(enum.Enum):
    NONE = "none"
    COLLISION = "collision"
    ROAD_DEPARTURE = "road_departure"


def collision_outcome(world: WorldState) -> Outcome:
    ego, road = world.ego, world.road
    if (ego.lat_pos - 0.5 * ego.width < road.paved_min
            or ego.lat_pos + 0.5 * ego.width > road.paved_max):
        return Outcome.ROAD_DEPARTURE
    tr = world.traffic
    if len(tr) and np.any(_rectangles_overlap(ego.lon_pos, ego.lat_pos, ego.length, ego.width,
                                              tr.lon, tr.lat, tr.length, tr.width)):
        return Outcome.COLLISION
    return Outcome.NONE


def detect_collision(world: WorldState) -> bool:
    """True iff the ego overlaps another vehicle or its footprint leaves the paved width."""
    return collision_outcome(world) is not Outcome.NONE


# ---------------------------------------------------------------------------
# scenario generation

def _jitter(rng, value, frac=0.2):
    return float(value * rng.uniform(1.0 - frac, 1.0 + frac))


def random_driver(rng) -> DriverParams:
    return DriverParams(
        v0=float(rng.uniform(22.0, 33.0)),
        a=_jitter(rng, 2.0), b=_jitter(rng, 2.0), delta=_jitter(rng, 4.0),
        s0=_jitter(rng, 2.0), T_hw=_jitter(rng, 1.2),
        politeness=float(rng.uniform(0.0, 1.0)),
    )


def scenario_span(n_veh: int) -> float:
    """Longitudinal extent over which ``n_veh`` vehicles are scattered."""
    return 20.0 * n_veh + 100.0


def generate_random_scenario(n_veh: int, seed: int, max_attempts: int = 2000) -> Scenario:
    """Random traffic ahead of an ego that starts at the rear of the pack.

    Every vehicle is rejection-sampled until it keeps at least ``s0 + v*T_hw``
    bumper gap to both same-lane neighbours (with the follower's parameters).
    """
    if n_veh < 0:
        raise ScenarioError("n_veh must be >= 0")
    rng = np.random.default_rng(seed)
    span = scenario_span(n_veh)
    road = Road(length=max(1000.0, span + 200.0))
    ego = Vehicle(0, 1, 0.0, road.lane_center(1), EGO_INITIAL_SPEED)
    placed = [(1, ego.lon_pos, ego.lon_vel, DEFAULT_DRIVER)]
    vehicles = []
    for vid in range(1, n_veh + 1):
        driver = random_driver(rng)
        for _ in range(max_attempts):
            lane = int(rng.integers(road.n_lanes))
            lon = float(rng.uniform(ego.lon_pos + EGO_LENGTH + 2.0, ego.lon_pos + span))
            vel = float(driver.v0 * rng.uniform(0.85, 1.0))
            if _fits(placed, lane, lon, vel, driver):
                break
        else:
            raise ScenarioError(f"could not place vehicle {vid} of {n_veh} without overlap")
        placed.append((lane, lon, vel, driver))
        vehicles.append(Vehicle(vid, lane, lon, road.lane_center(lane), vel, driver=driver))
    return Scenario(road, ego, tuple(vehicles), (), int(seed), f"random_n{n_veh}_s{seed}")


def _fits(placed, lane, lon, vel, driver, length=EGO_LENGTH):
    for p_lane, p_lon, p_vel, p_drv in placed:
        if p_lane != lane:
            continue
        gap = abs(lon - p_lon) - length
        if lon > p_lon:
            need = p_drv.s0 + p_vel * p_drv.T_hw
        else:
            need = driver.s0 + vel * driver.T_hw
        if gap < need:
            return False
    return True


class CriticalKind(enum.Enum):
    CUT_IN = "cutin"
    TRAPPED = "trapped"


TRAPPED_SPEED = 24.0
TRAPPED_GAP = 0.52  # bumper gap; 0.02 m outside the planner's safety margin


def make_critical_scenario(kind) -> Scenario:
    """Hand-built stress scenarios.

    ``cutin``: the ego cruises at 30 m/s in the middle lane; vehicle 2, driving
    22 m/s in the left lane ahead, cuts into the ego lane and later moves on to
    the right lane, so it ends up in front of the ego twice.

    ``trapped``: everyone drives 24 m/s. The ego sits in the middle lane barely
    outside the safety margin of its leader, with a follower behind and a
    vehicle alongside on the right; the left lane is empty. Any lane change
    that accelerates on the way closes the leader gap before the ego clears
    the lane.
    """
    kind = CriticalKind(kind) if not isinstance(kind, CriticalKind) else kind
    road = Road()
    mid = road.lane_center(1)
    if kind is CriticalKind.CUT_IN:
        ego = Vehicle(0, 1, 0.0, mid, 30.0)
        slow = DriverParams(v0=22.0, politeness=1.0)
        vehicles = (
            Vehicle(1, 0, 150.0, road.lane_center(0), 22.0, driver=slow),
            Vehicle(2, 2, 55.0, road.lane_center(2), 22.0, driver=slow),
            Vehicle(3, 0, -40.0, road.lane_center(0), 25.0, driver=DriverParams(v0=25.0, politeness=1.0)),
        )
        script = (ScriptedEvent(2.0, 2, 1), ScriptedEvent(9.0, 2, 0))
        return Scenario(road, ego, vehicles, script, None, "critical_cutin")
    v = TRAPPED_SPEED
    cruise = DriverParams(v0=v, politeness=1.0)
    ego = Vehicle(0, 1, 0.0, mid, v)
    # a sluggish follower so that it has no incentive to overtake into the free lane
    follower = DriverParams(v0=v, a=0.5, politeness=1.0)
    vehicles = (
        Vehicle(1, 1, EGO_LENGTH + TRAPPED_GAP, mid, v, driver=cruise),
        Vehicle(2, 1, -60.0, mid, v, driver=follower),
        Vehicle(3, 0, 0.0, road.lane_center(0), v, driver=cruise),
    )
    return Scenario(road, ego, vehicles, (), None, "critical_trapped")


# ---------------------------------------------------------------------------
# scenario files

def scenario_to_dict(scenario: Scenario) -> dict:
    road = scenario.road
    ego = scenario.ego
    return {
        "format": SCENARIO_FORMAT,
        "version": SCENARIO_VERSION,
        "name": scenario.name,
        "seed": scenario.seed,
        "road": {"lanes": road.n_lanes, "lane_width": road.lane_width, "length": road.length},
        "ego": {"id": ego.id, "lane": ego.lane_index, "lon_pos": ego.lon_pos, "vel": ego.lon_vel},
        "vehicles": [
            {"id": v.id, "lane": v.lane_index, "lon_pos": v.lon_pos, "vel": v.lon_vel,
             "driver": {f: getattr(v.driver or DEFAULT_DRIVER, f) for f in _PARAM_FIELDS}}
            for v in scenario.vehicles
        ],
        "script": [{"t": ev.t, "vehicle": ev.vehicle, "target_lane": ev.target_lane}
                   for ev in scenario.script],
    }


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        if doc.get("format", SCENARIO_FORMAT) != SCENARIO_FORMAT:
            raise ScenarioError(f"not a scenario document: {doc.get('format')!r}")
        if doc.get("version", SCENARIO_VERSION) != SCENARIO_VERSION:
            raise ScenarioError(f"unsupported scenario version {doc.get('version')!r}")
        r = doc["road"]
        road = Road(int(r["lanes"]), float(r["lane_width"]), float(r["length"]))
        e = doc["ego"]
        ego = Vehicle(int(e.get("id", 0)), int(e["lane"]), float(e["lon_pos"]),
                      road.lane_center(int(e["lane"])), float(e["vel"]))
        vehicles = tuple(
            Vehicle(int(v["id"]), int(v["lane"]), float(v["lon_pos"]), road.lane_center(int(v["lane"])),
                    float(v["vel"]), driver=DriverParams(**{k: float(x) for k, x in v["driver"].items()}))
            for v in doc["vehicles"]
        )
        script = tuple(ScriptedEvent(float(s["t"]), int(s["vehicle"]), int(s["target_lane"]))
                       for s in doc.get("script", []))
        scenario = Scenario(road, ego, vehicles, script, doc.get("seed"), doc.get("name", ""))
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"malformed scenario document: {exc!r}") from exc
    validate_scenario(scenario)
    return scenario


def save_scenario(scenario: Scenario, path, extra: dict | None = None):
    doc = scenario_to_dict(scenario)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(doc)


EVAL_DENSITIES = tuple(range(10, 81, 10))


def evaluation_scenarios(densities=EVAL_DENSITIES, per_density: int = 10, seed: int = 0) -> list:
    """The evaluation batch: ``per_density`` random scenarios for every density."""
    seeds = np.random.SeedSequence(seed)
    out = []
    for n_veh, child in zip(densities, seeds.spawn(len(densities))):
        for k, sub in enumerate(child.spawn(per_density)):
            sc = generate_random_scenario(n_veh, int(sub.generate_state(1)[0]))
            out.append(replace(sc, name=f"n{n_veh:02d}_{k:02d}"))
    return out
