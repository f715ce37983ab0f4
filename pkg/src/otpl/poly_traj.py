"""Polynomial trajectory generation for the four continuous trajectory parameters.

Longitudinal motion is a quartic in time (target velocity and zero target
acceleration at the end of the profile), lateral motion a quintic (target
position with zero lateral velocity and acceleration at the end).
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass

import numpy as np

DT = 0.2
EGO_LENGTH = 5.0
EGO_WIDTH = 2.0
SAFETY_MARGIN = 0.5
ACC_MIN = -8.0
ACC_MAX = 4.0

CSV_COLUMNS = (
    "t", "lon_pos", "lat_pos", "lon_vel", "lat_vel",
    "lon_acc", "lat_acc", "lon_jerk", "lat_jerk", "orientation",
)


class InvalidInputError(ValueError):
    pass


class InvalidDurationError(ValueError):
    pass


def _require_finite(**values):
    for name, value in values.items():
        if not math.isfinite(value):
            raise InvalidInputError(f"{name} must be finite, got {value!r}")


def _require_duration(duration):
    _require_finite(duration=duration)
    if duration <= 0:
        raise InvalidDurationError(f"profile duration must be > 0, got {duration!r}")


@dataclass(frozen=True)
class LonState:
    pos: float
    vel: float
    acc: float = 0.0

    def __post_init__(self):
        _require_finite(pos=self.pos, vel=self.vel, acc=self.acc)
        if self.vel < 0:
            raise InvalidInputError(f"longitudinal velocity must be >= 0, got {self.vel!r}")


@dataclass(frozen=True)
class LatState:
    pos: float
    vel: float = 0.0
    acc: float = 0.0

    def __post_init__(self):
        _require_finite(pos=self.pos, vel=self.vel, acc=self.acc)


class _Profile:
    """Shared evaluation of a polynomial profile that holds its end state past ``duration``."""

    coeffs: tuple
    duration: float

    def _raw(self, t):
        c = np.asarray(self.coeffs, dtype=float)
        pos = np.polynomial.polynomial.polyval(t, c)
        d1 = np.polynomial.polynomial.polyder(c)
        d2 = np.polynomial.polynomial.polyder(d1)
        d3 = np.polynomial.polynomial.polyder(d2)
        return (
            pos,
            np.polynomial.polynomial.polyval(t, d1),
            np.polynomial.polynomial.polyval(t, d2),
            np.polynomial.polynomial.polyval(t, d3),
        )

    def evaluate(self, t):
        """Position, velocity, acceleration and jerk at time(s) ``t``.

        Past the profile duration the terminal velocity is held (position keeps
        integrating it) and acceleration and jerk are zero.
        """
        t = np.asarray(t, dtype=float)
        inside = np.minimum(t, self.duration)
        pos, vel, acc, jerk = self._raw(inside)
        past = t > self.duration
        if np.any(past):
            end_pos, end_vel, _, _ = self._raw(np.float64(self.duration))
            pos = np.where(past, end_pos + end_vel * (t - self.duration), pos)
            vel = np.where(past, end_vel, vel)
            acc = np.where(past, 0.0, acc)
            jerk = np.where(past, 0.0, jerk)
        return pos, vel, acc, jerk


@dataclass(frozen=True)
class QuarticProfile(_Profile):
    """Longitudinal quartic with coefficients ``(a0, a1, a2, a3, a4)`` in SI units."""

    coeffs: tuple
    duration: float
    target_vel: float

    def evaluate(self, t):
        pos, vel, acc, jerk = super().evaluate(t)
        # hold the requested velocity exactly instead of the rounded polynomial value
        past = np.asarray(t) > self.duration
        if np.any(past):
            vel = np.where(past, self.target_vel, vel)
        return pos, vel, acc, jerk


@dataclass(frozen=True)
class QuinticProfile(_Profile):
    """Lateral quintic with coefficients ``(b0, ..., b5)``."""

    coeffs: tuple
    duration: float
    target_pos: float

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        pos, vel, acc, jerk = self._raw(np.minimum(t, self.duration))
        past = t > self.duration
        if np.any(past):
            pos = np.where(past, self.target_pos, pos)
            vel = np.where(past, 0.0, vel)
            acc = np.where(past, 0.0, acc)
            jerk = np.where(past, 0.0, jerk)
        return pos, vel, acc, jerk


def solve_longitudinal(state: LonState, a_tv: float, a_lon_d: float) -> QuarticProfile:
    """Quartic reaching velocity ``a_tv`` with zero acceleration after ``a_lon_d`` seconds.

    The first three coefficients are fixed by the current state; the remaining
    two follow from the end conditions ``v(T) = a_tv`` and ``a(T) = 0``.
    """
    _require_finite(a_tv=a_tv)
    _require_duration(a_lon_d)
    if a_tv < 0:
        raise InvalidInputError(f"target velocity must be >= 0, got {a_tv!r}")
    T = float(a_lon_d)
    a0, a1, a2 = state.pos, state.vel, 0.5 * state.acc
    dv = a_tv - a1 - 2.0 * a2 * T
    da = -2.0 * a2
    a4 = (da - 2.0 * dv / T) / (4.0 * T * T)
    a3 = (da - 12.0 * T * T * a4) / (6.0 * T)
    return QuarticProfile((a0, a1, a2, a3, a4), T, float(a_tv))


def solve_lateral(state: LatState, a_lp: float, a_lat_d: float) -> QuinticProfile:
    """Quintic reaching lateral position ``a_lp`` at rest after ``a_lat_d`` seconds."""
    _require_finite(a_lp=a_lp)
    _require_duration(a_lat_d)
    T = float(a_lat_d)
    b0, b1, b2 = state.pos, state.vel, 0.5 * state.acc
    c0 = a_lp - (b0 + b1 * T + b2 * T * T)
    c1 = -(b1 + 2.0 * b2 * T)
    c2 = -2.0 * b2
    b3 = (10.0 * c0 - 4.0 * c1 * T + 0.5 * c2 * T * T) / T**3
    b4 = (-15.0 * c0 + 7.0 * c1 * T - c2 * T * T) / T**4
    b5 = (6.0 * c0 - 3.0 * c1 * T + 0.5 * c2 * T * T) / T**5
    return QuinticProfile((b0, b1, b2, b3, b4, b5), T, float(a_lp))


@dataclass(frozen=True)
class Trajectory:
    """Time-sampled trajectory; index ``k`` is the state at ``t = k * dt``."""

    dt: float
    t: np.ndarray
    lon_pos: np.ndarray
    lat_pos: np.ndarray
    lon_vel: np.ndarray
    lat_vel: np.ndarray
    lon_acc: np.ndarray
    lat_acc: np.ndarray
    lon_jerk: np.ndarray
    lat_jerk: np.ndarray
    orientation: np.ndarray

    def __len__(self):
        return len(self.t)

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    def sample(self, k: int) -> dict:
        return {name: float(getattr(self, name)[k]) for name in CSV_COLUMNS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for k in range(len(self)):
            row = self.sample(k)
            buf.write(",".join(repr(row[c]) for c in CSV_COLUMNS) + "\n")
        return buf.getvalue()


def horizon_steps(duration: float, dt: float = DT) -> int:
    return max(1, int(math.ceil(duration / dt - 1e-9)))


def sample_trajectory(lon: QuarticProfile, lat: QuinticProfile, dt: float = DT) -> Trajectory:
    """Sample both profiles on ``t = 0, dt, ..., n*dt`` covering the longer duration."""
    n = horizon_steps(max(lon.duration, lat.duration), dt)
    t = np.arange(n + 1) * dt
    lon_pos, lon_vel, lon_acc, lon_jerk = lon.evaluate(t)
    lat_pos, lat_vel, lat_acc, lat_jerk = lat.evaluate(t)
    orientation = np.arctan2(lat_vel, lon_vel)
    return Trajectory(dt, t, lon_pos, lat_pos, lon_vel, lat_vel, lon_acc, lat_acc,
                      lon_jerk, lat_jerk, orientation)


def velocity_bounds(state: LonState, a_lon_d: float, acc_min: float = ACC_MIN,
                    acc_max: float = ACC_MAX) -> tuple[float, float]:
    """Range of target velocities whose quartic keeps acceleration inside the limits.

    With ``tau = t / T`` and ``D = (a_tv - v0 - acc0*T) / T`` the profile's
    acceleration is ``acc0*(1 - tau)*(1 + 3 tau) + 6 D tau (1 - tau)``. Its
    interior extremum equals ``acc0 + (acc0 + 3D)^2 / (3 acc0 + 6D)``; setting that
    to a limit gives a quadratic in ``D`` whose outer root is the bound.
    """
    _require_duration(a_lon_d)
    if not acc_min < 0 < acc_max:
        raise InvalidInputError("need acc_min < 0 < acc_max")
    T = float(a_lon_d)
    acc0 = min(max(state.acc, acc_min), acc_max)
    up = acc_max - acc0
    down = acc_min - acc0
    d_hi = (up - acc0 + math.sqrt(up * acc_max)) / 3.0
    d_lo = (down - acc0 - math.sqrt(down * acc_min)) / 3.0
    base = state.vel + acc0 * T
    v_max = max(base + d_hi * T, 0.0)
    v_min = min(max(base + d_lo * T, 0.0), v_max)
    return v_min, v_max


def mean_squared_jerk(traj: Trajectory) -> tuple[float, float]:
    """Mean squared jerk per axis over the trajectory's time-steps.

    Each of the ``n`` steps contributes the jerk at its start sample, so the
    terminal sample (which only closes the last step) is not counted.
    """
    if len(traj) < 2:
        raise InvalidInputError("trajectory needs at least one time-step")
    n = traj.n_steps
    sqj_lon = float(np.sum(traj.lon_jerk[:n] ** 2) / n)
    sqj_lat = float(np.sum(traj.lat_jerk[:n] ** 2) / n)
    return sqj_lon, sqj_lat


class SafetyReason(enum.Enum):
    CLEAR = "Clear"
    PREDICTED_COLLISION = "PredictedCollision"
    ROAD_DEPARTURE = "RoadDeparture"


@dataclass(frozen=True)
class SafetyVerdict:
    safe: bool
    reason: SafetyReason

    def __post_init__(self):
        if self.safe != (self.reason is SafetyReason.CLEAR):
            raise ValueError("reason must be Clear iff safe")


@dataclass(frozen=True)
class Prediction:
    """Constant-velocity occupancy forecast for the surrounding vehicles.

    Every vehicle keeps its current lateral position and longitudinal velocity.
    """

    lon_pos: np.ndarray
    lon_vel: np.ndarray
    lat_pos: np.ndarray
    length: np.ndarray
    width: np.ndarray

    @classmethod
    def empty(cls):
        z = np.zeros(0)
        return cls(z, z, z, z, z)

    def __len__(self):
        return len(self.lon_pos)


def check_safety(traj: Trajectory, others: Prediction, road,
                 margin: float = SAFETY_MARGIN, ego_length: float = EGO_LENGTH,
                 ego_width: float = EGO_WIDTH) -> SafetyVerdict:
    """Screen a trajectory for road departure and predicted collisions.

    ``road`` only needs ``paved_min`` and ``paved_max`` (lateral limits in m).
    The ego rectangle is inflated by ``margin`` on every side for the collision
    test but not for the road-boundary test.
    """
    half_w = 0.5 * ego_width
    if (np.any(traj.lat_pos - half_w < road.paved_min)
            or np.any(traj.lat_pos + half_w > road.paved_max)):
        return SafetyVerdict(False, SafetyReason.ROAD_DEPARTURE)
    if len(others):
        other_lon = others.lon_pos[:, None] + others.lon_vel[:, None] * traj.t[None, :]
        dx = np.abs(other_lon - traj.lon_pos[None, :])
        dy = np.abs(others.lat_pos[:, None] - traj.lat_pos[None, :])
        reach_x = 0.5 * (ego_length + others.length[:, None]) + margin
        reach_y = 0.5 * (ego_width + others.width[:, None]) + margin
        if np.any((dx < reach_x) & (dy < reach_y)):
            return SafetyVerdict(False, SafetyReason.PREDICTED_COLLISION)
    return SafetyVerdict(True, SafetyReason.CLEAR)
