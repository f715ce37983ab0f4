"""Episode rollouts and evaluation reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .highway_sim import Scenario
from .mdp_env import EndReason, EnvConfig, HighwayEnv

REPORT_COLUMNS = ("scenario_id", "n_veh", "agent", "seed", "avg_velocity", "driving_time",
                  "completed", "collided", "left_road")


@dataclass
class EpisodeResult:
    scenario_id: str
    n_veh: int
    agent: str
    seed: int
    avg_velocity: float
    driving_time: float
    completed: bool
    collided: bool
    left_road: bool
    reason: str = "none"
    lane_trace: list = field(default_factory=list)
    velocity_trace: list = field(default_factory=list)
    actions: list = field(default_factory=list)

    def row(self) -> dict:
        return {"scenario_id": self.scenario_id, "n_veh": self.n_veh, "agent": self.agent,
                "seed": self.seed, "avg_velocity": f"{self.avg_velocity:.6f}",
                "driving_time": f"{self.driving_time:.1f}", "completed": int(self.completed),
                "collided": int(self.collided), "left_road": int(self.left_road)}


def run_episode(scenario: Scenario, policy, seed: int = 0, config: EnvConfig | None = None,
                trace: bool = False) -> EpisodeResult:
    """Roll ``policy`` on ``scenario`` until failure, timeout or road end.

    Average velocity is the distance covered divided by the driving time.
    """
    env = HighwayEnv(scenario, config)
    env.reset()
    start = env.world.ego.lon_pos
    lanes, vels, actions = [env.world.ego_lane], [env.world.ego.lon_vel], []
    info = None
    done = False
    while not done:
        action = policy.act(env)
        _, _, done, info = env.step(action)
        if trace:
            lanes.append(env.world.ego_lane)
            vels.append(env.world.ego.lon_vel)
            actions.append(info.action)
    t = env.world.time
    dist = env.world.ego.lon_pos - start
    avg = dist / t if t > 0 else env.world.ego.lon_vel
    reason = info.reason
    return EpisodeResult(
        scenario_id=scenario.name or f"seed{scenario.seed}", n_veh=scenario.n_veh,
        agent=getattr(policy, "name", str(policy)), seed=seed, avg_velocity=float(avg),
        driving_time=float(t), completed=not info.fail,
        collided=reason is EndReason.COLLISION, left_road=reason is EndReason.ROAD_DEPARTURE,
        reason=reason.value, lane_trace=lanes if trace else [], velocity_trace=vels if trace else [],
        actions=actions,
    )


def report_csv(results) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in results:
        w.writerow(r.row())
    return buf.getvalue()


def read_report(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["n_veh"] = int(r["n_veh"])
        r["seed"] = int(r["seed"])
        r["avg_velocity"] = float(r["avg_velocity"])
        r["driving_time"] = float(r["driving_time"])
        for k in ("completed", "collided", "left_road"):
            r[k] = int(r[k])
    return rows
