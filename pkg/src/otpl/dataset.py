"""Random offline data collection, JSONL persistence, statistics and terminal rebalancing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .agents import random_act
from .highway_sim import EVAL_DENSITIES, ScenarioError, generate_random_scenario
from .mdp_env import (
    ActionBounds,
    EgoFeatures,
    EndReason,
    EnvConfig,
    HighwayEnv,
    RewardParams,
    RLState,
    VehicleFeatures,
    lon_state_of,
)
from .td3_offline import Transition

DATASET_FORMAT = "otpl-transitions"
DATASET_VERSION = 1
DEFAULT_SAMPLES = 50_000
COLLECTION_POLICY = "random"


class DatasetError(ValueError):
    pass


class CorruptRecordError(DatasetError):
    def __init__(self, index, msg):
        super().__init__(f"record {index}: {msg}")
        self.index = index


class DatasetValidationError(DatasetError):
    pass


@dataclass
class TransitionSet:
    transitions: list
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.transitions)

    @property
    def terminal_fraction(self) -> float:
        return terminal_fraction(self.transitions)

    def with_transitions(self, transitions, **meta):
        md = dict(self.metadata)
        md.update(meta)
        md["n_samples"] = len(transitions)
        md["terminal_fraction"] = terminal_fraction(transitions)
        return TransitionSet(list(transitions), md)


def terminal_fraction(transitions) -> float:
    if not transitions:
        return 0.0
    return sum(t.done for t in transitions) / len(transitions)


def collect(n_samples: int = DEFAULT_SAMPLES, seed: int = 0, densities=EVAL_DENSITIES,
            config: EnvConfig | None = None, progress=None) -> TransitionSet:
    """Roll random-action episodes on fresh random scenarios until ``n_samples`` transitions exist.

    Each episode draws its density and scenario seed from a child of the root
    seed sequence, so the output depends only on ``seed`` and the arguments.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be > 0")
    config = config or EnvConfig()
    bounds = config.bounds
    root = np.random.SeedSequence(seed)
    out = []
    episodes = 0
    while len(out) < n_samples:
        child = root.spawn(1)[0]
        rng = np.random.default_rng(child)
        n_veh = int(rng.choice(densities))
        try:
            scenario = generate_random_scenario(n_veh, int(rng.integers(2**31)))
        except ScenarioError:
            continue
        env = HighwayEnv(scenario, config)
        s = env.reset()
        episodes += 1
        done = False
        while not done and len(out) < n_samples:
            action = random_act(s, lon_state_of(env.world.ego), bounds, rng)
            s2, r, done, info = env.step(action)
            out.append(Transition(s, bounds.normalize(info.action), float(r), s2, int(info.fail),
                                  info.reason.value))
            s = s2
        if progress is not None:
            progress(len(out), episodes)
    meta = {
        "seed": seed, "policy": COLLECTION_POLICY, "densities": list(map(int, densities)),
        "episodes": episodes, "reward": config.reward.to_dict(), "bounds": bounds.to_dict(),
        "n_samples": len(out), "terminal_fraction": terminal_fraction(out),
    }
    return TransitionSet(out, meta)


def rebalance_terminal_fraction(data: TransitionSet, p: float, rng) -> TransitionSet:
    """Subsample the majority class (without replacement, order kept) to reach fraction ``p``."""
    if not 0.0 <= p <= 1.0:
        raise DatasetError("target fraction must lie in [0, 1]")
    term = [i for i, t in enumerate(data.transitions) if t.done]
    non = [i for i, t in enumerate(data.transitions) if not t.done]
    n_t, n_n = len(term), len(non)
    native = n_t / max(n_t + n_n, 1)
    if p > 0 and n_t == 0:
        raise DatasetError(f"fraction {p} unreachable: the set has no terminal samples")
    if p < 1 and n_n == 0:
        raise DatasetError(f"fraction {p} unreachable: the set has no non-terminal samples")
    if abs(p - native) <= 1.0 / max(n_t + n_n, 1):
        keep = term + non
    elif p > native:
        k = int(round(n_t * (1.0 - p) / p))
        keep = term + sorted(rng.choice(non, size=k, replace=False).tolist())
    else:
        k = int(round(p * n_n / (1.0 - p)))
        keep = non + sorted(rng.choice(term, size=k, replace=False).tolist()) if k else non
    keep = sorted(keep)
    return data.with_transitions([data.transitions[i] for i in keep], rebalanced_to=p)


def stats(data: TransitionSet, bins: int = 10) -> dict:
    ts = data.transitions
    n = len(ts)
    reasons = [t.reason for t in ts]
    def count(reason):
        return sum(1 for r in reasons if r == reason)
    coll = count(EndReason.COLLISION.value)
    dep = count(EndReason.ROAD_DEPARTURE.value)
    tout = count(EndReason.TIMEOUT.value)
    ends = count(EndReason.ROAD_END.value)
    frac = (lambda c: c / n) if n else (lambda c: 0.0)
    rewards = np.array([t.r for t in ts], dtype=float)
    actions = np.array([t.a for t in ts], dtype=float).reshape(-1, 4)
    r_hist, r_edges = np.histogram(rewards, bins=bins, range=(-0.5, 1.0))
    act_hist = {}
    for j, name in enumerate(("a_tv", "a_lon_d", "a_lat_d", "a_lp")):
        h, e = np.histogram(actions[:, j], bins=bins, range=(-1.0, 1.0))
        act_hist[name] = {"counts": h.tolist(), "edges": e.tolist()}
    return {
        "n_samples": n,
        "terminal": coll + dep,
        "collisions": coll,
        "road_departures": dep,
        "timeouts": tout,
        "road_ends": ends,
        "terminal_fraction": frac(coll + dep),
        "collision_fraction": frac(coll),
        "departure_fraction": frac(dep),
        "timeout_fraction": frac(tout),
        "reward_histogram": {"counts": r_hist.tolist(), "edges": r_edges.tolist()},
        "action_histograms": act_hist,
    }


def histograms_csv(summary: dict) -> str:
    lines = ["histogram,bin_lo,bin_hi,count"]
    items = [("reward", summary["reward_histogram"])]
    items += [(k, v) for k, v in summary["action_histograms"].items()]
    for name, h in items:
        e = h["edges"]
        for i, c in enumerate(h["counts"]):
            lines.append(f"{name},{e[i]!r},{e[i + 1]!r},{c}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------- persistence


def _state_doc(s: RLState):
    return {"vehicles": [[v.d_rel, v.v_rel, v.lane_rel] for v in s.vehicles],
            "ego": list(s.ego.as_tuple())}


def _state_from(doc) -> RLState:
    veh = tuple(VehicleFeatures(float(d), float(v), int(l)) for d, v, l in doc["vehicles"])
    e = doc["ego"]
    ego = EgoFeatures(float(e[0]), int(e[1]), int(e[2]), float(e[3]), float(e[4]), float(e[5]),
                      float(e[6]))
    return RLState(veh, ego)


def _record(t: Transition) -> str:
    doc = {"s": _state_doc(t.s), "a": [float(x) for x in t.a], "r": float(t.r),
           "s2": _state_doc(t.s2), "done": int(t.done), "reason": t.reason}
    return json.dumps(doc, sort_keys=True, allow_nan=False)


def _parse(index, line) -> Transition:
    try:
        doc = json.loads(line)
        t = Transition(_state_from(doc["s"]), np.array(doc["a"], dtype=float), float(doc["r"]),
                       _state_from(doc["s2"]), int(doc["done"]), str(doc["reason"]))
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        raise CorruptRecordError(index, f"unreadable ({exc})") from None
    if t.a.shape != (4,) or t.done not in (0, 1):
        raise CorruptRecordError(index, "malformed action or done flag")
    return t


def _validate(index, t: Transition, fail_penalty: float):
    if not fail_penalty - 1e-12 <= t.r <= 1.0 + 1e-12:
        raise DatasetValidationError(f"record {index}: reward {t.r} outside [{fail_penalty}, 1]")
    if np.any(np.abs(t.a) > 1.0 + 1e-12):
        raise DatasetValidationError(f"record {index}: action outside [-1, 1]")
    terminal = t.reason in (EndReason.COLLISION.value, EndReason.ROAD_DEPARTURE.value)
    if bool(t.done) != terminal:
        raise DatasetValidationError(f"record {index}: done flag disagrees with reason {t.reason!r}")


def save(data: TransitionSet, path, extra: dict | None = None) -> str:
    """Write a header line plus one JSON record per transition; returns the body checksum."""
    body = [_record(t) for t in data.transitions]
    h = hashlib.sha256()
    for line in body:
        h.update(line.encode())
        h.update(b"\n")
    meta = dict(data.metadata)
    meta["n_samples"] = len(body)
    meta["terminal_fraction"] = terminal_fraction(data.transitions)
    header = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "metadata": meta,
              "checksum": h.hexdigest()}
    if extra:
        header["run"] = extra
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for line in body:
            fh.write(line + "\n")
    return header["checksum"]


def load(path) -> TransitionSet:
    with open(path) as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetValidationError("empty dataset file")
    try:
        header = json.loads(lines[0])
    except ValueError:
        raise DatasetValidationError("unreadable header line") from None
    if header.get("format") != DATASET_FORMAT or header.get("version") != DATASET_VERSION:
        raise DatasetValidationError(
            f"unsupported dataset format {header.get('format')!r} v{header.get('version')}")
    meta = header.get("metadata", {})
    fail_penalty = float(meta.get("reward", {}).get("fail_penalty", RewardParams().fail_penalty))
    h = hashlib.sha256()
    transitions = []
    for i, line in enumerate(lines[1:]):
        t = _parse(i, line)
        _validate(i, t, fail_penalty)
        h.update(line.encode())
        h.update(b"\n")
        transitions.append(t)
    n = meta.get("n_samples")
    if n != len(transitions):
        idx = len(transitions)
        raise CorruptRecordError(idx, f"file holds {len(transitions)} records, header says {n}")
    if h.hexdigest() != header.get("checksum"):
        raise DatasetValidationError("body checksum mismatch")
    frac = terminal_fraction(transitions)
    if abs(frac - float(meta.get("terminal_fraction", -1.0))) > 1e-6:
        raise DatasetValidationError(
            f"metadata terminal_fraction {meta.get('terminal_fraction')} but body has {frac}")
    return TransitionSet(transitions, meta)


def checksum(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
