"""Offline TD3 with three critics over a fixed transition buffer and a shared set encoder."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .deepsets_encoder import DeepSetsEncoder
from .mdp_env import ACTION_DIM, EGO_DIM, ActionBounds, FeatureScaling, RLState, RewardParams
from .neural import DenseNet, Optimizer, backward, forward, polyak_update

CHECKPOINT_FORMAT = "otpl-agent"
CHECKPOINT_VERSION = 1
CHECKPOINT_FILE = "agent.json"


class TrainingError(RuntimeError):
    """Non-finite loss or other unrecoverable training failure."""


@dataclass(frozen=True)
class Transition:
    s: RLState
    a: np.ndarray  # normalised to [-1, 1]^4
    r: float
    s2: RLState
    done: int
    reason: str = "none"

    def __eq__(self, other):
        if not isinstance(other, Transition):
            return NotImplemented
        return (self.s == other.s and self.s2 == other.s2 and np.array_equal(self.a, other.a)
                and self.r == other.r and self.done == other.done and self.reason == other.reason)


@dataclass(frozen=True)
class TD3Hyperparams:
    gamma: float = 0.99
    tau: float = 1e-4
    batch: int = 100
    lr: float = 1e-4
    d: int = 2
    sigma: float = 0.2
    c: float = 0.5
    max_iterations: int = 100_000
    n_critics: int = 3
    hidden: tuple = (128, 96)
    d_phi: int = 64
    d_rho: int = 32
    phi_hidden: tuple = (64,)
    rho_hidden: tuple = (64,)

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.d < 1 or self.batch < 1 or self.n_critics < 1:
            raise ValueError("d, batch and n_critics must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        for name in ("hidden", "phi_hidden", "rho_hidden"):
            object.__setattr__(self, name, tuple(int(h) for h in getattr(self, name)))

    def to_dict(self):
        d = asdict(self)
        for k in ("hidden", "phi_hidden", "rho_hidden"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ReplayBuffer:
    """Fixed, read-only transition storage with flattened variable-size vehicle sets."""

    def __init__(self, transitions, scaling: FeatureScaling | None = None):
        self.scaling = scaling or FeatureScaling()
        transitions = list(transitions)
        if not transitions:
            raise ValueError("replay buffer needs at least one transition")
        sc = self.scaling
        self.size = len(transitions)
        self.actions = np.array([t.a for t in transitions], dtype=float).reshape(-1, ACTION_DIM)
        self.rewards = np.array([t.r for t in transitions], dtype=float)
        self.dones = np.array([t.done for t in transitions], dtype=float)
        self.ego = np.array([sc.ego_array(t.s.ego) for t in transitions]).reshape(-1, EGO_DIM)
        self.ego2 = np.array([sc.ego_array(t.s2.ego) for t in transitions]).reshape(-1, EGO_DIM)
        self.veh, self.off = self._flatten([t.s.vehicles for t in transitions])
        self.veh2, self.off2 = self._flatten([t.s2.vehicles for t in transitions])
        for arr in self._arrays():
            arr.setflags(write=False)
        self._checksum = None

    def _flatten(self, sets):
        counts = np.array([len(s) for s in sets], dtype=int)
        off = np.concatenate([[0], np.cumsum(counts)])
        rows = [self.scaling.vehicle_array(s) for s in sets]
        return (np.concatenate(rows) if off[-1] else np.zeros((0, 3))), off

    def _arrays(self):
        return (self.actions, self.rewards, self.dones, self.ego, self.ego2,
                self.veh, self.off, self.veh2, self.off2)

    def __len__(self):
        return self.size

    def checksum(self) -> str:
        if self._checksum is None:
            h = hashlib.sha256()
            for arr in self._arrays():
                h.update(np.ascontiguousarray(arr).tobytes())
            self._checksum = h.hexdigest()
        return self._checksum

    @staticmethod
    def _gather(veh, off, idx):
        lengths = off[idx + 1] - off[idx]
        total = int(lengths.sum())
        segs = np.repeat(np.arange(len(idx)), lengths)
        starts = np.repeat(off[idx], lengths)
        within = np.arange(total) - np.repeat(np.cumsum(lengths) - lengths, lengths)
        return veh[starts + within], segs

    def batch(self, idx):
        idx = np.asarray(idx, dtype=int)
        rows, segs = self._gather(self.veh, self.off, idx)
        rows2, segs2 = self._gather(self.veh2, self.off2, idx)
        return Batch(rows, segs, self.ego[idx], self.actions[idx], self.rewards[idx],
                     rows2, segs2, self.ego2[idx], self.dones[idx])


@dataclass
class Batch:
    rows: np.ndarray
    segs: np.ndarray
    ego: np.ndarray
    a: np.ndarray
    r: np.ndarray
    rows2: np.ndarray
    segs2: np.ndarray
    ego2: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.r)


def _actor_net(in_dim, hidden, rng):
    sizes = [in_dim, *hidden, ACTION_DIM]
    return DenseNet.create(sizes, ["relu"] * len(hidden) + ["tanh"], rng)


def _critic_net(in_dim, hidden, rng):
    sizes = [in_dim + ACTION_DIM, *hidden, 1]
    return DenseNet.create(sizes, ["relu"] * len(hidden) + ["identity"], rng)


@dataclass
class TrainedAgent:
    encoder: DeepSetsEncoder
    actor: DenseNet
    critics: list
    encoder_t: DeepSetsEncoder
    actor_t: DenseNet
    critics_t: list
    hyper: TD3Hyperparams
    seed: int
    scaling: FeatureScaling = field(default_factory=FeatureScaling)
    bounds: ActionBounds = field(default_factory=ActionBounds)
    reward: RewardParams = field(default_factory=RewardParams)
    iteration: int = 0
    data_checksum: str = ""
    actor_opt: Optimizer = None
    critic_opt: Optimizer = None

    def __post_init__(self):
        if self.actor_opt is None:
            self.actor_opt = Optimizer([self.actor], self.hyper.lr)
        if self.critic_opt is None:
            self.critic_opt = Optimizer(self.critic_nets(), self.hyper.lr)

    @classmethod
    def initialize(cls, hyper: TD3Hyperparams, seed: int, **kw):
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
        enc = DeepSetsEncoder.create(rng, hyper.d_phi, hyper.d_rho, hyper.phi_hidden, hyper.rho_hidden)
        in_dim = enc.out_dim + EGO_DIM
        actor = _actor_net(in_dim, hyper.hidden, rng)
        critics = [_critic_net(in_dim, hyper.hidden, rng) for _ in range(hyper.n_critics)]
        return cls(enc, actor, critics, enc.copy(), actor.copy(), [q.copy() for q in critics],
                   hyper, seed, **kw)

    def critic_nets(self):
        """Networks driven by the critic loss: the encoder first, then every critic."""
        return self.encoder.nets + list(self.critics)

    def target_pairs(self):
        pairs = [(self.actor_t, self.actor)]
        pairs += list(zip(self.encoder_t.nets, self.encoder.nets))
        pairs += list(zip(self.critics_t, self.critics))
        return pairs

    def state_input(self, encoding, ego):
        return np.concatenate([encoding, ego], axis=1)

    def policy_normalized(self, vehicle_sets, ego):
        """Deterministic normalised actions for raw feature arrays (already scaled)."""
        enc, _ = self.encoder.encode_batch(vehicle_sets)
        return self.actor(self.state_input(enc, np.atleast_2d(ego)))

    def act_state(self, state: RLState) -> np.ndarray:
        veh = self.scaling.vehicle_array(state.vehicles)
        ego = self.scaling.ego_array(state.ego)
        return self.policy_normalized([veh], ego[None, :])[0]

    # ------------------------------------------------------------------ io

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "iteration": self.iteration,
            "data_checksum": self.data_checksum,
            "hyper": self.hyper.to_dict(),
            "scaling": self.scaling.to_dict(),
            "bounds": self.bounds.to_dict(),
            "reward": self.reward.to_dict(),
            "encoder": self.encoder.to_dict(),
            "actor": self.actor.to_dict(),
            "critics": [q.to_dict() for q in self.critics],
            "encoder_target": self.encoder_t.to_dict(),
            "actor_target": self.actor_t.to_dict(),
            "critics_target": [q.to_dict() for q in self.critics_t],
            "actor_opt": self.actor_opt.state.to_dict(),
            "critic_opt": self.critic_opt.state.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "TrainedAgent":
        from .neural import AdamState

        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint format {d.get('format')!r} v{d.get('version')}")
        hyper = TD3Hyperparams.from_dict(d["hyper"])
        agent = cls(
            DeepSetsEncoder.from_dict(d["encoder"]), DenseNet.from_dict(d["actor"]),
            [DenseNet.from_dict(q) for q in d["critics"]],
            DeepSetsEncoder.from_dict(d["encoder_target"]), DenseNet.from_dict(d["actor_target"]),
            [DenseNet.from_dict(q) for q in d["critics_target"]],
            hyper, d["seed"], FeatureScaling(**d["scaling"]), ActionBounds.from_dict(d["bounds"]),
            RewardParams(**d["reward"]), d["iteration"], d["data_checksum"],
        )
        agent.actor_opt.state = AdamState.from_dict(d["actor_opt"])
        agent.critic_opt.state = AdamState.from_dict(d["critic_opt"])
        expected = agent.encoder.out_dim + EGO_DIM
        if agent.actor.in_dim != expected or agent.actor.out_dim != ACTION_DIM:
            raise ValueError("checkpoint actor dimensions do not match the feature layout")
        return agent

    def save(self, path, extra: dict | None = None):
        """Write the checkpoint to ``path`` (a directory, or a ``.json`` file)."""
        path = os.fspath(path)
        if not path.endswith(".json"):
            os.makedirs(path, exist_ok=True)
            path = os.path.join(path, CHECKPOINT_FILE)
        doc = self.to_dict()
        if extra:
            doc["run"] = extra
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True)
        return path

    @classmethod
    def load(cls, path) -> "TrainedAgent":
        path = os.fspath(path)
        if os.path.isdir(path):
            path = os.path.join(path, CHECKPOINT_FILE)
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------- training


def critic_target(agent: TrainedAgent, batch: Batch, noise: np.ndarray):
    """y = r + (1 - done) * gamma * min_i Q'_i(s', clip(pi'(s') + noise))."""
    h = agent.hyper
    enc2, _ = agent.encoder_t.encode_stacked(batch.rows2, batch.segs2, len(batch))
    x2 = agent.state_input(enc2, batch.ego2)
    a2 = np.clip(agent.actor_t(x2) + noise, -1.0, 1.0)
    xa2 = np.concatenate([x2, a2], axis=1)
    q2 = np.min(np.stack([q(xa2)[:, 0] for q in agent.critics_t]), axis=0)
    return batch.r + (1.0 - batch.done) * h.gamma * q2


def target_noise(hyper: TD3Hyperparams, rng, n):
    if hyper.sigma == 0.0:
        return np.zeros((n, ACTION_DIM))
    return np.clip(rng.normal(0.0, hyper.sigma, (n, ACTION_DIM)), -hyper.c, hyper.c)


def critic_step(agent: TrainedAgent, batch: Batch, y: np.ndarray):
    """One Adam step of all critics (and the encoder) on the squared TD error."""
    n = len(batch)
    enc, enc_cache = agent.encoder.encode_stacked(batch.rows, batch.segs, n)
    xa = np.concatenate([agent.state_input(enc, batch.ego), batch.a], axis=1)
    d_enc = np.zeros_like(enc)
    grads, losses = [], []
    for q in agent.critics:
        out, cache = forward(q, xa)
        err = out[:, 0] - y
        losses.append(float(np.mean(err * err)))
        g, gx = backward(q, cache, (2.0 / n) * err[:, None])
        grads.append(g)
        d_enc += gx[:, : enc.shape[1]]
    enc_grads = agent.encoder.backward(enc_cache, d_enc)
    flat = list(enc_grads)
    for g in grads:
        flat += g
    agent.critic_opt.step(flat)
    return losses


def actor_step(agent: TrainedAgent, batch: Batch):
    """Deterministic policy gradient on Q1 with the encoding treated as a constant."""
    n = len(batch)
    enc, _ = agent.encoder.encode_stacked(batch.rows, batch.segs, n)
    x = agent.state_input(enc, batch.ego)
    a, a_cache = forward(agent.actor, x)
    q1 = agent.critics[0]
    qv, q_cache = forward(q1, np.concatenate([x, a], axis=1))
    _, gx = backward(q1, q_cache, np.full((n, 1), -1.0 / n))
    g_actor, _ = backward(agent.actor, a_cache, gx[:, -ACTION_DIM:])
    agent.actor_opt.step(g_actor)
    return -float(np.mean(qv))


def update_targets(agent: TrainedAgent, tau: float):
    for target, live in agent.target_pairs():
        polyak_update(target, live, tau)


def td3_iteration(agent: TrainedAgent, buffer: ReplayBuffer, rng, j: int) -> dict:
    """One training iteration ``j`` (1-based): critic update, delayed actor and target updates."""
    if len(buffer) == 0:
        raise ValueError("empty replay buffer")
    h = agent.hyper
    idx = rng.integers(0, len(buffer), h.batch)
    batch = buffer.batch(idx)
    noise = target_noise(h, rng, len(batch))
    y = critic_target(agent, batch, noise)
    losses = critic_step(agent, batch, y)
    diag = {"iteration": j, "critic_loss": losses, "y_mean": float(np.mean(y))}
    if j % h.d == 0:
        diag["actor_loss"] = actor_step(agent, batch)
        update_targets(agent, h.tau)
    agent.iteration = j
    values = losses + [diag.get("actor_loss", 0.0), diag["y_mean"]]
    if not all(math.isfinite(v) for v in values):
        raise TrainingError(f"non-finite loss at iteration {j}: {diag}")
    return diag


def train_offline(buffer: ReplayBuffer, hyper: TD3Hyperparams, seed: int, iterations: int | None = None,
                  checkpoint_dir=None, checkpoint_every: int = 5000, progress=None,
                  reward: RewardParams | None = None, bounds: ActionBounds | None = None,
                  run_info: dict | None = None) -> TrainedAgent:
    """Train an agent from scratch; deterministic in (buffer, hyper, seed)."""
    if len(buffer) < hyper.batch:
        raise ValueError(f"buffer holds {len(buffer)} transitions, fewer than one batch ({hyper.batch})")
    iterations = hyper.max_iterations if iterations is None else int(iterations)
    agent = TrainedAgent.initialize(hyper, seed, scaling=buffer.scaling,
                                    bounds=bounds or ActionBounds(), reward=reward or RewardParams())
    agent.data_checksum = buffer.checksum()
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])
    for j in range(1, iterations + 1):
        diag = td3_iteration(agent, buffer, rng, j)
        if progress is not None:
            progress(diag)
        if checkpoint_dir is not None and (j % checkpoint_every == 0 or j == iterations):
            agent.save(os.path.join(os.fspath(checkpoint_dir), f"agent_{j:07d}.json"), run_info)
    if checkpoint_dir is not None:
        agent.save(checkpoint_dir, run_info)
    return agent
