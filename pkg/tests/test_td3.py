import numpy as np
import pytest

from otpl.mdp_env import EgoFeatures, RLState, VehicleFeatures
from otpl.td3_offline import (
    ReplayBuffer,
    TD3Hyperparams,
    TrainedAgent,
    TrainingError,
    Transition,
    critic_target,
    target_noise,
    td3_iteration,
    train_offline,
    update_targets,
)

TINY = TD3Hyperparams(batch=8, hidden=(6,), d_phi=4, d_rho=3, phi_hidden=(5,), rho_hidden=(5,),
                      lr=1e-3, tau=0.05)


def ego(v=20.0, lat=3.5):
    return EgoFeatures(v, 1, 1, lat, 0.0, 0.0, 0.0)


def random_transitions(n, seed=0, p_done=0.3):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        def state():
            k = int(rng.integers(0, 4))
            veh = tuple(VehicleFeatures(float(rng.uniform(-80, 80)), float(rng.uniform(-1, 1)),
                                        int(rng.integers(-1, 2))) for _ in range(k))
            return RLState(veh, ego(float(rng.uniform(0, 35)), float(rng.uniform(0, 7))))
        done = int(rng.random() < p_done)
        out.append(Transition(state(), rng.uniform(-1, 1, 4), float(rng.uniform(-0.5, 1)), state(),
                              done, "collision" if done else "none"))
    return out


@pytest.fixture(scope="module")
def buffer():
    return ReplayBuffer(random_transitions(64))


def snapshot(nets):
    return [p.copy() for n in nets for p in n.params()]


def same(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def test_done_target_is_reward(buffer):
    agent = TrainedAgent.initialize(TINY, 0)
    idx = np.nonzero(buffer.dones)[0][:8]
    batch = buffer.batch(idx)
    y = critic_target(agent, batch, target_noise(TINY, np.random.default_rng(0), len(batch)))
    assert np.array_equal(y, batch.r)


def test_hand_computed_target(buffer):
    agent = TrainedAgent.initialize(TINY, 3)
    idx = np.nonzero(buffer.dones == 0)[0][:4]
    batch = buffer.batch(idx)
    noise = np.full((4, 4), 0.1)
    y = critic_target(agent, batch, noise)

    def dense(net, x):
        for l in net.layers:
            z = [sum(x[i] * l.W[i, j] for i in range(len(x))) + l.b[j] for j in range(l.W.shape[1])]
            if l.activation == "relu":
                z = [max(v, 0.0) for v in z]
            elif l.activation == "tanh":
                z = [float(np.tanh(v)) for v in z]
            x = z
        return x

    for k, i in enumerate(idx):
        lo, hi = buffer.off2[i], buffer.off2[i + 1]
        pooled = [0.0] * TINY.d_phi
        for row in buffer.veh2[lo:hi]:
            pooled = [p + v for p, v in zip(pooled, dense(agent.encoder_t.phi, list(row)))]
        x = dense(agent.encoder_t.rho, pooled) + list(buffer.ego2[i])
        a = [min(max(v + 0.1, -1.0), 1.0) for v in dense(agent.actor_t, x)]
        q = min(dense(c, x + a)[0] for c in agent.critics_t)
        assert y[k] == pytest.approx(buffer.rewards[i] + 0.99 * q, abs=1e-10)


def test_min_over_critics_is_symmetric(buffer):
    agent = TrainedAgent.initialize(TINY, 4)
    batch = buffer.batch(np.arange(8))
    noise = np.zeros((8, 4))
    y = critic_target(agent, batch, noise)
    agent.critics_t = agent.critics_t[::-1]
    assert np.array_equal(critic_target(agent, batch, noise), y)


def test_zero_sigma_gives_no_noise():
    h = TD3Hyperparams(sigma=0.0)
    assert not target_noise(h, np.random.default_rng(0), 5).any()
    n = target_noise(TD3Hyperparams(sigma=5.0, c=0.5), np.random.default_rng(0), 1000)
    assert np.abs(n).max() <= 0.5


def test_delayed_updates(buffer):
    agent = TrainedAgent.initialize(TINY, 1)
    rng = np.random.default_rng(0)
    frozen = [agent.actor, agent.actor_t, *agent.encoder_t.nets, *agent.critics_t]
    before = snapshot(frozen)
    critics_before = snapshot(agent.critics)
    td3_iteration(agent, buffer, rng, 1)
    assert same(snapshot(frozen), before)
    assert not same(snapshot(agent.critics), critics_before)
    td3_iteration(agent, buffer, rng, 2)
    assert not same(snapshot([agent.actor]), before[: len(agent.actor.params())])
    assert not same(snapshot(agent.critics_t), snapshot(agent.critics))


def test_tau_one_copies(buffer):
    agent = TrainedAgent.initialize(TINY, 2)
    td3_iteration(agent, buffer, np.random.default_rng(0), 1)
    update_targets(agent, 1.0)
    for t, live in agent.target_pairs():
        assert same(t.params(), live.params())


def test_buffer_is_read_only_and_checksum_stable(buffer):
    c = buffer.checksum()
    agent = TrainedAgent.initialize(TINY, 0)
    rng = np.random.default_rng(0)
    for j in range(1, 5):
        td3_iteration(agent, buffer, rng, j)
    assert ReplayBuffer(random_transitions(64)).checksum() == c == buffer.checksum()
    with pytest.raises(ValueError):
        buffer.rewards[0] = 1.0


def test_batch_gather_matches_transitions():
    ts = random_transitions(20, seed=5)
    buf = ReplayBuffer(ts)
    idx = np.array([3, 3, 0, 19, 7])
    b = buf.batch(idx)
    for k, i in enumerate(idx):
        np.testing.assert_array_equal(b.rows[b.segs == k], buf.scaling.vehicle_array(ts[i].s.vehicles))
        np.testing.assert_array_equal(b.rows2[b.segs2 == k], buf.scaling.vehicle_array(ts[i].s2.vehicles))
        assert b.r[k] == ts[i].r and b.done[k] == ts[i].done


def test_training_is_deterministic(buffer):
    a = train_offline(buffer, TINY, seed=9, iterations=20)
    b = train_offline(buffer, TINY, seed=9, iterations=20)
    assert a.to_dict() == b.to_dict()
    c = train_offline(buffer, TINY, seed=10, iterations=20)
    assert a.to_dict()["actor"] != c.to_dict()["actor"]


def test_checkpoint_round_trip(buffer, tmp_path):
    agent = train_offline(buffer, TINY, seed=1, iterations=10, checkpoint_dir=tmp_path,
                          checkpoint_every=5)
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "agent.json", "agent_0000005.json", "agent_0000010.json"]
    back = TrainedAgent.load(tmp_path)
    assert back.iteration == 10 and back.data_checksum == buffer.checksum()
    s = random_transitions(1, seed=3)[0].s
    assert np.array_equal(back.act_state(s), agent.act_state(s))
    # resuming from the checkpoint continues bit-identically
    rng_a, rng_b = np.random.default_rng(4), np.random.default_rng(4)
    td3_iteration(agent, buffer, rng_a, 11)
    td3_iteration(back, buffer, rng_b, 11)
    assert back.to_dict() == agent.to_dict()


def test_checkpoint_rejects_unknown_format(buffer):
    d = TrainedAgent.initialize(TINY, 0).to_dict()
    d["format"] = "other"
    with pytest.raises(ValueError):
        TrainedAgent.from_dict(d)


def test_non_finite_raises(buffer):
    agent = TrainedAgent.initialize(TINY, 0)
    agent.critics[0].params()[0][...] = np.nan
    with pytest.raises(TrainingError):
        td3_iteration(agent, buffer, np.random.default_rng(0), 1)


def test_buffer_smaller_than_batch():
    with pytest.raises(ValueError):
        train_offline(ReplayBuffer(random_transitions(3)), TINY, seed=0, iterations=1)


def test_bandit_convergence():
    # one-step bandit: reward peaks at normalised a_tv = 0.3, other dimensions irrelevant
    rng = np.random.default_rng(0)
    s = RLState((), ego())
    ts = []
    for _ in range(400):
        a = rng.uniform(-1, 1, 4)
        ts.append(Transition(s, a, float(1.0 - (a[0] - 0.3) ** 2), s, 1, "collision"))
    h = TD3Hyperparams(batch=64, hidden=(32,), d_phi=4, d_rho=3, phi_hidden=(4,), rho_hidden=(4,),
                       lr=3e-3, tau=0.05)
    agent = train_offline(ReplayBuffer(ts), h, seed=0, iterations=3000)
    assert agent.act_state(s)[0] == pytest.approx(0.3, abs=0.05)
