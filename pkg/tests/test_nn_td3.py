import numpy as np
import pytest

from levelk_onramp.nn import PolicyFileError, PolicyNet, dumps_policy, gradient_check, load_policy, loads_policy, save_policy
from levelk_onramp.td3 import (
    BufferUnderflow, ReplayBuffer, TD3Config, TD3Nets, act, critic_targets, td3_update,
)


def small_nets(cfg, state_dim=3, seed=0):
    return TD3Nets.create(state_dim, 1, cfg, np.random.default_rng(seed))


def filled_buffer(n, state_dim=3, r=1.0, seed=1, done=False):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(max(n, 1), state_dim, 1)
    for _ in range(n):
        buf.push(rng.standard_normal(state_dim), rng.uniform(-1, 1, 1), rng.standard_normal(state_dim), r, done)
    return buf


# --- networks -------------------------------------------------------------------

def test_actor_output_bounded():
    net = PolicyNet([4, 16, 2], "tanh", np.random.default_rng(0))
    y = net(100.0 * np.random.default_rng(1).standard_normal((50, 4)))
    assert y.shape == (50, 2) and np.all(np.abs(y) <= 1.0)


def test_gradient_check_random_net():
    rng = np.random.default_rng(3)
    net = PolicyNet([4, 8, 6, 2], "tanh", rng)
    x = rng.standard_normal((5, 4))
    assert gradient_check(net, x, ("squared", rng.standard_normal((5, 2))), 1e-5) < 1e-4


def test_gradient_check_linear_net_exact():
    rng = np.random.default_rng(4)
    net = PolicyNet([3, 2], "identity", rng)
    assert gradient_check(net, rng.standard_normal((4, 3)), ("linear", [1.0, -2.0]), 1e-5) < 1e-9


def test_gradient_check_saturated():
    rng = np.random.default_rng(5)
    net = PolicyNet([4, 8, 1], "tanh", rng)
    x = 100.0 * rng.standard_normal((5, 4))
    assert gradient_check(net, x, ("squared", np.zeros((5, 1))), 1e-5) < 1e-3


def test_gradient_check_epsilon_range():
    net = PolicyNet([2, 1], "identity")
    with pytest.raises(ValueError):
        gradient_check(net, np.zeros((1, 2)), ("linear", [1.0]), 1e-2)


# --- policy files -------------------------------------------------------------------

def test_policy_round_trip_bytes(tmp_path):
    net = PolicyNet([5, 7, 1], "tanh", np.random.default_rng(6))
    a, b = tmp_path / "a.policy", tmp_path / "b.policy"
    save_policy(net, a)
    save_policy(load_policy(a), b)
    assert a.read_bytes() == b.read_bytes()
    again = load_policy(b)
    assert all(np.array_equal(p, q) for p, q in zip(net.params(), again.params()))
    assert a.read_text().splitlines()[0] == "td3-policy v1"


def test_truncated_policy_file():
    text = dumps_policy(PolicyNet([5, 7, 1], "tanh"))
    with pytest.raises(PolicyFileError, match="truncated"):
        loads_policy("\n".join(text.splitlines()[:-1]) + "\n")
    cut = text.splitlines()
    cut[-1] = " ".join(cut[-1].split()[:-1])
    with pytest.raises(PolicyFileError, match="expected"):
        loads_policy("\n".join(cut))


def test_policy_dimension_and_version_checks():
    text = dumps_policy(PolicyNet([5, 7, 1], "tanh"))
    with pytest.raises(PolicyFileError, match="input dim"):
        loads_policy(text, expect_in_dim=4)
    with pytest.raises(PolicyFileError, match="format"):
        loads_policy(text.replace("v1", "v2", 1))


# --- acting -------------------------------------------------------------------

def test_zero_actor_acts_zero():
    net = PolicyNet([3, 4, 1], "tanh", weights=[np.zeros((3, 4)), np.zeros((4, 1))], biases=[np.zeros(4), np.zeros(1)])
    rng = np.random.default_rng(0)
    assert act(net, np.ones(3), 0.0, rng).tolist() == [0.0]


def test_greedy_is_deterministic_and_noise_centered():
    net = PolicyNet([3, 8, 1], "tanh", np.random.default_rng(7))
    s = np.array([0.1, -0.2, 0.3])
    rng = np.random.default_rng(8)
    greedy = act(net, s, 0.0, rng)
    assert np.array_equal(greedy, act(net, s, 0.0, rng))
    samples = np.array([act(net, s, 0.1, rng)[0] for _ in range(10_000)])
    assert abs(samples.mean() - greedy[0]) < 3 * 0.1 / np.sqrt(10_000)


def test_act_dimension_error():
    with pytest.raises(ValueError):
        act(PolicyNet([3, 1]), np.zeros(4), 0.0, np.random.default_rng(0))


# --- updates ------------------------------------------------------------------

def test_zero_discount_target_is_reward():
    cfg = TD3Config(gamma=0.0, hidden=(8, 8), batch_size=16)
    nets = small_nets(cfg)
    buf = filled_buffer(32)
    s, a, s2, r, done = buf.sample(16, np.random.default_rng(0))
    y = critic_targets(nets, s2, r, done, cfg, np.random.default_rng(0))
    assert np.array_equal(y, np.ones(16))


def test_terminal_drops_bootstrap():
    cfg = TD3Config(hidden=(8, 8))
    nets = small_nets(cfg)
    y = critic_targets(nets, np.ones((4, 3)), np.full(4, 2.5), np.ones(4), cfg, np.random.default_rng(0))
    assert np.array_equal(y, np.full(4, 2.5))


def test_target_uses_smaller_critic():
    cfg = TD3Config(hidden=(8, 8), smoothing_sigma=0.0)
    nets = small_nets(cfg)
    s2 = np.random.default_rng(9).standard_normal((20, 3))
    y = critic_targets(nets, s2, np.zeros(20), np.zeros(20), cfg, np.random.default_rng(0))
    sa2 = np.concatenate([s2, nets.actor_t(s2)], axis=1)
    q1, q2 = nets.critic1_t(sa2)[:, 0], nets.critic2_t(sa2)[:, 0]
    assert np.all(y <= cfg.gamma * q1 + 1e-15) and np.all(y <= cfg.gamma * q2 + 1e-15)


def test_delayed_actor_update_is_bit_stable():
    cfg = TD3Config(hidden=(8, 8), batch_size=8, policy_delay=2)
    nets = small_nets(cfg)
    buf = filled_buffer(16)
    rng = np.random.default_rng(0)
    before = [p.copy() for n in (nets.actor, nets.actor_t, nets.critic1_t, nets.critic2_t) for p in n.params()]
    critic_before = [p.copy() for p in nets.critic1.params()]
    info = td3_update(nets, buf, cfg, 1, rng)
    after = [p for n in (nets.actor, nets.actor_t, nets.critic1_t, nets.critic2_t) for p in n.params()]
    assert not info.did_policy_update and info.actor_loss is None
    assert all(np.array_equal(x, y) for x, y in zip(before, after))
    assert not all(np.array_equal(x, y) for x, y in zip(critic_before, nets.critic1.params()))
    info = td3_update(nets, buf, cfg, 2, rng)
    assert info.did_policy_update
    assert not all(np.array_equal(x, y) for x, y in zip(before[:4], nets.actor.params()))


def test_targets_start_equal_and_stay_within_history():
    cfg = TD3Config(hidden=(8, 8), batch_size=8, policy_delay=1)
    nets = small_nets(cfg)
    assert all(np.array_equal(p, q) for p, q in zip(nets.actor.params(), nets.actor_t.params()))
    buf = filled_buffer(16)
    rng = np.random.default_rng(0)
    lo = [p.copy() for p in nets.actor.params()]
    hi = [p.copy() for p in nets.actor.params()]
    for k in range(1, 30):
        td3_update(nets, buf, cfg, k, rng)
        lo = [np.minimum(a, p) for a, p in zip(lo, nets.actor.params())]
        hi = [np.maximum(a, p) for a, p in zip(hi, nets.actor.params())]
        for t, a, b in zip(nets.actor_t.params(), lo, hi):
            assert np.all(t >= a - 1e-12) and np.all(t <= b + 1e-12)
    assert nets.all_finite()


def test_regression_to_constant():
    cfg = TD3Config(gamma=0.0, hidden=(16, 16), batch_size=1, actor_lr=1e-3, critic_lrs=(1e-2, 1e-2))
    nets = small_nets(cfg)
    buf = ReplayBuffer(1, 3, 1)
    s, a = np.array([0.2, -0.1, 0.4]), np.array([0.3])
    buf.push(s, a, s, 0.7)
    rng = np.random.default_rng(0)
    for k in range(200):
        td3_update(nets, buf, cfg, k, rng)
    sa = np.concatenate([s, a])[None, :]
    assert abs(nets.critic1(sa)[0, 0] - 0.7) < 1e-2
    assert abs(nets.critic2(sa)[0, 0] - 0.7) < 1e-2


def test_buffer_underflow_and_ring():
    buf = ReplayBuffer(3, 1, 1)
    with pytest.raises(BufferUnderflow):
        buf.sample(1, np.random.default_rng(0))
    for k in range(5):
        buf.push([k], [0.0], [k], float(k))
    assert len(buf) == 3
    assert sorted(buf.r.tolist()) == [2.0, 3.0, 4.0]
    s, *_ = buf.sample(3, np.random.default_rng(0))
    assert len(set(s[:, 0].tolist())) == 3


def test_config_validation():
    for bad in (dict(gamma=1.0), dict(phi=0.0), dict(policy_delay=0), dict(reward_scale=0.0)):
        with pytest.raises(ValueError):
            TD3Config(**bad)
