"""Twin Delayed DDPG on top of :mod:`levelk_onramp.nn`."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import Adam, PolicyNet


@dataclass
class TD3Config:
    gamma: float = 0.99
    phi: float = 0.995  # target keeps this share of itself per soft update
    actor_lr: float = 3e-4
    critic_lrs: tuple[float, float] = (3e-4, 3e-4)
    exploration_sigma: float = 0.1
    smoothing_sigma: float = 0.2
    smoothing_clip: float = 0.5
    policy_delay: int = 2
    batch_size: int = 256
    buffer_size: int = 100_000
    warmup_steps: int = 1000
    hidden: tuple[int, ...] = (128, 128)
    action_low: float = -1.0
    action_high: float = 1.0
    reward_scale: float = 1.0  # multiplies rewards on their way into the replay buffer

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0 < self.phi < 1:
            raise ValueError("phi must lie in (0, 1)")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")
        self.critic_lrs = tuple(self.critic_lrs)
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["critic_lrs"] = list(self.critic_lrs)
        d["hidden"] = list(self.hidden)
        return d


class BufferUnderflow(RuntimeError):
    pass


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.s2 = np.zeros((capacity, state_dim))
        self.r = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.size = 0
        self.ptr = 0

    def __len__(self):
        return self.size

    def push(self, s, a, s2, r, done=False):
        i = self.ptr
        self.s[i], self.a[i], self.s2[i], self.r[i], self.done[i] = s, a, s2, r, float(done)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self.size < batch_size:
            raise BufferUnderflow(f"buffer holds {self.size} transitions, batch needs {batch_size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return self.s[idx], self.a[idx], self.s2[idx], self.r[idx], self.done[idx]


@dataclass
class TD3Nets:
    actor: PolicyNet
    critic1: PolicyNet
    critic2: PolicyNet
    actor_t: PolicyNet
    critic1_t: PolicyNet
    critic2_t: PolicyNet
    opt_actor: Adam = field(repr=False)
    opt_c1: Adam = field(repr=False)
    opt_c2: Adam = field(repr=False)

    @classmethod
    def create(cls, state_dim: int, action_dim: int, config: TD3Config, rng: np.random.Generator):
        hidden = list(config.hidden)
        actor = PolicyNet([state_dim, *hidden, action_dim], "tanh", rng)
        c1 = PolicyNet([state_dim + action_dim, *hidden, 1], "identity", rng)
        c2 = PolicyNet([state_dim + action_dim, *hidden, 1], "identity", rng)
        return cls(
            actor, c1, c2, actor.copy(), c1.copy(), c2.copy(),
            Adam(actor.params(), config.actor_lr),
            Adam(c1.params(), config.critic_lrs[0]),
            Adam(c2.params(), config.critic_lrs[1]),
        )

    def networks(self):
        return [self.actor, self.critic1, self.critic2, self.actor_t, self.critic1_t, self.critic2_t]

    def all_finite(self) -> bool:
        return all(n.all_finite() for n in self.networks())


@dataclass
class UpdateInfo:
    critic1_loss: float
    critic2_loss: float
    actor_loss: float | None
    did_policy_update: bool


def act(actor: PolicyNet, state, sigma: float, rng: np.random.Generator, low=-1.0, high=1.0) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    if state.shape[-1] != actor.in_dim:
        raise ValueError(f"state has dim {state.shape[-1]}, actor expects {actor.in_dim}")
    a = actor(state)
    if sigma > 0:
        a = a + rng.normal(0.0, sigma, size=np.shape(a))
    return np.clip(a, low, high)


def soft_update(target: PolicyNet, source: PolicyNet, phi: float) -> None:
    for pt, ps in zip(target.params(), source.params()):
        pt *= phi
        pt += (1.0 - phi) * ps


def critic_targets(nets: TD3Nets, s2, r, done, config: TD3Config, rng: np.random.Generator) -> np.ndarray:
    """Bootstrap targets from the smoothed target actor and the smaller target critic."""
    a2 = nets.actor_t(s2)
    noise = np.clip(rng.normal(0.0, config.smoothing_sigma, size=a2.shape),
                    -config.smoothing_clip, config.smoothing_clip)
    a2 = np.clip(a2 + noise, config.action_low, config.action_high)
    sa2 = np.concatenate([s2, a2], axis=1)
    q_next = np.minimum(nets.critic1_t(sa2)[:, 0], nets.critic2_t(sa2)[:, 0])
    return r + config.gamma * (1.0 - done) * q_next


def td3_update(nets: TD3Nets, buffer: ReplayBuffer, config: TD3Config, step: int,
               rng: np.random.Generator) -> UpdateInfo:
    """One critic step, plus an actor step and soft target update every
    ``policy_delay`` calls (when ``step % policy_delay == 0``)."""
    s, a, s2, r, done = buffer.sample(config.batch_size, rng)
    n = len(r)

    y = critic_targets(nets, s2, r, done, config, rng)

    sa = np.concatenate([s, a], axis=1)
    losses = []
    for critic, opt in ((nets.critic1, nets.opt_c1), (nets.critic2, nets.opt_c2)):
        q, cache = critic.forward(sa, keep=True)
        diff = q[:, 0] - y
        losses.append(float(np.mean(diff * diff)))
        grads, _ = critic.backward(cache, (2.0 / n) * diff[:, None])
        opt.step(grads)

    actor_loss = None
    did = step % config.policy_delay == 0
    if did:
        pi, a_cache = nets.actor.forward(s, keep=True)
        q, c_cache = nets.critic1.forward(np.concatenate([s, pi], axis=1), keep=True)
        actor_loss = -float(np.mean(q))
        # ascend Q: descend -Q; only the action slice of dQ/dinput reaches the actor
        _, dx = nets.critic1.backward(c_cache, np.full((n, 1), -1.0 / n))
        grads, _ = nets.actor.backward(a_cache, dx[:, s.shape[1]:])
        nets.opt_actor.step(grads)
        soft_update(nets.actor_t, nets.actor, config.phi)
        soft_update(nets.critic1_t, nets.critic1, config.phi)
        soft_update(nets.critic2_t, nets.critic2, config.phi)
    return UpdateInfo(losses[0], losses[1], actor_loss, did)
