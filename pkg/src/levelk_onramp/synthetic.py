"""Synthetic traffic with known headway and lane-change distributions.

One generative process is emitted both as a ``TrajectoryLog`` and as a
HighD-style tracks file, so the fidelity pipeline can be checked without
real naturalistic data: two draws from the same ``TrafficProfile`` should
look alike, draws from different profiles should not.

Layout on the default ring: lanes 1 and 2 carry car-following pairs whose
gap and speeds wander as Ornstein-Uhlenbeck processes; lanes 3 and 4 host
lane changers that repeat short episodes, moving to the other lane
either behind a slower preceding vehicle (mandatory) or with a clear lane
ahead (voluntary).  Episodes alternate direction so a changer never
switches lanes between episodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .roadmap import RoadMap, default_map
from .scenario import TrajectoryLog

VEHICLE_LENGTH = 4.5
SLOTS_PER_LANE = 8
EPISODE_STEPS = 40
DECISION_AT = 5  # step within an episode
CROSS_AFTER = 2  # steps from decision to lane flip
CLEAR_AHEAD = 200.0  # m, leader distance in voluntary episodes (beyond the 150 m leader range)


@dataclass(frozen=True)
class TrafficProfile:
    gap_mean: float = 35.0  # m, bumper gap in following pairs
    gap_sd: float = 8.0
    speed_mean: float = 28.0  # m/s
    speed_sd: float = 3.0
    changer_speed_mean: float = 30.0
    changer_speed_sd: float = 2.5
    mandatory_share: float = 0.5
    ttc_range: tuple[float, float] = (2.0, 10.0)  # s, uniform
    dv_range: tuple[float, float] = (1.0, 5.0)  # m/s, uniform speed deficit of the slower leader
    tau: float = 5.0  # s, OU correlation time


MISMATCHED = TrafficProfile(gap_mean=14.0, gap_sd=3.0, speed_mean=19.0, speed_sd=1.5, changer_speed_mean=21.0,
                            changer_speed_sd=1.0, ttc_range=(0.5, 2.0), dv_range=(4.0, 8.0))


@dataclass
class TrafficHistory:
    """Per-step arrays of shape ``(n_steps, n_vehicles)``."""

    s: np.ndarray
    v: np.ndarray
    lane: np.ndarray
    decision: np.ndarray  # 1 on the row logged one step after a decision
    ids: np.ndarray  # vehicle id per cell; preceding vehicles get a fresh id every episode
    dt: float

    @property
    def shape(self):
        return self.s.shape

    def to_log(self) -> TrajectoryLog:
        log = TrajectoryLog()
        n_steps, n_veh = self.shape
        for k in range(n_steps):
            t = k * self.dt
            for vid in range(n_veh):
                log.append((k, t, int(self.ids[k, vid]), "mutual", int(self.lane[k, vid]), float(self.s[k, vid]), 0.0,
                            float(self.v[k, vid]), 0.0, 0.0, 0, 0.0, int(self.decision[k, vid]), 0))
        return log

    def to_tracks_csv(self, total_length: float, leader_range: float = 150.0) -> str:
        """HighD column layout; ids and frames start at 1, 0 marks no leader."""
        lines = ["frame,id,x,y,xVelocity,yVelocity,xAcceleration,laneId,precedingId,dhw,thw,ttc"]
        n_steps, n_veh = self.shape
        for k in range(n_steps):
            s, v, lane = self.s[k], self.v[k], self.lane[k]
            for vid in range(n_veh):
                ahead = (s - s[vid]) % total_length
                ahead[vid] = np.inf
                ahead[lane != lane[vid]] = np.inf
                j = int(np.argmin(ahead))
                gap = ahead[j] - VEHICLE_LENGTH
                if np.isfinite(gap) and gap <= leader_range:
                    pre, dhw = int(self.ids[k, j]), max(gap, 0.0)
                    thw = dhw / v[vid] if v[vid] > 0 else 0.0
                    closing = v[vid] - v[j]
                    ttc = dhw / closing if closing > 0 else 0.0
                else:
                    pre, dhw, thw, ttc = 0, 0.0, 0.0, 0.0
                lines.append(f"{k + 1},{self.ids[k, vid]},{s[vid]:.3f},{lane[vid] * 3.5:.2f},{v[vid]:.4f},0,0,"
                             f"{lane[vid]},{pre},{dhw:.4f},{thw:.4f},{ttc:.4f}")
        return "\n".join(lines) + "\n"


def _ou(rng: np.random.Generator, n_steps: int, n: int, mean: float, sd: float, tau: float, dt: float):
    a = np.exp(-dt / tau)
    x = np.empty((n_steps, n))
    x[0] = rng.standard_normal(n)
    noise = rng.standard_normal((n_steps, n)) * np.sqrt(1 - a * a)
    for k in range(1, n_steps):
        x[k] = a * x[k - 1] + noise[k]
    return mean + sd * x


def generate(profile: TrafficProfile, n_steps: int, seed: int, road: RoadMap | None = None,
             dt: float = 0.1) -> TrafficHistory:
    road = road or default_map()
    L = road.total_length
    rng = np.random.default_rng(seed)
    spacing = L / SLOTS_PER_LANE
    n_pairs = 2 * SLOTS_PER_LANE
    n_changers = SLOTS_PER_LANE
    n_veh = 2 * n_pairs + 2 * n_changers
    s = np.zeros((n_steps, n_veh))
    v = np.zeros((n_steps, n_veh))
    lane = np.zeros((n_steps, n_veh), dtype=np.int64)
    decision = np.zeros((n_steps, n_veh), dtype=np.int64)
    ids = np.tile(np.arange(1, n_veh + 1, dtype=np.int64), (n_steps, 1))
    next_id = n_veh + 1

    # following pairs: leaders at even columns, followers right after them
    gap = np.clip(_ou(rng, n_steps, n_pairs, profile.gap_mean, profile.gap_sd, profile.tau, dt), 2.0, 140.0)
    v_lead = np.clip(_ou(rng, n_steps, n_pairs, profile.speed_mean, profile.speed_sd, profile.tau, dt), 1.0, None)
    v_follow = np.clip(_ou(rng, n_steps, n_pairs, profile.speed_mean, profile.speed_sd, profile.tau, dt), 1.0, None)
    base = np.array([(p % SLOTS_PER_LANE) * spacing + rng.uniform(0, 20) for p in range(n_pairs)])
    s_lead = base + np.vstack([np.zeros(n_pairs), np.cumsum(v_lead[:-1] * dt, axis=0)])
    for p in range(n_pairs):
        li, fi = 2 * p, 2 * p + 1
        lane[:, li] = lane[:, fi] = 1 + p // SLOTS_PER_LANE
        s[:, li] = s_lead[:, p]
        s[:, fi] = s_lead[:, p] - gap[:, p] - VEHICLE_LENGTH
        v[:, li], v[:, fi] = v_lead[:, p], v_follow[:, p]

    # lane changers and their preceding vehicles
    off = 2 * n_pairs
    for c in range(n_changers):
        ci, pi = off + 2 * c, off + 2 * c + 1
        home = c * spacing + spacing / 2
        for ep, start in enumerate(range(0, n_steps, EPISODE_STEPS)):
            src, dst = (3, 4) if ep % 2 == 0 else (4, 3)
            end = min(start + EPISODE_STEPS, n_steps)
            steps = np.arange(end - start)
            vc = max(1.0, rng.normal(profile.changer_speed_mean, profile.changer_speed_sd))
            if rng.random() < profile.mandatory_share:
                dv = rng.uniform(*profile.dv_range)
                ttc = rng.uniform(*profile.ttc_range)
                vp = max(0.5, vc - dv)
                # TTC measured at the decision step, DECISION_AT steps into the episode
                g0 = ttc * (vc - vp) + (vc - vp) * DECISION_AT * dt
            else:
                vp = vc + rng.uniform(0.0, 2.0)
                g0 = CLEAR_AHEAD
            s[start:end, ci] = home + vc * dt * steps
            s[start:end, pi] = home + g0 + VEHICLE_LENGTH + vp * dt * steps
            v[start:end, ci], v[start:end, pi] = vc, vp
            lane[start:end, ci] = src
            lane[start:end, pi] = src
            ids[start:end, pi] = next_id
            next_id += 1
            if start + DECISION_AT + CROSS_AFTER < end:
                decision[start + DECISION_AT + 1, ci] = 1
                lane[start + DECISION_AT + CROSS_AFTER:end, ci] = dst
    s %= L
    return TrafficHistory(s, v, lane, decision, ids, dt)
