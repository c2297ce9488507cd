"""Observation encoders for the decision and car-following policies.

Decision grid layout is ``(channel, lane slot, longitudinal bin)``:

* channels: presence, relative longitudinal speed, relative lateral speed,
  relative yaw;
* lane slots: five lanes, leftmost first, ego lane in slot 2;
* bins: 5 m cells covering [-20 m, +105 m) around the ego, rearmost first.

The flattened network input is ``grid.ravel()`` (C order) followed by the
normalized ego speed, 501 values in total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .roadmap import HORIZON_LANES, lanes_in_horizon
from .sim import World

N_CHANNELS = 4
N_BINS = 25
BIN_SIZE = 5.0
BACK_VIEW = 20.0
FRONT_VIEW = 100.0
N_BACK_BINS = int(BACK_VIEW / BIN_SIZE)
DECISION_DIM = N_CHANNELS * HORIZON_LANES * N_BINS + 1
LONGITUDINAL_DIM = 4
O_SMAX = 100.0


@dataclass
class DecisionObservation:
    grid: np.ndarray  # (4, 5, 25)
    ego_speed_norm: float

    def flat(self) -> np.ndarray:
        return np.concatenate([self.grid.ravel(), [self.ego_speed_norm]])


@dataclass(frozen=True)
class LongitudinalObservation:
    delta_s: float = 0.0
    delta_s_dot: float = 0.0
    delta_s_ddot: float = 0.0
    lam: int = 0

    def vector(self) -> np.ndarray:
        return np.array([self.delta_s, self.delta_s_dot, self.delta_s_ddot, self.lam], dtype=float)


def bin_index(rel_s: float) -> int | None:
    if not -BACK_VIEW <= rel_s < N_BINS * BIN_SIZE - BACK_VIEW:
        return None
    return int(math.floor((rel_s + BACK_VIEW) / BIN_SIZE))


def encode_decision_obs(world: World, ego_id: int) -> DecisionObservation:
    ego = world.get(ego_id)
    v_max = world.road.v_max
    slots = lanes_in_horizon(world.road, ego.lane_id, ego.s)
    slot_of = {lane: k for k, lane in enumerate(slots) if lane is not None}
    grid = np.zeros((N_CHANNELS, HORIZON_LANES, N_BINS))
    nearest = np.full((HORIZON_LANES, N_BINS), np.inf)
    for other in world.vehicles.values():
        if other.id == ego_id or other.lane_id not in slot_of:
            continue
        rel = world.ds(ego.s, other.s)
        b = bin_index(rel)
        if b is None:
            continue
        k = slot_of[other.lane_id]
        if abs(rel) >= nearest[k, b]:
            continue
        nearest[k, b] = abs(rel)
        grid[0, k, b] = 1.0
        grid[1, k, b] = np.clip((other.v - ego.v) / v_max, -1.0, 1.0)
        grid[2, k, b] = np.clip((other.d_rate - ego.d_rate) / v_max, -1.0, 1.0)
        grid[3, k, b] = np.clip((other.yaw - ego.yaw) / (0.5 * math.pi), -1.0, 1.0)
    return DecisionObservation(grid, min(ego.v / v_max, 1.0))


def back_view_ids(world: World, ego_id: int) -> list[int]:
    """Vehicles inside the rear 20 m of the decision grid."""
    ego = world.get(ego_id)
    slots = set(x for x in lanes_in_horizon(world.road, ego.lane_id, ego.s) if x is not None)
    out = []
    for other in world.vehicles.values():
        if other.id == ego_id or other.lane_id not in slots:
            continue
        if -BACK_VIEW <= world.ds(ego.s, other.s) < 0:
            out.append(other.id)
    return sorted(out)


def encode_longitudinal_obs(world: World, ego_id: int, o_smax: float = O_SMAX) -> LongitudinalObservation:
    ego = world.get(ego_id)
    lead, _ = world.leader(ego_id)
    if lead is None:
        return LongitudinalObservation()
    rel = world.ds(ego.s, lead.s) if lead.id >= 0 else lead.s - ego.s
    if not 0 <= rel <= o_smax:
        return LongitudinalObservation()
    cfg = world.config
    return LongitudinalObservation(
        delta_s=rel / o_smax,
        delta_s_dot=float(np.clip((lead.v - ego.v) / world.road.v_max, -1.0, 1.0)),
        delta_s_ddot=float(np.clip((lead.a - ego.a) / cfg.a_max, -1.0, 1.0)),
        lam=1,
    )
