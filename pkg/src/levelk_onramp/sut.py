"""Rule-based and game-theoretic lane-change models used as systems under test.

All deciders are pure functions of a world snapshot.  Longitudinal control
for every model is the Krauss safe-speed car follower.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .sim import (MAINTAIN, LEFT, RIGHT, ControlInput, SimConfig, VehicleState, World,
                  accel_to_throttle, filter_action, lane_exists_at)

SUT_MODELS = ("nilsson", "mobil", "stackelberg")


@dataclass
class SutParams:
    # Krauss follower
    tau_r: float = 1.0
    b: float = 8.0
    # Nilsson
    w1: float = 1 / 3
    w2: float = 1 / 3
    w3: float = 1 / 3
    N_lv: float = 33.333333333333336
    N_ltg: float = 10.0
    N_ld: float = 500.0
    # MOBIL
    p: float = 0.5
    delta_a_th: float = 0.1
    b_safe: float = 4.0
    # Stackelberg
    d_v: float = 100.0
    T: float = 2.0
    d_min: float = 10.0

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError("politeness p must lie in [0, 1]")
        if self.delta_a_th <= 0:
            raise ValueError("delta_a_th must be positive")
        if self.T <= 0:
            raise ValueError("prediction window T must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SutDecision:
    lane_offset: int
    debug: dict = field(default_factory=dict)


# --- Krauss car following ---------------------------------------------------

def krauss_target_speed(v: float, v_des: float, leader_v: float | None, gap: float,
                        params: SutParams, config: SimConfig) -> float:
    v_next = min(v + config.a_max * config.dt, v_des)
    if leader_v is None:
        return v_next
    v_safe = leader_v + (gap - leader_v * params.tau_r) / (v / params.b + params.tau_r)
    return max(min(v_safe, v_next), 0.0)


def krauss_accel(v, v_des, leader_v, gap, params, config) -> float:
    target = krauss_target_speed(v, v_des, leader_v, gap, params, config)
    return float(np.clip((target - v) / config.dt, -config.b_max, config.a_max))


def krauss_follow(state: VehicleState, leader: VehicleState | None, params: SutParams,
                  config: SimConfig, gap: float | None = None, v_max: float | None = None) -> float:
    """Throttle that realizes the Krauss safe speed behind ``leader``.

    ``gap`` defaults to the bumper-to-bumper distance on a non-periodic axis.
    """
    v_des = min(state.v_des, v_max) if v_max is not None else state.v_des
    if leader is None:
        return accel_to_throttle(krauss_accel(state.v, v_des, None, math.inf, params, config), config)
    if gap is None:
        gap = leader.s - state.s - 0.5 * (leader.length + state.length)
    return accel_to_throttle(krauss_accel(state.v, v_des, leader.v, gap, params, config), config)


# --- shared lane queries ----------------------------------------------------

def _neighbors_at(world: World, s: float, lane_id: int, exclude: set[int]):
    """Nearest vehicles ahead and behind position ``s`` in ``lane_id``.

    Returns ``((ahead, ds), (behind, ds))`` with center distances; missing
    entries are ``(None, inf)``.  The ramp end counts as a stopped vehicle.
    """
    ahead, ds_a, behind, ds_b = None, math.inf, None, math.inf
    for o in world.vehicles.values():
        if o.id in exclude or not world.occupies(o, lane_id):
            continue
        d = world.ds(s, o.s)
        if d >= 0 and d < ds_a:
            ahead, ds_a = o, d
        elif d < 0 and -d < ds_b:
            behind, ds_b = o, -d
    if lane_id == world.road.merge_lane_id:
        end = world.road.merge_end_s
        if 0 <= end - s < ds_a:
            ahead = VehicleState(id=-1, s=end, d=0.0, lane_id=lane_id, v=0.0, length=0.0)
            ds_a = end - s
    return (ahead, ds_a), (behind, ds_b)


def _accel_behind(world: World, follower: VehicleState | None, leader: VehicleState | None,
                  ds: float, params: SutParams) -> float:
    if follower is None:
        return 0.0
    cfg, v_max = world.config, world.road.v_max
    v_des = min(follower.v_des, v_max)
    if leader is None:
        return krauss_accel(follower.v, v_des, None, math.inf, params, cfg)
    gap = ds - 0.5 * (follower.length + leader.length)
    return krauss_accel(follower.v, v_des, leader.v, gap, params, cfg)


def _feasible_offsets(world: World, vid: int) -> list[int]:
    """Offsets surviving the rule filter (maintain is always feasible)."""
    out = [MAINTAIN]
    for off in (LEFT, RIGHT):
        executed, _ = filter_action(world, vid, ControlInput(0.0, off))
        if executed.lane_offset_request == off:
            out.append(off)
    return out


def _road_offsets(world: World, st: VehicleState) -> list[int]:
    out = [MAINTAIN]
    road = world.road
    for off in (LEFT, RIGHT):
        lane = road.neighbor(st.lane_id, off)
        if lane_exists_at(road, lane, st.s) and not road.lane(lane).is_ramp:
            out.append(off)
    return out


def _side_preference(world: World) -> int:
    return LEFT if world.road.drive_side == "left" else RIGHT


# --- Nilsson ----------------------------------------------------------------

def _lane_speed(world, ego, lane_id, params):
    (ahead, d), _ = _neighbors_at(world, ego.s, lane_id, {ego.id})
    if ahead is None or d > params.d_v:
        return world.road.v_max
    return ahead.v


def _lane_time_gap(world, ego, lane_id, params):
    pts = [(0.0, ego)]
    for o in world.vehicles.values():
        if o.id == ego.id or not world.occupies(o, lane_id):
            continue
        d = world.ds(ego.s, o.s)
        if abs(d) <= params.d_v:
            pts.append((d, o))
    pts.sort(key=lambda t: t[0])
    gaps = []
    for (d0, f), (d1, l) in zip(pts[:-1], pts[1:]):
        gap = max(d1 - d0 - 0.5 * (f.length + l.length), 0.0)
        gaps.append(min(gap / max(f.v, 0.1), params.N_ltg))
    return float(np.mean(gaps)) if gaps else params.N_ltg


def _lane_distance(world, ego, lane_id, params):
    lane = world.road.lane(lane_id)
    if lane.is_ramp:
        return min(max(lane.end_s - ego.s, 0.0), params.N_ld)
    return params.N_ld


def nilsson_utilities(world: World, ego_id: int, params: SutParams) -> dict[int, float]:
    ego = world.get(ego_id)
    road = world.road
    out = {}
    for lane in road.lanes:
        if not lane.contains(ego.s):
            continue
        if lane.is_ramp and lane.id != ego.lane_id:
            continue
        u = (params.w1 * _lane_speed(world, ego, lane.id, params) / params.N_lv
             + params.w2 * _lane_time_gap(world, ego, lane.id, params) / params.N_ltg
             + params.w3 * _lane_distance(world, ego, lane.id, params) / params.N_ld)
        out[lane.id] = u
    return out


def nilsson_decide(world: World, ego_id: int, params: SutParams) -> SutDecision:
    ego = world.get(ego_id)
    road = world.road
    utils = nilsson_utilities(world, ego_id, params)
    best = max(utils.values())
    tied = [lid for lid, u in utils.items() if u >= best - 1e-12]
    if ego.lane_id in tied:
        return SutDecision(MAINTAIN, {"utilities": utils})
    here = road.lateral_index(ego.lane_id)
    # nearest first, then the drive-side lane
    side = _side_preference(world)
    tied.sort(key=lambda lid: (abs(road.lateral_index(lid) - here),
                               0 if (here - road.lateral_index(lid)) * side > 0 else 1))
    toward = LEFT if road.lateral_index(tied[0]) < here else RIGHT
    if toward not in _feasible_offsets(world, ego_id):
        toward = MAINTAIN
    return SutDecision(toward, {"utilities": utils, "target_lane": tied[0]})


# --- MOBIL ------------------------------------------------------------------

def mobil_incentive(world: World, ego_id: int, offset: int, params: SutParams):
    """(incentive, new-follower acceleration after the change)."""
    ego = world.get(ego_id)
    road = world.road
    target = road.neighbor(ego.lane_id, offset)
    ex = {ego.id}
    (lead_c, ds_lc), (old_f, ds_of) = _neighbors_at(world, ego.s, ego.lane_id, ex)
    (lead_t, ds_lt), (new_f, ds_nf) = _neighbors_at(world, ego.s, target, ex)

    a_c = _accel_behind(world, ego, lead_c, ds_lc, params)
    a_c_hat = _accel_behind(world, ego, lead_t, ds_lt, params)
    # new follower: currently behind lead_t, afterwards behind ego
    a_n = _accel_behind(world, new_f, lead_t, ds_nf + ds_lt, params)
    a_n_hat = _accel_behind(world, new_f, ego, ds_nf, params)
    # old follower: currently behind ego, afterwards behind lead_c
    a_o = _accel_behind(world, old_f, ego, ds_of, params)
    a_o_hat = _accel_behind(world, old_f, lead_c, ds_of + ds_lc, params)
    gain = a_c_hat - a_c + params.p * (a_n_hat - a_n + a_o_hat - a_o)
    return gain, a_n_hat


def mobil_decide(world: World, ego_id: int, params: SutParams) -> SutDecision:
    feasible = _feasible_offsets(world, ego_id)
    debug = {}
    candidates = []
    for off in (LEFT, RIGHT):
        if off not in feasible:
            continue
        gain, a_n_hat = mobil_incentive(world, ego_id, off, params)
        debug[off] = {"incentive": gain, "a_n_hat": a_n_hat}
        if gain > params.delta_a_th and a_n_hat >= -params.b_safe:
            candidates.append((gain, off))
    if not candidates:
        return SutDecision(MAINTAIN, debug)
    side = _side_preference(world)
    candidates.sort(key=lambda t: (-t[0], 0 if t[1] == side else 1))
    return SutDecision(candidates[0][1], debug)


# --- Stackelberg ------------------------------------------------------------

def _candidate_lane(world: World, ego: VehicleState, offsets: list[int], params: SutParams) -> int | None:
    """Adjacent lane with the most free space ahead (drive side on ties)."""
    best, best_free = None, -1.0
    side = _side_preference(world)
    for off in sorted((o for o in offsets if o != MAINTAIN), key=lambda o: 0 if o == side else 1):
        lane = world.road.neighbor(ego.lane_id, off)
        (ahead, d), _ = _neighbors_at(world, ego.s, lane, {ego.id})
        free = min(d, params.d_v)
        if free > best_free:
            best, best_free = lane, free
    return best


def stackelberg_players(world: World, ego_id: int, params: SutParams):
    """Players and their feasible action sets: ``[(state, actions), ...]``.

    The ego leads; the followers are the nearest rear vehicles (within the
    visibility range) in the ego lane and in the candidate target lane.
    """
    ego = world.get(ego_id)
    ego_actions = _feasible_offsets(world, ego_id)
    cand = _candidate_lane(world, ego, _road_offsets(world, ego), params)
    players = [(ego, ego_actions)]
    for lane in (ego.lane_id, cand):
        follower = None
        if lane is not None:
            _, (behind, d) = _neighbors_at(world, ego.s, lane, {ego.id})
            if behind is not None and d <= params.d_v:
                follower = behind
        if follower is None or any(p[0] is not None and follower.id == p[0].id for p in players):
            players.append((None, [MAINTAIN]))
        else:
            players.append((follower, _road_offsets(world, follower)))
    return players


def stackelberg_payoffs(world: World, ego_id: int, params: SutParams, players=None) -> np.ndarray:
    """Leader payoff ``U_pos + U_neg`` for every joint action profile.

    Shape ``(3, 3, 3)`` indexed by action + 1 for (leader, follower 1,
    follower 2); infeasible profiles hold ``nan``.
    """
    if players is None:
        players = stackelberg_players(world, ego_id, params)
    road = world.road
    ego = world.get(ego_id)
    T = params.T
    others = [o for o in world.vehicles.values() if o.id != ego_id]
    ids = np.array([o.id for o in others], dtype=int)
    pred_s = np.array([world.ds(ego.s, o.s) + o.v * T for o in others])  # relative to ego now
    speed = np.array([o.v for o in others])
    base_lane = np.array([road.lateral_index(o.target) for o in others], dtype=int)
    ego_idx = road.lateral_index(ego.lane_id)
    ego_pred = ego.v * T
    ramp_idx = road.lateral_index(road.merge_lane_id)
    wall = road.merge_end_s - ego.s - ego_pred

    out = np.full((3, 3, 3), np.nan)
    f1, f2 = players[1][0], players[2][0]
    pos1 = int(np.flatnonzero(ids == f1.id)[0]) if f1 is not None else None
    pos2 = int(np.flatnonzero(ids == f2.id)[0]) if f2 is not None else None
    for ah in players[0][1]:
        lane_h = ego_idx - ah  # LEFT (+1) lowers the lateral index
        for a1 in players[1][1]:
            for a2 in players[2][1]:
                lanes = base_lane.copy()
                if pos1 is not None:
                    lanes[pos1] = road.lateral_index(f1.lane_id) - a1
                if pos2 is not None:
                    lanes[pos2] = road.lateral_index(f2.lane_id) - a2
                same = lanes == lane_h
                rel = pred_s[same] - ego_pred
                vel = speed[same]
                front = rel[rel >= 0]
                nearest = float(front.min()) if front.size else math.inf
                if lane_h == ramp_idx:
                    nearest = min(nearest, max(wall, 0.0))
                u_pos = min(nearest, params.d_v)
                rear_mask = rel < 0
                if rear_mask.any():
                    k = int(np.argmax(rel[rear_mask]))
                    d_rear = min(-float(rel[rear_mask][k]), params.d_v)
                    v_r = float(vel[rear_mask][k]) - ego.v
                else:
                    d_rear, v_r = params.d_v, 0.0
                u_neg = d_rear - v_r * T - params.d_min
                out[ah + 1, a1 + 1, a2 + 1] = u_pos + u_neg
    return out


def stackelberg_decide(world: World, ego_id: int, params: SutParams) -> SutDecision:
    players = stackelberg_players(world, ego_id, params)
    pay = stackelberg_payoffs(world, ego_id, params, players)
    worst = {}
    for ah in players[0][1]:
        worst[ah] = float(np.nanmin(pay[ah + 1]))
    best = max(worst.values())
    side = _side_preference(world)
    tied = [a for a in worst if worst[a] >= best - 1e-9]
    choice = min(tied, key=lambda a: 0 if a == MAINTAIN else (1 if a == side else 2))
    return SutDecision(choice, {"worst_case": worst, "players": [p[0].id if p[0] else None for p in players]})


DECIDERS = {"nilsson": nilsson_decide, "mobil": mobil_decide, "stackelberg": stackelberg_decide}


def decide(model: str, world: World, ego_id: int, params: SutParams) -> SutDecision:
    try:
        fn = DECIDERS[model]
    except KeyError:
        raise ValueError(f"unknown SUT model {model!r}; choose from {SUT_MODELS}") from None
    return fn(world, ego_id, params)
