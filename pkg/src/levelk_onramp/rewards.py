"""Car-following and social decision rewards."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .observation import BACK_VIEW, LongitudinalObservation, O_SMAX
from .roadmap import lanes_in_horizon
from .sim import World

SOCIAL_POLICIES = ("mutual", "competitive", "cooperative")


@dataclass
class RewardParams:
    collision_penalty: float = 10.0
    mu: float = 1.0
    kappa: float = 5.0
    target_gap: float = 25.0
    v_norm: float = 100.0
    theta: float = 1.1
    M: float = 1.0e4
    J_lc: float = -0.1
    J_req: float = -0.2
    O_max: float = 100.0
    u: float = 0.25
    v: float = 0.25
    m: float = 0.25
    n: float = 0.25
    z: float = 1.0
    y: float = 1.0
    s_dot_max: float = 33.333333333333336

    def __post_init__(self):
        if self.target_gap <= 0 or self.O_max <= 0:
            raise ValueError("target_gap and O_max must be positive")
        if self.z <= 0 or self.y <= 0:
            raise ValueError("reward bounds z and y must be positive")
        if self.J_lc > 0 or self.J_req > 0:
            raise ValueError("J_lc and J_req are penalties and must be <= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DrivableAreas:
    O_t: float
    O_c: float
    back: dict[int, float] = field(default_factory=dict)  # back-view vehicle id -> its O_c


def sgn(x: float) -> float:
    return (x > 0) - (x < 0)


def gap_value(obs: LongitudinalObservation, params: RewardParams, o_smax: float = O_SMAX) -> float:
    if not obs.lam:
        return 0.0
    gap = obs.delta_s * o_smax
    return -((gap - params.target_gap) ** 2) / params.v_norm ** 2


def control_reward(prev_obs: LongitudinalObservation, next_obs: LongitudinalObservation,
                   collided: bool, params: RewardParams, o_smax: float = O_SMAX) -> float:
    if collided:
        return -params.collision_penalty
    v_prev = gap_value(prev_obs, params, o_smax)
    v_next = gap_value(next_obs, params, o_smax)
    return params.mu * v_next + params.kappa * (v_next - v_prev)


def _lane_area(world: World, vid: int, lane_id: int | None, o_max: float) -> float:
    if lane_id is None:
        return 0.0
    ego = world.get(vid)
    lead, _ = world.leader(vid, lane_id)
    if lead is None:
        return o_max
    rel = world.ds(ego.s, lead.s) if lead.id >= 0 else lead.s - ego.s
    return min(max(rel, 0.0), o_max)


def drivable_areas(world: World, ego_id: int, target_lane: int | None, params: RewardParams) -> DrivableAreas:
    ego = world.get(ego_id)
    o_t = _lane_area(world, ego_id, target_lane, params.O_max)
    o_c = _lane_area(world, ego_id, ego.lane_id, params.O_max)
    slots = {x for x in lanes_in_horizon(world.road, ego.lane_id, ego.s) if x is not None}
    back = {}
    for other in world.vehicles.values():
        if other.id == ego_id or other.lane_id not in slots:
            continue
        if -BACK_VIEW <= world.ds(ego.s, other.s) < 0:
            back[other.id] = _lane_area(world, other.id, other.lane_id, params.O_max)
    return DrivableAreas(o_t, o_c, dict(sorted(back.items())))


def individual_reward(areas: DrivableAreas, lc_executed: bool, req_mismatch: bool, params: RewardParams) -> float:
    diff = params.theta * areas.O_t - areas.O_c
    r = sgn(diff) * diff * diff / params.M
    if lc_executed:
        r += params.J_lc
    if req_mismatch:
        r += params.J_req
    return r + areas.O_c ** 2 / params.O_max ** 2


def social_terms(areas: DrivableAreas, speeds: dict[int, float], params: RewardParams) -> tuple[float, float, float]:
    """Back-view sums: (area sum, speed sum clipped at z, speed sum clipped at y)."""
    area = sum((params.theta * o) ** 2 for o in areas.back.values()) / params.O_max ** 2
    sd2 = params.s_dot_max ** 2
    sp_z = sum(min(speeds[i] * abs(speeds[i]) / sd2, params.z) for i in areas.back)
    sp_y = sum(min(speeds[i] * abs(speeds[i]) / sd2, params.y) for i in areas.back)
    return area, sp_z, sp_y


def social_reward(policy: str, r_i: float, world: World | None, ego_id: int | None, params: RewardParams,
                  areas: DrivableAreas | None = None) -> float:
    """Add the social term for ``policy`` to an individual reward.

    ``areas`` may be passed to reuse a previous :func:`drivable_areas` call;
    otherwise it is computed from ``world`` (the target lane does not matter
    for the social sums).
    """
    if policy not in SOCIAL_POLICIES:
        raise ValueError(f"unknown social policy {policy!r}")
    if policy == "mutual":
        return r_i
    if areas is None:
        areas = drivable_areas(world, ego_id, None, params)
    if not areas.back:
        return r_i
    speeds = {i: world.get(i).v for i in areas.back} if world is not None else {}
    area, sp_z, sp_y = social_terms(areas, speeds, params)
    if policy == "competitive":
        return r_i - params.u * area - params.v * sp_z
    return r_i + params.m * area + params.n * sp_y

