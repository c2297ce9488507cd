"""Lock-step kinematic simulation on a lane-based road.

Longitudinal motion integrates a throttle command; lateral motion tracks a
target lane reference with a cascaded (position -> yaw -> yaw rate) PID pair.
The mainline is periodic: vehicles leaving at ``total_length`` re-enter at 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .roadmap import RoadMap

POLICY_TAGS = ("competitive", "mutual", "cooperative", "level0", "sut", "nilsson", "mobil", "stackelberg")
MAINTAIN, LEFT, RIGHT = 0, 1, -1

CUT_IN_RANGE = 10.0  # m, longitudinal exclusion window for lane changes
FORCED_MERGE_RANGE = 50.0  # m before the ramp end
MERGE_TAPER = 30.0  # m past the ramp end usable by a merge already under way
SETTLE_TOLERANCE = 0.5  # m, a new lane change waits until the vehicle is this close to its lane center
WALL_ID = -1

# Lateral controller.  Outer loop: lateral error -> desired yaw; inner loop:
# yaw error -> yaw rate.  Tuned for a 2-5 s lane change at highway speed.
OUTER_KP, OUTER_KI, OUTER_KD = 0.02, 0.0, 0.0
INNER_KP, INNER_KI, INNER_KD = 4.0, 0.0, 0.0
LATERAL_SPEED_MAX = 0.8  # m/s, caps the desired yaw at any speed
YAW_MAX = 0.5
YAW_RATE_MAX = 0.3


@dataclass(frozen=True)
class VehicleState:
    id: int
    s: float
    d: float
    lane_id: int
    v: float
    a: float = 0.0
    yaw: float = 0.0
    length: float = 4.5
    width: float = 2.0
    policy_tag: str = "level0"
    target_lane: int | None = None
    v_des: float = 33.333333333333336
    d_rate: float = 0.0
    lc_step: int | None = None  # step at which the running lane change was decided
    # PID memory
    e_int: float = 0.0
    e_prev: float | None = None
    yaw_int: float = 0.0
    yaw_err_prev: float | None = None

    @property
    def target(self) -> int:
        return self.lane_id if self.target_lane is None else self.target_lane

    @property
    def changing(self) -> bool:
        return self.target_lane is not None and self.target_lane != self.lane_id

    @property
    def maneuvering(self) -> bool:
        """Changing lanes or still settling onto the new lane center."""
        return self.changing or abs(self.d) > SETTLE_TOLERANCE


@dataclass(frozen=True)
class ControlInput:
    throttle: float = 0.0
    lane_offset_request: int = MAINTAIN

    def __post_init__(self):
        if self.lane_offset_request not in (-1, 0, 1):
            raise ValueError(f"lane offset must be -1, 0 or +1, got {self.lane_offset_request}")
        object.__setattr__(self, "throttle", float(np.clip(self.throttle, -1.0, 1.0)))


@dataclass
class SimConfig:
    dt: float = 0.1
    a_max: float = 4.0
    b_max: float = 8.0
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0
    seed: int = 0
    n_bvs: int = 20
    policy_mix: tuple[float, float, float] = (0.4, 0.3, 0.3)  # competitive, mutual, cooperative
    spawn_min_gap: float = 25.0
    decision_interval: int = 5

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.a_max <= 0 or self.b_max <= 0:
            raise ValueError("a_max and b_max must be positive")
        self.policy_mix = tuple(float(x) for x in self.policy_mix)
        if len(self.policy_mix) != 3 or min(self.policy_mix) < 0:
            raise ValueError("policy_mix needs three non-negative fractions")
        if abs(sum(self.policy_mix) - 1.0) > 1e-9:
            raise ValueError(f"policy_mix must sum to 1, got {sum(self.policy_mix)}")
        if self.decision_interval < 1:
            raise ValueError("decision_interval must be >= 1")


def throttle_to_accel(throttle: float, config: SimConfig) -> float:
    return throttle * (config.a_max if throttle >= 0 else config.b_max)


def accel_to_throttle(accel: float, config: SimConfig) -> float:
    if accel >= 0:
        return min(accel / config.a_max, 1.0)
    return max(accel / config.b_max, -1.0)


def step_longitudinal(state: VehicleState, throttle: float, dt: float, config: SimConfig, v_max: float) -> VehicleState:
    """Advance speed and arc length one step under a throttle command.

    Speed is clamped to ``[0, v_max]`` and the position update uses the mean
    of the old and new speed, which equals ``v dt + a dt^2 / 2`` whenever the
    clamp is inactive and never moves a vehicle backwards.
    """
    throttle = float(np.clip(throttle, -1.0, 1.0))
    accel = throttle_to_accel(throttle, config)
    v_new = min(max(state.v + accel * dt, 0.0), v_max)
    s_new = state.s + 0.5 * (state.v + v_new) * dt
    return replace(state, s=s_new, v=v_new, a=(v_new - state.v) / dt)


def _pid(err, integral, prev, dt, kp, ki, kd):
    integral = integral + err * dt
    deriv = 0.0 if prev is None else (err - prev) / dt
    return kp * err + ki * integral + kd * deriv, integral


def step_lateral(state: VehicleState, target_lane: int, dt: float, road: RoadMap) -> VehicleState:
    """Track the center line of ``target_lane`` with the dual PID.

    The lane id switches to the target the moment the vehicle center crosses
    the shared lane boundary; ``d`` is then re-expressed in the new lane.
    """
    if target_lane != state.lane_id:
        lane = road.lane(state.lane_id)
        if target_lane not in (lane.left_neighbor, lane.right_neighbor):
            raise KeyError(f"lane {target_lane} is not adjacent to lane {state.lane_id}")
    y_lane = road.lane_center_y(state.lane_id)
    y = y_lane + state.d
    err = road.lane_center_y(target_lane) - y

    if err == 0.0 and state.yaw == 0.0 and state.e_int == 0.0 and state.yaw_int == 0.0:
        return replace(state, target_lane=None if target_lane == state.lane_id else target_lane, d_rate=0.0)

    yaw_cap = min(YAW_MAX, math.atan(LATERAL_SPEED_MAX / max(state.v, 1e-3)))
    yaw_des, e_int = _pid(err, state.e_int, state.e_prev, dt, OUTER_KP, OUTER_KI, OUTER_KD)
    yaw_des = float(np.clip(yaw_des, -yaw_cap, yaw_cap))
    yaw_err = yaw_des - state.yaw
    yaw_rate, yaw_int = _pid(yaw_err, state.yaw_int, state.yaw_err_prev, dt, INNER_KP, INNER_KI, INNER_KD)
    yaw_rate = float(np.clip(yaw_rate, -YAW_RATE_MAX, YAW_RATE_MAX))
    yaw = state.yaw + yaw_rate * dt
    d_rate = state.v * math.sin(yaw)
    d = state.d + d_rate * dt

    lane_id = state.lane_id
    half = 0.5 * road.lane_width
    if target_lane != lane_id and abs(d) > half and math.copysign(1.0, d) == math.copysign(1.0, err):
        lane_id = target_lane
        d = y_lane + d - road.lane_center_y(target_lane)

    settled = lane_id == target_lane and abs(d) < 1e-4 and abs(yaw) < 1e-5
    if settled:
        d, yaw, d_rate, e_int, yaw_int = 0.0, 0.0, 0.0, 0.0, 0.0
    return replace(
        state,
        d=d,
        yaw=yaw,
        d_rate=d_rate,
        lane_id=lane_id,
        target_lane=None if lane_id == target_lane else target_lane,
        lc_step=None if lane_id == target_lane else state.lc_step,
        e_int=e_int,
        e_prev=None if settled else err,
        yaw_int=yaw_int,
        yaw_err_prev=None if settled else yaw_err,
    )


@dataclass
class World:
    """Mutable snapshot of all vehicles on one road."""

    road: RoadMap
    config: SimConfig
    vehicles: dict[int, VehicleState] = field(default_factory=dict)
    step_count: int = 0
    contacts: set = field(default_factory=set)

    def add(self, state: VehicleState) -> None:
        self.vehicles[state.id] = state

    def get(self, vid: int) -> VehicleState:
        return self.vehicles[vid]

    def ids(self) -> list[int]:
        return sorted(self.vehicles)

    def ds(self, s_from: float, s_to: float) -> float:
        """Signed periodic arc-length difference ``s_to - s_from``."""
        L = self.road.total_length
        return (s_to - s_from + 0.5 * L) % L - 0.5 * L

    def y(self, state: VehicleState) -> float:
        return self.road.lane_center_y(state.lane_id) + state.d

    def occupies(self, state: VehicleState, lane_id: int) -> bool:
        return state.lane_id == lane_id or (state.changing and state.target_lane == lane_id)

    def wall(self, state: VehicleState) -> float | None:
        """Arc length of the ramp end if it constrains this vehicle."""
        if state.lane_id != self.road.merge_lane_id:
            return None
        if state.changing:
            return self.road.merge_end_s + MERGE_TAPER
        return self.road.merge_end_s

    def leader(self, vid: int, lane_id: int | None = None, max_range: float = math.inf):
        """Nearest vehicle ahead occupying ``lane_id`` (default: own lane).

        Returns ``(leader_state, gap)`` with a bumper-to-bumper gap, or
        ``(None, inf)``.  On the ramp the lane end acts as a stopped leader
        with id ``WALL_ID``.
        """
        ego = self.vehicles[vid]
        lane_id = ego.lane_id if lane_id is None else lane_id
        best, best_ds = None, math.inf
        for other in self.vehicles.values():
            if other.id == vid or not self.occupies(other, lane_id):
                continue
            dsv = self.ds(ego.s, other.s)
            if 0 <= dsv < best_ds and not (dsv == 0 and other.id < vid):
                best, best_ds = other, dsv
        gap = math.inf if best is None else best_ds - 0.5 * (ego.length + best.length)
        if lane_id == ego.lane_id:
            end = self.wall(ego)
            if end is not None:
                wall_gap = end - ego.s - 0.5 * ego.length
                if wall_gap < gap:
                    best = VehicleState(id=WALL_ID, s=end, d=0.0, lane_id=lane_id, v=0.0, length=0.0)
                    best_ds, gap = end - ego.s, wall_gap
        if best is None or best_ds > max_range:
            return None, math.inf
        return best, gap

    def follower(self, vid: int, lane_id: int | None = None, max_range: float = math.inf):
        ego = self.vehicles[vid]
        lane_id = ego.lane_id if lane_id is None else lane_id
        best, best_ds = None, math.inf
        for other in self.vehicles.values():
            if other.id == vid or not self.occupies(other, lane_id):
                continue
            dsv = -self.ds(ego.s, other.s)
            if 0 <= dsv < best_ds and not (dsv == 0 and other.id > vid):
                best, best_ds = other, dsv
        if best is None or best_ds > max_range:
            return None, math.inf
        return best, best_ds - 0.5 * (ego.length + best.length)


def lane_exists_at(road: RoadMap, lane_id: int | None, s: float) -> bool:
    return lane_id is not None and road.lane(lane_id).contains(s)


def merge_offset(road: RoadMap) -> int:
    """Lane offset that leads from the ramp onto the mainline."""
    ramp = road.merge_lane
    if ramp.right_neighbor is not None and not road.lane(ramp.right_neighbor).is_ramp:
        return RIGHT
    return LEFT


def filter_action(world: World, ego_id: int, requested: ControlInput) -> tuple[ControlInput, bool]:
    """Apply the rule constraints to a requested control input.

    Rules, in order: a vehicle on the ramp within 50 m of its end is sent
    toward the mainline; a lane change is dropped to maintain when it leaves
    the road (or enters the ramp, which is entry-only), when the vehicle is
    still changing lanes or settling after a change, or when any vehicle in
    the target lane is within 10 m longitudinally.
    """
    road = world.road
    ego = world.get(ego_id)
    offset = requested.lane_offset_request
    if ego.lane_id == road.merge_lane_id and road.merge_end_s - ego.s <= FORCED_MERGE_RANGE and not ego.changing:
        offset = merge_offset(road)

    def keep():
        return ControlInput(requested.throttle, MAINTAIN), True

    if offset == MAINTAIN:
        return ControlInput(requested.throttle, MAINTAIN), requested.lane_offset_request != MAINTAIN
    if ego.maneuvering:
        return keep()
    target = road.neighbor(ego.lane_id, offset)
    if not lane_exists_at(road, target, ego.s) or road.lane(target).is_ramp:
        return keep()
    for other in world.vehicles.values():
        if other.id != ego_id and world.occupies(other, target) and abs(world.ds(ego.s, other.s)) <= CUT_IN_RANGE:
            return keep()
    return ControlInput(requested.throttle, offset), offset != requested.lane_offset_request


def detect_collisions(world: World) -> list[tuple[int, int]]:
    """Pairs whose footprints started overlapping at this step.

    Contact state is kept on the world so that a pair is reported only on
    the step where it enters contact.
    """
    vs = sorted(world.vehicles.values(), key=lambda v: v.id)
    now = set()
    for i, a in enumerate(vs):
        ya = world.y(a)
        for b in vs[i + 1:]:
            if abs(world.ds(a.s, b.s)) < 0.5 * (a.length + b.length) and abs(ya - world.y(b)) < 0.5 * (a.width + b.width):
                now.add((a.id, b.id))
    onset = sorted(now - world.contacts)
    world.contacts = now
    return onset


def start_lane_change(world: World, vid: int, offset: int) -> None:
    ego = world.get(vid)
    if offset == MAINTAIN or ego.maneuvering:
        return
    target = world.road.neighbor(ego.lane_id, offset)
    world.vehicles[vid] = replace(ego, target_lane=target, lc_step=world.step_count)


def advance(world: World, throttles: dict[int, float]) -> None:
    """Integrate every vehicle one step, then apply ramp-end and wrap rules."""
    cfg, road = world.config, world.road
    L = road.total_length
    for vid, st in list(world.vehicles.items()):
        st = step_longitudinal(st, throttles.get(vid, 0.0), cfg.dt, cfg, road.v_max)
        st = step_lateral(st, st.target, cfg.dt, road)
        if st.lane_id == road.merge_lane_id:
            end = road.merge_end_s + (MERGE_TAPER if st.changing else 0.0)
            limit = end - 0.5 * st.length
            if st.s > limit:
                if st.changing:
                    # out of taper: finish the merge on the spot
                    y = road.lane_center_y(st.lane_id) + st.d
                    st = replace(st, lane_id=st.target_lane, d=y - road.lane_center_y(st.target_lane),
                                 target_lane=None, lc_step=None)
                else:
                    st = replace(st, s=limit, v=0.0, a=-world.vehicles[vid].v / cfg.dt)
        if st.s >= L:
            st = replace(st, s=st.s - L)
        world.vehicles[vid] = st
    world.step_count += 1


LOG_COLUMNS = (
    "step", "time_s", "vehicle_id", "policy", "lane_id", "s_m", "d_m", "v_mps",
    "a_mps2", "yaw_rad", "decision", "throttle", "executed_decision", "collision",
)
