"""Scenario runner and the trajectory log it produces.

One system under test (SUT) starts on the ramp among ``n_bvs`` background
vehicles (BVs).  The SUT goes back to the ramp start after a collision and
whenever it reaches the end of the map; BVs drifting far from the SUT are
moved back into a window around it so that it keeps interacting with
traffic.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .drivers import (Controller, KraussFollower, Level0Controller, PolicyBundle, RuleController,
                      social_controllers)
from .roadmap import RoadMap
from .sim import (LOG_COLUMNS, MAINTAIN, POLICY_TAGS, ControlInput, SimConfig, VehicleState, World, advance,
                  detect_collisions, filter_action, start_lane_change)
from .sut import SUT_MODELS, SutParams

SOCIAL_TAGS = ("competitive", "mutual", "cooperative")
SUT_ID = 0
SPAWN_BEHIND = 100.0
SPAWN_AHEAD = 400.0
TRAFFIC_WINDOW = 400.0
RESPAWN_SPEED = 25.0

INT_COLUMNS = ("step", "vehicle_id", "lane_id", "decision", "executed_decision", "collision")
FLOAT_COLUMNS = ("time_s", "s_m", "d_m", "v_mps", "a_mps2", "yaw_rad", "throttle")
DEBUG_COLUMN = "sut_debug"


class LogFormatError(ValueError):
    pass


def format_debug(debug, prefix: str = "") -> str:
    """Flatten a decider's debug mapping into ``key=value`` pairs joined by ``;``."""
    parts = []
    items = debug.items() if isinstance(debug, dict) else enumerate(debug)
    for k, v in items:
        key = f"{prefix}{k}"
        if isinstance(v, (dict, list, tuple)):
            inner = format_debug(v, key + ".")
            if inner:
                parts.append(inner)
        elif isinstance(v, float):
            parts.append(f"{key}={v:.4g}")
        else:
            parts.append(f"{key}={v}")
    return ";".join(parts).replace(",", " ")


class TrajectoryLog:
    """Per-step, per-vehicle records; columns follow ``LOG_COLUMNS``.

    With ``sut_debug`` a trailing text column carries the SUT decider's
    utilities on decision rows.
    """

    def __init__(self, columns: dict[str, np.ndarray] | None = None, sut_debug: bool = False):
        self._rows: list[tuple] = []
        self._cols = columns
        self.sut_debug = sut_debug

    @property
    def header(self) -> tuple[str, ...]:
        return LOG_COLUMNS + ((DEBUG_COLUMN,) if self.sut_debug else ())

    def append(self, row: tuple) -> None:
        self._rows.append(row)
        self._cols = None

    @property
    def columns(self) -> dict[str, np.ndarray]:
        if self._cols is None:
            rows = self._rows
            cols = {}
            for k, name in enumerate(self.header):
                vals = [r[k] for r in rows]
                if name in INT_COLUMNS:
                    cols[name] = np.array(vals, dtype=np.int64)
                elif name in ("policy", DEBUG_COLUMN):
                    cols[name] = np.array(vals, dtype=object)
                else:
                    cols[name] = np.array(vals, dtype=float)
            self._cols = cols
        return self._cols

    def __len__(self):
        return len(self.columns["step"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def n_steps(self) -> int:
        steps = self.columns["step"]
        return int(steps.max()) if len(steps) else 0

    @property
    def dt(self) -> float:
        c = self.columns
        mask = c["step"] > 0
        if not mask.any():
            return 0.1
        return float(c["time_s"][mask][0] / c["step"][mask][0])

    def vehicle_ids(self) -> list[int]:
        return sorted(set(self.columns["vehicle_id"].tolist()))

    def vehicle(self, vid: int) -> dict[str, np.ndarray]:
        c = self.columns
        mask = c["vehicle_id"] == vid
        out = {k: v[mask] for k, v in c.items()}
        order = np.argsort(out["step"], kind="stable")
        return {k: v[order] for k, v in out.items()}

    def at_step(self, step: int) -> dict[str, np.ndarray]:
        c = self.columns
        mask = c["step"] == step
        return {k: v[mask] for k, v in c.items()}

    def to_csv(self) -> str:
        c = self.columns
        buf = io.StringIO()
        buf.write(",".join(self.header) + "\n")
        n = len(c["step"])
        for i in range(n):
            parts = []
            for name in self.header:
                val = c[name][i]
                if name in INT_COLUMNS:
                    parts.append(str(int(val)))
                elif name in ("policy", DEBUG_COLUMN):
                    parts.append(str(val))
                else:
                    parts.append(f"{float(val):.6g}")
            buf.write(",".join(parts) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str) -> "TrajectoryLog":
        lines = text.splitlines()
        if not lines:
            raise LogFormatError("empty log")
        header = tuple(lines[0].strip().split(","))
        if header not in (LOG_COLUMNS, LOG_COLUMNS + (DEBUG_COLUMN,)):
            raise LogFormatError(f"log header must be {','.join(LOG_COLUMNS)}[,{DEBUG_COLUMN}]")
        debug = len(header) > len(LOG_COLUMNS)
        raw = {name: [] for name in header}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise LogFormatError(f"line {lineno}: expected {len(header)} fields, got {len(parts)}")
            for name, tok in zip(header, parts):
                try:
                    if name == DEBUG_COLUMN:
                        raw[name].append(tok)
                    elif name in INT_COLUMNS:
                        raw[name].append(int(tok))
                    elif name == "policy":
                        if tok not in POLICY_TAGS:
                            raise ValueError(f"unknown policy {tok!r}")
                        raw[name].append(tok)
                    else:
                        raw[name].append(float(tok))
                except ValueError as exc:
                    raise LogFormatError(f"line {lineno}, column {name}: {exc}") from None
        cols = {}
        for name in header:
            if name in INT_COLUMNS:
                cols[name] = np.array(raw[name], dtype=np.int64)
            elif name in ("policy", DEBUG_COLUMN):
                cols[name] = np.array(raw[name], dtype=object)
            else:
                cols[name] = np.array(raw[name], dtype=float)
        return cls(cols, sut_debug=debug)

    @classmethod
    def read_csv(cls, path) -> "TrajectoryLog":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


def census(n: int, fractions) -> list[int]:
    """Integer split of ``n`` by the largest-remainder rule (ties: earlier first)."""
    quotas = [n * f for f in fractions]
    counts = [int(math.floor(q)) for q in quotas]
    rest = n - sum(counts)
    order = sorted(range(len(quotas)), key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in order[:rest]:
        counts[k] += 1
    return counts


def _free_spot(world: World, rng: np.random.Generator, lanes, lo: float, hi: float, min_gap: float,
               exclude=(), tries: int = 200):
    L = world.road.total_length
    for _ in range(tries):
        lane = int(rng.choice(lanes))
        s = float(rng.uniform(lo, hi)) % L
        ok = True
        for o in world.vehicles.values():
            if o.id in exclude:
                continue
            same = o.lane_id == lane or o.target == lane
            if same and abs(world.ds(s, o.s)) < min_gap:
                ok = False
                break
        if ok:
            return lane, s
    return None


def spawn(road: RoadMap, config: SimConfig, bv_tags: list[str], rng: np.random.Generator,
          sut: bool = True) -> World:
    world = World(road, config)
    ramp = road.merge_lane
    length, width = config.vehicle_length, config.vehicle_width
    if sut:
        world.add(VehicleState(id=SUT_ID, s=ramp.start_s + 0.5 * length + 5.0, d=0.0, lane_id=ramp.id,
                               v=RESPAWN_SPEED, length=length, width=width, policy_tag="sut", v_des=road.v_max))
    mains = road.mainline_ids
    lo, hi = ramp.start_s - SPAWN_BEHIND, ramp.start_s + SPAWN_AHEAD
    for k, tag in enumerate(bv_tags):
        spot = None
        widen = 0.0
        while spot is None:
            spot = _free_spot(world, rng, mains, lo - widen, hi + widen, config.spawn_min_gap)
            widen += 200.0
            if widen > road.total_length:
                raise RuntimeError("no room to spawn background vehicles")
        lane, s = spot
        v_des = float(rng.uniform(road.v_min, road.v_max))
        world.add(VehicleState(id=k + 1, s=s, d=0.0, lane_id=lane, v=v_des, length=length, width=width,
                               policy_tag=tag, v_des=v_des))
    return world


def _reset_kinematics(st: VehicleState, **kw) -> VehicleState:
    return replace(st, d=0.0, yaw=0.0, d_rate=0.0, a=0.0, target_lane=None, lc_step=None,
                   e_int=0.0, e_prev=None, yaw_int=0.0, yaw_err_prev=None, **kw)


def respawn_sut(world: World) -> None:
    road = world.road
    ramp = road.merge_lane
    st = world.get(SUT_ID)
    s = ramp.start_s + 0.5 * st.length + 5.0
    # slide forward until clear of anything on the ramp
    for o in sorted(world.vehicles.values(), key=lambda o: o.s):
        if o.id != SUT_ID and world.occupies(o, ramp.id) and abs(o.s - s) < st.length + 5.0:
            s = o.s + st.length + 5.0
    world.vehicles[SUT_ID] = _reset_kinematics(st, s=s, lane_id=ramp.id, v=RESPAWN_SPEED)


def relocate_bv(world: World, vid: int, rng: np.random.Generator, lo: float, hi: float) -> None:
    st = world.get(vid)
    spot = _free_spot(world, rng, world.road.mainline_ids, lo, hi, world.config.spawn_min_gap, exclude={vid})
    if spot is None:
        return
    lane, s = spot
    world.vehicles[vid] = _reset_kinematics(st, s=s, lane_id=lane)


@dataclass
class ScenarioSpec:
    """Who drives what: a trained bundle or a rule model for the BVs."""

    bvs: PolicyBundle | str
    sut_model: str
    sut_params: SutParams | None = None
    bv_params: SutParams | None = None

    def __post_init__(self):
        if self.sut_model not in SUT_MODELS:
            raise ValueError(f"unknown SUT model {self.sut_model!r}")
        if isinstance(self.bvs, str) and self.bvs not in SUT_MODELS:
            raise ValueError(f"unknown baseline BV model {self.bvs!r}")


def _bv_tags(config: SimConfig, bvs, rng) -> list[str]:
    if isinstance(bvs, str):
        return [bvs] * config.n_bvs
    counts = census(config.n_bvs, config.policy_mix)
    tags = [t for t, c in zip(SOCIAL_TAGS, counts) for _ in range(c)]
    rng.shuffle(tags)
    return tags


def _controllers(spec: ScenarioSpec) -> dict[str, Controller]:
    ctrls: dict[str, Controller] = {"sut": RuleController(spec.sut_model, spec.sut_params)}
    if isinstance(spec.bvs, str):
        ctrls[spec.bvs] = RuleController(spec.bvs, spec.bv_params)
    else:
        ctrls.update(social_controllers(spec.bvs))
        ctrls["level0"] = Level0Controller(KraussFollower())
    return ctrls


def _log_world(log: TrajectoryLog, world: World, requested, executed, throttles, collided,
               debug: str | None = None) -> None:
    k = world.step_count
    t = k * world.config.dt
    for vid in world.ids():
        st = world.get(vid)
        row = (k, t, vid, st.policy_tag, st.lane_id, st.s, st.d, st.v, st.a, st.yaw,
               requested.get(vid, 0), throttles.get(vid, 0.0), executed.get(vid, 0),
               1 if vid in collided else 0)
        if log.sut_debug:
            row += ((debug or "") if vid == SUT_ID else "",)
        log.append(row)


def run_scenario(road: RoadMap, config: SimConfig, spec: ScenarioSpec, n_steps: int,
                 sut_debug: bool = False) -> TrajectoryLog:
    rng = np.random.default_rng(config.seed)
    world = spawn(road, config, _bv_tags(config, spec.bvs, rng), rng)
    ctrls = _controllers(spec)
    log = TrajectoryLog(sut_debug=sut_debug)
    _log_world(log, world, {}, {}, {}, set())
    L = road.total_length
    for _ in range(n_steps):
        groups: dict[str, list[int]] = {}
        for vid in world.ids():
            groups.setdefault(world.get(vid).policy_tag, []).append(vid)

        requested, executed = {}, {}
        if world.step_count % config.decision_interval == 0:
            for tag, ids in groups.items():
                requested.update(ctrls[tag].decisions(world, ids))
            for vid in world.ids():
                req = requested.get(vid, MAINTAIN)
                out, _ = filter_action(world, vid, ControlInput(0.0, req))
                executed[vid] = out.lane_offset_request
                start_lane_change(world, vid, out.lane_offset_request)

        throttles = {}
        for tag, ids in groups.items():
            throttles.update(ctrls[tag].throttles(world, ids))

        s_before = world.get(SUT_ID).s
        advance(world, throttles)
        pairs = detect_collisions(world)
        collided = {i for p in pairs for i in p}
        debug = None
        if sut_debug and requested:
            debug = format_debug(ctrls["sut"].debug.get(SUT_ID, {}))
        _log_world(log, world, requested, executed, throttles, collided, debug)

        sut = world.get(SUT_ID)
        if SUT_ID in collided or sut.s < s_before - 0.5 * L:
            respawn_sut(world)
        sut = world.get(SUT_ID)
        for vid in sorted(collided - {SUT_ID}):
            relocate_bv(world, vid, rng, sut.s - TRAFFIC_WINDOW, sut.s - 0.5 * TRAFFIC_WINDOW)
        for vid in world.ids():
            if vid == SUT_ID:
                continue
            rel = world.ds(sut.s, world.get(vid).s)
            if rel < -TRAFFIC_WINDOW:
                relocate_bv(world, vid, rng, sut.s + 0.5 * TRAFFIC_WINDOW, sut.s + TRAFFIC_WINDOW)
            elif rel > TRAFFIC_WINDOW:
                relocate_bv(world, vid, rng, sut.s - TRAFFIC_WINDOW, sut.s - 0.5 * TRAFFIC_WINDOW)
    return log
