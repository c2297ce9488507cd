"""Intelligence and complexity scores computed from a trajectory log.

Everything here reads only the :class:`~levelk_onramp.scenario.TrajectoryLog`,
so logs written by the CLI can be scored offline.  Counts are raw totals for
the whole run.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .observation import BACK_VIEW, BIN_SIZE, N_BINS
from .roadmap import RoadMap, default_map, lanes_in_horizon
from .scenario import SUT_ID, TrajectoryLog

TTC_DANGER = 2.0  # s
DECEL_DANGER = -6.0  # m/s^2
EXPOSURE_QUIET = 1.0  # s of calm that closes an exposure episode
AD_ACCEL = 1.0  # m/s^2
AD_MIN_DURATION = 0.5  # s
COMPLEXITY_K = (25.0, 8.0, 1400.0)
HORIZON_BEHIND = -BACK_VIEW
HORIZON_AHEAD = N_BINS * BIN_SIZE - BACK_VIEW


class LogSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreWeights:
    i_s: float = 0.4
    i_e: float = 0.3
    i_i: float = 0.3
    C_max: int = 5
    H: int = 10
    dv_max: float = 5.0
    da_max: float = 3.0

    def __post_init__(self):
        if abs(self.i_s + self.i_e + self.i_i - 1.0) > 1e-9:
            raise ValueError("score weights i_s, i_e, i_i must sum to 1")
        if min(self.i_s, self.i_e, self.i_i) < 0:
            raise ValueError("score weights must be non-negative")
        if self.C_max < 1 or self.H < 1:
            raise ValueError("C_max and H must be >= 1")
        if self.dv_max <= 0 or self.da_max <= 0:
            raise ValueError("fluctuation caps must be positive")


@dataclass(frozen=True)
class LaneChange:
    vehicle: int
    start: int  # step of the executed decision
    end: int  # first step logged in the new lane
    from_lane: int
    to_lane: int


@dataclass
class EvalEvents:
    C: int
    E: int
    lane_changes: list[LaneChange]
    AD: int
    sut_id: int
    dt: float
    horizon: dict[int, set[int]] = field(repr=False)  # step -> BV ids around the SUT
    ad_by_vehicle: dict[int, int] = field(default_factory=dict, repr=False)
    ttc: np.ndarray = field(default=None, repr=False)  # SUT TTC per step, nan when undefined

    def sut_lane_changes(self) -> list[LaneChange]:
        return [lc for lc in self.lane_changes if lc.vehicle == self.sut_id]

    def bv_lane_changes(self) -> list[LaneChange]:
        return [lc for lc in self.lane_changes if lc.vehicle != self.sut_id]

    @property
    def LC(self) -> int:
        return len(self.bv_lane_changes())


def _check_log(log: TrajectoryLog, sut_id: int) -> None:
    if len(log) == 0:
        raise LogSchemaError("log has no rows")
    if sut_id not in set(log["vehicle_id"].tolist()):
        raise LogSchemaError(f"log has no rows for SUT id {sut_id}")
    steps = log["step"]
    if np.any(steps < 0):
        raise LogSchemaError("negative step index in log")


def _per_step(log: TrajectoryLog):
    """Yield ``(step, row_indices)`` in step order."""
    steps = log["step"]
    order = np.argsort(steps, kind="stable")
    s_sorted = steps[order]
    bounds = np.flatnonzero(np.diff(s_sorted)) + 1
    for chunk in np.split(order, bounds):
        if len(chunk):
            yield int(steps[chunk[0]]), chunk


def lane_change_intervals(log: TrajectoryLog, total_length: float | None = None,
                          max_jump: float = 10.0) -> list[LaneChange]:
    """Decision step to first step in the new lane, for every vehicle.

    A change interrupted by a teleport (respawn or relocation, detected as a
    jump of more than ``max_jump`` metres between rows) or still open at the
    end of the log is dropped.
    """
    L = total_length or default_map().total_length
    out = []
    for vid in log.vehicle_ids():
        tr = log.vehicle(vid)
        steps, lanes, exe, s = tr["step"], tr["lane_id"], tr["executed_decision"], tr["s_m"]
        jump = np.zeros(len(steps), dtype=bool)
        if len(steps) > 1:
            jump[1:] = np.abs((np.diff(s) + 0.5 * L) % L - 0.5 * L) > max_jump
        pending = None
        for k in range(len(steps)):
            if jump[k]:
                pending = None
            elif pending is not None and lanes[k] != pending[1]:
                out.append(LaneChange(vid, pending[0], int(steps[k]), pending[1], int(lanes[k])))
                pending = None
            if exe[k] != 0 and pending is None:
                # the decision row is logged one step after it was taken
                pending = (int(steps[k]) - 1, int(lanes[k]))
    return sorted(out, key=lambda lc: (lc.start, lc.vehicle))


def _intervals(mask: np.ndarray, min_len: int) -> int:
    """Number of maximal True runs of length >= min_len."""
    if not mask.any():
        return 0
    padded = np.concatenate([[False], mask, [False]])
    d = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return int(np.sum(ends - starts >= min_len))


def detect_events(log: TrajectoryLog, sut_id: int = SUT_ID, road: RoadMap | None = None,
                  vehicle_length: float = 4.5) -> EvalEvents:
    _check_log(log, sut_id)
    road = road or default_map()
    L = road.total_length
    dt = log.dt
    c = log.columns

    ttc_series = []
    sut_acc = []
    horizon: dict[int, set[int]] = {}
    for step, rows in _per_step(log):
        vid = c["vehicle_id"][rows]
        k_sut = rows[vid == sut_id]
        if len(k_sut) == 0:
            continue
        k = k_sut[0]
        s0, lane0, v0 = c["s_m"][k], int(c["lane_id"][k]), c["v_mps"][k]
        sut_acc.append(c["a_mps2"][k])
        others = rows[vid != sut_id]
        rel = (c["s_m"][others] - s0 + 0.5 * L) % L - 0.5 * L
        lanes = c["lane_id"][others]

        same = (lanes == lane0) & (rel > 0)
        ttc = math.nan
        if same.any():
            j = np.argmin(np.where(same, rel, np.inf))
            gap = rel[j] - vehicle_length
            closing = v0 - c["v_mps"][others][j]
            if closing > 0:
                ttc = max(gap, 0.0) / closing
        ttc_series.append(ttc)

        slots = {x for x in lanes_in_horizon(road, lane0) if x is not None}
        inside = (rel >= HORIZON_BEHIND) & (rel < HORIZON_AHEAD) & np.isin(lanes, list(slots))
        horizon[step] = set(c["vehicle_id"][others][inside].tolist())

    ttc_arr = np.array(ttc_series, dtype=float)
    acc = np.array(sut_acc, dtype=float)
    danger = (np.nan_to_num(ttc_arr, nan=np.inf) < TTC_DANGER) | (acc < DECEL_DANGER)
    quiet_steps = max(1, int(round(EXPOSURE_QUIET / dt)))
    E, calm, active = 0, 0, False
    for flag in danger:
        if flag:
            if not active:
                E += 1
                active = True
            calm = 0
        elif active:
            calm += 1
            if calm >= quiet_steps:
                active = False

    coll = c["collision"]
    C = int(np.sum((coll == 1) & (c["vehicle_id"] == sut_id)))

    min_len = max(1, int(math.ceil(AD_MIN_DURATION / dt - 1e-9)))
    ad = {}
    for vid in log.vehicle_ids():
        tr = log.vehicle(vid)
        ad[vid] = _intervals(np.abs(tr["a_mps2"]) > AD_ACCEL, min_len)
    AD = sum(n for v, n in ad.items() if v != sut_id)

    return EvalEvents(C=C, E=E, lane_changes=lane_change_intervals(log, L), AD=AD, sut_id=sut_id, dt=dt,
                      horizon=horizon, ad_by_vehicle=ad, ttc=ttc_arr)


def score_safety(events: EvalEvents, weights: ScoreWeights = ScoreWeights()) -> float:
    return safety_formula(events.C, events.E, weights.C_max)


def safety_formula(C: float, E: float, C_max: float) -> float:
    return 0.7 * (1.0 - min(C, C_max) / C_max) + 0.3 * math.exp(-E)


def efficiency_formula(h_bar: float, v_bar: float, T_l: float, H: float, v_max: float) -> float:
    return 0.5 * (math.sqrt(h_bar * v_bar) / (H * v_max) + math.exp(-T_l / 3.0))


def interaction_formula(v_fluct: float, a_fluct: float, L_bar: float, dv_max: float, da_max: float) -> float:
    return (2.0 - min(max(v_fluct, 0.0), dv_max) / dv_max - min(max(a_fluct, 0.0), da_max) / da_max
            + math.exp(-math.sqrt(L_bar))) / 3.0


def complexity_formula(E: float, LC: float, AD: float, k=COMPLEXITY_K) -> float:
    k1, k2, k3 = k
    if min(k) <= 0:
        raise ValueError("complexity constants must be positive")
    return 0.4 * (1.0 - math.exp(-E / k1)) + 0.3 * (2.0 - math.exp(-LC / k2) - math.exp(-AD / k3))


def _sut_track(log: TrajectoryLog, sut_id: int):
    return log.vehicle(sut_id)


def efficiency_inputs(log: TrajectoryLog, events: EvalEvents) -> tuple[float, float, float]:
    """Mean SUT speed, mean horizon occupancy, mean SUT lane-change time (s)."""
    tr = _sut_track(log, events.sut_id)
    v_bar = float(np.mean(tr["v_mps"]))
    h_bar = float(np.mean([len(events.horizon.get(int(k), ())) for k in tr["step"]]))
    lcs = events.sut_lane_changes()
    T_l = float(np.mean([(lc.end - lc.start) * events.dt for lc in lcs])) if lcs else 0.0
    return v_bar, h_bar, T_l


def score_efficiency(log: TrajectoryLog, events: EvalEvents, weights: ScoreWeights = ScoreWeights(),
                     v_max: float | None = None) -> float:
    v_max = v_max or default_map().v_max
    v_bar, h_bar, T_l = efficiency_inputs(log, events)
    return efficiency_formula(h_bar, v_bar, T_l, weights.H, v_max)


def interaction_inputs(log: TrajectoryLog, events: EvalEvents) -> tuple[float, float, float] | None:
    """Speed and acceleration fluctuation of horizon BVs, and BV lane
    changes per SUT lane change.  ``None`` when the SUT never changed lanes."""
    lcs = events.sut_lane_changes()
    if not lcs:
        return None
    tracks = {vid: log.vehicle(vid) for vid in log.vehicle_ids() if vid != events.sut_id}
    index = {vid: {int(s): k for k, s in enumerate(tr["step"])} for vid, tr in tracks.items()}
    dv, da, counts = [], [], []
    bv_lcs = events.bv_lane_changes()
    for lc in lcs:
        for step in range(lc.start + 1, lc.end + 1):
            for vid in events.horizon.get(step, ()):
                k = index[vid].get(step)
                if k is None or k == 0 or int(tracks[vid]["step"][k - 1]) != step - 1:
                    continue
                dv.append(abs(tracks[vid]["v_mps"][k] - tracks[vid]["v_mps"][k - 1]))
                da.append(abs(tracks[vid]["a_mps2"][k] - tracks[vid]["a_mps2"][k - 1]))
        n = sum(1 for b in bv_lcs if lc.start <= b.start <= lc.end
                and b.vehicle in events.horizon.get(b.start, events.horizon.get(b.start + 1, ())))
        counts.append(n)
    v_fl = float(np.mean(dv)) if dv else 0.0
    a_fl = float(np.mean(da)) if da else 0.0
    return v_fl, a_fl, float(np.mean(counts))


def score_interaction(log: TrajectoryLog, events: EvalEvents, weights: ScoreWeights = ScoreWeights()) -> float:
    inputs = interaction_inputs(log, events)
    if inputs is None:
        return 1.0
    return interaction_formula(*inputs, weights.dv_max, weights.da_max)


def score_intelligence(I_s: float, I_e: float, I_i: float, weights: ScoreWeights = ScoreWeights()) -> float:
    return weights.i_s * I_s + weights.i_e * I_e + weights.i_i * I_i


def score_complexity(events: EvalEvents, k1: float = 25.0, k2: float = 8.0, k3: float = 1400.0) -> float:
    return complexity_formula(events.E, events.LC, events.AD, (k1, k2, k3))


@dataclass
class ScoreReport:
    I_s: float
    I_e: float
    I_i: float
    I: float
    contrib_s: float
    contrib_e: float
    contrib_i: float
    complexity: float
    C: int
    E: int
    v_bar: float
    h_bar: float
    T_l: float
    v_fluct: float
    a_fluct: float
    L_bar: float
    LC: int
    AD: int
    sut_lane_changes: int
    weights: ScoreWeights
    label: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d

    def to_kv(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if k == "weights":
                lines += [f"weight.{wk} = {wv}" for wk, wv in v.items()]
            elif isinstance(v, float):
                lines.append(f"{k} = {v:.6f}")
            else:
                lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate(log: TrajectoryLog, sut_id: int = SUT_ID, weights: ScoreWeights = ScoreWeights(),
             road: RoadMap | None = None, label: str = "") -> ScoreReport:
    road = road or default_map()
    ev = detect_events(log, sut_id, road)
    I_s = score_safety(ev, weights)
    v_bar, h_bar, T_l = efficiency_inputs(log, ev)
    I_e = efficiency_formula(h_bar, v_bar, T_l, weights.H, road.v_max)
    inter = interaction_inputs(log, ev)
    if inter is None:
        I_i, (v_fl, a_fl, L_bar) = 1.0, (0.0, 0.0, 0.0)
    else:
        v_fl, a_fl, L_bar = inter
        I_i = interaction_formula(v_fl, a_fl, L_bar, weights.dv_max, weights.da_max)
    cs, ce, ci = weights.i_s * I_s, weights.i_e * I_e, weights.i_i * I_i
    return ScoreReport(
        I_s=I_s, I_e=I_e, I_i=I_i, I=cs + ce + ci, contrib_s=cs, contrib_e=ce, contrib_i=ci,
        complexity=score_complexity(ev), C=ev.C, E=ev.E, v_bar=v_bar, h_bar=h_bar, T_l=T_l,
        v_fluct=v_fl, a_fluct=a_fl, L_bar=L_bar, LC=ev.LC, AD=ev.AD,
        sut_lane_changes=len(ev.sut_lane_changes()), weights=weights, label=label,
    )


def comparison_table(reports: list[ScoreReport]) -> str:
    """Fixed-width table of weighted contributions, sorted by I, best first."""
    w = max([24] + [len(r.label) for r in reports])
    head = (f"{'run':<{w}} {'w*I_s':>7} {'w*I_e':>7} {'w*I_i':>7} {'I':>7} {'C':>4} {'E':>5} "
            f"{'complexity':>10}")
    rows = [head]
    for r in sorted(reports, key=lambda r: -r.I):
        rows.append(f"{r.label:<{w}} {r.contrib_s:>7.3f} {r.contrib_e:>7.3f} {r.contrib_i:>7.3f} {r.I:>7.3f} "
                    f"{r.C:>4d} {r.E:>5d} {r.complexity:>10.3f}")
    return "\n".join(rows) + "\n"
