"""Compare simulated traffic with naturalistic trajectories.

Headway samples ``(DHW, v)`` and ``(THW, v)`` and lane-change statistics are
taken from a simulation log and from a HighD-format tracks file.  Each pair
of sample sets is turned into densities by Gaussian KDE on a shared grid and
compared with the base-2 Jensen-Shannon divergence, so that
``similarity = (1 - JS) * 100`` reads as a percentage.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .evaluation import lane_change_intervals
from .roadmap import RoadMap, default_map
from .scenario import SUT_ID, TrajectoryLog

REQUIRED_COLUMNS = ("frame", "id", "x", "xVelocity", "xAcceleration", "laneId", "precedingId", "dhw", "thw", "ttc")
LEADER_RANGE = 150.0  # m, bumper gap beyond which a leader is ignored
MIN_SPEED_THW = 0.1  # m/s
GRID_BINS = 50
GRID_PERCENTILES = (1.0, 99.0)
METRICS = ("dhw_v", "thw_v", "voluntary_speed", "mandatory_ttc")


class IngestError(ValueError):
    pass


class KdeError(ValueError):
    pass


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class NaturalisticTrack:
    """One row of a tracks file, with speeds along the driving direction."""

    frame: int
    vehicle_id: int
    x: float
    speed: float
    acceleration: float
    lane_id: int
    preceding_id: int
    thw: float
    dhw: float
    ttc: float


def ingest_highd(text: str) -> list[NaturalisticTrack]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise IngestError("tracks file is empty") from None
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise IngestError(f"tracks file lacks required column(s): {', '.join(missing)}")
    col = {c: header.index(c) for c in REQUIRED_COLUMNS}
    ints = {"frame", "id", "laneId", "precedingId"}
    out = []
    last_frame: dict[int, int] = {}
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not x.strip() for x in row):
            continue
        vals = {}
        for name, k in col.items():
            tok = row[k].strip() if k < len(row) else ""
            if tok == "":
                raise IngestError(f"row {rowno}: missing value for {name}")
            try:
                vals[name] = int(float(tok)) if name in ints else float(tok)
            except ValueError:
                raise IngestError(f"row {rowno}: non-numeric {name} value {tok!r}") from None
        vid, frame = vals["id"], vals["frame"]
        if vid in last_frame and frame <= last_frame[vid]:
            raise IngestError(f"row {rowno}: frames of vehicle {vid} are not strictly increasing")
        last_frame[vid] = frame
        vx = vals["xVelocity"]
        direction = -1.0 if vx < 0 else 1.0
        out.append(NaturalisticTrack(
            frame=frame, vehicle_id=vid, x=vals["x"], speed=abs(vx),
            acceleration=direction * vals["xAcceleration"], lane_id=vals["laneId"],
            preceding_id=vals["precedingId"], thw=vals["thw"], dhw=vals["dhw"], ttc=vals["ttc"],
        ))
    return out


def read_highd(path) -> list[NaturalisticTrack]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read tracks file {path}: {exc}") from None
    return ingest_highd(text)


def _log_leaders(log: TrajectoryLog, road: RoadMap, vehicle_length: float):
    """Per row: bumper gap to the same-lane leader (nan if none in range)."""
    c = log.columns
    L = road.total_length
    n = len(c["step"])
    gap = np.full(n, np.nan)
    lead_v = np.full(n, np.nan)
    order = np.lexsort((c["s_m"], c["lane_id"], c["step"]))
    st, ln, s, v = c["step"][order], c["lane_id"][order], c["s_m"][order], c["v_mps"][order]
    group = np.flatnonzero((np.diff(st) != 0) | (np.diff(ln) != 0)) + 1
    for idx in np.split(np.arange(n), group):
        if len(idx) < 2:
            continue
        nxt = np.roll(idx, -1)
        d = (s[nxt] - s[idx]) % L
        g = d - vehicle_length
        ok = g <= LEADER_RANGE
        gap[order[idx[ok]]] = g[ok]
        lead_v[order[idx[ok]]] = v[nxt][ok]
    return gap, lead_v


def extract_pairs(source, kind: str, bv_only: bool = True, road: RoadMap | None = None,
                  vehicle_length: float = 4.5) -> np.ndarray:
    """``(value, speed)`` samples, shape ``(n, 2)``, for ``kind`` in
    ``{"dhw_v", "thw_v"}``."""
    if kind not in ("dhw_v", "thw_v"):
        raise ValueError(f"unknown pair kind {kind!r}")
    if isinstance(source, TrajectoryLog):
        road = road or default_map()
        gap, _ = _log_leaders(source, road, vehicle_length)
        v = source["v_mps"]
        keep = ~np.isnan(gap)
        if bv_only:
            keep &= source["vehicle_id"] != SUT_ID
        gap = np.maximum(gap, 0.0)
        if kind == "dhw_v":
            return np.column_stack([gap[keep], v[keep]])
        keep &= v > MIN_SPEED_THW
        return np.column_stack([gap[keep] / v[keep], v[keep]])
    rows = list(source)
    if not rows:
        return np.zeros((0, 2))
    val = np.array([r.dhw if kind == "dhw_v" else r.thw for r in rows])
    spd = np.array([r.speed for r in rows])
    keep = val > 0
    return np.column_stack([val[keep], spd[keep]])


@dataclass(frozen=True)
class GridSpec:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    bins: tuple[int, ...]

    def centers(self) -> tuple[np.ndarray, ...]:
        out = []
        for lo, hi, n in zip(self.lo, self.hi, self.bins):
            w = (hi - lo) / n
            out.append(lo + w * (np.arange(n) + 0.5))
        return tuple(out)


def pooled_grid(*sample_sets, bins: int = GRID_BINS, q=GRID_PERCENTILES) -> GridSpec:
    """Grid over the joint percentile range of all sample sets."""
    arrs = [np.asarray(a, dtype=float) for a in sample_sets if len(a)]
    if not arrs:
        raise KdeError("no samples to build a grid from")
    arrs = [a[:, None] if a.ndim == 1 else a for a in arrs]
    pooled = np.concatenate(arrs, axis=0)
    lo = np.percentile(pooled, q[0], axis=0)
    hi = np.percentile(pooled, q[1], axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    d = pooled.shape[1]
    return GridSpec(tuple(lo.tolist()), tuple(hi.tolist()), (bins,) * d)


@dataclass
class Density:
    """Probability masses on a regular grid of cell centers."""

    axes: tuple[np.ndarray, ...]
    mass: np.ndarray

    @property
    def ndim(self) -> int:
        return len(self.axes)

    def mode(self) -> tuple[float, ...]:
        idx = np.unravel_index(int(np.argmax(self.mass)), self.mass.shape)
        return tuple(float(ax[i]) for ax, i in zip(self.axes, idx))

    def mean(self) -> tuple[float, ...]:
        out = []
        for k, ax in enumerate(self.axes):
            other = tuple(j for j in range(self.ndim) if j != k)
            marg = self.mass.sum(axis=other) if other else self.mass
            out.append(float(np.sum(marg * ax)))
        return tuple(out)


Density2D = Density


def kde(samples, grid: GridSpec) -> Density:
    """Product-Gaussian KDE with Scott's bandwidth as cell masses, renormalized on ``grid``."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if d != len(grid.bins):
        raise KdeError(f"samples have {d} dims, grid has {len(grid.bins)}")
    if n < 2:
        raise KdeError("KDE needs at least 2 samples")
    sd = x.std(axis=0, ddof=1)
    if np.any(sd <= 0) or not np.all(np.isfinite(sd)):
        raise KdeError("KDE samples have zero variance along an axis")
    h = sd * n ** (-1.0 / (d + 4))
    axes = grid.centers()
    # each kernel integrated over the cells, so narrow kernels cannot fall between centers
    kernels = []
    for k, (lo, hi, nb) in enumerate(zip(grid.lo, grid.hi, grid.bins)):
        edges = np.linspace(lo, hi, nb + 1)
        cdf = ndtr((edges[None, :] - x[:, k:k + 1]) / h[k])
        kernels.append(np.diff(cdf, axis=1))
    if d == 1:
        dens = kernels[0].sum(axis=0)
    elif d == 2:
        dens = kernels[0].T @ kernels[1]
    else:
        raise KdeError("only 1-D and 2-D densities are supported")
    total = dens.sum()
    if total <= 0 or not np.isfinite(total):
        raise KdeError("KDE has no mass on the grid")
    return Density(axes, dens / total)


def kde2(samples, grid: GridSpec) -> Density:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise KdeError("kde2 expects samples of shape (n, 2)")
    return kde(x, grid)


def js_divergence(p: Density, q: Density) -> float:
    if p.mass.shape != q.mass.shape or any(not np.array_equal(a, b) for a, b in zip(p.axes, q.axes)):
        raise GridMismatch("densities live on different grids")
    P, Q = p.mass.ravel(), q.mass.ravel()
    M = 0.5 * (P + Q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(a[nz] / M[nz])))

    return min(1.0, max(0.0, 0.5 * kl(P) + 0.5 * kl(Q)))


def similarity(js: float) -> float:
    if not 0.0 <= js <= 1.0:
        raise ValueError("JS divergence must lie in [0, 1]")
    return (1.0 - js) * 100.0


@dataclass(frozen=True)
class ClassifiedLaneChange:
    vehicle: int
    at: int  # step or frame of the initiating moment
    kind: str  # "mandatory" or "voluntary"
    v: float
    ttc: float  # nan for voluntary changes


def _classify(v: float, pv_speed: float | None, gap: float | None) -> tuple[str, float]:
    if pv_speed is None or not pv_speed < v:
        return "voluntary", math.nan
    ttc = max(gap, 0.0) / (v - pv_speed) if gap is not None else math.nan
    return "mandatory", ttc


def classify_lane_changes(source, road: RoadMap | None = None, bv_only: bool = True,
                          vehicle_length: float = 4.5) -> list[ClassifiedLaneChange]:
    """Mandatory when a slower preceding vehicle is present at the moment the
    change starts, voluntary otherwise."""
    out = []
    if isinstance(source, TrajectoryLog):
        road = road or default_map()
        gap, lead_v = _log_leaders(source, road, vehicle_length)
        c = source.columns
        key = {(int(s), int(v)): k for k, (s, v) in enumerate(zip(c["step"], c["vehicle_id"]))}
        for lc in lane_change_intervals(source, road.total_length):
            if bv_only and lc.vehicle == SUT_ID:
                continue
            k = key.get((lc.start, lc.vehicle))
            if k is None:
                continue
            has_pv = not np.isnan(gap[k])
            kind, ttc = _classify(float(c["v_mps"][k]), float(lead_v[k]) if has_pv else None,
                                  float(gap[k]) if has_pv else None)
            out.append(ClassifiedLaneChange(lc.vehicle, lc.start, kind, float(c["v_mps"][k]), ttc))
        return out

    rows = sorted(source, key=lambda r: (r.vehicle_id, r.frame))
    by_key = {(r.frame, r.vehicle_id): r for r in rows}
    for prev, cur in zip(rows, rows[1:]):
        if prev.vehicle_id != cur.vehicle_id or prev.lane_id == cur.lane_id:
            continue
        pv = by_key.get((prev.frame, prev.preceding_id)) if prev.preceding_id else None
        gap = prev.dhw if prev.dhw > 0 else None
        kind, ttc = _classify(prev.speed, pv.speed if pv else None, gap)
        if kind == "mandatory" and math.isnan(ttc) and prev.ttc > 0:
            ttc = prev.ttc
        out.append(ClassifiedLaneChange(prev.vehicle_id, prev.frame, kind, prev.speed, ttc))
    return out


def lane_change_samples(changes: list[ClassifiedLaneChange]) -> tuple[np.ndarray, np.ndarray]:
    """Speeds of voluntary changes and finite TTCs of mandatory ones."""
    vol = np.array([c.v for c in changes if c.kind == "voluntary"], dtype=float)
    man = np.array([c.ttc for c in changes if c.kind == "mandatory" and np.isfinite(c.ttc)], dtype=float)
    return vol, man


@dataclass
class FidelityRow:
    metric: str
    js: float
    similarity: float
    n_sim: int
    n_ref: int
    note: str = ""


@dataclass
class FidelityReport:
    rows: list[FidelityRow]
    densities: dict[str, tuple[Density, Density]] = field(default_factory=dict, repr=False)

    def row(self, metric: str) -> FidelityRow:
        return next(r for r in self.rows if r.metric == metric)

    def to_text(self) -> str:
        lines = [f"{'metric':<16} {'js':>8} {'similarity_pct':>15} {'n_sim':>8} {'n_ref':>8}  note"]
        for r in self.rows:
            js = "nan" if math.isnan(r.js) else f"{r.js:.4f}"
            sim = "nan" if math.isnan(r.similarity) else f"{r.similarity:.2f}"
            lines.append(f"{r.metric:<16} {js:>8} {sim:>15} {r.n_sim:>8d} {r.n_ref:>8d}  {r.note}".rstrip())
        return "\n".join(lines) + "\n"

    def density_csv(self, metric: str) -> str:
        p, q = self.densities[metric]
        buf = io.StringIO()
        if p.ndim == 1:
            buf.write("x,p_sim,p_ref\n")
            for x, a, b in zip(p.axes[0], p.mass, q.mass):
                buf.write(f"{x:.6g},{a:.6g},{b:.6g}\n")
        else:
            buf.write("x,y,p_sim,p_ref\n")
            for i, x in enumerate(p.axes[0]):
                for j, y in enumerate(p.axes[1]):
                    buf.write(f"{x:.6g},{y:.6g},{p.mass[i, j]:.6g},{q.mass[i, j]:.6g}\n")
        return buf.getvalue()


def compare_samples(sim: np.ndarray, ref: np.ndarray, metric: str, bins: int = GRID_BINS):
    """JS divergence of two sample sets on their pooled grid."""
    grid = pooled_grid(sim, ref, bins=bins)
    p, q = kde(sim, grid), kde(ref, grid)
    js = js_divergence(p, q)
    return FidelityRow(metric, js, similarity(js), len(sim), len(ref)), (p, q)


def _samples(source, road, bv_only):
    pairs = {k: extract_pairs(source, k, bv_only=bv_only, road=road) for k in ("dhw_v", "thw_v")}
    vol, man = lane_change_samples(classify_lane_changes(source, road=road, bv_only=bv_only))
    return {"dhw_v": pairs["dhw_v"], "thw_v": pairs["thw_v"], "voluntary_speed": vol, "mandatory_ttc": man}


def fidelity_report(sim_source, ref_source, road: RoadMap | None = None, bv_only: bool = True,
                    bins: int = GRID_BINS) -> FidelityReport:
    """Four-metric comparison; either source may be a log or a track list."""
    road = road or default_map()
    sim = _samples(sim_source, road, bv_only)
    ref = _samples(ref_source, road, bv_only)
    rows, dens = [], {}
    for m in METRICS:
        try:
            row, pq = compare_samples(sim[m], ref[m], m, bins)
            dens[m] = pq
        except KdeError as exc:
            row = FidelityRow(m, math.nan, math.nan, len(sim[m]), len(ref[m]), f"skipped: {exc}")
        rows.append(row)
    return FidelityReport(rows, dens)
