"""Lane-based on-ramp geometry in arc-length coordinates.

All lanes are parallel ribbons along a common arc-length axis ``s``.  Lateral
order is given by the neighbor chain: the lane without a left neighbor is the
leftmost one.  The ramp is an ordinary lane that ends at ``merge_end_s``.

Map file grammar (UTF-8, ``#`` starts a comment)::

    map  <total_length_m> <lane_width_m> <left|right> <vmax_mps> <vmin_mps>
    lane <id> <start_s> <end_s> <left_id|-> <right_id|-> <ramp|main>
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

HORIZON_LANES = 5


class MapError(ValueError):
    """Base class for map parsing failures."""


class MapSyntaxError(MapError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class MapTopologyError(MapError):
    pass


class MapConstraintError(MapError):
    pass


@dataclass(frozen=True)
class Lane:
    id: int
    start_s: float
    end_s: float
    left_neighbor: int | None
    right_neighbor: int | None
    is_ramp: bool

    def contains(self, s: float) -> bool:
        return self.start_s <= s <= self.end_s


@dataclass(frozen=True)
class RoadMap:
    total_length: float
    lanes: tuple[Lane, ...]  # leftmost first
    merge_lane_id: int
    merge_end_s: float
    lane_width: float
    drive_side: str
    v_max: float
    v_min: float

    def lane(self, lane_id: int) -> Lane:
        for lane in self.lanes:
            if lane.id == lane_id:
                return lane
        raise KeyError(f"unknown lane id {lane_id}")

    def has_lane(self, lane_id: int) -> bool:
        return any(lane.id == lane_id for lane in self.lanes)

    @property
    def lane_ids(self) -> list[int]:
        return [lane.id for lane in self.lanes]

    def lateral_index(self, lane_id: int) -> int:
        """Position of the lane counted from the left edge."""
        for i, lane in enumerate(self.lanes):
            if lane.id == lane_id:
                return i
        raise KeyError(f"unknown lane id {lane_id}")

    def lane_center_y(self, lane_id: int) -> float:
        """Lateral coordinate of a lane center, positive to the left."""
        return -self.lateral_index(lane_id) * self.lane_width

    def neighbor(self, lane_id: int, offset: int) -> int | None:
        """Lane reached by ``offset`` (+1 left, -1 right, 0 same)."""
        lane = self.lane(lane_id)
        if offset == 0:
            return lane.id
        if offset == 1:
            return lane.left_neighbor
        if offset == -1:
            return lane.right_neighbor
        raise ValueError(f"lane offset must be -1, 0 or +1, got {offset}")

    @property
    def mainline_ids(self) -> list[int]:
        return [lane.id for lane in self.lanes if not lane.is_ramp]

    @property
    def merge_lane(self) -> Lane:
        return self.lane(self.merge_lane_id)


def _tokens(line: str) -> list[tuple[str, int]]:
    """Split a line into (token, 1-based column) pairs, dropping comments."""
    out = []
    i = 0
    n = len(line)
    while i < n:
        if line[i] == "#":
            break
        if line[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not line[j].isspace() and line[j] != "#":
            j += 1
        out.append((line[i:j], i + 1))
        i = j
    return out


def _number(tok: str, col: int, lineno: int, what: str) -> float:
    try:
        value = float(tok)
    except ValueError:
        raise MapSyntaxError(f"expected number for {what}, got {tok!r}", lineno, col) from None
    if value != value or value in (float("inf"), float("-inf")):
        raise MapSyntaxError(f"{what} must be finite", lineno, col)
    return value


def _integer(tok: str, col: int, lineno: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise MapSyntaxError(f"expected integer for {what}, got {tok!r}", lineno, col) from None


def _optional_id(tok: str, col: int, lineno: int, what: str) -> int | None:
    if tok == "-":
        return None
    return _integer(tok, col, lineno, what)


def parse_map(text: str) -> RoadMap:
    header = None
    raw_lanes: list[tuple[Lane, int]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        toks = _tokens(line)
        if not toks:
            continue
        kw, kwcol = toks[0]
        if kw == "map":
            if header is not None:
                raise MapSyntaxError("duplicate map header", lineno, kwcol)
            if len(toks) != 6:
                raise MapSyntaxError(f"map header takes 5 fields, got {len(toks) - 1}", lineno, kwcol)
            total = _number(*toks[1], lineno, "total_length")
            width = _number(*toks[2], lineno, "lane_width")
            side, scol = toks[3]
            if side not in ("left", "right"):
                raise MapSyntaxError(f"drive side must be left or right, got {side!r}", lineno, scol)
            vmax = _number(*toks[4], lineno, "v_max")
            vmin = _number(*toks[5], lineno, "v_min")
            if total <= 0:
                raise MapConstraintError(f"line {lineno}: total_length must be positive")
            if width <= 0:
                raise MapConstraintError(f"line {lineno}: lane_width must be positive")
            if not 0 <= vmin <= vmax or vmax <= 0:
                raise MapConstraintError(f"line {lineno}: need 0 <= v_min <= v_max and v_max > 0")
            header = (total, width, side, vmax, vmin)
        elif kw == "lane":
            if len(toks) != 7:
                raise MapSyntaxError(f"lane line takes 6 fields, got {len(toks) - 1}", lineno, kwcol)
            lane_id = _integer(*toks[1], lineno, "lane id")
            start = _number(*toks[2], lineno, "start_s")
            end = _number(*toks[3], lineno, "end_s")
            left = _optional_id(*toks[4], lineno, "left neighbor")
            right = _optional_id(*toks[5], lineno, "right neighbor")
            kind, kcol = toks[6]
            if kind not in ("ramp", "main"):
                raise MapSyntaxError(f"lane kind must be ramp or main, got {kind!r}", lineno, kcol)
            if not start < end:
                raise MapConstraintError(f"line {lineno}: lane {lane_id} needs start_s < end_s")
            raw_lanes.append((Lane(lane_id, start, end, left, right, kind == "ramp"), lineno))
        else:
            raise MapSyntaxError(f"unknown directive {kw!r}", lineno, kwcol)

    if header is None:
        raise MapSyntaxError("missing map header", 1, 1)
    total, width, side, vmax, vmin = header
    return _build(total, width, side, vmax, vmin, raw_lanes)


def _build(total, width, side, vmax, vmin, raw_lanes) -> RoadMap:
    if not raw_lanes:
        raise MapTopologyError("map has no lanes")
    by_id: dict[int, Lane] = {}
    for lane, lineno in raw_lanes:
        if lane.id in by_id:
            raise MapTopologyError(f"line {lineno}: duplicate lane id {lane.id}")
        if lane.start_s < 0 or lane.end_s > total:
            raise MapConstraintError(f"line {lineno}: lane {lane.id} extends outside [0, {total}]")
        by_id[lane.id] = lane

    for lane in by_id.values():
        for attr, back in (("left_neighbor", "right_neighbor"), ("right_neighbor", "left_neighbor")):
            other_id = getattr(lane, attr)
            if other_id is None:
                continue
            if other_id == lane.id:
                raise MapTopologyError(f"lane {lane.id} lists itself as a neighbor")
            other = by_id.get(other_id)
            if other is None:
                raise MapTopologyError(f"lane {lane.id} references unknown lane {other_id}")
            if getattr(other, back) != lane.id:
                raise MapTopologyError(
                    f"asymmetric neighbors: lane {lane.id}.{attr} = {other_id} "
                    f"but lane {other_id}.{back} = {getattr(other, back)}"
                )

    leftmost = [lane for lane in by_id.values() if lane.left_neighbor is None]
    if len(leftmost) != 1:
        raise MapTopologyError(f"lanes must form one chain, found {len(leftmost)} leftmost lanes")
    ordered = [leftmost[0]]
    while ordered[-1].right_neighbor is not None:
        ordered.append(by_id[ordered[-1].right_neighbor])
    if len(ordered) != len(by_id):
        raise MapTopologyError("lanes must form one connected chain")

    ramps = [lane for lane in ordered if lane.is_ramp]
    if not ramps:
        raise MapConstraintError("merge lane missing: no lane is marked ramp")
    if len(ramps) > 1:
        raise MapConstraintError("exactly one ramp lane is supported")
    for lane in ordered:
        if not lane.is_ramp and (lane.start_s != 0 or lane.end_s != total):
            raise MapConstraintError(f"mainline lane {lane.id} must span [0, {total}]")

    ramp = ramps[0]
    return RoadMap(
        total_length=total,
        lanes=tuple(ordered),
        merge_lane_id=ramp.id,
        merge_end_s=ramp.end_s,
        lane_width=width,
        drive_side=side,
        v_max=vmax,
        v_min=vmin,
    )


def dump_map(road: RoadMap) -> str:
    def opt(x):
        return "-" if x is None else str(x)

    lines = [f"map {road.total_length!r} {road.lane_width!r} {road.drive_side} {road.v_max!r} {road.v_min!r}"]
    for lane in road.lanes:
        lines.append(
            f"lane {lane.id} {lane.start_s!r} {lane.end_s!r} {opt(lane.left_neighbor)} "
            f"{opt(lane.right_neighbor)} {'ramp' if lane.is_ramp else 'main'}"
        )
    return "\n".join(lines) + "\n"


def load_map(path: str | Path) -> RoadMap:
    return parse_map(Path(path).read_text(encoding="utf-8"))


def default_map_text() -> str:
    return resources.files("levelk_onramp").joinpath("data/onramp.map").read_text(encoding="utf-8")


def default_map() -> RoadMap:
    return parse_map(default_map_text())


def lanes_in_horizon(road: RoadMap, ego_lane: int, s: float | None = None) -> list[int | None]:
    """Five lane slots, leftmost first, with the ego lane in slot 2.

    Slots without a lane hold ``None``.  When ``s`` is given, lanes that do
    not exist at that arc length are reported as absent too.
    """
    road.lane(ego_lane)

    def present(lane_id):
        if lane_id is None:
            return None
        if s is not None and not road.lane(lane_id).contains(s):
            return None
        return lane_id

    slots: list[int | None] = [None] * HORIZON_LANES
    slots[2] = ego_lane
    cur = ego_lane
    for k in (1, 0):
        cur = road.lane(cur).left_neighbor if cur is not None else None
        slots[k] = present(cur)
        if slots[k] is None:
            break
    cur = ego_lane
    for k in (3, 4):
        cur = road.lane(cur).right_neighbor if cur is not None else None
        slots[k] = present(cur)
        if slots[k] is None:
            break
    return slots
