"""Controllers that turn policies and rule models into per-step commands.

A controller serves a group of vehicles: ``decisions`` returns requested
lane offsets, ``throttles`` returns throttle commands.  Learned networks are
evaluated in one batch per controller.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import PolicyNet, load_policy
from .observation import DECISION_DIM, LONGITUDINAL_DIM, encode_decision_obs, encode_longitudinal_obs
from .sim import MAINTAIN, World, accel_to_throttle
from .sut import SutParams, decide, krauss_follow

STAGES = ("car_following", "level1_mutual", "level2_mutual", "competitive", "cooperative")
TAG_TO_STAGE = {"competitive": "competitive", "mutual": "level2_mutual", "cooperative": "cooperative"}
CRUISE_TIME_CONSTANT = 1.0  # s


class BundleError(RuntimeError):
    pass


def decision_from_action(u: float) -> int:
    """Map a continuous actor output in (-1, 1) onto {-1, 0, +1}."""
    if u > 1 / 3:
        return 1
    if u < -1 / 3:
        return -1
    return 0


def cruise_throttle(world: World, vid: int) -> float:
    st = world.get(vid)
    v_des = min(st.v_des, world.road.v_max)
    return accel_to_throttle((v_des - st.v) / CRUISE_TIME_CONSTANT, world.config)


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class PolicyBundle:
    """Trained weights for every curriculum stage."""

    paths: dict[str, Path]
    nets: dict[str, PolicyNet] = field(default_factory=dict)

    @classmethod
    def load(cls, paths: dict[str, Path]) -> "PolicyBundle":
        nets = {}
        for stage, p in paths.items():
            in_dim = LONGITUDINAL_DIM if stage == "car_following" else DECISION_DIM
            try:
                nets[stage] = load_policy(p, expect_in_dim=in_dim, expect_out_dim=1)
            except (OSError, ValueError) as exc:
                raise BundleError(f"cannot load {stage} weights from {p}: {exc}") from exc
        return cls({k: Path(v) for k, v in paths.items()}, nets)

    @classmethod
    def from_manifest(cls, manifest_path) -> "PolicyBundle":
        manifest_path = Path(manifest_path)
        paths = {}
        try:
            text = manifest_path.read_text(encoding="utf-8")
        except OSError as exc:
            raise BundleError(f"cannot read bundle manifest {manifest_path}: {exc}") from exc
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3 or parts[0] not in STAGES:
                raise BundleError(f"bad bundle manifest line {line!r}")
            p = Path(parts[1])
            if not p.is_absolute():
                p = manifest_path.parent / p
            if p.exists() and file_hash(p) != parts[2]:
                raise BundleError(f"{parts[0]} weights at {p} do not match the manifest hash")
            paths[parts[0]] = p
        missing = [s for s in STAGES if s not in paths]
        if missing:
            raise BundleError(f"bundle manifest lacks stages: {', '.join(missing)}")
        return cls.load(paths)


class Controller:
    def decisions(self, world: World, ids: list[int]) -> dict[int, int]:
        return {i: MAINTAIN for i in ids}

    def throttles(self, world: World, ids: list[int]) -> dict[int, float]:
        raise NotImplementedError


class LearnedFollower:
    """Trained car-following actor with a free-road cruise fallback."""

    def __init__(self, actor: PolicyNet):
        self.actor = actor

    def throttles(self, world: World, ids: list[int]) -> dict[int, float]:
        out, rows, keys = {}, [], []
        for i in ids:
            obs = encode_longitudinal_obs(world, i)
            if obs.lam:
                rows.append(obs.vector())
                keys.append(i)
            else:
                out[i] = cruise_throttle(world, i)
        if rows:
            acts = self.actor(np.array(rows))[:, 0]
            for i, a in zip(keys, acts):
                out[i] = float(np.clip(a, -1.0, 1.0))
        return out


class KraussFollower:
    """Krauss car following toward each vehicle's own desired speed."""

    def __init__(self, params: SutParams | None = None):
        self.params = params or SutParams()

    def throttles(self, world: World, ids: list[int]) -> dict[int, float]:
        out = {}
        for i in ids:
            lead, gap = world.leader(i)
            out[i] = krauss_follow(world.get(i), lead, self.params, world.config, gap=gap,
                                   v_max=world.road.v_max)
        return out


class Level0Controller(Controller):
    """Lane keeping; only the road topology triggers lane changes."""

    def __init__(self, follower):
        self.follower = follower

    def throttles(self, world, ids):
        return self.follower.throttles(world, ids)


class LearnedDecisionController(Controller):
    def __init__(self, actor: PolicyNet, follower):
        self.actor = actor
        self.follower = follower

    def actions(self, world: World, ids: list[int]) -> np.ndarray:
        obs = np.array([encode_decision_obs(world, i).flat() for i in ids])
        return self.actor(obs)[:, 0]

    def decisions(self, world, ids):
        if not ids:
            return {}
        return {i: decision_from_action(float(u)) for i, u in zip(ids, self.actions(world, ids))}

    def throttles(self, world, ids):
        return self.follower.throttles(world, ids)


class RuleController(Controller):
    def __init__(self, model: str, params: SutParams | None = None):
        self.model = model
        self.params = params or SutParams()
        self.follower = KraussFollower(self.params)
        self.debug: dict[int, dict] = {}  # last decision's introspection data per vehicle

    def decisions(self, world, ids):
        out = {}
        for i in ids:
            dec = decide(self.model, world, i, self.params)
            out[i] = dec.lane_offset
            self.debug[i] = dec.debug
        return out

    def throttles(self, world, ids):
        return self.follower.throttles(world, ids)


def social_controllers(bundle: PolicyBundle) -> dict[str, Controller]:
    follower = LearnedFollower(bundle.nets["car_following"])
    return {tag: LearnedDecisionController(bundle.nets[stage], follower) for tag, stage in TAG_TO_STAGE.items()}

