"""Level-k curriculum: environments, the TD3 training loop and artifact caching.

Stages run in dependency order::

    car_following -> level1_mutual -> level2_mutual -> {competitive, cooperative}

The car-following actor is trained first against Krauss traffic and then
frozen as the longitudinal controller of every later stage.  Each stage
writes a policy file, a per-episode reward curve and a JSON manifest whose
``input_key`` hashes everything that determines the result, so a rerun with
unchanged inputs is skipped and a changed prerequisite invalidates all of
its dependents.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import subprocess
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .drivers import (STAGES, KraussFollower, LearnedDecisionController, LearnedFollower, Level0Controller,
                      PolicyBundle, cruise_throttle, decision_from_action, file_hash)
from .nn import PolicyNet, load_policy, save_policy
from .observation import DECISION_DIM, LONGITUDINAL_DIM, O_SMAX, encode_decision_obs, encode_longitudinal_obs
from .rewards import RewardParams, control_reward, drivable_areas, individual_reward, social_reward
from .roadmap import RoadMap
from .scenario import _free_spot, relocate_bv
from .sim import (MAINTAIN, ControlInput, SimConfig, VehicleState, World, advance, detect_collisions,
                  filter_action, start_lane_change)
from .td3 import ReplayBuffer, TD3Config, TD3Nets, act, td3_update

EGO_ID = 0
NAN_CHECK_EVERY = 1000
TRAINER_VERSION = 2  # bump when training semantics change so cached stages retrain

PREREQUISITES = {
    "car_following": (),
    "level1_mutual": ("car_following",),
    "level2_mutual": ("car_following", "level1_mutual"),
    "competitive": ("car_following", "level2_mutual"),
    "cooperative": ("car_following", "level2_mutual"),
}
SV_POLICY = {
    "car_following": "krauss",
    "level1_mutual": "level0",
    "level2_mutual": "level1_mutual",
    "competitive": "level2_mutual",
    "cooperative": "level2_mutual",
}
REWARD_KIND = {
    "car_following": "control",
    "level1_mutual": "mutual",
    "level2_mutual": "mutual",
    "competitive": "competitive",
    "cooperative": "cooperative",
}


class MissingPrerequisite(RuntimeError):
    def __init__(self, stage: str, missing: str, path: Path):
        super().__init__(f"stage {stage} needs {missing} weights, not found at {path}")
        self.stage, self.missing, self.path = stage, missing, path


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ConvergenceRule:
    """Stop when the ``window``-step moving-average reward changed by less
    than ``tolerance`` (relative) over the last ``horizon`` steps."""

    window: int = 5000
    horizon: int = 20000
    tolerance: float = 0.02

    def converged(self, cumsum: list[float]) -> bool:
        t = len(cumsum) - 1
        w, h = self.window, self.horizon
        if t < w + h:
            return False
        cs = np.asarray(cumsum[t - h - w:t + 1])
        means = (cs[w:] - cs[:-w]) / w  # every window ending in the last h steps
        now = means[-1]
        return bool(np.max(np.abs(means - now)) < self.tolerance * max(abs(now), 1e-12))


@dataclass(frozen=True)
class CurriculumStage:
    name: str
    sv_policy: str
    reward_kind: str
    max_steps: int
    converged_when: ConvergenceRule | None = ConvergenceRule()

    def __post_init__(self):
        if self.name not in STAGES:
            raise ValueError(f"unknown stage {self.name!r}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")

    @property
    def prerequisites(self) -> tuple[str, ...]:
        return PREREQUISITES[self.name]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["converged_when"] = None if self.converged_when is None else asdict(self.converged_when)
        return d


def default_stages(follow_steps: int = 100_000, decision_steps: int = 60_000,
                   rule: ConvergenceRule | None = ConvergenceRule()) -> dict[str, CurriculumStage]:
    out = {}
    for name in STAGES:
        steps = follow_steps if name == "car_following" else decision_steps
        out[name] = CurriculumStage(name, SV_POLICY[name], REWARD_KIND[name], steps, rule)
    return out


@dataclass(frozen=True)
class EnvSettings:
    n_svs: int = 6
    episode_cap: int = 2000  # simulation steps
    window: float = 150.0  # SVs are kept within this distance of the ego
    ramp_spawn_prob: float = 0.3
    leader_gap: tuple[float, float] = (20.0, 30.0)  # initial center distance to the car-following leader, G +- 5
    speed_change_interval: int = 100  # steps between desired-speed redraws of Krauss SVs
    sv_speed_low: float = 15.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool  # terminal (collision)
    truncated: bool  # episode ends without a terminal state
    valid: bool  # transition belongs in the replay buffer


class _TrainingWorld:
    """Ego plus surrounding vehicles kept in a window around the ego."""

    def __init__(self, road: RoadMap, config: SimConfig, settings: EnvSettings, rng: np.random.Generator):
        self.road, self.config, self.settings, self.rng = road, config, settings, rng
        self.world: World | None = None
        self.steps = 0

    def _spawn(self, ego: VehicleState, sv_tag: str, forced: list[tuple[int, float]] = ()):
        road, cfg, st = self.road, self.config, self.settings
        w = World(road, cfg)
        w.add(ego)
        n = 1
        for lane, s in forced:
            v_des = float(self.rng.uniform(road.v_min, road.v_max))
            w.add(VehicleState(id=n, s=s % road.total_length, d=0.0, lane_id=lane, v=v_des,
                               length=cfg.vehicle_length, width=cfg.vehicle_width, policy_tag=sv_tag, v_des=v_des))
            n += 1
        while n <= st.n_svs:
            spot = _free_spot(w, self.rng, road.mainline_ids, ego.s - 0.5 * st.window, ego.s + st.window,
                              cfg.spawn_min_gap)
            if spot is None:
                break
            lane, s = spot
            v_des = float(self.rng.uniform(road.v_min, road.v_max))
            w.add(VehicleState(id=n, s=s, d=0.0, lane_id=lane, v=v_des, length=cfg.vehicle_length,
                               width=cfg.vehicle_width, policy_tag=sv_tag, v_des=v_des))
            n += 1
        self.world = w
        self.steps = 0

    def _physics(self, throttles: dict[int, float]) -> tuple[bool, bool]:
        """Advance one step; returns (ego collided, ego wrapped)."""
        w = self.world
        s_before = w.get(EGO_ID).s
        advance(w, throttles)
        self.steps += 1
        pairs = detect_collisions(w)
        hit = {i for p in pairs for i in p}
        ego = w.get(EGO_ID)
        wrapped = ego.s < s_before - 0.5 * self.road.total_length
        win = self.settings.window
        for vid in sorted(hit - {EGO_ID}):
            relocate_bv(w, vid, self.rng, ego.s - win, ego.s - 0.5 * win)
        for vid in w.ids():
            if vid == EGO_ID or vid in hit:
                continue
            rel = w.ds(ego.s, w.get(vid).s)
            if rel < -win:
                relocate_bv(w, vid, self.rng, ego.s + 0.5 * win, ego.s + win)
            elif rel > win:
                relocate_bv(w, vid, self.rng, ego.s - win, ego.s - 0.5 * win)
        return EGO_ID in hit, wrapped


class FollowEnv(_TrainingWorld):
    """Car-following stage: the ego keeps its lane behind Krauss traffic.

    Steps without a leader inside the observation sector are driven by the
    cruise controller and are not offered for learning.
    """

    obs_dim = LONGITUDINAL_DIM

    def __init__(self, road, config, settings, rng, reward_params: RewardParams):
        super().__init__(road, config, settings, rng)
        self.params = reward_params
        self.svs = KraussFollower()
        self.lobs = None

    def reset(self) -> np.ndarray:
        road, cfg = self.road, self.config
        lane = int(self.rng.choice(road.mainline_ids))
        s = float(self.rng.uniform(0.0, road.total_length))
        ego = VehicleState(id=EGO_ID, s=s, d=0.0, lane_id=lane, v=float(self.rng.uniform(road.v_min, road.v_max)),
                           length=cfg.vehicle_length, width=cfg.vehicle_width, policy_tag="mutual", v_des=road.v_max)
        lead_s = s + float(self.rng.uniform(*self.settings.leader_gap))
        self._spawn(ego, "level0", forced=[(lane, lead_s)])
        self.lobs = encode_longitudinal_obs(self.world, EGO_ID)
        return self.lobs.vector()

    @property
    def needs_action(self) -> bool:
        return bool(self.lobs.lam)

    def _redraw_speeds(self):
        w = self.world
        for vid in w.ids():
            if vid != EGO_ID and self.rng.random() < 0.5:
                v_des = float(self.rng.uniform(self.settings.sv_speed_low, self.road.v_max))
                w.vehicles[vid] = replace(w.get(vid), v_des=v_des)

    def step(self, action) -> StepResult:
        w = self.world
        prev = self.lobs
        if self.steps % self.settings.speed_change_interval == 0 and self.steps:
            self._redraw_speeds()
        sv_ids = [i for i in w.ids() if i != EGO_ID]
        thr = self.svs.throttles(w, sv_ids)
        thr[EGO_ID] = float(np.clip(np.ravel(action)[0], -1, 1)) if prev.lam else cruise_throttle(w, EGO_ID)
        collided, wrapped = self._physics(thr)
        self.lobs = encode_longitudinal_obs(w, EGO_ID)
        r = control_reward(prev, self.lobs, collided, self.params)
        trunc = not collided and (wrapped or self.steps >= self.settings.episode_cap)
        return StepResult(self.lobs.vector(), r, collided, trunc, bool(prev.lam))


class DecisionEnv(_TrainingWorld):
    """Lane-change decision stages; one env step spans one decision interval.

    The reward of a decision combines the individual term evaluated when the
    decision is executed (it compares the chosen lane with the current one)
    and the social term evaluated one interval later, once the surrounding
    vehicles have felt the consequences.
    """

    obs_dim = DECISION_DIM
    needs_action = True

    def __init__(self, road, config, settings, rng, reward_params: RewardParams, policy: str,
                 follower_net: PolicyNet, sv_net: PolicyNet | None):
        super().__init__(road, config, settings, rng)
        self.params = reward_params
        self.policy = policy
        self.follower = LearnedFollower(follower_net)
        self.last_decision = (MAINTAIN, MAINTAIN)  # (requested, executed) for the ego
        if sv_net is None:
            self.svs = Level0Controller(self.follower)
            self.sv_tag = "level0"
        else:
            self.svs = LearnedDecisionController(sv_net, self.follower)
            self.sv_tag = "mutual"

    def _obs(self) -> np.ndarray:
        return encode_decision_obs(self.world, EGO_ID).flat()

    def reset(self) -> np.ndarray:
        road, cfg = self.road, self.config
        if self.rng.random() < self.settings.ramp_spawn_prob:
            ramp = road.merge_lane
            lane = ramp.id
            s = float(self.rng.uniform(ramp.start_s + cfg.vehicle_length, ramp.end_s - 100.0))
            v = float(self.rng.uniform(road.v_min, road.v_max))
        else:
            lane = int(self.rng.choice(road.mainline_ids))
            s = float(self.rng.uniform(0.0, road.total_length))
            v = float(self.rng.uniform(road.v_min, road.v_max))
        ego = VehicleState(id=EGO_ID, s=s, d=0.0, lane_id=lane, v=v, length=cfg.vehicle_length,
                           width=cfg.vehicle_width, policy_tag=self.policy, v_des=road.v_max)
        self._spawn(ego, self.sv_tag)
        return self._obs()

    def step(self, action) -> StepResult:
        w = self.world
        u = float(np.ravel(action)[0])
        requested = decision_from_action(u)
        sv_ids = [i for i in w.ids() if i != EGO_ID]
        reqs = self.svs.decisions(w, sv_ids)
        reqs[EGO_ID] = requested
        executed = {}
        for vid in w.ids():
            out, _ = filter_action(w, vid, ControlInput(0.0, reqs.get(vid, MAINTAIN)))
            executed[vid] = out.lane_offset_request
        self.last_decision = (requested, executed[EGO_ID])
        ego = w.get(EGO_ID)
        target = w.road.neighbor(ego.lane_id, executed[EGO_ID]) if executed[EGO_ID] else ego.lane_id
        areas = drivable_areas(w, EGO_ID, target, self.params)
        r_i = individual_reward(areas, executed[EGO_ID] != MAINTAIN, requested != executed[EGO_ID], self.params)
        for vid in w.ids():
            start_lane_change(w, vid, executed[vid])

        collided = wrapped = False
        for _ in range(self.config.decision_interval):
            thr = self.svs.throttles(w, sv_ids)
            thr.update(self.follower.throttles(w, [EGO_ID]))
            collided, wr = self._physics(thr)
            wrapped = wrapped or wr
            if collided:
                break
        if collided:
            r = -self.params.collision_penalty
        else:
            r = social_reward(self.policy, r_i, w, EGO_ID, self.params)
        trunc = not collided and (wrapped or self.steps >= self.settings.episode_cap)
        return StepResult(self._obs(), r, collided, trunc, True)


def stage_paths(out_dir, stage: str) -> dict[str, Path]:
    out_dir = Path(out_dir)
    return {
        "weights": out_dir / f"{stage}.policy",
        "curve": out_dir / f"{stage}.curve.csv",
        "manifest": out_dir / f"{stage}.manifest.json",
    }


def _check_prerequisites(stage: CurriculumStage, out_dir) -> dict[str, Path]:
    found = {}
    for pre in stage.prerequisites:
        p = stage_paths(out_dir, pre)["weights"]
        if not p.exists():
            raise MissingPrerequisite(stage.name, pre, p)
        found[pre] = p
    return found


def make_env(stage: CurriculumStage, road: RoadMap, sim_config: SimConfig, out_dir,
             settings: EnvSettings = EnvSettings(), reward_params: RewardParams | None = None):
    """Factory ``rng -> env`` for ``stage``; prerequisite weights are loaded now."""
    params = reward_params or RewardParams(s_dot_max=road.v_max)
    pre = _check_prerequisites(stage, out_dir)
    if stage.name == "car_following":
        return lambda rng: FollowEnv(road, sim_config, settings, rng, params)
    follower = load_policy(pre["car_following"], expect_in_dim=LONGITUDINAL_DIM, expect_out_dim=1)
    sv_net = None
    if stage.sv_policy != "level0":
        sv_net = load_policy(pre[stage.sv_policy], expect_in_dim=DECISION_DIM, expect_out_dim=1)
    policy = stage.reward_kind
    return lambda rng: DecisionEnv(road, sim_config, settings, rng, params, policy, follower, sv_net)


@dataclass
class StageResult:
    stage: str
    weights: Path
    curve: Path
    manifest: Path
    steps: int
    converged: bool
    rewards: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _write_curve(path: Path, episodes: list[tuple[int, int, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("episode,steps,mean_reward\n")
        for ep, steps, mean in episodes:
            fh.write(f"{ep},{steps},{mean!r}\n")


def read_curve(path) -> list[tuple[int, int, float]]:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["episode"]), int(r["steps"]), float(r["mean_reward"])) for r in rows]


def train_stage(stage: CurriculumStage, env_factory, td3_config: TD3Config, seed: int, out_dir,
                lineage: dict[str, str] | None = None, manifest_extra: dict | None = None,
                progress=None) -> StageResult:
    """Run TD3 on one stage and write its weights, curve and manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = stage_paths(out_dir, stage.name)
    started = time.monotonic()
    rng = np.random.default_rng(seed)
    env = env_factory(np.random.default_rng([seed, 1]))
    dim = env.obs_dim
    nets = TD3Nets.create(dim, 1, td3_config, rng)
    buf = ReplayBuffer(td3_config.buffer_size, dim, 1)

    rewards: list[float] = []
    cumsum = [0.0]
    episodes: list[tuple[int, int, float]] = []
    ep_sum, ep_n = 0.0, 0
    updates = 0
    converged = False
    obs = env.reset() if stage.max_steps > 0 else None
    t = 0
    while t < stage.max_steps:
        if not env.needs_action:
            a = np.zeros(1)
        elif len(buf) < td3_config.warmup_steps:
            a = rng.uniform(td3_config.action_low, td3_config.action_high, size=1)
        else:
            a = act(nets.actor, obs, td3_config.exploration_sigma, rng,
                    td3_config.action_low, td3_config.action_high)
        res = env.step(a)
        t += 1
        if res.valid:
            buf.push(obs, a, res.obs, res.reward * td3_config.reward_scale, res.done)
            rewards.append(res.reward)
            cumsum.append(cumsum[-1] + res.reward)
            ep_sum += res.reward
            ep_n += 1
            if len(buf) >= max(td3_config.batch_size, td3_config.warmup_steps):
                td3_update(nets, buf, td3_config, updates, rng)
                updates += 1
        obs = res.obs
        if res.done or res.truncated:
            episodes.append((len(episodes), t, ep_sum / ep_n if ep_n else 0.0))
            ep_sum, ep_n = 0.0, 0
            obs = env.reset()
        if t % NAN_CHECK_EVERY == 0:
            if not nets.all_finite():
                raise TrainingDiverged(f"stage {stage.name}: non-finite parameter at step {t}")
            if progress:
                progress(stage.name, t, stage.max_steps)
            if stage.converged_when is not None and stage.converged_when.converged(cumsum):
                converged = True
                break
    if ep_n:
        episodes.append((len(episodes), t, ep_sum / ep_n))
    if not nets.all_finite():
        raise TrainingDiverged(f"stage {stage.name}: non-finite parameter after training")

    save_policy(nets.actor, paths["weights"])
    _write_curve(paths["curve"], episodes)
    manifest = {
        "stage": stage.to_dict(),
        "seed": seed,
        "td3": td3_config.to_dict(),
        "lineage": dict(sorted((lineage or {}).items())),
        "steps": t,
        "updates": updates,
        "converged": converged,
        "weights_sha256": file_hash(paths["weights"]),
        "git": git_describe(),
        "wall_seconds": round(time.monotonic() - started, 1),
    }
    manifest.update(manifest_extra or {})
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return StageResult(stage.name, paths["weights"], paths["curve"], paths["manifest"], t, converged,
                       np.array(rewards))


@dataclass
class CurriculumConfig:
    road: RoadMap
    out_dir: Path
    sim: SimConfig = field(default_factory=SimConfig)
    rewards: RewardParams | None = None
    td3_follow: TD3Config = field(default_factory=TD3Config)
    td3_decision: TD3Config = field(default_factory=TD3Config)
    stages: dict[str, CurriculumStage] = field(default_factory=default_stages)
    env: EnvSettings = field(default_factory=EnvSettings)
    seed: int = 0

    def reward_params(self) -> RewardParams:
        return self.rewards or RewardParams(s_dot_max=self.road.v_max)

    def td3_for(self, stage: str) -> TD3Config:
        return self.td3_follow if stage == "car_following" else self.td3_decision


@dataclass
class CurriculumResult:
    bundle_manifest: Path | None
    trained: list[str]
    skipped: list[str]
    steps_executed: int
    results: dict[str, StageResult] = field(default_factory=dict)

    def bundle(self) -> PolicyBundle:
        if self.bundle_manifest is None:
            raise RuntimeError("curriculum did not produce all five stages")
        return PolicyBundle.from_manifest(self.bundle_manifest)


def stage_order(selected=None) -> list[str]:
    """Stages in dependency order, restricted to ``selected`` if given."""
    chosen = list(STAGES) if not selected else list(selected)
    for name in chosen:
        if name not in STAGES:
            raise ValueError(f"unknown stage {name!r}")
    return [s for s in STAGES if s in chosen]


def stage_seed(seed: int, stage: str) -> int:
    return int(np.random.SeedSequence([seed, STAGES.index(stage)]).generate_state(1)[0])


def input_key(config: CurriculumConfig, stage: str, lineage: dict[str, str]) -> str:
    blob = {
        "trainer": TRAINER_VERSION,
        "stage": config.stages[stage].to_dict(),
        "seed": stage_seed(config.seed, stage),
        "td3": config.td3_for(stage).to_dict(),
        "rewards": config.reward_params().to_dict(),
        "sim": asdict(config.sim),
        "env": config.env.to_dict(),
        "road": [config.road.total_length, config.road.lane_width, config.road.drive_side,
                 [(l.id, l.start_s, l.end_s, l.left_neighbor, l.right_neighbor, l.is_ramp)
                  for l in config.road.lanes]],
        "lineage": dict(sorted(lineage.items())),
    }
    text = json.dumps(blob, sort_keys=True, default=list)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _is_cached(paths: dict[str, Path], key: str) -> bool:
    if not all(p.exists() for p in paths.values()):
        return False
    try:
        man = json.loads(paths["manifest"].read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return False
    return man.get("input_key") == key and man.get("weights_sha256") == file_hash(paths["weights"])


def write_bundle_manifest(out_dir) -> Path | None:
    out_dir = Path(out_dir)
    lines = []
    for stage in STAGES:
        p = stage_paths(out_dir, stage)["weights"]
        if not p.exists():
            return None
        lines.append(f"{stage} {p.name} {file_hash(p)}")
    path = out_dir / "bundle.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def plan(config: CurriculumConfig, selected=None) -> list[tuple[str, str]]:
    """``(stage, action)`` pairs without training anything.

    The action is ``cached``, ``train`` or ``train (after upstream)`` when
    an upstream stage in the same plan must be retrained first.
    """
    out = []
    retrain: set[str] = set()
    for name in stage_order(selected):
        stage = config.stages[name]
        if any(p in retrain for p in stage.prerequisites):
            out.append((name, "train (after upstream)"))
            retrain.add(name)
            continue
        try:
            pre = _check_prerequisites(stage, config.out_dir)
        except MissingPrerequisite as exc:
            if exc.missing in stage_order(selected):
                out.append((name, "train (after upstream)"))
                retrain.add(name)
                continue
            raise
        lineage = {k: file_hash(v) for k, v in pre.items()}
        if _is_cached(stage_paths(config.out_dir, name), input_key(config, name, lineage)):
            out.append((name, "cached"))
        else:
            out.append((name, "train"))
            retrain.add(name)
    return out


def run_curriculum(config: CurriculumConfig, selected=None, progress=None) -> CurriculumResult:
    """Train the selected stages (default: all) in dependency order.

    A stage whose manifest carries the current input key and whose weights
    match the recorded hash is skipped.  Prerequisites outside the selection
    must already exist on disk.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trained, skipped, steps = [], [], 0
    results = {}
    for name in stage_order(selected):
        stage = config.stages[name]
        pre = _check_prerequisites(stage, out_dir)
        lineage = {k: file_hash(v) for k, v in pre.items()}
        key = input_key(config, name, lineage)
        paths = stage_paths(out_dir, name)
        if _is_cached(paths, key):
            skipped.append(name)
            continue
        factory = make_env(stage, config.road, config.sim, out_dir, config.env, config.reward_params())
        extra = {
            "input_key": key,
            "rewards": config.reward_params().to_dict(),
            "sim": asdict(config.sim),
            "env": config.env.to_dict(),
        }
        res = train_stage(stage, factory, config.td3_for(name), stage_seed(config.seed, name), out_dir,
                          lineage=lineage, manifest_extra=extra, progress=progress)
        results[name] = res
        trained.append(name)
        steps += res.steps
    return CurriculumResult(write_bundle_manifest(out_dir), trained, skipped, steps, results)


# --- diagnostics used by the acceptance checks -----------------------------

def curve_step_rewards(curve) -> np.ndarray:
    """Expand a per-episode curve into a per-step reward trace."""
    rows = read_curve(curve) if not isinstance(curve, list) else curve
    out, prev = [], 0
    for _, steps, mean in rows:
        out.append(np.full(steps - prev, mean))
        prev = steps
    return np.concatenate(out) if out else np.zeros(0)


def plateau_reached(step_rewards: np.ndarray, window: int = 5000, tolerance: float = 0.10) -> tuple[bool, float, float]:
    """Final window mean within ``tolerance`` of the best window mean."""
    r = np.asarray(step_rewards, dtype=float)
    if len(r) < window:
        return False, math.nan, math.nan
    cs = np.concatenate([[0.0], np.cumsum(r)])
    means = (cs[window:] - cs[:-window]) / window
    best, final = float(means.max()), float(means[-1])
    return abs(final - best) <= tolerance * abs(best), final, best


def follower_gaps(actor: PolicyNet, road: RoadMap, sim_config: SimConfig, settings: EnvSettings = EnvSettings(),
                  seed: int = 0, n_steps: int = 20_000, burn_in: int = 100) -> np.ndarray:
    """Center distances to the leader while the trained actor drives."""
    env = FollowEnv(road, sim_config, settings, np.random.default_rng(seed), RewardParams(s_dot_max=road.v_max))
    env.reset()
    gaps, since_reset = [], 0
    for _ in range(n_steps):
        a = actor(env.lobs.vector()) if env.lobs.lam else np.zeros(1)
        res = env.step(a)
        since_reset += 1
        if env.lobs.lam and since_reset > burn_in:
            gaps.append(env.lobs.delta_s * O_SMAX)
        if res.done or res.truncated:
            env.reset()
            since_reset = 0
    return np.array(gaps)


def voluntary_lane_change_rate(actor: PolicyNet, follower_net: PolicyNet, sv_net: PolicyNet | None, road: RoadMap,
                               sim_config: SimConfig, settings: EnvSettings = EnvSettings(), seed: int = 0,
                               n_decisions: int = 2000) -> float:
    """Share of greedy ego decisions that execute a lane change off the ramp."""
    env = DecisionEnv(road, sim_config, settings, np.random.default_rng(seed), RewardParams(s_dot_max=road.v_max),
                      "mutual", follower_net, sv_net)
    obs = env.reset()
    changes = 0
    for _ in range(n_decisions):
        on_ramp = env.world.get(EGO_ID).lane_id == road.merge_lane_id
        res = env.step(actor(obs))
        if not on_ramp and env.last_decision[1] != MAINTAIN:
            changes += 1
        obs = env.reset() if res.done or res.truncated else res.obs
    return changes / n_decisions
