"""Run configuration: a YAML tree with every section optional.

Unknown keys are errors at every level.  Relative paths are resolved
against the directory that holds the config file.  Example::

    seed: 7
    output_dir: runs/desk
    map: onramp.map            # omit for the shipped map
    sim: {n_bvs: 20, policy_mix: [0.4, 0.3, 0.3]}
    curriculum:
      follow_steps: 100000
      decision_steps: 60000
      td3_follow: {hidden: [64, 64], batch_size: 128}
    scenario: {bvs: bundle, sut: stackelberg, n_steps: 3000}
    evaluation: {weights: {i_s: 0.4, i_e: 0.3, i_i: 0.3}}
    fidelity: {tracks: data/tracks.csv}
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .evaluation import COMPLEXITY_K, ScoreWeights
from .rewards import RewardParams
from .roadmap import RoadMap, default_map, load_map
from .sim import SimConfig
from .sut import SUT_MODELS, SutParams
from .td3 import TD3Config
from .training import ConvergenceRule, CurriculumConfig, EnvSettings, default_stages, stage_order

BV_SOURCES = ("bundle",) + tuple(SUT_MODELS)


class ConfigError(ValueError):
    pass


def _check_keys(d, allowed, where: str) -> dict:
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return d


def _dataclass_from(cls, d, where: str, **fixed):
    names = [f.name for f in fields(cls)]
    d = dict(_check_keys(d, names, where))
    for k, v in d.items():
        if isinstance(v, list):
            d[k] = tuple(v)
    try:
        return cls(**{**d, **fixed})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _plain(obj):
    if isinstance(obj, tuple):
        return [_plain(x) for x in obj]
    if isinstance(obj, list):
        return [_plain(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, Path):
        return str(obj)
    return obj


@dataclass
class ScenarioConfig:
    bvs: str = "bundle"
    bundle: Path | None = None
    sut: str = "stackelberg"
    sut_params: SutParams = field(default_factory=SutParams)
    bv_params: SutParams = field(default_factory=SutParams)
    n_steps: int = 3000
    sut_debug: bool = False


@dataclass
class CurriculumSection:
    stages: tuple[str, ...] = ()
    follow_steps: int = 100_000
    decision_steps: int = 60_000
    convergence: ConvergenceRule | None = field(default_factory=ConvergenceRule)
    env: EnvSettings = field(default_factory=EnvSettings)
    td3_follow: TD3Config = field(default_factory=TD3Config)
    td3_decision: TD3Config = field(default_factory=TD3Config)
    artifacts_dir: Path | None = None


@dataclass
class FidelitySection:
    tracks: Path | None = None
    bv_only: bool = True
    bins: int = 50


@dataclass
class RunConfig:
    base_dir: Path
    seed: int = 0
    output_dir: Path = Path("out")
    map_path: Path | None = None
    sim: SimConfig = field(default_factory=SimConfig)
    rewards: RewardParams | None = None
    curriculum: CurriculumSection = field(default_factory=CurriculumSection)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    complexity_k: tuple[float, float, float] = COMPLEXITY_K
    fidelity: FidelitySection = field(default_factory=FidelitySection)

    def road(self) -> RoadMap:
        return load_map(self.map_path) if self.map_path else default_map()

    @property
    def artifacts_dir(self) -> Path:
        return self.curriculum.artifacts_dir or (self.output_dir / "policies")

    @property
    def bundle_manifest(self) -> Path:
        return self.scenario.bundle or (self.artifacts_dir / "bundle.txt")

    def reward_params(self, road: RoadMap) -> RewardParams:
        return self.rewards or RewardParams(s_dot_max=road.v_max)

    def curriculum_config(self) -> CurriculumConfig:
        road = self.road()
        c = self.curriculum
        return CurriculumConfig(
            road=road, out_dir=self.artifacts_dir, sim=self.sim, rewards=self.reward_params(road),
            td3_follow=c.td3_follow, td3_decision=c.td3_decision,
            stages=default_stages(c.follow_steps, c.decision_steps, c.convergence), env=c.env, seed=self.seed,
        )

    def to_dict(self) -> dict:
        """Resolved configuration with absolute paths; loads back unchanged."""
        c, s, f = self.curriculum, self.scenario, self.fidelity
        road = self.road()
        out = {
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "sim": asdict(self.sim),
            "rewards": self.reward_params(road).to_dict(),
            "curriculum": {
                "stages": list(c.stages),
                "follow_steps": c.follow_steps,
                "decision_steps": c.decision_steps,
                "convergence": None if c.convergence is None else asdict(c.convergence),
                "env": c.env.to_dict(),
                "td3_follow": c.td3_follow.to_dict(),
                "td3_decision": c.td3_decision.to_dict(),
                "artifacts_dir": str(self.artifacts_dir),
            },
            "scenario": {
                "bvs": s.bvs,
                "bundle": str(self.bundle_manifest),
                "sut": s.sut,
                "sut_params": asdict(s.sut_params),
                "bv_params": asdict(s.bv_params),
                "n_steps": s.n_steps,
                "sut_debug": s.sut_debug,
            },
            "evaluation": {"weights": asdict(self.weights), "complexity_k": list(self.complexity_k)},
            "fidelity": {"tracks": None if f.tracks is None else str(f.tracks), "bv_only": f.bv_only,
                         "bins": f.bins},
        }
        if self.map_path:
            out["map"] = str(self.map_path)
        return _plain(out)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


TOP_KEYS = ("seed", "output_dir", "map", "sim", "rewards", "curriculum", "scenario", "evaluation", "fidelity")


def _path(base: Path, value, where: str, must_exist: bool = False) -> Path | None:
    if value is None:
        return None
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{where} must be a path string")
    p = Path(value)
    p = p if p.is_absolute() else (base / p)
    if must_exist and not p.exists():
        raise ConfigError(f"{where}: path {p} does not exist")
    return p


def config_from_dict(d: dict | None, base_dir) -> RunConfig:
    base = Path(base_dir).resolve()
    d = _check_keys(d, TOP_KEYS, "config")
    cfg = RunConfig(base_dir=base)
    try:
        cfg.seed = int(d.get("seed", 0))
    except (TypeError, ValueError):
        raise ConfigError("seed must be an integer") from None
    cfg.output_dir = _path(base, d.get("output_dir", "out"), "output_dir")
    cfg.map_path = _path(base, d.get("map"), "map", must_exist=True)
    cfg.sim = _dataclass_from(SimConfig, d.get("sim"), "sim", seed=cfg.seed)
    if d.get("rewards") is not None:
        cfg.rewards = _dataclass_from(RewardParams, d.get("rewards"), "rewards")

    cur = _check_keys(d.get("curriculum"), [f.name for f in fields(CurriculumSection)], "curriculum")
    sec = CurriculumSection()
    if "stages" in cur:
        try:
            sec.stages = tuple(stage_order(cur["stages"] or None)) if cur["stages"] else ()
        except ValueError as exc:
            raise ConfigError(f"curriculum.stages: {exc}") from None
    for k in ("follow_steps", "decision_steps"):
        if k in cur:
            setattr(sec, k, int(cur[k]))
    if "convergence" in cur:
        sec.convergence = None if cur["convergence"] is None else _dataclass_from(
            ConvergenceRule, cur["convergence"], "curriculum.convergence")
    if "env" in cur:
        sec.env = _dataclass_from(EnvSettings, cur["env"], "curriculum.env")
    for k in ("td3_follow", "td3_decision"):
        if k in cur:
            setattr(sec, k, _dataclass_from(TD3Config, cur[k], f"curriculum.{k}"))
    sec.artifacts_dir = _path(base, cur.get("artifacts_dir"), "curriculum.artifacts_dir")
    cfg.curriculum = sec

    sc = _check_keys(d.get("scenario"), [f.name for f in fields(ScenarioConfig)], "scenario")
    scen = ScenarioConfig()
    if "bvs" in sc:
        if sc["bvs"] not in BV_SOURCES:
            raise ConfigError(f"scenario.bvs must be one of {', '.join(BV_SOURCES)}")
        scen.bvs = sc["bvs"]
    if "sut" in sc:
        if sc["sut"] not in SUT_MODELS:
            raise ConfigError(f"scenario.sut must be one of {', '.join(SUT_MODELS)}")
        scen.sut = sc["sut"]
    scen.bundle = _path(base, sc.get("bundle"), "scenario.bundle")
    for k in ("sut_params", "bv_params"):
        if k in sc:
            setattr(scen, k, _dataclass_from(SutParams, sc[k], f"scenario.{k}"))
    if "n_steps" in sc:
        scen.n_steps = int(sc["n_steps"])
        if scen.n_steps < 0:
            raise ConfigError("scenario.n_steps must be >= 0")
    scen.sut_debug = bool(sc.get("sut_debug", False))
    cfg.scenario = scen

    ev = _check_keys(d.get("evaluation"), ("weights", "complexity_k"), "evaluation")
    if "weights" in ev:
        cfg.weights = _dataclass_from(ScoreWeights, ev["weights"], "evaluation.weights")
    if "complexity_k" in ev:
        k = ev["complexity_k"]
        if not isinstance(k, list) or len(k) != 3 or min(float(x) for x in k) <= 0:
            raise ConfigError("evaluation.complexity_k must be three positive numbers")
        cfg.complexity_k = tuple(float(x) for x in k)

    fi = _check_keys(d.get("fidelity"), [f.name for f in fields(FidelitySection)], "fidelity")
    cfg.fidelity = FidelitySection(
        tracks=_path(base, fi.get("tracks"), "fidelity.tracks"),
        bv_only=bool(fi.get("bv_only", True)),
        bins=int(fi.get("bins", 50)),
    )
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return config_from_dict(data, path.parent)


def parse_weights(text: str, base: ScoreWeights = ScoreWeights()) -> ScoreWeights:
    """``is=0.4,ie=0.3,ii=0.3`` style overrides."""
    names = {"is": "i_s", "ie": "i_e", "ii": "i_i", "cmax": "C_max", "h": "H", "dvmax": "dv_max",
             "damax": "da_max"}
    vals = asdict(base)
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise ConfigError(f"bad weight override {part!r}, expected key=value")
        k, v = (x.strip() for x in part.split("=", 1))
        key = names.get(k.lower(), k)
        if key not in vals:
            raise ConfigError(f"unknown weight {k!r}")
        try:
            vals[key] = int(v) if key in ("C_max", "H") else float(v)
        except ValueError:
            raise ConfigError(f"weight {k} needs a number, got {v!r}") from None
    try:
        return ScoreWeights(**vals)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
