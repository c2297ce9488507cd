"""Command-line entry point: ``levelk-onramp {train,simulate,evaluate,fidelity}``.

Exit codes: 0 success, 1 internal error, 2 user or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, config_from_dict, load_config, parse_weights
from .drivers import BundleError, PolicyBundle
from .evaluation import LogSchemaError, comparison_table, detect_events, evaluate
from .fidelity import IngestError, fidelity_report, read_highd
from .nn import PolicyFileError
from .roadmap import MapError
from .scenario import SUT_ID, LogFormatError, ScenarioSpec, TrajectoryLog, run_scenario
from .sut import SUT_MODELS
from .training import MissingPrerequisite, plan, run_curriculum

EXIT_OK, EXIT_INTERNAL, EXIT_USER = 0, 1, 2
USER_ERRORS = (ConfigError, MissingPrerequisite, BundleError, PolicyFileError, IngestError, LogFormatError,
               LogSchemaError, MapError, FileNotFoundError)


class UserError(Exception):
    pass


def _config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = config_from_dict({}, Path.cwd())
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.sim = replace(cfg.sim, seed=args.seed)
    return cfg


# --- train -------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config(args)
    selected = args.stage or list(cfg.curriculum.stages) or None
    cc = cfg.curriculum_config()
    if args.dry_run:
        for name, action in plan(cc, selected):
            print(f"{name}: {action}")
        return EXIT_OK

    def progress(stage, t, total):
        if t % 10000 == 0:
            print(f"[{stage}] {t}/{total} steps", flush=True)

    res = run_curriculum(cc, selected, progress=progress)
    for name in res.skipped:
        print(f"{name}: cached")
    for name in res.trained:
        r = res.results[name]
        print(f"{name}: trained {r.steps} steps{' (converged)' if r.converged else ''} -> {r.weights}")
    if res.bundle_manifest:
        print(f"bundle: {res.bundle_manifest}")
    return EXIT_OK


# --- simulate ----------------------------------------------------------------

def _scenario_spec(cfg: RunConfig) -> ScenarioSpec:
    sc = cfg.scenario
    if sc.bvs == "bundle":
        path = cfg.bundle_manifest
        if not path.exists():
            raise UserError(f"policy bundle manifest {path} not found; run `train` first or set scenario.bundle")
        bvs = PolicyBundle.from_manifest(path)
    else:
        bvs = sc.bvs
    return ScenarioSpec(bvs, sc.sut, sc.sut_params, sc.bv_params)


def _simulate_one(cfg: RunConfig, seed: int, out_dir: Path) -> Path:
    run_cfg = RunConfig(**{**cfg.__dict__})
    run_cfg.seed = seed
    run_cfg.sim = replace(cfg.sim, seed=seed)
    spec = _scenario_spec(run_cfg)
    log = run_scenario(run_cfg.road(), run_cfg.sim, spec, cfg.scenario.n_steps, sut_debug=cfg.scenario.sut_debug)
    stem = f"{cfg.scenario.bvs}_{cfg.scenario.sut}_seed{seed}"
    path = out_dir / f"{stem}.log.csv"
    log.write_csv(path)
    (out_dir / f"{stem}.config.yaml").write_text(run_cfg.dump(), encoding="utf-8")
    return path


def _simulate_worker(payload):
    cfg_dict, base, seed, out_dir = payload
    cfg = config_from_dict(cfg_dict, base)
    return str(_simulate_one(cfg, seed, Path(out_dir)))


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if args.bvs:
        cfg.scenario.bvs = args.bvs
    if args.sut:
        cfg.scenario.sut = args.sut
    if args.n_steps is not None:
        if args.n_steps < 0:
            raise UserError("--n-steps must be >= 0")
        cfg.scenario.n_steps = args.n_steps
    if args.runs < 1:
        raise UserError("--runs must be >= 1")
    out_dir = Path(args.out) if args.out else cfg.output_dir / "logs"
    out_dir.mkdir(parents=True, exist_ok=True)
    _scenario_spec(cfg)  # fail fast on bundle problems
    seeds = [cfg.seed + k for k in range(args.runs)]
    if args.parallel and args.runs > 1:
        payload = [(cfg.to_dict(), str(cfg.base_dir), s, str(out_dir)) for s in seeds]
        with ProcessPoolExecutor() as pool:
            paths = list(pool.map(_simulate_worker, payload))
    else:
        paths = [str(_simulate_one(cfg, s, out_dir)) for s in seeds]
    for p in paths:
        print(p)
    return EXIT_OK


# --- evaluate ----------------------------------------------------------------

def _histogram_csv(values: np.ndarray, edges: np.ndarray, name: str) -> str:
    counts, _ = np.histogram(values, bins=edges)
    lines = [f"{name}_lo,{name}_hi,count"]
    lines += [f"{lo:.6g},{hi:.6g},{c}" for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    weights = parse_weights(args.weights, cfg.weights) if args.weights else cfg.weights
    road = cfg.road()
    out_dir = Path(args.out) if args.out else cfg.output_dir / "reports"
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for log_path in args.logs:
        p = Path(log_path)
        if not p.exists():
            raise UserError(f"log file {p} not found")
        log = TrajectoryLog.read_csv(p)
        stem = p.name[:-len(".log.csv")] if p.name.endswith(".log.csv") else p.stem
        rep = evaluate(log, SUT_ID, weights, road, label=stem)
        reports.append(rep)
        (out_dir / f"{stem}.report.txt").write_text(rep.to_kv(), encoding="utf-8")
        (out_dir / f"{stem}.report.json").write_text(rep.to_json(), encoding="utf-8")
        ev = detect_events(log, SUT_ID, road)
        ttc = ev.ttc[np.isfinite(ev.ttc)]
        (out_dir / f"{stem}.ttc_hist.csv").write_text(
            _histogram_csv(ttc, np.arange(0.0, 20.5, 0.5), "ttc_s"), encoding="utf-8")
        speed = log.vehicle(SUT_ID)["v_mps"]
        (out_dir / f"{stem}.speed_hist.csv").write_text(
            _histogram_csv(speed, np.arange(0.0, road.v_max + 1.0, 1.0), "speed_mps"), encoding="utf-8")
    table = comparison_table(reports)
    if len(reports) > 1:
        (out_dir / "comparison.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


# --- fidelity ----------------------------------------------------------------

def cmd_fidelity(args) -> int:
    cfg = _config(args)
    sim_path = Path(args.sim_log)
    if not sim_path.exists():
        raise UserError(f"simulation log {sim_path} not found")
    tracks_path = Path(args.tracks) if args.tracks else cfg.fidelity.tracks
    if tracks_path is None:
        raise UserError("no tracks file given (argument or fidelity.tracks)")
    if not tracks_path.exists():
        raise UserError(f"tracks file {tracks_path} not found")
    sim = TrajectoryLog.read_csv(sim_path)
    if tracks_path.name.endswith(".log.csv"):
        ref = TrajectoryLog.read_csv(tracks_path)
    else:
        ref = read_highd(tracks_path)
    bv_only = cfg.fidelity.bv_only and not args.all_vehicles
    rep = fidelity_report(sim, ref, road=cfg.road(), bv_only=bv_only, bins=cfg.fidelity.bins)
    out_dir = Path(args.out) if args.out else cfg.output_dir / "fidelity"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "fidelity_report.txt").write_text(rep.to_text(), encoding="utf-8")
    (out_dir / "fidelity_report.json").write_text(json.dumps(
        [r.__dict__ for r in rep.rows], indent=2, allow_nan=True) + "\n", encoding="utf-8")
    for metric in rep.densities:
        (out_dir / f"density_{metric}.csv").write_text(rep.density_csv(metric), encoding="utf-8")
    print(rep.to_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="levelk-onramp",
                                 description="Level-k on-ramp scenarios: train, simulate, evaluate, fidelity.")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the level-k curriculum")
    t.add_argument("--config")
    t.add_argument("--stage", action="append", help="stage to train (repeatable); default all")
    t.add_argument("--dry-run", action="store_true", help="print the stage plan only")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("simulate", help="run evolving or baseline scenarios")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--runs", type=int, default=1, help="number of consecutive seeds")
    s.add_argument("--parallel", action="store_true")
    s.add_argument("--bvs", choices=("bundle",) + SUT_MODELS)
    s.add_argument("--sut", choices=SUT_MODELS)
    s.add_argument("--n-steps", type=int)
    s.add_argument("--out", help="directory for logs")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("evaluate", help="score one or more logs")
    e.add_argument("logs", nargs="+")
    e.add_argument("--config")
    e.add_argument("--weights", help="overrides such as is=0.4,ie=0.3,ii=0.3")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    f = sub.add_parser("fidelity", help="compare a log with naturalistic tracks")
    f.add_argument("sim_log")
    f.add_argument("tracks", nargs="?")
    f.add_argument("--config")
    f.add_argument("--out")
    f.add_argument("--all-vehicles", action="store_true", help="include the SUT in the simulation samples")
    f.set_defaults(func=cmd_fidelity)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UserError, *USER_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
