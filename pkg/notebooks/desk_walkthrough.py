"""Walkthrough: from a trained desk bundle to scored scenarios and a fidelity check.

Run from the repository root after ``levelk-onramp train --config configs/desk.yaml``::

    python3 notebooks/desk_walkthrough.py

Each section prints what it computed; nothing is written to disk.
"""

import numpy as np

from levelk_onramp.config import load_config
from levelk_onramp.drivers import PolicyBundle
from levelk_onramp.evaluation import comparison_table, evaluate
from levelk_onramp.fidelity import GridSpec, fidelity_report, ingest_highd, kde
from levelk_onramp.scenario import ScenarioSpec, run_scenario
from levelk_onramp.sim import SimConfig
from levelk_onramp.synthetic import MISMATCHED, TrafficProfile, generate
from levelk_onramp.training import follower_gaps, voluntary_lane_change_rate

cfg = load_config("configs/desk.yaml")
road = cfg.road()
bundle = PolicyBundle.from_manifest(cfg.bundle_manifest)

# 1. The car-following controller keeps a gap near the 25 m target.
gaps = follower_gaps(bundle.nets["car_following"], road, cfg.sim, cfg.curriculum.env, n_steps=5000)
mode = kde(gaps, GridSpec((0.0,), (150.0,), (300,))).mode()[0]
print(f"car-following gap: mode {mode:.1f} m, median {np.median(gaps):.1f} m over {len(gaps)} samples")

# 2. Social policies differ in how often they change lanes.
for stage in ("competitive", "level2_mutual", "cooperative"):
    rate = voluntary_lane_change_rate(bundle.nets[stage], bundle.nets["car_following"], bundle.nets["level2_mutual"],
                                      road, cfg.sim, cfg.curriculum.env, seed=1, n_decisions=500)
    print(f"{stage:>14}: {rate:.3f} lane changes per decision")

# 3. One evolving scenario per SUT, scored side by side.
reports = []
for sut in ("stackelberg", "nilsson", "mobil"):
    log = run_scenario(road, SimConfig(seed=0, n_bvs=20), ScenarioSpec(bundle, sut), 1000)
    reports.append(evaluate(log, road=road, label=f"bundle/{sut}"))
print(comparison_table(reports), end="")

# 4. The fidelity pipeline separates matched from mismatched traffic.
ref = ingest_highd(generate(TrafficProfile(), 600, seed=11, road=road).to_tracks_csv(road.total_length))
for name, profile in (("matched", TrafficProfile()), ("mismatched", MISMATCHED)):
    rep = fidelity_report(generate(profile, 600, seed=12, road=road).to_log(), ref, road=road)
    print(name, " ".join(f"{r.metric}={r.similarity:.1f}%" for r in rep.rows))
