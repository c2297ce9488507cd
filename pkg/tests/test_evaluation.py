import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import cruising, synthetic_log
from levelk_onramp.evaluation import (
    LogSchemaError, ScoreWeights, comparison_table, complexity_formula, detect_events, efficiency_formula,
    evaluate, interaction_formula, lane_change_intervals, safety_formula, score_complexity, score_intelligence,
    score_safety,
)
from levelk_onramp.scenario import TrajectoryLog

N = 200


def convoy(n=N, gap=60.0, v=30.0):
    return synthetic_log({0: dict(s=cruising(100.0, v, n), v=v, policy="sut"),
                          1: dict(s=cruising(100.0 + gap, v, n), v=v)}, n)


# --- pure formulas ------------------------------------------------------------

def test_safety_examples():
    assert safety_formula(0, 0, 5) == 1.0
    assert safety_formula(5, 1e9, 5) == pytest.approx(0.0, abs=1e-12)
    assert safety_formula(2, 38, 5) == pytest.approx(0.7 * 0.6 + 0.3 * math.exp(-38), abs=1e-9)
    assert safety_formula(2, 38, 5) == pytest.approx(0.42, abs=1e-9)


def test_efficiency_examples():
    assert efficiency_formula(0.0, 25.0, 0.0, 10, 33.33) == 0.5
    expect = 0.5 * (math.sqrt(4 * 25) / (10 * 33.33) + math.exp(-1))
    assert efficiency_formula(4.0, 25.0, 3.0, 10, 33.33) == pytest.approx(expect, abs=1e-9)
    assert expect == pytest.approx(0.199, abs=5e-4)
    assert efficiency_formula(4.0, 25.0, 6.0, 10, 33.33) < efficiency_formula(4.0, 25.0, 3.0, 10, 33.33)


def test_interaction_examples():
    assert interaction_formula(5.0, 3.0, 1e12, 5.0, 3.0) == pytest.approx(0.0, abs=1e-9)
    expect = (2 - 0.2 - 0.2 + math.exp(-1)) / 3
    assert interaction_formula(1.0, 0.6, 1.0, 5.0, 3.0) == pytest.approx(expect, abs=1e-9)
    assert expect == pytest.approx(0.656, abs=5e-4)
    assert interaction_formula(0.0, 0.0, 0.0, 5.0, 3.0) == 1.0


def test_complexity_examples():
    assert complexity_formula(0, 0, 0) == 0.0
    expect = 0.4 * (1 - math.exp(-1.52)) + 0.3 * (2 - math.exp(-1.625) - math.exp(-1543 / 1400))
    assert complexity_formula(38, 13, 1543) == pytest.approx(expect, abs=1e-9)
    assert complexity_formula(1e9, 1e9, 1e12) == pytest.approx(1.0, abs=1e-12)


def test_intelligence_additivity():
    w = ScoreWeights()
    assert score_intelligence(1.0, 1.0, 1.0, w) == pytest.approx(1.0, abs=1e-12)
    # weighted contributions divided back into sub-scores
    I = score_intelligence(0.336 / w.i_s, 0.040 / w.i_e, 0.091 / w.i_i, w)
    assert I == pytest.approx(0.467, abs=1e-12)


def test_weights_validation():
    with pytest.raises(ValueError):
        ScoreWeights(i_s=0.5, i_e=0.5, i_i=0.5)
    with pytest.raises(ValueError):
        ScoreWeights(C_max=0)
    with pytest.raises(ValueError):
        ScoreWeights(H=0)


@given(C=st.integers(0, 10), E=st.integers(0, 60))
def test_safety_monotone(C, E):
    assert safety_formula(C + 1, E, 5) <= safety_formula(C, E, 5)
    assert safety_formula(C, E + 1, 5) <= safety_formula(C, E, 5)
    assert 0.0 <= safety_formula(C, E, 5) <= 1.0


@given(E=st.integers(0, 200), LC=st.integers(0, 100), AD=st.integers(0, 5000))
def test_complexity_monotone_and_bounded(E, LC, AD):
    c = complexity_formula(E, LC, AD)
    assert 0.0 <= c <= 1.0
    assert complexity_formula(E + 1, LC, AD) >= c
    assert complexity_formula(E, LC + 1, AD) >= c
    assert complexity_formula(E, LC, AD + 1) >= c


@given(vf=st.floats(0, 20), af=st.floats(0, 20), L=st.floats(0, 50))
def test_interaction_bounded(vf, af, L):
    assert 0.0 <= interaction_formula(vf, af, L, 5.0, 3.0) <= 1.0


# --- event detection ------------------------------------------------------------

def test_quiet_convoy_has_no_events(road):
    ev = detect_events(convoy(), 0, road)
    assert (ev.C, ev.E, ev.AD, ev.LC) == (0, 0, 0, 0)
    assert score_safety(ev) == 1.0


def test_short_ttc_dip_is_one_exposure(road):
    n = N
    v0 = np.full(n, 30.0)
    v0[50:53] = 40.0  # 0.3 s of closing at 10 m/s: TTC = 18 / 10 = 1.8 s
    s0 = 100.0 + np.concatenate([[0.0], np.cumsum(v0[:-1] * 0.1)])
    s0[53:] -= (s0[53] - (100.0 + 30.0 * 0.1 * 53))  # back on schedule after the dip
    lead = cruising(100.0 + 22.5, 30.0, n)
    log = synthetic_log({0: dict(s=s0, v=v0, policy="sut"), 1: dict(s=lead, v=30.0)}, n)
    ev = detect_events(log, 0, road)
    assert ev.E == 1
    assert np.nanmin(ev.ttc) < 2.0


def test_opening_gap_never_exposes(road):
    n = N
    log = synthetic_log({0: dict(s=cruising(100.0, 25.0, n), v=25.0, policy="sut"),
                         1: dict(s=cruising(106.0, 30.0, n), v=30.0)}, n)
    ev = detect_events(log, 0, road)
    assert ev.E == 0
    assert np.all(np.isnan(ev.ttc))


def test_hard_brake_is_exposure_and_episodes_merge(road):
    a = np.zeros(N)
    a[20:22] = -7.0
    a[25:27] = -7.0  # within 1 s of quiet: same episode
    a[100:102] = -7.0  # new episode
    log = synthetic_log({0: dict(s=cruising(100.0, 30.0, N), v=30.0, a=a, policy="sut")}, N)
    assert detect_events(log, 0, road).E == 2


def test_quiet_suffix_does_not_change_counts(road):
    a = np.zeros(N)
    a[10:20] = 2.0
    base = {0: dict(s=cruising(100.0, 30.0, N), v=30.0, policy="sut"), 1: dict(s=cruising(150.0, 30.0, N), v=30.0, a=a)}
    longer = {0: dict(s=cruising(100.0, 30.0, 2 * N), v=30.0, policy="sut"),
              1: dict(s=cruising(150.0, 30.0, 2 * N), v=30.0, a=np.concatenate([a, np.zeros(N)]))}
    e1 = detect_events(synthetic_log(base, N), 0, road)
    e2 = detect_events(synthetic_log(longer, 2 * N), 0, road)
    assert (e1.C, e1.E, e1.LC, e1.AD) == (e2.C, e2.E, e2.LC, e2.AD) == (0, 0, 0, 1)


def test_ad_needs_half_second(road):
    a = np.zeros(N)
    a[10:14] = 1.5  # 0.4 s: too short
    a[50:55] = -1.5  # 0.5 s: counts
    log = synthetic_log({0: dict(s=cruising(100.0, 30.0, N), v=30.0, policy="sut"),
                         1: dict(s=cruising(300.0, 30.0, N), v=30.0, a=a)}, N)
    ev = detect_events(log, 0, road)
    assert ev.AD == 1
    assert ev.ad_by_vehicle[1] == 1


def test_collisions_counted_for_sut_only(road):
    col = np.zeros(N, dtype=int)
    col[[30, 90]] = 1
    log = synthetic_log({0: dict(s=cruising(100.0, 30.0, N), v=30.0, collision=col, policy="sut"),
                         1: dict(s=cruising(300.0, 30.0, N), v=30.0, collision=col)}, N)
    ev = detect_events(log, 0, road)
    assert ev.C == 2
    assert score_safety(ev, ScoreWeights()) == pytest.approx(safety_formula(2, ev.E, 5))


def test_lane_change_interval_from_decision_to_crossing(road):
    lane = np.full(N, 2)
    lane[40:] = 3
    exe = np.zeros(N, dtype=int)
    exe[16] = 1  # decision taken at step 15, logged at 16
    log = synthetic_log({0: dict(s=cruising(100.0, 30.0, N), v=30.0, lane=lane, exe=exe, policy="sut")}, N)
    (lc,) = lane_change_intervals(log, road.total_length)
    assert (lc.start, lc.end, lc.from_lane, lc.to_lane) == (15, 40, 2, 3)
    ev = detect_events(log, 0, road)
    assert len(ev.sut_lane_changes()) == 1 and ev.LC == 0


def test_teleport_drops_pending_change(road):
    s = cruising(100.0, 30.0, N)
    s[30:] += 500.0
    exe = np.zeros(N, dtype=int)
    exe[20] = 1
    lane = np.full(N, 2)
    lane[30:] = 3
    log = synthetic_log({0: dict(s=s, v=30.0, lane=lane, exe=exe, policy="sut")}, N)
    assert lane_change_intervals(log, road.total_length) == []


def test_malformed_logs_rejected(road):
    with pytest.raises(LogSchemaError):
        detect_events(TrajectoryLog(), 0, road)
    with pytest.raises(LogSchemaError):
        detect_events(synthetic_log({1: dict(s=0.0, v=0.0)}, 5), 0, road)


# --- reports --------------------------------------------------------------------

def test_report_additivity_and_echo(road):
    w = ScoreWeights(i_s=0.5, i_e=0.25, i_i=0.25)
    rep = evaluate(convoy(), 0, w, road, label="quiet")
    assert rep.I_s == 1.0
    assert rep.I_i == 1.0
    assert rep.I == pytest.approx(rep.contrib_s + rep.contrib_e + rep.contrib_i, abs=1e-12)
    assert 0.0 <= rep.complexity <= 1.0
    kv = rep.to_kv()
    assert "I_s = 1.000000" in kv
    assert "weight.i_s = 0.5" in kv
    assert json.loads(rep.to_json())["weights"]["i_e"] == 0.25


def test_comparison_table_sorted_by_I(road):
    reps = []
    for label, gap in (("a", 60.0), ("b", 25.0), ("c", 40.0)):
        n = N
        log = synthetic_log({0: dict(s=cruising(100.0, 30.0, n), v=np.full(n, 30.0 if label != "b" else 20.0),
                                     policy="sut"),
                             1: dict(s=cruising(100.0 + gap, 30.0, n), v=30.0)}, n)
        reps.append(evaluate(log, 0, ScoreWeights(), road, label=label))
    lines = comparison_table(reps).splitlines()
    assert len(lines) == 4
    values = [float(line.split()[4]) for line in lines[1:]]
    assert values == sorted(values, reverse=True)
    assert score_complexity(detect_events(convoy(), 0, road)) == 0.0
