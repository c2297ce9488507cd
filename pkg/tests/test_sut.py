import math

import numpy as np
import pytest

from levelk_onramp.sim import LEFT, MAINTAIN, RIGHT, SimConfig, VehicleState, World
from levelk_onramp.sut import (
    SutParams, decide, krauss_follow, krauss_target_speed, mobil_decide, nilsson_decide, stackelberg_decide,
    stackelberg_players,
)

P = SutParams()
CFG = SimConfig()


def car(vid, s, lane, v=30.0, **kw):
    return VehicleState(id=vid, s=s, d=0.0, lane_id=lane, v=v, **kw)


def world_of(road, *cars):
    w = World(road, SimConfig())
    for c in cars:
        w.add(c)
    return w


# --- Krauss -------------------------------------------------------------------

def test_krauss_cruise_without_leader(road):
    st = car(0, 100.0, 2, v=road.v_max, v_des=road.v_max)
    assert krauss_follow(st, None, P, CFG, v_max=road.v_max) == pytest.approx(0.0, abs=1e-12)


def test_krauss_full_brake_behind_stopped_leader():
    assert krauss_follow(car(0, 100.0, 2), car(1, 109.5, 2, v=0.0), P, CFG) == -1.0


def test_krauss_safe_speed_example():
    wide = SimConfig(a_max=100.0)
    v_safe = krauss_target_speed(28.0, 100.0, 28.0, 50.0, P, wide)
    assert v_safe == pytest.approx(28.0 + 22.0 / 4.5, abs=1e-12)
    assert round(v_safe, 1) == 32.9
    # capped by one step of maximum acceleration
    assert krauss_target_speed(28.0, 100.0, 28.0, 50.0, P, CFG) == pytest.approx(28.4)
    leader = car(1, 54.5, 2, v=28.0)
    assert krauss_follow(car(0, 0.0, 2, v=28.0, v_des=100.0), leader, P, CFG) == pytest.approx(1.0, abs=1e-12)


def test_params_validation():
    for bad in (dict(p=1.5), dict(delta_a_th=0.0), dict(T=0.0)):
        with pytest.raises(ValueError):
            SutParams(**bad)


# --- Nilsson ------------------------------------------------------------------

def test_nilsson_empty_road_maintains(road):
    assert nilsson_decide(world_of(road, car(0, 1000.0, 2)), 0, P).lane_offset == MAINTAIN


def test_nilsson_leaves_ramp_near_its_end(road):
    ramp = road.merge_lane_id
    d = nilsson_decide(world_of(road, car(0, road.merge_end_s - 20.0, ramp, v=25.0)), 0, P)
    assert road.neighbor(ramp, d.lane_offset) in road.mainline_ids
    assert d.debug["utilities"][ramp] < d.debug["utilities"][road.neighbor(ramp, d.lane_offset)]


def test_nilsson_moves_toward_clear_lane(road):
    d = nilsson_decide(world_of(road, car(0, 1000.0, 4), car(1, 1030.0, 4, v=15.0)), 0, P)
    assert d.lane_offset == LEFT and d.debug["target_lane"] == 3


# --- MOBIL --------------------------------------------------------------------

def test_mobil_empty_road_maintains(road):
    assert mobil_decide(world_of(road, car(0, 1000.0, 2)), 0, P).lane_offset == MAINTAIN


def test_mobil_overtakes_slow_leader(road):
    w = world_of(road, car(0, 1000.0, 2), car(1, 1020.0, 2, v=15.0))
    d = mobil_decide(w, 0, SutParams(p=0.0))
    assert d.lane_offset == LEFT
    assert d.debug[LEFT]["incentive"] > P.delta_a_th


def test_mobil_safety_criterion(road):
    fast = dict(v=33.0)
    w = world_of(road, car(0, 1000.0, 2), car(1, 1020.0, 2, v=15.0), car(2, 988.0, 1, **fast),
                 car(3, 988.0, 3, **fast))
    d = mobil_decide(w, 0, SutParams(p=0.0))
    assert d.lane_offset == MAINTAIN
    assert all(d.debug[o]["a_n_hat"] < -P.b_safe for o in (LEFT, RIGHT))


# --- Stackelberg ----------------------------------------------------------------

def test_stackelberg_empty_road(road):
    d = stackelberg_decide(world_of(road, car(0, 1000.0, 2)), 0, P)
    assert d.lane_offset == MAINTAIN
    assert set(d.debug["worst_case"].values()) == {P.d_v + P.d_v - P.d_min}


def _oracle_payoff(world, ego, profile, players, params):
    """Leader payoff of one joint profile, by direct constant-speed rollout."""
    road, T = world.road, params.T
    moved = {}
    for (p, _), a in zip(players, profile):
        if p is not None:
            moved[p.id] = a
    lane_h = road.neighbor(ego.lane_id, moved[ego.id])
    ego_s = ego.v * T
    ahead, behind, behind_v = math.inf, None, None
    for o in world.vehicles.values():
        if o.id == ego.id:
            continue
        lane = road.neighbor(o.lane_id, moved[o.id]) if o.id in moved else o.target
        if lane != lane_h:
            continue
        rel = world.ds(ego.s, o.s) + o.v * T - ego_s
        if rel >= 0:
            ahead = min(ahead, rel)
        elif behind is None or rel > behind:
            behind, behind_v = rel, o.v
    if lane_h == road.merge_lane_id:
        ahead = min(ahead, max(road.merge_end_s - ego.s - ego_s, 0.0))
    u_pos = min(ahead, params.d_v)
    if behind is None:
        u_neg = params.d_v - params.d_min
    else:
        u_neg = min(-behind, params.d_v) - (behind_v - ego.v) * T - params.d_min
    return u_pos + u_neg


def _oracle_decision(world, ego_id, params):
    ego = world.get(ego_id)
    players = stackelberg_players(world, ego_id, params)
    (_, acts_h), (_, acts_1), (_, acts_2) = players
    worst = {}
    for ah in acts_h:
        worst[ah] = min(_oracle_payoff(world, ego, (ah, a1, a2), players, params) for a1 in acts_1 for a2 in acts_2)
    best = max(worst.values())
    order = [MAINTAIN, LEFT if world.road.drive_side == "left" else RIGHT]
    order.append(-order[1])
    return next(a for a in order if a in worst and worst[a] >= best - 1e-9), [len(a) for _, a in players]


def _random_world(road, rng):
    lane = int(rng.integers(1, 5))
    ego = car(0, 1000.0, lane, v=float(rng.uniform(15, 33)))
    cars = [ego]
    for i in range(int(rng.integers(0, 9))):
        cars.append(car(i + 1, 1000.0 + float(rng.uniform(-90, 120)), int(rng.integers(1, 5)),
                        v=float(rng.uniform(10, 33))))
    return world_of(road, *cars)


def test_stackelberg_matches_brute_force(road):
    rng = np.random.default_rng(2024)
    full_games = 0
    for _ in range(1000):
        w = _random_world(road, rng)
        expect, sizes = _oracle_decision(w, 0, P)
        assert stackelberg_decide(w, 0, P).lane_offset == expect
        full_games += sizes == [3, 3, 3]
    assert full_games > 20


def test_stackelberg_changes_earlier_than_mobil(road):
    def onset(fn):
        for dist in range(200, 10, -5):
            w = world_of(road, car(0, 1000.0, 2), car(1, 1000.0 + dist, 2, v=20.0))
            if fn(w, 0, P).lane_offset != MAINTAIN:
                return dist
        return 0

    d_st, d_mobil = onset(stackelberg_decide), onset(mobil_decide)
    assert d_st > d_mobil > 0
    # larger distance at equal closing speed means larger TTC at the decision
    assert d_st / 10.0 > d_mobil / 10.0


def test_deciders_are_pure(road):
    rng = np.random.default_rng(5)
    for _ in range(20):
        w = _random_world(road, rng)
        for model in ("nilsson", "mobil", "stackelberg"):
            assert decide(model, w, 0, P).lane_offset == decide(model, w, 0, P).lane_offset
    with pytest.raises(ValueError):
        decide("idm", w, 0, P)
