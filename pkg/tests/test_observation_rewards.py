import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levelk_onramp.observation import (
    DECISION_DIM, LongitudinalObservation, back_view_ids, bin_index, encode_decision_obs, encode_longitudinal_obs,
)
from levelk_onramp.rewards import (
    DrivableAreas, RewardParams, control_reward, drivable_areas, individual_reward, social_reward,
)
from levelk_onramp.sim import SimConfig, VehicleState, World

P = RewardParams()


def car(vid, s, lane, v=30.0, **kw):
    return VehicleState(id=vid, s=s, d=0.0, lane_id=lane, v=v, **kw)


def world_of(road, *cars):
    w = World(road, SimConfig())
    for c in cars:
        w.add(c)
    return w


def lobs(gap):
    return LongitudinalObservation(gap / 100.0, 0.0, 0.0, 1)


# --- decision grid ----------------------------------------------------------------

def test_empty_road(road):
    obs = encode_decision_obs(world_of(road, car(0, 1000.0, 2, v=25.0)), 0)
    assert not obs.grid.any()
    assert obs.ego_speed_norm == pytest.approx(25.0 / road.v_max)
    assert obs.flat().shape == (DECISION_DIM,) == (501,)


def test_sv_dead_ahead(road):
    obs = encode_decision_obs(world_of(road, car(0, 1000.0, 2), car(1, 1030.0, 2)), 0)
    assert obs.grid[0, 2, 10] == 1.0 and obs.grid[1, 2, 10] == 0.0
    assert obs.grid[0].sum() == 1.0


def test_back_view_limit(road):
    w = world_of(road, car(0, 1000.0, 2), car(1, 975.0, 2), car(2, 985.0, 3, v=20.0))
    obs = encode_decision_obs(w, 0)
    assert obs.grid[0].sum() == 1.0
    assert obs.grid[0, 3, 1] == 1.0
    assert obs.grid[1, 3, 1] == pytest.approx(-10.0 / road.v_max)
    assert back_view_ids(w, 0) == [2]


def test_bin_edges():
    assert bin_index(-20.0) == 0
    assert bin_index(-20.01) is None
    assert bin_index(104.99) == 24
    assert bin_index(105.0) is None


def test_nearer_vehicle_wins_cell(road):
    w = world_of(road, car(0, 1000.0, 2), car(1, 1034.0, 2, v=20.0), car(2, 1031.0, 2, v=25.0))
    obs = encode_decision_obs(w, 0)
    assert obs.grid[1, 2, 10] == pytest.approx(-5.0 / road.v_max)


def test_missing_lanes_are_zero_columns(road):
    w = world_of(road, car(0, 1000.0, 4), car(1, 1010.0, 3), car(2, 1010.0, 2))
    obs = encode_decision_obs(w, 0)
    assert obs.grid[:, 3:, :].sum() == 0.0
    assert obs.grid[0, 1, 6] == 1.0 and obs.grid[0, 0, 6] == 1.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-30, 120), st.integers(1, 4), st.floats(0, 33)), max_size=12),
       st.floats(-500, 500))
def test_grid_invariants(road, others, shift):
    cars = [car(0, 1200.0, 2)] + [car(i + 1, 1200.0 + ds, lane, v) for i, (ds, lane, v) in enumerate(others)]
    obs = encode_decision_obs(world_of(road, *cars), 0)
    moved = encode_decision_obs(world_of(road, *[VehicleState(**{**c.__dict__, "s": c.s + shift}) for c in cars]), 0)
    assert np.array_equal(obs.grid, moved.grid)
    assert np.all(np.abs(obs.flat()) <= 1.0)
    cells = {(lane, bin_index(ds)) for ds, lane, _ in others if bin_index(ds) is not None}
    assert obs.grid[0].sum() == len(cells)


# --- longitudinal observation ------------------------------------------------------

def test_longitudinal_examples(road):
    assert encode_longitudinal_obs(world_of(road, car(0, 1000.0, 2)), 0).vector().tolist() == [0, 0, 0, 0]
    w = world_of(road, car(0, 1000.0, 2), car(1, 1050.0, 2))
    assert encode_longitudinal_obs(w, 0).vector().tolist() == [0.5, 0.0, 0.0, 1.0]
    w = world_of(road, car(0, 1000.0, 2), car(1, 1120.0, 2))
    assert encode_longitudinal_obs(w, 0).vector().tolist() == [0, 0, 0, 0]


# --- control reward ---------------------------------------------------------------

def test_control_reward_examples():
    assert control_reward(lobs(30), lobs(28), True, P) == -10.0
    assert control_reward(lobs(25), lobs(25), False, P) == 0.0
    assert control_reward(lobs(30), lobs(28), False, P) == pytest.approx(-0.0009 + 5 * 0.0016, abs=1e-12)
    assert control_reward(lobs(30), lobs(28), False, P) == pytest.approx(0.0071, abs=1e-12)
    assert control_reward(LongitudinalObservation(), LongitudinalObservation(), False, P) == 0.0


def test_control_reward_peaks_at_target_gap():
    gaps = np.round(np.arange(0.0, 100.01, 0.25), 2)
    values = [control_reward(lobs(g), lobs(g), False, P) for g in gaps]
    assert gaps[int(np.argmax(values))] == P.target_gap


# --- drivable areas and decision rewards ---------------------------------------------

def test_drivable_areas(road):
    w = world_of(road, car(0, 1000.0, 2), car(1, 1040.0, 2), car(2, 1140.0, 3))
    a = drivable_areas(w, 0, 1, P)
    assert (a.O_t, a.O_c) == (100.0, 40.0)
    assert drivable_areas(w, 0, 3, P).O_t == 100.0


def test_individual_reward_examples():
    p = RewardParams(theta=1.0)
    assert individual_reward(DrivableAreas(100.0, 100.0), False, False, p) == 1.0
    assert individual_reward(DrivableAreas(80.0, 40.0), False, False, p) == pytest.approx(0.32, abs=1e-12)
    base = individual_reward(DrivableAreas(80.0, 40.0), False, False, p)
    assert individual_reward(DrivableAreas(80.0, 40.0), False, True, p) == pytest.approx(base - 0.2, abs=1e-12)
    assert individual_reward(DrivableAreas(80.0, 40.0), True, False, p) == pytest.approx(base - 0.1, abs=1e-12)
    assert individual_reward(DrivableAreas(20.0, 40.0), False, False, p) < individual_reward(
        DrivableAreas(40.0, 40.0), False, False, p)


def test_social_empty_back_view(road):
    w = world_of(road, car(0, 1000.0, 2))
    for pol in ("mutual", "competitive", "cooperative"):
        assert social_reward(pol, 0.37, w, 0, P) == 0.37
    with pytest.raises(ValueError):
        social_reward("selfish", 0.0, w, 0, P)


def test_social_single_back_view_vehicle(road):
    p = RewardParams(theta=1.0)
    w = world_of(road, car(0, 1000.0, 2), car(1, 990.0, 2, v=p.s_dot_max))
    assert drivable_areas(w, 0, None, p).back == {1: pytest.approx(10.0)}
    # push the ego out of the rear vehicle's lane so its area is the full front view
    w = world_of(road, car(0, 1000.0, 2), car(1, 990.0, 3, v=p.s_dot_max))
    assert social_reward("competitive", 0.3, w, 0, p) == pytest.approx(0.3 - 0.25 - 0.25, abs=1e-12)
    assert social_reward("cooperative", 0.3, w, 0, p) == pytest.approx(0.3 + 0.5, abs=1e-12)
    assert social_reward("mutual", 0.3, w, 0, p) == 0.3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-19.9, 60), st.integers(1, 4), st.floats(0, 33.3)), max_size=8),
       st.floats(-1, 1))
def test_mirror_property(road, others, r_i):
    cars = [car(0, 1200.0, 2)] + [car(i + 1, 1200.0 + ds, lane, v) for i, (ds, lane, v) in enumerate(others)]
    w = world_of(road, *cars)
    comp = social_reward("competitive", r_i, w, 0, P) - r_i
    coop = social_reward("cooperative", r_i, w, 0, P) - r_i
    assert comp == pytest.approx(-coop, abs=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        RewardParams(J_lc=0.1)
    with pytest.raises(ValueError):
        RewardParams(target_gap=0)
    with pytest.raises(ValueError):
        RewardParams(z=0)
