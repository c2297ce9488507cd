import numpy as np

from levelk_onramp.fidelity import ingest_highd
from levelk_onramp.synthetic import (
    CROSS_AFTER, DECISION_AT, EPISODE_STEPS, MISMATCHED, SLOTS_PER_LANE, VEHICLE_LENGTH, TrafficProfile, generate,
)


def test_following_gaps_track_profile(road):
    p = TrafficProfile()
    h = generate(p, 2000, seed=0, road=road)
    n_pairs = 2 * SLOTS_PER_LANE
    lead, follow = h.s[:, 0:2 * n_pairs:2], h.s[:, 1:2 * n_pairs:2]
    gaps = (lead - follow) % road.total_length - VEHICLE_LENGTH
    assert abs(gaps.mean() - p.gap_mean) < 1.5
    assert abs(gaps.std() - p.gap_sd) < 1.5
    assert np.all(h.lane[:, :2 * n_pairs] <= 2)


def test_changers_flip_once_per_episode(road):
    h = generate(TrafficProfile(), 3 * EPISODE_STEPS, seed=1, road=road)
    ci = 4 * SLOTS_PER_LANE
    lanes = h.lane[:, ci]
    flips = np.flatnonzero(np.diff(lanes)) + 1
    assert flips.tolist() == [e * EPISODE_STEPS + DECISION_AT + CROSS_AFTER for e in range(3)]
    assert np.flatnonzero(h.decision[:, ci]).tolist() == [e * EPISODE_STEPS + DECISION_AT + 1 for e in range(3)]
    assert set(lanes.tolist()) == {3, 4}


def test_seed_determinism_and_profiles_differ(road):
    a, b = generate(TrafficProfile(), 100, seed=4, road=road), generate(TrafficProfile(), 100, seed=4, road=road)
    assert np.array_equal(a.s, b.s) and np.array_equal(a.ids, b.ids)
    c = generate(MISMATCHED, 100, seed=4, road=road)
    assert c.v.mean() < a.v.mean() - 5.0


def test_tracks_export_matches_log(road):
    h = generate(TrafficProfile(), 50, seed=2, road=road)
    tracks = ingest_highd(h.to_tracks_csv(road.total_length))
    log = h.to_log()
    assert len(log) == h.shape[0] * h.shape[1]
    assert len(tracks) == len(log)
    assert {r.vehicle_id for r in tracks} == set(np.unique(h.ids).tolist())
