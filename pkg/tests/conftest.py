import numpy as np
import pytest

from levelk_onramp.drivers import STAGES
from levelk_onramp.nn import PolicyNet, save_policy
from levelk_onramp.observation import DECISION_DIM, LONGITUDINAL_DIM
from levelk_onramp.roadmap import default_map
from levelk_onramp.scenario import TrajectoryLog
from levelk_onramp.training import stage_paths, write_bundle_manifest


@pytest.fixture(scope="session")
def road():
    return default_map()


@pytest.fixture(scope="session")
def tiny_bundle(tmp_path_factory):
    """Untrained weights for every stage plus a bundle manifest."""
    out = tmp_path_factory.mktemp("bundle")
    rng = np.random.default_rng(0)
    for stage in STAGES:
        in_dim = LONGITUDINAL_DIM if stage == "car_following" else DECISION_DIM
        save_policy(PolicyNet([in_dim, 8, 1], "tanh", rng), stage_paths(out, stage)["weights"])
    return write_bundle_manifest(out)


def synthetic_log(tracks: dict[int, dict], n_steps: int, dt: float = 0.1) -> TrajectoryLog:
    """Build a log from per-vehicle arrays.

    ``tracks[vid]`` holds ``s``, ``v`` and optionally ``lane``, ``a``,
    ``exe``, ``collision`` and ``policy``; scalars broadcast over steps.
    """
    log = TrajectoryLog()
    cols = {}
    for vid, tr in tracks.items():
        def arr(key, default, dtype=float):
            x = tr.get(key, default)
            return np.broadcast_to(np.asarray(x, dtype=dtype), (n_steps,))
        cols[vid] = dict(
            s=arr("s", 0.0), v=arr("v", 0.0), lane=arr("lane", 2, int), a=arr("a", 0.0),
            exe=arr("exe", 0, int), col=arr("collision", 0, int), policy=tr.get("policy", "mobil"),
        )
    for k in range(n_steps):
        for vid, c in cols.items():
            log.append((k, k * dt, vid, c["policy"], int(c["lane"][k]), float(c["s"][k]), 0.0, float(c["v"][k]),
                        float(c["a"][k]), 0.0, 0, 0.0, int(c["exe"][k]), int(c["col"][k])))
    return log


def cruising(s0: float, v: float, n_steps: int, dt: float = 0.1) -> np.ndarray:
    return s0 + v * dt * np.arange(n_steps)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
