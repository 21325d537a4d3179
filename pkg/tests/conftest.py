import numpy as np
import pytest

from swarmcov.world import WorldState


def make_world(drones, pois, high=None, continuous=False, extent=5, obstacles=(), halves=None, gamma=0.5):
    drones = np.asarray(drones, dtype=float)
    pois = np.asarray(pois, dtype=float).reshape(-1, drones.shape[1])
    dims = drones.shape[1]
    n = len(pois)
    obs = np.asarray(obstacles, dtype=float).reshape(-1, dims)
    half = np.full_like(obs, 0.5) if halves is None else np.asarray(halves, dtype=float).reshape(-1, dims)
    ext = (extent,) * 2 + ((11,) if dims == 3 else ())
    return WorldState(
        dims=dims,
        extent=ext,
        continuous=continuous,
        drones=drones,
        fov_edge=2.0,
        poi_positions=pois,
        poi_high=np.zeros(n, dtype=bool) if high is None else np.asarray(high, dtype=bool),
        mapped=np.zeros(n, dtype=bool),
        obstacle_centers=obs,
        obstacle_half=half,
        gamma=gamma,
    )


@pytest.fixture
def world_factory():
    return make_world


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
