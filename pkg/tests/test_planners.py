from collections import deque

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from swarmcov.planners import (
    COMPASS_ORDER,
    WAVEFRONT,
    AABox,
    HuberAdaptive,
    HuberFixed,
    L1,
    LogCosh,
    LossKind,
    MSE,
    OccupancyGrid,
    OrderStream,
    PlannerConfig,
    Unreachable,
    adaptive_delta,
    box_overlap,
    logcosh,
    loss_eval,
    loss_grad,
    pf_step,
    potential_gradient,
    run_coverage,
    wavefront_plan,
    wavefront_values,
)
from swarmcov.world import WorldConfig, reset_world

from conftest import make_world

KINDS = [L1(), MSE(), LogCosh(), HuberFixed(0.5), HuberFixed(1.0), HuberFixed(2.0)]
reals = st.floats(-50, 50, allow_nan=False)


def test_loss_examples():
    h = HuberFixed(1.0)
    assert loss_eval(h, 0.5) == 0.125 and loss_eval(h, 2.0) == 1.5
    assert loss_eval(LogCosh(), 0.0) == 0.0
    assert loss_eval(LogCosh(), 10.0) == pytest.approx(10 - np.log(2), abs=1e-8)
    assert loss_eval(L1(), -2.0) == 2 and loss_grad(L1(), -2.0) == -1 and loss_grad(L1(), 0.0) == 0
    assert loss_eval(MSE(), 3.0) == 9 and loss_grad(MSE(), 3.0) == 6


def test_loss_kind_validation():
    with pytest.raises(ValueError):
        LossKind("huber", delta=0.0)
    with pytest.raises(ValueError):
        HuberAdaptive(1.0, 0.5)
    with pytest.raises(ValueError):
        LossKind("cauchy")


@pytest.mark.parametrize("kind", KINDS, ids=lambda k: k.label)
@settings(max_examples=100, deadline=None)
@given(r=st.floats(-8, 8, allow_nan=False))
def test_loss_grad_matches_central_difference(kind, r):
    if kind.kind == "l1":
        assume(abs(r) >= 1e-6)
    if kind.kind == "huber":
        assume(abs(abs(r) - kind.delta) >= 1e-6)
    h = np.longdouble(1e-6)
    rl = np.longdouble(r)
    num = float((loss_eval(kind, rl + h) - loss_eval(kind, rl - h)) / (2 * h))
    ana = float(loss_grad(kind, r))
    assert abs(ana - num) <= 1e-8 * max(abs(ana), abs(num), 1e-4)


@pytest.mark.parametrize("delta", [0.25, 0.5, 1.0, 2.0])
def test_huber_branches_meet(delta):
    for r in (delta, -delta):
        assert 0.5 * r * r == delta * (abs(r) - 0.5 * delta)
        assert r == delta * np.sign(r)
        below = loss_eval(HuberFixed(delta), np.nextafter(r, 0.0))
        assert abs(below - loss_eval(HuberFixed(delta), r)) < 1e-12


@given(reals)
def test_logcosh_bounds(r):
    v = logcosh(r)
    assert 0 <= v <= r * r / 2 + 1e-15
    assert v >= abs(r) - np.log(2) - 1e-12


def test_logcosh_taylor():
    r = np.linspace(-0.3, 0.3, 10_001)
    assert np.max(np.abs(logcosh(r) - (r * r / 2 - r**4 / 12))) <= 1e-4


def test_box_overlap_examples():
    fov = AABox(np.array([1.0, 1.0]), np.array([1.0, 1.0]))
    assert box_overlap(fov, AABox(np.array([5.0, 5.0]), np.array([1.0, 1.0]))) == 0
    inner = AABox(np.array([1.0, 1.2]), np.array([0.3, 0.4]))
    assert box_overlap(fov, inner) == pytest.approx(inner.measure)
    assert box_overlap(fov, AABox(np.array([2.0, 2.0]), np.array([1.0, 1.0]))) == 1.0
    with pytest.raises(ValueError):
        box_overlap(fov, AABox(np.zeros(3), np.ones(3)))


box = st.tuples(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(0.01, 3), min_size=3, max_size=3))


@given(box, box)
def test_box_overlap_properties(a, b):
    A = AABox(np.array(a[0]), np.array(a[1]))
    B = AABox(np.array(b[0]), np.array(b[1]))
    ov = box_overlap(A, B)
    assert ov == pytest.approx(box_overlap(B, A))
    assert 0 <= ov <= min(A.measure, B.measure) * (1 + 1e-12)


def test_adaptive_delta_examples():
    assert adaptive_delta(4, 0, 1, 1, 2) == 1.0
    assert adaptive_delta(4, 4, 1, 1, 2) == 0.5
    assert adaptive_delta(4, 4, 4, 1, 2) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        adaptive_delta(4, 4.5, 1, 1, 2)


@given(st.floats(1e-3, 4.0), st.floats(1e-3, 4.0))
def test_adaptive_delta_monotone_and_ordered(o1, o2):
    assume(abs(o1 - o2) > 1e-9)
    lo, hi = sorted((o1, o2))
    for a in (1, 2, 4):
        assert adaptive_delta(4, hi, a, 1, 2) < adaptive_delta(4, lo, a, 1, 2) <= 1.0
    assert adaptive_delta(4, lo, 4, 1, 2) < adaptive_delta(4, lo, 2, 1, 2) < adaptive_delta(4, lo, 1, 1, 2)


def _empty(dims=2):
    return np.zeros((0, dims)), np.zeros((0, dims))


def test_gradient_without_obstacles_is_attractive_only():
    cfg = PlannerConfig(loss=L1())
    c, h = _empty()
    g = potential_gradient([0.0, 0.0], [3.0, 2.0], c, h, None, cfg)
    assert np.array_equal(g, [-1.0, -1.0])
    assert np.array_equal(potential_gradient([1.0, 1.0], [1.0, 1.0], c, h, None, cfg), [0.0, 0.0])
    far = np.array([[4.0, 4.0]])
    assert np.array_equal(potential_gradient([0.0, 0.0], [3.0, 2.0], far, np.full((1, 2), 0.5), None, cfg), g)


def test_gradient_repulsion_scaled():
    cfg = PlannerConfig(loss=HuberFixed(1.0), repulsive_scale=0.5)
    obs, half = np.array([[2.0, 1.5]]), np.array([[0.5, 0.5]])
    g = potential_gradient([2.0, 0.5], [2.0, 4.0], obs, half, None, cfg, delta=1.0)
    # attraction pulls +y at saturation; nearest face is 0.5 away
    assert g == pytest.approx([0.0, -1.0 + 0.5 * 0.5])


def test_other_drones_repel():
    cfg = PlannerConfig(loss=HuberFixed(1.0))
    c, h = _empty()
    g = potential_gradient([1.0, 1.0], [1.0, 1.0], c, h, np.array([[1.5, 1.0]]), cfg)
    assert g[0] > 0  # pushed away in -x by descent


def test_pf_step_saturated_speed():
    w = make_world([[0.0, 0.0]], [[4.0, 4.0]], continuous=True)
    cfg = PlannerConfig(loss=HuberFixed(1.0))
    new, info = pf_step(w.drones[0], w.poi_positions[0], w, 0, cfg, np.random.default_rng(0))
    assert np.array_equal(new, [1.0, 1.0]) and info.delta == 1.0


def test_pf_step_at_goal_only_noise():
    w = make_world([[2.0, 2.0]], [[2.0, 2.0]], continuous=True)
    cfg = PlannerConfig(loss=HuberAdaptive(1, 1))
    for s in range(20):
        new, info = pf_step(w.drones[0], w.poi_positions[0], w, 0, cfg, np.random.default_rng(s))
        assert np.all(np.abs(new - w.drones[0]) <= cfg.noise_threshold + cfg.epsilon)


@pytest.mark.parametrize("kind,eta", [(HuberFixed(0.5), 1.0), (HuberAdaptive(2, 1), 1.0), (LogCosh(), 1.0), (MSE(), 0.5)])
@settings(max_examples=60, deadline=None)
@given(x=st.tuples(st.floats(0, 4), st.floats(0, 4)), g=st.tuples(st.floats(0, 4), st.floats(0, 4)))
def test_pf_step_descends_attractive_potential(kind, eta, x, g):
    w = make_world([list(x)], [list(g)], continuous=True)
    cfg = PlannerConfig(loss=kind, step_scale=eta, noise=False)
    new, info = pf_step(w.drones[0], w.poi_positions[0], w, 0, cfg, np.random.default_rng(0))
    d = info.delta
    before = loss_eval(kind, np.subtract(x, g), d).sum()
    after = loss_eval(kind, new - np.asarray(g), d).sum()
    assert after <= before + 1e-12


def test_wavefront_examples():
    grid = OccupancyGrid(np.zeros((3, 3), dtype=bool))
    assert wavefront_plan(grid, (1, 1), (1, 1)) == []
    blocked = np.zeros((3, 3), dtype=bool)
    blocked[1, 1] = True
    path = wavefront_plan(OccupancyGrid(blocked), (0, 0), (2, 2))
    assert len(path) == 3 and path[-1] == (2, 2) and (1, 1) not in path
    walled = np.zeros((4, 4), dtype=bool)
    walled[2, :] = True
    with pytest.raises(Unreachable):
        wavefront_plan(OccupancyGrid(walled), (0, 0), (3, 3))
    with pytest.raises(ValueError):
        wavefront_plan(OccupancyGrid(walled), (2, 0), (3, 3))


def test_wavefront_value_encoding():
    blocked = np.zeros((3, 3), dtype=bool)
    blocked[0, 2] = True
    v = wavefront_values(OccupancyGrid(blocked), (2, 2))
    assert v[2, 2] == 2 and v[0, 2] == 1 and v[1, 1] == 3 and v[0, 0] == 4


def test_wavefront_tie_break_prefers_north():
    path = wavefront_plan(OccupancyGrid(np.zeros((3, 3), dtype=bool)), (0, 0), (0, 2))
    assert path == [(0, 1), (0, 2)]


def test_blocked_corner_forbids_diagonal():
    corners = np.zeros((1, 1), dtype=bool)
    corners[0, 0] = True
    grid = OccupancyGrid(np.zeros((2, 2), dtype=bool), corners)
    assert len(wavefront_plan(grid, (0, 0), (1, 1))) == 2


def _bfs(blocked, s, g):
    dist = {s: 0}
    q = deque([s])
    while q:
        c = q.popleft()
        for dx, dy in COMPASS_ORDER:
            n = (c[0] + dx, c[1] + dy)
            if 0 <= n[0] < blocked.shape[0] and 0 <= n[1] < blocked.shape[1] and not blocked[n] and n not in dist:
                dist[n] = dist[c] + 1
                q.append(n)
    return dist.get(g)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(3, 9), st.floats(0.0, 0.4))
def test_wavefront_matches_bfs(seed, n, density):
    rng = np.random.default_rng(seed)
    blocked = rng.random((n, n)) < density
    free = np.argwhere(~blocked)
    assume(len(free) >= 2)
    s, g = (tuple(int(v) for v in free[i]) for i in rng.choice(len(free), 2, replace=False))
    grid = OccupancyGrid(blocked)
    want = _bfs(blocked, s, g)
    if want is None:
        with pytest.raises(Unreachable):
            wavefront_plan(grid, s, g)
        return
    path = wavefront_plan(grid, s, g)
    assert len(path) == want
    values = wavefront_values(grid, g)
    seq = [values[s]] + [values[c] for c in path]
    assert all(b == a - 1 for a, b in zip(seq, seq[1:]))
    assert not any(blocked[c] for c in path)


def test_coverage_nothing_to_do():
    w = make_world([[0.0, 0.0]], [[0.0, 0.0]], continuous=True)
    rep = run_coverage(w, [OrderStream([0])], PlannerConfig(), 100)
    assert rep.ticks == 0 and rep.completed


def test_coverage_single_point_distance_three():
    w = make_world([[0.0, 0.0]], [[3.0, 0.0]], continuous=True)
    rep = run_coverage(w, [OrderStream([0])], PlannerConfig(loss=HuberFixed(1.0)), 100)
    assert rep.completed and abs(rep.ticks - 3) <= 1


def test_wavefront_full_grid_order_of_magnitude():
    ticks = []
    for s in range(5):
        w = reset_world(WorldConfig(extent=5, n_poi=25, continuous=True), s)
        order = np.random.default_rng(s).permutation(25)
        rep = run_coverage(w, [OrderStream(order)], WAVEFRONT, 2000)
        assert rep.completed
        ticks.append(rep.ticks)
    assert 113 / 4 <= np.median(ticks) <= 113 * 4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 16))
def test_wavefront_coverage_always_completes(seed, drones, poi):
    w = reset_world(WorldConfig(extent=4, n_drones=drones, n_poi=poi, continuous=True), seed)
    rng = np.random.default_rng(seed)
    streams = [OrderStream(rng.permutation(poi)) for _ in range(drones)]
    rep = run_coverage(w, streams, WAVEFRONT, 500)
    assert rep.completed and rep.collisions == 0
    assert all(b >= a for a, b in zip(rep.mapped_timeline, rep.mapped_timeline[1:]))


def test_trace_and_report_shape():
    cfg = WorldConfig(extent=5, n_drones=2, n_poi=10, obstacle_density=0.15, continuous=True)
    w = reset_world(cfg, 3)
    streams = [OrderStream(np.random.default_rng(i).permutation(10)) for i in range(2)]
    rep = run_coverage(w, streams, PlannerConfig(), 300, np.random.default_rng(0), record_trace=True)
    assert len(rep.trace) == rep.ticks * 2
    assert len(rep.trajectories[0]) == rep.ticks + 1
    assert rep.ticks <= 300
    assert set(rep.trace[0]) == {"tick", "drone", "position", "delta", "grad_norm", "events"}
    if not rep.completed:
        assert rep.ticks == 300


def test_collision_is_recorded_not_fatal():
    w = make_world([[0.0, 2.0]], [[4.0, 2.0]], continuous=True, obstacles=[[2.0, 2.0]], halves=[[0.6, 0.6]])
    rep = run_coverage(w, [OrderStream([0])], PlannerConfig(loss=L1(), repulsive_scale=0.1), 50)
    assert rep.collisions >= 1 and rep.collision_events[0]["obstacle"] == 0
