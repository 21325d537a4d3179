"""Executable acceptance checks; ``swarmcov check`` runs them all.

Each check returns a :class:`CheckResult` whose ``detail`` carries the
measured numbers so a failure report is self-explanatory.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import lil_matrix
from scipy.sparse.csgraph import shortest_path

from . import neural as nn
from .harness import (
    TABLE1_FIXTURE,
    TABLE1_TRAIN,
    bench_table2,
    bench_table3,
    table2_orderings,
    table3_orderings,
)
from .planners import (
    COMPASS_ORDER,
    HuberAdaptive,
    HuberFixed,
    L1,
    LogCosh,
    MSE,
    OccupancyGrid,
    OrderStream,
    PlannerConfig,
    Unreachable,
    adaptive_delta,
    logcosh,
    loss_eval,
    loss_grad,
    run_coverage,
    wavefront_plan,
)
from .policies import TABLE1_PARAMETERS, PolicyNetwork, PolicyVariant, count_parameters, encode_input
from .reinforce import EVAL_SEED_OFFSET, evaluate, expected_random_length, replicate, train
from .world import WorldConfig, WorldState, reset_world


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.number:2d} {self.name} ({self.seconds:.1f}s)"

    def to_dict(self) -> dict:
        return asdict(self)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def _timed(number, name, fn, limit=None) -> CheckResult:
    t0 = time.perf_counter()
    passed, detail = fn()
    secs = time.perf_counter() - t0
    if limit is not None:
        detail["runtime_limit_s"] = limit
        if secs >= limit:
            passed = False
            detail["runtime_exceeded"] = True
    return CheckResult(number, name, bool(passed), _jsonable(detail), secs)


# ---------------------------------------------------------------------------
# 1-5: numerics and planners
# ---------------------------------------------------------------------------

GRAD_LOSSES = [L1(), MSE(), LogCosh(), HuberFixed(0.5), HuberFixed(1.0), HuberFixed(2.0)]


def loss_fd_errors(n_points: int = 100, seed: int = 0, h: float = 1e-6) -> dict:
    """Worst relative error of loss_grad against long-double central differences."""
    rng = np.random.default_rng(seed)
    out = {}
    for kind in GRAD_LOSSES:
        r = rng.uniform(-5.0, 5.0, n_points)
        if kind.kind == "l1":
            r = r[np.abs(r) >= 1e-6]
        if kind.kind == "huber":
            r = r[np.abs(np.abs(r) - kind.delta) >= 1e-6]
        rl = r.astype(np.longdouble)
        hl = np.longdouble(h)
        num = (loss_eval(kind, rl + hl) - loss_eval(kind, rl - hl)) / (2 * hl)
        ana = loss_grad(kind, r)
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num.astype(float))), 1e-12)
        out[kind.label] = float(np.max(np.abs(ana - num) / denom))
    return out


def neural_fd_errors(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    res = {}

    x, W, b = rng.normal(size=(3, 5)), rng.normal(size=(4, 5)), rng.normal(size=4)
    dy = rng.normal(size=(3, 4))
    dx, dW, db = nn.affine_backward(dy, nn.affine_forward(x, W, b)[1])
    res["affine"] = nn.grad_check(
        lambda x, W, b: float((nn.affine_forward(x, W, b)[0] * dy).sum()),
        {"x": x, "W": W, "b": b}, {"x": dx, "W": dW, "b": db}, tolerance=1e-6,
    )

    H, D = 4, 3
    args = {
        "x": rng.normal(size=D), "h": rng.normal(size=H), "c": rng.normal(size=H),
        "Wx": rng.normal(size=(4 * H, D)) * 0.5, "Wh": rng.normal(size=(4 * H, H)) * 0.5,
        "b": rng.normal(size=4 * H) * 0.5,
    }
    gh, gc = rng.normal(size=H), rng.normal(size=H)

    def lstm_obj(**a):
        h2, c2, _ = nn.lstm_forward(**a)
        return float(h2 @ gh + c2 @ gc)

    grads = nn.lstm_backward(gh, gc, nn.lstm_forward(**args)[2])
    res["lstm_step"] = nn.grad_check(
        lstm_obj, args, dict(zip(["x", "h", "c", "Wx", "Wh", "b"], grads)), tolerance=1e-6
    )

    x, g, bb = rng.normal(size=(2, 6)), rng.normal(size=6), rng.normal(size=6)
    dy = rng.normal(size=(2, 6))
    dx, dg, dbb = nn.layer_norm_backward(dy, nn.layer_norm_forward(x, g, bb)[1])
    res["layer_norm"] = nn.grad_check(
        lambda x, g, bb: float((nn.layer_norm_forward(x, g, bb)[0] * dy).sum()),
        {"x": x, "g": g, "bb": bb}, {"x": dx, "g": dg, "bb": dbb}, tolerance=1e-5,
    )
    return res


def check_gradients():
    loss = loss_fd_errors()
    neural = neural_fd_errors()
    ok = all(v < 1e-8 for v in loss.values()) and all(r.passed for r in neural.values())
    return ok, {
        "loss_max_rel_error": loss,
        "neural_max_rel_error": {k: r.max_rel_error for k, r in neural.items()},
        "neural_tolerance": {k: r.tolerance for k, r in neural.items()},
    }


def check_huber_continuity():
    detail = {}
    ok = True
    for delta in (0.25, 0.5, 1.0, 2.0):
        for s in (1.0, -1.0):
            r = s * delta
            quad, lin = 0.5 * r * r, delta * (abs(r) - 0.5 * delta)
            gq, gl = r, delta * np.sign(r)
            # the implementation's value on either side of the threshold
            below = loss_eval(HuberFixed(delta), np.nextafter(r, 0.0))
            dv, dg = abs(quad - lin), abs(gq - gl)
            detail[f"delta={delta},r={r}"] = {"value_gap": dv, "grad_gap": dg, "impl_gap": abs(below - lin)}
            ok &= dv < 1e-12 and dg < 1e-12 and abs(below - lin) < 1e-12
    return ok, detail


def check_logcosh_taylor():
    r = np.linspace(-0.3, 0.3, 10_000)
    taylor_err = float(np.max(np.abs(logcosh(r) - (r * r / 2 - r**4 / 12))))
    big = np.linspace(-10, 10, 100_001)
    excess = float(np.max(logcosh(big) - big * big / 2))
    return taylor_err <= 1e-4 and excess <= 0.0, {"taylor_max_err": taylor_err, "max_excess_over_half_r2": excess}


def _bfs_oracle(blocked: np.ndarray, start, goal):
    """Shortest 8-connected path length through free cells via scipy graph search."""
    w, h = blocked.shape
    idx = lambda x, y: x * h + y  # noqa: E731
    adj = lil_matrix((w * h, w * h))
    for x in range(w):
        for y in range(h):
            if blocked[x, y]:
                continue
            for dx, dy in COMPASS_ORDER:
                nx_, ny_ = x + dx, y + dy
                if 0 <= nx_ < w and 0 <= ny_ < h and not blocked[nx_, ny_]:
                    adj[idx(x, y), idx(nx_, ny_)] = 1
    d = shortest_path(adj.tocsr(), unweighted=True, indices=idx(*start))[idx(*goal)]
    return None if np.isinf(d) else int(d)


def check_wavefront_oracle(n_grids: int = 200, size: int = 8, density: float = 0.2, seed: int = 0):
    rng = np.random.default_rng(seed)
    mismatches, reachable, unreachable = [], 0, 0
    for g in range(n_grids):
        blocked = rng.random((size, size)) < density
        free = np.argwhere(~blocked)
        start, goal = (tuple(free[i]) for i in rng.choice(len(free), 2, replace=False))
        grid = OccupancyGrid(blocked)
        try:
            got = len(wavefront_plan(grid, start, goal))
        except Unreachable:
            got = None
        want = _bfs_oracle(blocked, start, goal)
        reachable += want is not None
        unreachable += want is None
        if got != want:
            mismatches.append({"grid": g, "got": got, "want": want})
    return not mismatches, {"mismatches": mismatches[:5], "reachable": reachable, "unreachable": unreachable}


def check_adaptive_delta():
    detail, ok = {}, True
    for K, d in ((4.0, 2.0), (1.0, 1.0)):
        ov = np.linspace(0.0, K, 401)
        curves = {a: np.array([adaptive_delta(K, o, a, 1.0, d) for o in ov]) for a in (1.0, 2.0, 4.0)}
        at_zero = all(c[0] == d / 2 for c in curves.values())
        monotone = all(np.all(np.diff(c) < 0) for c in curves.values())
        ordered = bool(np.all(curves[4.0][1:] < curves[2.0][1:]) and np.all(curves[2.0][1:] < curves[1.0][1:]))
        detail[f"K={K:g}"] = {"delta0_is_d_over_2": at_zero, "strictly_decreasing": monotone, "ordered": ordered}
        ok &= at_zero and monotone and ordered
    return ok, detail


# ---------------------------------------------------------------------------
# 6-7: benchmark orderings
# ---------------------------------------------------------------------------


def check_table2():
    o = table2_orderings(bench_table2())
    return o["huber1_vs_huber05"] and o["mse_worst_or_second"] and o["adaptive11_vs_41"], o


def check_table3():
    o = table3_orderings(bench_table3())
    return o["adaptive_monotone"] and o["adaptive11_vs_l1"], o


# ---------------------------------------------------------------------------
# 8-10: assignment policies
# ---------------------------------------------------------------------------


def check_reinforce(n_episodes: int | None = None, eval_seeds: int = 20):
    cfg = TABLE1_TRAIN if n_episodes is None else TABLE1_TRAIN.__class__(
        **{**asdict(TABLE1_TRAIN), "n_episodes": n_episodes}
    )
    policy = PolicyNetwork.build(PolicyVariant.POINTER, seed=0)
    train(policy, TABLE1_FIXTURE, cfg)
    trained = evaluate(policy, TABLE1_FIXTURE, eval_seeds)
    random_exp = [
        expected_random_length(reset_world(TABLE1_FIXTURE, EVAL_SEED_OFFSET + k)) for k in range(eval_seeds)
    ]
    t_med, r_med = float(np.median(trained)), float(np.median(random_exp))
    return t_med <= 0.85 * r_med, {
        "episodes": cfg.n_episodes,
        "trained_median": t_med,
        "trained_mean": float(np.mean(trained)),
        "random_median": r_med,
        "threshold": 0.85 * r_med,
        "improvement": 1 - t_med / r_med,
        "trained_lengths": trained,
    }


def check_parameter_counts():
    detail, ok = {}, True
    for v in PolicyVariant:
        n, ref = count_parameters(v), TABLE1_PARAMETERS[v]
        rel = (n - ref) / ref
        detail[v.value] = {"parameters": n, "reference": ref, "rel_diff": round(rel, 4)}
        ok &= abs(rel) <= 0.15
    return ok, detail


def check_replication(n_inputs: int = 100, seed: int = 0):
    rng = np.random.default_rng(seed)
    cfg = WorldConfig(extent=5, n_poi=10, high_priority_count=3)
    ok, worst = True, 0.0
    detail = {}
    for variant in PolicyVariant:
        base = PolicyNetwork.build(variant, seed=1)
        handles = replicate(base, 4)
        v_ok = True
        for _ in range(n_inputs // len(PolicyVariant)):
            w = reset_world(cfg, int(rng.integers(1 << 30)))
            allowed = rng.random(w.n_poi) < 0.7
            allowed[rng.integers(w.n_poi)] = True
            dists = [p.session(encode_input(w, 0)).distribution(allowed) for p in handles]
            v_ok &= all(np.array_equal(dists[0], d) for d in dists[1:])
        detail[variant.value] = "identical" if v_ok else "differ"
        ok &= v_ok
    detail["inputs"] = n_inputs
    return ok, detail


# ---------------------------------------------------------------------------
# 11-12: determinism and oscillation
# ---------------------------------------------------------------------------


def check_determinism(seed: int = 7, n_seeds: int = 2):
    from .cli import main

    outs = []
    with tempfile.TemporaryDirectory() as tmp:
        for run in ("a", "b"):
            d = Path(tmp) / run
            for fmt in ("jsonl", "csv"):
                code = main(["run", "--seed", str(seed), "--seeds", str(n_seeds), "--out", str(d), "--format", fmt])
                if code != 0:
                    return False, {"exit_code": code}
            outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    same = outs[0] == outs[1]
    return same, {"files": sorted(outs[0]), "identical": same}


def wall_fixture(seed: int) -> WorldState:
    """3D drone facing a full-height wall with its goal directly behind it."""
    r = np.random.default_rng([seed, 12])
    return WorldState(
        dims=3,
        extent=(5, 5, 11),
        continuous=True,
        drones=np.array([[2.0 + r.uniform(-0.3, 0.3), 0.0, r.uniform(5, 9)]]),
        fov_edge=2.0,
        poi_positions=np.array([[2.0, 4.0, r.uniform(5, 9)]]),
        poi_high=np.zeros(1, dtype=bool),
        mapped=np.zeros(1, dtype=bool),
        obstacle_centers=np.array([[2.0, 2.0, 5.0]]),
        obstacle_half=np.array([[1.5, 0.5, 5.0]]),
    )


OSCILLATION_LOSS = HuberAdaptive(4, 1)


def oscillation_runs(repulsive_scale: float, noise: bool, n_seeds: int = 10, max_ticks: int = 200):
    cfg = PlannerConfig(loss=OSCILLATION_LOSS, repulsive_scale=repulsive_scale, noise=noise)
    out = []
    for s in range(n_seeds):
        rep = run_coverage(wall_fixture(s), [OrderStream([0])], cfg, max_ticks, np.random.default_rng([s, 5]))
        out.append({"reached": rep.completed, "ticks": rep.ticks, "collisions": rep.collisions})
    return out


def check_oscillation():
    mitigated = oscillation_runs(0.5, True)
    plain = oscillation_runs(1.0, False)
    n_ok = sum(r["reached"] for r in mitigated)
    n_fail = sum(not r["reached"] for r in plain)
    return n_ok >= 9 and n_fail >= 5, {
        "reached_with_scale_0.5_noise": n_ok,
        "failed_with_scale_1.0_no_noise": n_fail,
        "mitigated_runs": mitigated,
    }


CRITERIA = [
    (1, "gradient suite", check_gradients, 5.0),
    (2, "huber continuity", check_huber_continuity, None),
    (3, "log-cosh taylor and bound", check_logcosh_taylor, None),
    (4, "wavefront vs bfs oracle", check_wavefront_oracle, 5.0),
    (5, "adaptive delta curves", check_adaptive_delta, None),
    (6, "table 2 orderings", check_table2, 120.0),
    (7, "table 3 orderings", check_table3, 300.0),
    (8, "reinforce beats random order", check_reinforce, 600.0),
    (9, "parameter counts", check_parameter_counts, None),
    (10, "plug-and-play replication", check_replication, None),
    (11, "run determinism", check_determinism, None),
    (12, "oscillation escape", check_oscillation, None),
]


def run_check(number: int) -> CheckResult:
    for n, name, fn, limit in CRITERIA:
        if n == number:
            return _timed(n, name, fn, limit)
    raise KeyError(number)


def run_all(only=None) -> list[CheckResult]:
    return [run_check(n) for n, *_ in CRITERIA if only is None or n in only]
