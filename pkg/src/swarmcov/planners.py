"""Obstacle-avoiding navigation: Wavefront on a grid, Potential Field in R^2/R^3.

The Potential Field cost is an attractive loss toward the goal plus a negated
loss toward every repeller (obstacle box or other drone) whose nearest point
lies inside the drone's field of view. Losses act per coordinate. For the
Huber family the threshold ``delta`` doubles as a speed cap: the per-axis
step never exceeds ``delta * step_scale``. The adaptive variant shrinks
``delta`` with the measure of FoV-obstacle overlap.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .world import WorldState, mark_mapped

LN2 = float(np.log(2.0))

# Wavefront tie-break priority among equal-valued neighbours.
COMPASS_ORDER = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))

OBSTACLE, FREE, GOAL = 1, 0, 2


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossKind:
    kind: str
    delta: float | None = None
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in ("l1", "mse", "logcosh", "huber", "huber_adaptive"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "huber" and not (self.delta and self.delta > 0):
            raise ValueError("fixed Huber needs delta > 0")
        if self.kind == "huber_adaptive":
            if not (self.alpha and self.alpha > 0) or self.beta is None or self.beta < 1:
                raise ValueError("adaptive Huber needs alpha > 0 and beta >= 1")

    @property
    def is_huber(self) -> bool:
        return self.kind.startswith("huber")

    @property
    def label(self) -> str:
        if self.kind == "huber":
            return f"huber(delta={self.delta:g})"
        if self.kind == "huber_adaptive":
            return f"huber_adaptive(alpha={self.alpha:g},beta={self.beta:g})"
        return self.kind

    def to_dict(self) -> dict:
        return {k: v for k, v in vars(self).items() if v is not None}


def L1():
    return LossKind("l1")


def MSE():
    return LossKind("mse")


def LogCosh():
    return LossKind("logcosh")


def HuberFixed(delta: float):
    return LossKind("huber", delta=float(delta))


def HuberAdaptive(alpha: float, beta: float):
    return LossKind("huber_adaptive", alpha=float(alpha), beta=float(beta))


def logcosh(r):
    a = np.abs(r)
    return a + np.log1p(np.exp(-2.0 * a)) - LN2


def _real(r):
    r = np.asarray(r)
    return r if r.dtype.kind == "f" else r.astype(float)


def loss_eval(kind: LossKind, r, delta=None):
    r = _real(r)
    if kind.kind == "l1":
        return np.abs(r)
    if kind.kind == "mse":
        return r * r
    if kind.kind == "logcosh":
        return logcosh(r)
    d = kind.delta if delta is None else delta
    a = np.abs(r)
    return np.where(a < d, 0.5 * r * r, d * (a - 0.5 * d))


def loss_grad(kind: LossKind, r, delta=None):
    r = _real(r)
    if kind.kind == "l1":
        return np.sign(r)
    if kind.kind == "mse":
        return 2.0 * r
    if kind.kind == "logcosh":
        return np.tanh(r)
    d = kind.delta if delta is None else delta
    return np.where(np.abs(r) < d, r, d * np.sign(r))


# ---------------------------------------------------------------------------
# geometry and adaptive delta
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AABox:
    center: np.ndarray
    half_extents: np.ndarray

    @property
    def lo(self):
        return np.asarray(self.center) - self.half_extents

    @property
    def hi(self):
        return np.asarray(self.center) + self.half_extents

    @property
    def measure(self) -> float:
        return float(np.prod(2.0 * np.asarray(self.half_extents)))


def box_overlap(a: AABox, b: AABox) -> float:
    if len(a.center) != len(b.center):
        raise ValueError("boxes differ in dimensionality")
    extent = np.minimum(a.hi, b.hi) - np.maximum(a.lo, b.lo)
    return float(np.prod(np.maximum(extent, 0.0)))


def _overlaps(fov_lo, fov_hi, centers, halves) -> np.ndarray:
    ext = np.minimum(fov_hi, centers + halves) - np.maximum(fov_lo, centers - halves)
    return np.prod(np.maximum(ext, 0.0), axis=1)


def adaptive_delta(K: float, overlap: float, alpha: float, beta: float, d: float) -> float:
    """delta = K / (K + alpha * overlap**beta) * d / 2."""
    if K <= 0:
        raise ValueError("FoV measure must be positive")
    if overlap < 0 or overlap > K * (1 + 1e-12):
        raise ValueError(f"overlap {overlap} outside [0, {K}]")
    return K / (K + alpha * overlap**beta) * d / 2.0


# ---------------------------------------------------------------------------
# potential field
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlannerConfig:
    loss: LossKind = field(default_factory=lambda: HuberAdaptive(1.0, 1.0))
    gamma: float = 0.5
    fov_edge: float = 2.0
    repulsion_range: float | None = None  # defaults to fov_edge / 2
    repulsive_scale: float = 0.5
    noise: bool = True
    noise_threshold: float = 0.01
    noise_magnitude: float | None = None  # defaults to 0.1 * fov_edge / 2
    step_scale: float = 1.0

    def __post_init__(self):
        if self.gamma <= 0 or self.fov_edge <= 0 or self.step_scale <= 0:
            raise ValueError("gamma, fov_edge and step_scale must be positive")
        if not 0 < self.repulsive_scale <= 1:
            raise ValueError("repulsive_scale must lie in (0, 1]")
        if self.repulsion_range is not None and not 0 < self.repulsion_range <= self.fov_edge / 2:
            raise ValueError("repulsion_range must lie in (0, fov_edge / 2]")
        if self.noise_threshold < 0 or (self.noise_magnitude is not None and self.noise_magnitude < 0):
            raise ValueError("noise parameters must be non-negative")

    @property
    def D(self) -> float:
        return self.fov_edge / 2 if self.repulsion_range is None else self.repulsion_range

    @property
    def epsilon(self) -> float:
        return 0.1 * self.fov_edge / 2 if self.noise_magnitude is None else self.noise_magnitude

    def evolve(self, **changes) -> "PlannerConfig":
        return replace(self, **changes)


def fov_overlap(x, centers, halves, fov_edge: float) -> float:
    """Measure of the drone's FoV covered by obstacles, capped at the FoV measure."""
    x = np.asarray(x, dtype=float)
    K = fov_edge ** len(x)
    if len(centers) == 0:
        return 0.0
    h = fov_edge / 2
    return float(min(_overlaps(x - h, x + h, centers, halves).sum(), K))


def effective_delta(x, centers, halves, cfg: PlannerConfig) -> float | None:
    loss = cfg.loss
    if loss.kind == "huber":
        return loss.delta
    if loss.kind != "huber_adaptive":
        return None
    K = cfg.fov_edge ** len(x)
    ov = fov_overlap(x, centers, halves, cfg.fov_edge)
    return adaptive_delta(K, ov, loss.alpha, loss.beta, cfg.fov_edge)


def repellers(x, centers, halves, others, D: float) -> np.ndarray:
    """Nearest points of every obstacle/drone within Chebyshev distance ``D``."""
    x = np.asarray(x, dtype=float)
    pts = []
    if len(centers):
        near = np.clip(x, centers - halves, centers + halves)
        pts.append(near[np.abs(near - x).max(axis=1) <= D])
    if others is not None and len(others):
        others = np.asarray(others, dtype=float).reshape(-1, len(x))
        pts.append(others[np.abs(others - x).max(axis=1) <= D])
    if not pts:
        return np.zeros((0, len(x)))
    return np.vstack(pts)


def potential_gradient(x, goal, centers, halves, others, cfg: PlannerConfig, delta=None):
    """Gradient of attractive + scaled repulsive potential at ``x``.

    ``delta`` overrides the Huber threshold; by default it is derived from
    the current FoV overlap.
    """
    x = np.asarray(x, dtype=float)
    centers = np.asarray(centers, dtype=float).reshape(-1, len(x))
    halves = np.asarray(halves, dtype=float).reshape(-1, len(x))
    if delta is None:
        delta = effective_delta(x, centers, halves, cfg)
    g = loss_grad(cfg.loss, x - np.asarray(goal, dtype=float), delta)
    rep = repellers(x, centers, halves, others, cfg.D)
    if len(rep):
        g = g - cfg.repulsive_scale * loss_grad(cfg.loss, x - rep, delta).sum(axis=0)
    return g


@dataclass
class StepInfo:
    delta: float | None
    grad_norm: float
    noise: bool


def pf_step(x, goal, w: WorldState, drone_id: int, cfg: PlannerConfig, rng, others=None):
    """One Potential Field update. Returns ``(new_position, StepInfo)``."""
    x = np.asarray(x, dtype=float)
    if others is None:
        others = np.delete(w.drones, drone_id, axis=0)
    delta = effective_delta(x, w.obstacle_centers, w.obstacle_half, cfg)
    g = potential_gradient(x, goal, w.obstacle_centers, w.obstacle_half, others, cfg, delta)
    u = -cfg.step_scale * g
    if cfg.loss.is_huber:
        cap = delta * cfg.step_scale
        u = np.clip(u, -cap, cap)
    noisy = False
    if cfg.noise and np.linalg.norm(u) < cfg.noise_threshold:
        u = u + rng.uniform(-cfg.epsilon, cfg.epsilon, size=len(x))
        noisy = True
    new = np.clip(x + u, 0.0, w.upper)
    return new, StepInfo(delta, float(np.linalg.norm(g)), noisy)


def inside_obstacles(x, centers, halves, tol: float = 1e-9) -> np.ndarray:
    """Indices of obstacles whose open interior contains ``x``."""
    if len(centers) == 0:
        return np.zeros(0, dtype=int)
    inside = (np.abs(np.asarray(x) - centers) < halves - tol).all(axis=1)
    return np.flatnonzero(inside)


# ---------------------------------------------------------------------------
# wavefront
# ---------------------------------------------------------------------------


class Unreachable(Exception):
    """The goal cell cannot be reached from the start cell."""


@dataclass
class OccupancyGrid:
    """``blocked[x, y]`` marks obstacle cells.

    ``blocked_corners[i, j]`` forbids diagonal moves across the grid vertex
    between cells ``(i, j)`` and ``(i + 1, j + 1)``.
    """

    blocked: np.ndarray
    blocked_corners: np.ndarray | None = None

    @property
    def width(self) -> int:
        return self.blocked.shape[0]

    @property
    def height(self) -> int:
        return self.blocked.shape[1]

    @classmethod
    def from_world(cls, w: WorldState) -> "OccupancyGrid":
        if w.dims != 2:
            raise ValueError("Wavefront planning is 2D only")
        nx, ny = w.extent
        xs, ys = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        cells = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float)
        blocked = np.zeros(nx * ny, dtype=bool)
        for c, h in zip(w.obstacle_centers, w.obstacle_half):
            blocked |= (np.abs(cells - c) < h - 1e-9).all(axis=1)
        corners = np.zeros((max(nx - 1, 0), max(ny - 1, 0)), dtype=bool)
        if corners.size:
            vx, vy = np.meshgrid(np.arange(nx - 1) + 0.5, np.arange(ny - 1) + 0.5, indexing="ij")
            verts = np.stack([vx.ravel(), vy.ravel()], axis=1)
            hit = np.zeros(len(verts), dtype=bool)
            for c, h in zip(w.obstacle_centers, w.obstacle_half):
                hit |= (np.abs(verts - c) < h - 1e-9).all(axis=1)
            corners = hit.reshape(corners.shape)
        return cls(blocked.reshape(nx, ny), corners)

    def neighbours(self, cell):
        x, y = cell
        for dx, dy in COMPASS_ORDER:
            nx_, ny_ = x + dx, y + dy
            if not (0 <= nx_ < self.width and 0 <= ny_ < self.height):
                continue
            if self.blocked[nx_, ny_]:
                continue
            if dx and dy and self.blocked_corners is not None:
                if self.blocked_corners[min(x, nx_), min(y, ny_)]:
                    continue
            yield nx_, ny_


def wavefront_values(grid: OccupancyGrid, goal) -> np.ndarray:
    """Wave values: obstacle 1, unreached 0, goal 2, then +1 per BFS ring."""
    values = np.where(grid.blocked, OBSTACLE, FREE).astype(int)
    goal = tuple(goal)
    values[goal] = GOAL
    queue = deque([goal])
    while queue:
        cell = queue.popleft()
        for nb in grid.neighbours(cell):
            if values[nb] == FREE:
                values[nb] = values[cell] + 1
                queue.append(nb)
    return values


def wavefront_plan(grid: OccupancyGrid, start, goal) -> list[tuple[int, int]]:
    """Cells to traverse from ``start`` (exclusive) to ``goal`` (inclusive)."""
    start, goal = tuple(int(v) for v in start), tuple(int(v) for v in goal)
    if grid.blocked[start] or grid.blocked[goal]:
        raise ValueError("start and goal must be free cells")
    if start == goal:
        return []
    values = wavefront_values(grid, goal)
    if values[start] == FREE:
        raise Unreachable(f"{goal} unreachable from {start}")
    path, cell = [], start
    while cell != goal:
        want = values[cell] - 1
        cell = next(nb for nb in grid.neighbours(cell) if values[nb] == want)
        path.append(cell)
    return path


# ---------------------------------------------------------------------------
# coverage runs
# ---------------------------------------------------------------------------


class OrderStream:
    """Walks a fixed visiting order, skipping points mapped in the meantime."""

    def __init__(self, order):
        self.order = list(order)
        self.pos = 0

    def next_target(self, w: WorldState, drone_id: int):
        while self.pos < len(self.order) and w.mapped[self.order[self.pos]]:
            self.pos += 1
        if self.pos < len(self.order):
            self.pos += 1
            return self.order[self.pos - 1]
        return None


WAVEFRONT = "wavefront"


@dataclass
class CoverageReport:
    ticks: int
    completed: bool
    mapped_timeline: list
    trajectories: list
    collisions: int
    collision_events: list
    path_lengths: list
    trace: list = field(default_factory=list)

    @property
    def timed_out(self) -> bool:
        return not self.completed


def _r(v):
    return [round(float(c), 10) for c in v]


def run_coverage(
    w: WorldState,
    streams,
    planner,
    max_ticks: int,
    rng: np.random.Generator | None = None,
    record_trace: bool = False,
) -> CoverageReport:
    """Drive every drone through its assignment stream until all PoI are mapped.

    ``planner`` is a :class:`PlannerConfig` or the string ``"wavefront"``.
    Drones move synchronously: each tick's updates are computed from the
    previous tick's snapshot and committed together.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    w = mark_mapped(w)
    n = w.n_drones
    wave = planner == WAVEFRONT
    grid = OccupancyGrid.from_world(w) if wave else None
    targets = [None] * n
    paths: list[list] = [[] for _ in range(n)]
    trajectories = [[_r(p)] for p in w.drones]
    timeline = [int(w.mapped.sum())]
    inside = [set(inside_obstacles(p, w.obstacle_centers, w.obstacle_half)) for p in w.drones]
    events_log, trace = [], []
    path_len = [0.0] * n
    collisions = 0
    tick = 0

    def pick_target(i, w):
        while True:
            t = streams[i].next_target(w, i)
            if t is None or not wave:
                return t, []
            try:
                start = tuple(int(round(c)) for c in w.drones[i])
                goal = tuple(int(round(c)) for c in w.poi_positions[t])
                return t, wavefront_plan(grid, start, goal)
            except Unreachable:
                continue

    while not w.done and tick < max_ticks:
        tick += 1
        snapshot = w
        new_pos = snapshot.drones.copy()
        infos = [None] * n
        tick_events = [[] for _ in range(n)]
        for i in range(n):
            if targets[i] is None or snapshot.mapped[targets[i]]:
                targets[i], paths[i] = pick_target(i, snapshot)
                if targets[i] is not None:
                    tick_events[i].append(f"target:{targets[i]}")
            if targets[i] is None:
                continue
            if wave:
                if paths[i]:
                    new_pos[i] = np.asarray(paths[i].pop(0), dtype=float)
            else:
                new_pos[i], infos[i] = pf_step(
                    snapshot.drones[i], snapshot.poi_positions[targets[i]], snapshot, i, planner, rng
                )
        for i in range(n):
            path_len[i] += float(np.linalg.norm(new_pos[i] - snapshot.drones[i]))
        w = mark_mapped(snapshot.evolve(drones=new_pos, step_count=snapshot.step_count + 1))
        newly = np.flatnonzero(w.mapped & ~snapshot.mapped)
        for i in range(n):
            now = set(inside_obstacles(w.drones[i], w.obstacle_centers, w.obstacle_half))
            for k in sorted(now - inside[i]):
                collisions += 1
                events_log.append({"tick": tick, "drone": i, "obstacle": int(k)})
                tick_events[i].append(f"collision:{k}")
            inside[i] = now
            trajectories[i].append(_r(w.drones[i]))
            d = np.linalg.norm(w.poi_positions[newly] - w.drones[i], axis=1) if len(newly) else []
            for k, dist in zip(newly, d):
                if dist < w.gamma:
                    tick_events[i].append(f"mapped:{k}")
        timeline.append(int(w.mapped.sum()))
        if record_trace:
            for i in range(n):
                info = infos[i]
                trace.append(
                    {
                        "tick": tick,
                        "drone": i,
                        "position": _r(w.drones[i]),
                        "delta": None if info is None or info.delta is None else round(info.delta, 10),
                        "grad_norm": None if info is None else round(info.grad_norm, 10),
                        "events": tick_events[i],
                    }
                )
    return CoverageReport(
        ticks=tick,
        completed=w.done,
        mapped_timeline=timeline,
        trajectories=trajectories,
        collisions=collisions,
        collision_events=events_log,
        path_lengths=[round(p, 10) for p in path_len],
        trace=trace,
    )
