"""Deterministic 2D/3D coverage worlds: spawning, movement, mapping, reward.

Coordinates are in cell units. Cell ``i`` along an axis has its centre at
the integer ``i``; continuous worlds clamp positions to the hull of the cell
centres, ``[0, extent - 1]`` per axis. PoI are stored in row-major cell order
(x fastest), which is also the order the policy encoders consume them in.

Obstacles only exist in continuous (planner) worlds. Their footprints are
axis-aligned boxes centred on interior grid vertices, so they sit between PoI
instead of on top of them. In 3D every obstacle stands on the ground plane.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

POI_ALTITUDE = (5.0, 10.0)
OBSTACLE_HEIGHT = (1.0, 10.0)
Z_EXTENT_3D = 11


class ConfigError(ValueError):
    """Raised for infeasible or malformed world/experiment configurations."""


class CompassAction(enum.Enum):
    N = (0, 1)
    NE = (1, 1)
    E = (1, 0)
    SE = (1, -1)
    S = (0, -1)
    SW = (-1, -1)
    W = (-1, 0)
    NW = (-1, 1)

    @property
    def delta(self) -> np.ndarray:
        return np.array(self.value, dtype=float)


@dataclass(frozen=True)
class WorldConfig:
    dims: int = 2
    extent: int = 5
    n_drones: int = 1
    n_poi: int = 25
    high_priority_count: int = 0
    obstacle_density: float = 0.0
    obstacle_half_extent: float = 0.5
    fov_edge: float = 2.0
    gamma: float = 0.5
    alpha_reward: float = 5.0
    step_penalty: float = 1.0
    continuous: bool = False
    seed: int = 0

    def validate(self) -> "WorldConfig":
        if self.dims not in (2, 3):
            raise ConfigError(f"dims must be 2 or 3, got {self.dims}")
        if self.extent < 1:
            raise ConfigError("extent must be >= 1")
        cells = self.extent**2
        if self.n_poi < 0 or self.n_poi > cells:
            raise ConfigError(f"cannot place {self.n_poi} PoI on {cells} cells")
        if self.n_drones < 1 or self.n_drones > cells:
            raise ConfigError(f"cannot place {self.n_drones} drones on {cells} cells")
        if not 0 <= self.high_priority_count <= self.n_poi:
            raise ConfigError("high_priority_count must lie in [0, n_poi]")
        if not 0.0 <= self.obstacle_density <= 1.0:
            raise ConfigError("obstacle_density must lie in [0, 1]")
        if self.obstacle_density > 0 and not self.continuous:
            raise ConfigError("the task-assignment grid world has no obstacles")
        if self.dims == 3 and not self.continuous:
            raise ConfigError("3D worlds are continuous")
        if self.obstacle_half_extent <= 0 or self.fov_edge <= 0 or self.gamma <= 0:
            raise ConfigError("obstacle_half_extent, fov_edge and gamma must be > 0")
        if self.alpha_reward <= 0:
            raise ConfigError("alpha_reward must be > 0")
        return self

    @classmethod
    def from_dict(cls, doc: dict, path: str = "world") -> "WorldConfig":
        known = {f.name for f in fields(cls)}
        for key in doc:
            if key not in known:
                raise ConfigError(f"{path}.{key}: unknown key")
        return cls(**doc).validate()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class WorldState:
    """Immutable snapshot; every operation returns a new state."""

    dims: int
    extent: tuple
    continuous: bool
    drones: np.ndarray  # (n_drones, dims)
    fov_edge: float
    poi_positions: np.ndarray  # (n_poi, dims)
    poi_high: np.ndarray  # (n_poi,) bool
    mapped: np.ndarray  # (n_poi,) bool
    obstacle_centers: np.ndarray  # (n_obs, dims)
    obstacle_half: np.ndarray  # (n_obs, dims)
    gamma: float = 0.5
    alpha_reward: float = 5.0
    step_penalty: float = 1.0
    step_count: int = 0

    @property
    def n_drones(self) -> int:
        return len(self.drones)

    @property
    def n_poi(self) -> int:
        return len(self.poi_positions)

    @property
    def done(self) -> bool:
        return bool(self.mapped.all())

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.extent, dtype=float) - 1.0

    def evolve(self, **changes) -> "WorldState":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "extent": list(self.extent),
            "continuous": self.continuous,
            "drones": self.drones.tolist(),
            "fov_edge": self.fov_edge,
            "poi_positions": self.poi_positions.tolist(),
            "poi_high": self.poi_high.tolist(),
            "mapped": self.mapped.tolist(),
            "obstacle_centers": self.obstacle_centers.tolist(),
            "obstacle_half": self.obstacle_half.tolist(),
            "gamma": self.gamma,
            "alpha_reward": self.alpha_reward,
            "step_penalty": self.step_penalty,
            "step_count": self.step_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "WorldState":
        dims = d["dims"]

        def arr(key, dtype=float):
            return np.asarray(d[key], dtype=dtype).reshape(-1, dims)

        return cls(
            dims=dims,
            extent=tuple(d["extent"]),
            continuous=d["continuous"],
            drones=arr("drones"),
            fov_edge=d["fov_edge"],
            poi_positions=arr("poi_positions"),
            poi_high=np.asarray(d["poi_high"], dtype=bool),
            mapped=np.asarray(d["mapped"], dtype=bool),
            obstacle_centers=arr("obstacle_centers"),
            obstacle_half=arr("obstacle_half"),
            gamma=d["gamma"],
            alpha_reward=d["alpha_reward"],
            step_penalty=d["step_penalty"],
            step_count=d["step_count"],
        )


def _cells_to_xy(cells: np.ndarray, extent: int) -> np.ndarray:
    return np.stack([cells % extent, cells // extent], axis=1).astype(float)


def reset_world(config: WorldConfig, seed: int | None = None) -> WorldState:
    """Spawn a fresh world. Identical ``(config, seed)`` give identical states."""
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n_cells = config.extent**2

    drone_cells = rng.choice(n_cells, size=config.n_drones, replace=False)
    poi_cells = np.sort(rng.choice(n_cells, size=config.n_poi, replace=False))
    high = np.zeros(config.n_poi, dtype=bool)
    if config.high_priority_count:
        high[rng.choice(config.n_poi, size=config.high_priority_count, replace=False)] = True

    drones = _cells_to_xy(drone_cells, config.extent)
    pois = _cells_to_xy(poi_cells, config.extent)

    n_slots = max(config.extent - 1, 0) ** 2
    n_obs = min(int(round(config.obstacle_density * n_cells)), n_slots)
    if n_obs:
        slots = np.sort(rng.choice(n_slots, size=n_obs, replace=False))
        centers = _cells_to_xy(slots, config.extent - 1) + 0.5
    else:
        centers = np.zeros((0, 2))
    half = np.full((n_obs, 2), config.obstacle_half_extent)

    if config.dims == 3:
        drones = np.column_stack([drones, rng.uniform(*POI_ALTITUDE, size=config.n_drones)])
        pois = np.column_stack([pois, rng.uniform(*POI_ALTITUDE, size=config.n_poi)])
        heights = rng.uniform(*OBSTACLE_HEIGHT, size=n_obs)
        centers = np.column_stack([centers, heights / 2.0])
        half = np.column_stack([half, heights / 2.0])
        extent = (config.extent, config.extent, Z_EXTENT_3D)
    else:
        extent = (config.extent, config.extent)

    w = WorldState(
        dims=config.dims,
        extent=extent,
        continuous=config.continuous,
        drones=drones,
        fov_edge=config.fov_edge,
        poi_positions=pois,
        poi_high=high,
        mapped=np.zeros(config.n_poi, dtype=bool),
        obstacle_centers=centers.reshape(n_obs, config.dims),
        obstacle_half=half.reshape(n_obs, config.dims),
        gamma=config.gamma,
        alpha_reward=config.alpha_reward,
        step_penalty=config.step_penalty,
    )
    return mark_mapped(w)


def greedy_move_action(start, target) -> CompassAction:
    d = np.sign(np.asarray(target, dtype=float)[:2] - np.asarray(start, dtype=float)[:2])
    if not d.any():
        raise ValueError("greedy_move_action: already at the target")
    return CompassAction((int(d[0]), int(d[1])))


def _within(w: WorldState, dist: np.ndarray) -> np.ndarray:
    if w.continuous:
        return dist < w.gamma
    return dist == 0.0


def coverers(w: WorldState, poi: int) -> np.ndarray:
    """Indices of drones currently mapping ``poi``."""
    dist = np.linalg.norm(w.drones - w.poi_positions[poi], axis=1)
    return np.flatnonzero(_within(w, dist))


def mark_mapped(w: WorldState) -> WorldState:
    if w.n_poi == 0 or w.mapped.all():
        return w
    dist = np.linalg.norm(w.poi_positions[:, None, :] - w.drones[None, :, :], axis=2)
    newly = _within(w, dist).any(axis=1) & ~w.mapped
    if not newly.any():
        return w
    return w.evolve(mapped=w.mapped | newly)


def move_drone(w: WorldState, drone_id: int, position) -> WorldState:
    pos = np.clip(np.asarray(position, dtype=float), 0.0, w.upper)
    drones = w.drones.copy()
    drones[drone_id] = pos
    return w.evolve(drones=drones)


def apply_action(w: WorldState, drone_id: int, action: CompassAction) -> WorldState:
    """Move one drone a unit step (clamped) and refresh the mapping flags.

    The step counter is left alone; use :func:`joint_step` to advance a tick.
    """
    delta = np.zeros(w.dims)
    delta[:2] = action.delta
    return mark_mapped(move_drone(w, drone_id, w.drones[drone_id] + delta))


def joint_step(w: WorldState, actions) -> WorldState:
    """All drones act (``None`` means hold position), then the tick advances."""
    for i, a in enumerate(actions):
        if a is not None:
            w = apply_action(w, i, a)
    return w.evolve(step_count=w.step_count + 1)


def compute_reward(w_before: WorldState, w_after: WorldState, drone_id: int) -> float:
    """Per-drone reward: mapping bonus minus high-priority distance penalty minus one."""
    if not 0 <= drone_id < w_after.n_drones:
        raise IndexError(f"invalid drone id {drone_id}")
    alpha = w_after.alpha_reward
    newly = np.flatnonzero(w_after.mapped & ~w_before.mapped)
    pos = w_after.drones[drone_id]
    bonus = 0.0
    if len(newly):
        dist = np.linalg.norm(w_after.poi_positions[newly] - pos, axis=1)
        mine = _within(w_after, dist)
        bonus = float(np.sum(np.where(w_after.poi_high[newly[mine]], 2 * alpha, alpha)))
    pending = w_after.poi_high & ~w_after.mapped
    penalty = 0.0
    if pending.any():
        penalty = float(np.linalg.norm(w_after.poi_positions[pending] - pos, axis=1).min())
    return bonus - penalty - w_after.step_penalty


def diameter(w: WorldState) -> float:
    return float(np.linalg.norm(w.upper))
