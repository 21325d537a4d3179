"""Walk one cluttered 2D world with each attractive loss and compare tick counts.

Run with ``python3 demos/loss_comparison.py``.
"""

import numpy as np

from swarmcov.harness import bench_world
from swarmcov.planners import (
    WAVEFRONT,
    HuberAdaptive,
    HuberFixed,
    L1,
    LogCosh,
    MSE,
    OrderStream,
    PlannerConfig,
    run_coverage,
)
from swarmcov.world import reset_world

SEED = 3
world_cfg = bench_world(2)
print(f"world: {world_cfg.extent}x{world_cfg.extent}, {world_cfg.n_poi} PoI, {world_cfg.n_drones} drones")

# Same visiting order for every planner so only the motion differs.
orders = [np.random.default_rng([SEED, i]).permutation(world_cfg.n_poi) for i in range(world_cfg.n_drones)]

planners = {
    "l1": PlannerConfig(loss=L1()),
    "mse": PlannerConfig(loss=MSE()),
    "logcosh": PlannerConfig(loss=LogCosh()),
    "huber 0.5": PlannerConfig(loss=HuberFixed(0.5)),
    "huber 1.0": PlannerConfig(loss=HuberFixed(1.0)),
    "adaptive(1,1)": PlannerConfig(loss=HuberAdaptive(1, 1)),
    "wavefront": WAVEFRONT,
}

for name, planner in planners.items():
    w = reset_world(world_cfg, SEED)
    rep = run_coverage(w, [OrderStream(o) for o in orders], planner, 500, np.random.default_rng(SEED))
    status = "done" if rep.completed else "timed out"
    print(f"{name:14s} {rep.ticks:4d} ticks  {status:9s}  collisions={rep.collisions}")

# A closer look at the adaptive threshold along one trajectory.
w = reset_world(world_cfg, SEED)
rep = run_coverage(
    w, [OrderStream(o) for o in orders], planners["adaptive(1,1)"], 500, np.random.default_rng(SEED), record_trace=True
)
deltas = np.array([row["delta"] for row in rep.trace if row["drone"] == 0 and row["delta"] is not None])
print(f"\nadaptive delta for drone 0: min {deltas.min():.3f}, median {np.median(deltas):.3f}, max {deltas.max():.3f}")
