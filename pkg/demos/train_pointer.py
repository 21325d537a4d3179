"""Train a small Pointer Network with REINFORCE and compare it to random ordering.

This is a short run (a few hundred updates) meant to show the moving parts;
``swarmcov bench-table1 --train-episodes N`` does the longer version.
"""

import numpy as np

from swarmcov.harness import TABLE1_FIXTURE, TABLE1_TRAIN
from swarmcov.policies import PolicyNetwork, PolicyVariant, count_parameters
from swarmcov.reinforce import EVAL_SEED_OFFSET, evaluate, expected_random_length, train
from swarmcov.world import reset_world

EPISODES = 1500

for v in PolicyVariant:
    print(f"{v.value:18s} {count_parameters(v):7d} parameters")

policy = PolicyNetwork.build(PolicyVariant.POINTER, seed=0)
before = evaluate(policy, TABLE1_FIXTURE, 20)

cfg = TABLE1_TRAIN.__class__(**{**TABLE1_TRAIN.__dict__, "n_episodes": EPISODES})
log = train(policy, TABLE1_FIXTURE, cfg)
after = evaluate(policy, TABLE1_FIXTURE, 20)

random_exp = [expected_random_length(reset_world(TABLE1_FIXTURE, EVAL_SEED_OFFSET + k)) for k in range(20)]

tail = [row["return"] for row in log[-200:]]
print(f"\nepisodes: {len(log)}, mean return over the last 200: {np.mean(tail):.2f}")
print(f"untrained greedy median length: {np.median(before):.1f}")
print(f"trained greedy median length:   {np.median(after):.1f}")
print(f"random order, exact expectation: {np.median(random_exp):.2f}")
