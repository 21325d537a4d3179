"""REINFORCE training of a single drone's assignment policy, plus replication.

An episode interleaves decisions and movement: the policy picks the next PoI
(masking everything already chosen or mapped), the drone walks toward it with
compass moves, and a new decision is taken as soon as the current target is
mapped. Each decision is credited with the undiscounted return from the world
step at which it was taken.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import neural as nn
from .policies import PolicyNetwork, encode_input
from .world import (
    ConfigError,
    WorldConfig,
    WorldState,
    compute_reward,
    greedy_move_action,
    joint_step,
    reset_world,
)

EVAL_SEED_OFFSET = 1_000_000


@dataclass
class Decision:
    step: int
    allowed: np.ndarray
    choice: int


@dataclass
class Episode:
    start: WorldState
    decisions: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    state_hashes: list = field(default_factory=list)
    returns: list = field(default_factory=list)
    reference: float | None = None  # greedy-decode return on the same start state

    @property
    def total_steps(self) -> int:
        return len(self.rewards)

    @property
    def total_return(self) -> float:
        return self.returns[0] if self.returns else 0.0

    def decision_returns(self) -> list[float]:
        return [self.returns[d.step] for d in self.decisions]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    baseline: str = "moving_average"
    decay: float = 0.9
    episodes_per_update: int = 8
    max_episode_steps: int = 100
    n_episodes: int = 2000
    max_grad_norm: float | None = None
    optimizer: str = "sgd"
    samples_per_world: int = 1
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.learning_rate < 0:
            raise ConfigError("train.learning_rate must be >= 0")
        if self.baseline not in ("none", "moving_average", "shared", "greedy"):
            raise ConfigError("train.baseline must be 'none', 'moving_average', 'shared' or 'greedy'")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("train.optimizer must be 'sgd' or 'adam'")
        if self.samples_per_world < 1:
            raise ConfigError("train.samples_per_world must be >= 1")
        if self.baseline == "shared" and self.samples_per_world < 2:
            raise ConfigError("train.baseline 'shared' needs samples_per_world >= 2")
        if not 0.0 < self.decay < 1.0:
            raise ConfigError("train.decay must lie in (0, 1)")
        if self.episodes_per_update < 1 or self.max_episode_steps < 1 or self.n_episodes < 0:
            raise ConfigError("train episode counts must be positive")
        return self


class RandomOrder:
    """Uniform choice among the available PoI; the untrained-free baseline."""

    def session(self, inp):
        return _UniformSession()


class _UniformSession:
    def distribution(self, allowed):
        allowed = np.asarray(allowed, dtype=bool)
        return allowed / allowed.sum()

    def feed(self, index):
        pass


def returns_to_go(rewards) -> list[float]:
    out = []
    acc = 0.0
    for r in reversed(list(rewards)):
        acc += r
        out.append(acc)
    return out[::-1]


def _hash_state(w: WorldState) -> str:
    return hashlib.sha256(w.to_json().encode()).hexdigest()[:16]


def rollout(
    policy,
    w0: WorldState,
    rng: np.random.Generator | None,
    max_steps: int,
    mode: str = "sample",
    drone_id: int = 0,
) -> Episode:
    """Run one single-drone episode on the task-assignment grid."""
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    if w0.done:
        raise ValueError("rollout on a world with nothing left to map")
    sess = policy.session(encode_input(w0, drone_id))
    ep = Episode(start=w0)
    chosen = np.zeros(w0.n_poi, dtype=bool)
    w, target = w0, None
    while not w.done and ep.total_steps < max_steps:
        if target is None or w.mapped[target]:
            allowed = ~(w.mapped | chosen)
            probs = sess.distribution(allowed)
            if mode == "greedy":
                target = int(np.argmax(probs))
            else:
                target = int(rng.choice(len(probs), p=probs))
            ep.decisions.append(Decision(ep.total_steps, allowed, target))
            sess.feed(target)
            chosen[target] = True
        action = greedy_move_action(w.drones[drone_id], w.poi_positions[target])
        actions = [None] * w.n_drones
        actions[drone_id] = action
        w_next = joint_step(w, actions)
        ep.actions.append(action.name)
        ep.rewards.append(compute_reward(w, w_next, drone_id))
        ep.state_hashes.append(_hash_state(w_next))
        w = w_next
    ep.returns = returns_to_go(ep.rewards)
    return ep


class MovingAverageBaseline:
    """Bias-corrected exponential averages of batch-mean returns.

    One average is kept per decision index ``k`` (the return-to-go seen by the
    ``k``-th decision of an episode); index 0 tracks whole-episode returns.
    After ``n`` batches an index's value equals
    ``sum(d**(n-j) R_j) / sum(d**(n-j))`` over the batches that reached it.
    """

    def __init__(self, decay: float):
        self.decay = decay
        self.acc: list[float] = []
        self.norm: list[float] = []

    @property
    def value(self) -> float | None:
        return self.at(0)

    def at(self, k: int) -> float | None:
        if k < len(self.acc) and self.norm[k]:
            return self.acc[k] / self.norm[k]
        return None

    def update(self, batch_mean: float, k: int = 0) -> float:
        while len(self.acc) <= k:
            self.acc.append(0.0)
            self.norm.append(0.0)
        self.acc[k] = self.decay * self.acc[k] + batch_mean
        self.norm[k] = self.decay * self.norm[k] + 1.0
        return self.at(k)

    def update_batch(self, episodes) -> None:
        per_index: dict[int, list[float]] = {}
        for ep in episodes:
            for k, g in enumerate(ep.decision_returns()):
                per_index.setdefault(k, []).append(g)
        for k, gs in per_index.items():
            self.update(float(np.mean(gs)), k)

    def values_for(self, episodes) -> list[list[float]]:
        """Baseline per decision, falling back to the batch mean at unseen indices."""
        fallback: dict[int, list[float]] = {}
        for ep in episodes:
            for k, g in enumerate(ep.decision_returns()):
                fallback.setdefault(k, []).append(g)
        out = []
        for ep in episodes:
            row = []
            for k in range(len(ep.decisions)):
                v = self.at(k)
                row.append(float(np.mean(fallback[k])) if v is None else v)
            out.append(row)
        return out


def policy_loss(policy: PolicyNetwork, episodes, baselines) -> nn.Var | None:
    """Surrogate ``-mean_episodes sum_k (G_k - b_k) log pi_k`` on the tape.

    ``baselines`` is a scalar or one list of per-decision values per episode.
    """
    terms = []
    scale = 1.0 / len(episodes)
    for e, ep in enumerate(episodes):
        sess = policy.session(encode_input(ep.start, 0))
        for k, (d, g) in enumerate(zip(ep.decisions, ep.decision_returns())):
            lp = sess.log_prob(d.allowed, d.choice)
            sess.feed(d.choice)
            b = baselines if np.isscalar(baselines) else baselines[e][k]
            adv = g - b
            if adv != 0.0:
                terms.append((-adv * scale, lp))
    return nn.weighted_sum(terms) if terms else None


class SharedBaseline:
    """Mean return-to-go at each decision index over episodes sampled from one world.

    Episodes are grouped by their starting state, so every group must hold
    several samples of the same world for the baseline to be informative.
    """

    def values_for(self, episodes) -> list[list[float]]:
        groups: dict[int, list] = {}
        for ep in episodes:
            groups.setdefault(id(ep.start), []).append(ep.decision_returns())
        out = []
        for ep in episodes:
            peers = groups[id(ep.start)]
            out.append([float(np.mean([g[k] for g in peers if len(g) > k])) for k in range(len(ep.decisions))])
        return out

    def update_batch(self, episodes) -> None:
        pass


class GreedyBaseline:
    """Self-critical baseline: every decision's advantage is the episode's total
    return minus the greedy-decode return on the same start state."""

    def values_for(self, episodes) -> list[list[float]]:
        out = []
        for ep in episodes:
            if ep.reference is None:
                raise ValueError("greedy baseline needs Episode.reference")
            out.append([ep.reference + g - ep.total_return for g in ep.decision_returns()])
        return out

    def update_batch(self, episodes) -> None:
        pass


class Adam:
    """Adam moments for every tensor of a ParamStore."""

    def __init__(self, store: nn.ParamStore, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in store.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in store.params.items()}
        self.t = 0

    def direction(self, grads: dict) -> dict:
        self.t += 1
        out = {}
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mh = self.m[k] / (1 - self.b1**self.t)
            vh = self.v[k] / (1 - self.b2**self.t)
            out[k] = mh / (np.sqrt(vh) + self.eps)
        return out


def make_baseline(cfg: TrainConfig):
    if cfg.baseline == "moving_average":
        return MovingAverageBaseline(cfg.decay)
    if cfg.baseline == "shared":
        return SharedBaseline()
    if cfg.baseline == "greedy":
        return GreedyBaseline()
    return None


def reinforce_update(policy: PolicyNetwork, episodes, cfg: TrainConfig, baseline=None, optimizer=None) -> dict:
    """One gradient-ascent step on the batch; mutates ``policy.params``.

    Plain SGD unless an :class:`Adam` instance is passed.
    """
    if not episodes:
        raise ValueError("empty batch")
    batch_mean = float(np.mean([ep.total_return for ep in episodes]))
    b = 0.0 if baseline is None else baseline.values_for(episodes)
    store = policy.params
    store.zero_grad()
    loss = policy_loss(policy, episodes, b)
    if loss is not None:
        loss.backward()
    gnorm = store.grad_norm()
    diag = {
        "mean_return": batch_mean,
        "mean_steps": float(np.mean([ep.total_steps for ep in episodes])),
        "grad_norm": gnorm,
        "baseline": 0.0 if baseline is None else float(np.mean([r[0] for r in b if r] or [0.0])),
        "aborted": False,
    }
    if baseline is not None:
        baseline.update_batch(episodes)
    if not np.isfinite(gnorm):
        diag["aborted"] = True
        store.zero_grad()
        return diag
    scale = cfg.learning_rate
    if cfg.max_grad_norm is not None and gnorm > cfg.max_grad_norm:
        scale *= cfg.max_grad_norm / gnorm
    if scale:
        step = store.grads if optimizer is None else optimizer.direction(store.grads)
        for name, p in store.params.items():
            p -= scale * step[name]
    return diag


def replicate(policy: PolicyNetwork, n_agents: int) -> list[PolicyNetwork]:
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    return [policy.copy() for _ in range(n_agents)]


def _world_seeds(seed: int, n: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([seed, 7])).integers(0, 2**31, size=n)


def train(
    policy: PolicyNetwork,
    world: WorldConfig,
    cfg: TrainConfig,
    log_path=None,
    checkpoint_path=None,
    checkpoint_every: int = 0,
) -> list[dict]:
    """Train in place; returns the per-episode log rows (also written as JSONL).

    Each sampled world is rolled out ``samples_per_world`` times; a batch
    holds at least ``episodes_per_update`` episodes.
    """
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    n_worlds = -(-cfg.n_episodes // cfg.samples_per_world)
    seeds = _world_seeds(cfg.seed, n_worlds)
    baseline = make_baseline(cfg)
    optimizer = Adam(policy.params) if cfg.optimizer == "adam" else None
    rows = []
    fh = open(log_path, "w") if log_path else None
    try:
        batch, updates, episode = [], 0, 0
        for wi in range(n_worlds):
            w0 = reset_world(world, int(seeds[wi]))
            k = min(cfg.samples_per_world, cfg.n_episodes - episode)
            if w0.done:
                batch += [Episode(start=w0) for _ in range(k)]
            else:
                eps = [rollout(policy, w0, rng, cfg.max_episode_steps) for _ in range(k)]
                if cfg.baseline == "greedy":
                    ref = rollout(policy, w0, None, cfg.max_episode_steps, mode="greedy").total_return
                    for e in eps:
                        e.reference = ref
                batch += eps
            episode += k
            if len(batch) < cfg.episodes_per_update and wi < n_worlds - 1:
                continue
            live = [e for e in batch if e.decisions]
            diag = {"grad_norm": 0.0, "baseline": 0.0, "aborted": False}
            if live:
                diag = reinforce_update(policy, live, cfg, baseline, optimizer)
            updates += 1
            for e in batch:
                row = {
                    "episode": len(rows),
                    "return": e.total_return,
                    "steps": e.total_steps,
                    "grad_norm": diag["grad_norm"],
                    "baseline": diag["baseline"],
                }
                rows.append(row)
                if fh:
                    fh.write(json.dumps(row) + "\n")
            batch = []
            if diag["aborted"]:
                raise FloatingPointError(f"non-finite gradient at update {updates}")
            if checkpoint_path and checkpoint_every and updates % checkpoint_every == 0:
                policy.save(checkpoint_path)
    finally:
        if fh:
            fh.close()
    if checkpoint_path:
        policy.save(checkpoint_path)
    return rows


def evaluate(policy, world: WorldConfig, n_seeds: int = 20, mode: str = "greedy",
             max_steps: int = 200, seed: int = 0) -> list[int]:
    """Episode lengths on held-out worlds (seeds disjoint from training)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    lengths = []
    for k in range(n_seeds):
        w0 = reset_world(world, EVAL_SEED_OFFSET + k)
        if w0.done:
            lengths.append(0)
            continue
        lengths.append(rollout(policy, w0, rng, max_steps, mode=mode).total_steps)
    return lengths


def train_config_from_dict(doc: dict, path: str = "train") -> TrainConfig:
    known = set(asdict(TrainConfig()))
    for key in doc:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown key")
    return TrainConfig(**doc).validate()


def expected_random_length(w0: WorldState, drone_id: int = 0) -> float:
    """Exact mean episode length of :class:`RandomOrder` from ``w0``.

    Picking uniformly among the remaining unmapped PoI is the same as walking
    a uniformly random permutation and skipping points mapped on the way, so
    the expectation is a recursion over (position, mapped set).
    """
    memo: dict = {}

    def walk(w, target):
        n = 0
        while not w.mapped[target]:
            actions = [None] * w.n_drones
            actions[drone_id] = greedy_move_action(w.drones[drone_id], w.poi_positions[target])
            w = joint_step(w, actions)
            n += 1
        return w, n

    def expect(w):
        if w.done:
            return 0.0
        key = (w.drones[drone_id].tobytes(), w.mapped.tobytes())
        if key not in memo:
            total = 0.0
            options = np.flatnonzero(~w.mapped)
            for t in options:
                w2, n = walk(w, t)
                total += n + expect(w2)
            memo[key] = total / len(options)
        return memo[key]

    return expect(w0)


def save_log(rows, path) -> None:
    Path(path).write_text("".join(json.dumps(r) + "\n" for r in rows))
