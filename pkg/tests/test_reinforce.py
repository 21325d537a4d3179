import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmcov.harness import TABLE1_FIXTURE, TABLE1_TRAIN
from swarmcov.policies import PolicyNetwork, PolicyVariant, encode_input
from swarmcov.reinforce import (
    EVAL_SEED_OFFSET,
    Decision,
    Episode,
    MovingAverageBaseline,
    RandomOrder,
    SharedBaseline,
    TrainConfig,
    evaluate,
    expected_random_length,
    reinforce_update,
    returns_to_go,
    rollout,
    train,
    train_config_from_dict,
)
from swarmcov.world import ConfigError, WorldConfig, reset_world

from conftest import make_world

SMALL_PTR = {"embed": 8, "hidden": 8}


def test_returns_to_go_examples():
    assert returns_to_go([1, 2, 3]) == [6, 5, 3]
    assert returns_to_go([]) == []
    assert returns_to_go([-2.5]) == [-2.5]


@given(st.lists(st.floats(-100, 100), max_size=30))
def test_returns_to_go_suffix_sums(rs):
    g = returns_to_go(rs)
    assert len(g) == len(rs)
    for i in range(len(rs)):
        assert g[i] == pytest.approx(sum(rs[i:]), abs=1e-9)


def test_rollout_single_poi_one_step():
    w = make_world([[0, 0]], [[1, 0]])
    ep = rollout(RandomOrder(), w, np.random.default_rng(0), 10)
    assert ep.total_steps == 1 and ep.total_return == 4.0


def test_rollout_done_world_rejected():
    w = make_world([[0, 0]], [[0, 0]])
    from swarmcov.world import mark_mapped

    with pytest.raises(ValueError):
        rollout(RandomOrder(), mark_mapped(w), np.random.default_rng(0), 10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_rollout_respects_budget(seed, budget):
    w = reset_world(WorldConfig(extent=4, n_poi=6, high_priority_count=2), seed)
    ep = rollout(RandomOrder(), w, np.random.default_rng(seed), budget)
    assert ep.total_steps <= budget
    assert len(ep.returns) == len(ep.rewards) == len(ep.state_hashes)
    choices = [d.choice for d in ep.decisions]
    assert len(choices) == len(set(choices))


def test_moving_average_closed_form():
    b = MovingAverageBaseline(0.9)
    xs = [3.0, -1.0, 4.0, 1.5]
    for x in xs:
        b.update(x)
    n = len(xs)
    wts = [0.9 ** (n - 1 - j) for j in range(n)]
    assert b.value == pytest.approx(sum(w * x for w, x in zip(wts, xs)) / sum(wts), rel=1e-12)


def _bandit_world():
    return make_world([[2, 2]], [[0, 0], [4, 4]])


def _bandit_episode(w, choice, ret):
    allowed = np.array([True, True])
    return Episode(start=w, decisions=[Decision(0, allowed, choice)], rewards=[ret], returns=[ret])


def _p_arm0(pol, w):
    return pol.session(encode_input(w, 0)).distribution(np.array([True, True]))[0]


def test_zero_learning_rate_and_zero_advantage_are_noops():
    pol = PolicyNetwork.build("PointerNet", SMALL_PTR, seed=0)
    before = pol.params.flat().copy()
    w = _bandit_world()
    eps = [_bandit_episode(w, 0, 1.0), _bandit_episode(w, 1, 0.0)]
    reinforce_update(pol, eps, TrainConfig(learning_rate=0.0))
    assert np.array_equal(pol.params.flat(), before)

    class Exact:
        def values_for(self, episodes):
            return [ep.decision_returns() for ep in episodes]

        def update_batch(self, episodes):
            pass

    reinforce_update(pol, eps, TrainConfig(learning_rate=0.5), Exact())
    assert np.array_equal(pol.params.flat(), before)


def test_bandit_probability_increases():
    pol = PolicyNetwork.build("PointerNet", SMALL_PTR, seed=0)
    w = _bandit_world()
    rng = np.random.default_rng(0)
    cfg = TrainConfig(learning_rate=0.5, baseline="none")
    probs = [_p_arm0(pol, w)]
    for _ in range(10):
        arms = rng.integers(0, 2, 8)
        reinforce_update(pol, [_bandit_episode(w, int(a), float(a == 0)) for a in arms], cfg)
        probs.append(_p_arm0(pol, w))
    assert all(b > a for a, b in zip(probs, probs[1:]))


def test_shared_baseline_groups_by_world():
    w1, w2 = _bandit_world(), _bandit_world()
    eps = [_bandit_episode(w1, 0, 2.0), _bandit_episode(w1, 1, 4.0), _bandit_episode(w2, 0, 10.0)]
    assert SharedBaseline().values_for(eps) == [[3.0], [3.0], [10.0]]


def test_adam_option_trains():
    pol = PolicyNetwork.build("PointerNet", SMALL_PTR, seed=0)
    cfg = TrainConfig(optimizer="adam", learning_rate=1e-2, baseline="shared", samples_per_world=4, n_episodes=16)
    before = pol.params.flat().copy()
    train(pol, WorldConfig(extent=3, n_poi=3), cfg)
    assert not np.array_equal(before, pol.params.flat())


def test_zero_budget_keeps_init(tmp_path):
    pol = PolicyNetwork.build("PointerNet", SMALL_PTR, seed=3)
    init = pol.params.flat().copy()
    rows = train(pol, WorldConfig(extent=3, n_poi=3), TrainConfig(n_episodes=0), checkpoint_path=tmp_path / "c.json")
    assert rows == []
    back = PolicyNetwork.load(tmp_path / "c.json").params
    assert back.names() == pol.params.names()
    assert np.array_equal(back.flat(), init)


def test_training_log_is_gapless(tmp_path):
    pol = PolicyNetwork.build("PointerNet", SMALL_PTR, seed=0)
    log = tmp_path / "log.jsonl"
    cfg = TrainConfig(n_episodes=21, episodes_per_update=4, samples_per_world=2, baseline="shared")
    train(pol, WorldConfig(extent=3, n_poi=4, high_priority_count=1), cfg, log_path=log)
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    assert [r["episode"] for r in rows] == list(range(21))
    assert set(rows[0]) == {"episode", "return", "steps", "grad_norm", "baseline"}


def test_config_validation():
    with pytest.raises(ConfigError, match="train.lr"):
        train_config_from_dict({"lr": 1})
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="rmsprop").validate()
    with pytest.raises(ConfigError):
        TrainConfig(baseline="shared").validate()


def test_expected_random_length_matches_monte_carlo():
    w = reset_world(TABLE1_FIXTURE, 42)
    exact = expected_random_length(w)
    rng = np.random.default_rng(0)
    mc = np.mean([rollout(RandomOrder(), w, rng, 200).total_steps for _ in range(4000)])
    assert abs(mc - exact) < 0.15


def _greedy_returns(policy, world, n=200):
    return [
        rollout(policy, reset_world(world, EVAL_SEED_OFFSET + k), None, 200, mode="greedy").total_return
        for k in range(n)
    ]


def test_training_improves_return_on_priority_fixture():
    untrained = PolicyNetwork.build(PolicyVariant.POINTER, seed=0)
    pol = untrained.copy()
    train(pol, TABLE1_FIXTURE, TABLE1_TRAIN)
    assert np.mean(_greedy_returns(pol, TABLE1_FIXTURE)) > np.mean(_greedy_returns(untrained, TABLE1_FIXTURE)) + 1.0


def test_training_shortens_episodes_without_priorities():
    world = replace(TABLE1_FIXTURE, high_priority_count=0)
    untrained = PolicyNetwork.build(PolicyVariant.POINTER, seed=0)
    pol = untrained.copy()
    train(pol, world, replace(TABLE1_TRAIN, baseline="greedy", samples_per_world=1, episodes_per_update=8))
    before, after = evaluate(untrained, world, 200), evaluate(pol, world, 200)
    assert np.median(after) < np.median(before)
