import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmcov import neural as nn
from swarmcov.policies import (
    DEFAULT_DIMS,
    TABLE1_PARAMETERS,
    PolicyNetwork,
    PolicyVariant,
    build_params,
    count_parameters,
    encode_input,
    forward,
    sample_assignment,
)
from swarmcov.reinforce import replicate
from swarmcov.world import WorldConfig, mark_mapped, reset_world

from conftest import make_world

VARIANTS = list(PolicyVariant)
SMALL = {
    PolicyVariant.SEQ2SEQ: {"embed": 8, "hidden": 8, "max_poi": 10},
    PolicyVariant.SEQ2SEQ_ATTENTION: {"embed": 8, "hidden": 8, "max_poi": 10},
    PolicyVariant.TRANSFORMER: {"embed": 8, "heads": 2, "ffn": 16, "blocks": 1},
    PolicyVariant.POINTER: {"embed": 8, "hidden": 8},
}


def small(variant, seed=0):
    return PolicyNetwork.build(variant, SMALL[variant], seed=seed)


def test_encode_normalisation():
    w = make_world([[0, 0]], [[4, 4]], high=[True])
    inp = encode_input(w, 0)
    assert np.allclose(inp.poi[0, :2], [0.8, 0.8])
    assert inp.poi[0, 3] == 1.0 and inp.drone[4] == 1.0
    again = encode_input(w, 0)
    assert np.array_equal(inp.poi, again.poi) and np.array_equal(inp.drone, again.drone)


@pytest.mark.parametrize("variant", VARIANTS)
def test_parameter_counts_near_reference(variant):
    n = count_parameters(variant)
    assert abs(n - TABLE1_PARAMETERS[variant]) / TABLE1_PARAMETERS[variant] <= 0.15
    assert n == build_params(variant, DEFAULT_DIMS[variant], seed=5).count()


@pytest.mark.parametrize("variant", VARIANTS)
def test_forward_distributions(variant):
    pol = small(variant)
    w = reset_world(WorldConfig(extent=4, n_poi=7, high_priority_count=2), 3)
    inp = encode_input(w, 0)
    dists = forward(pol, inp, int((~inp.visited_mask).sum()))
    chosen = inp.visited_mask.copy()
    for p in dists:
        assert abs(p.sum() - 1) < 1e-9 and np.all(p >= 0)
        assert np.all(p[chosen] == 0)
        chosen[int(np.argmax(p))] = True
    again = forward(pol, inp, len(dists))
    assert all(np.array_equal(a, b) for a, b in zip(dists, again))


@pytest.mark.parametrize("variant", VARIANTS)
def test_single_allowed_is_forced(variant):
    pol = small(variant)
    w = reset_world(WorldConfig(extent=4, n_poi=5), 1)
    sess = pol.session(encode_input(w, 0))
    allowed = np.zeros(5, dtype=bool)
    allowed[2] = True
    assert np.array_equal(sess.distribution(allowed), allowed.astype(float))


@pytest.mark.parametrize("variant", VARIANTS)
def test_sampled_orders_are_permutations(variant):
    pol = small(variant)
    rng = np.random.default_rng(0)
    cfg = WorldConfig(extent=4, n_poi=6)
    for k in range(60):
        w = reset_world(cfg, k)
        order = sample_assignment(pol, w, 0, rng, mode="sample")
        assert len(order) == len(set(order)) == int((~w.mapped).sum())
        assert not w.mapped[order].any()


def test_single_unmapped_order():
    pol = small(PolicyVariant.POINTER)
    w = make_world([[0, 0]], [[1, 1], [2, 2]]).evolve(mapped=np.array([True, False]))
    assert sample_assignment(pol, w, 0) == [1]
    assert sample_assignment(pol, w, 0) == sample_assignment(pol, w, 0)


def test_external_mapping_removes_from_distribution():
    pol = small(PolicyVariant.POINTER)
    w = reset_world(WorldConfig(extent=4, n_poi=6), 2)
    w2 = mark_mapped(w.evolve(drones=w.poi_positions[[3]].copy()))
    inp = encode_input(w2, 0)
    assert inp.visited_mask[3]
    for p in forward(pol, inp, int((~inp.visited_mask).sum())):
        assert p[3] == 0


@pytest.mark.parametrize("variant", VARIANTS)
def test_log_prob_gradient(variant):
    pol = small(variant, seed=2)
    w = reset_world(WorldConfig(extent=4, n_poi=4), 0)
    inp = encode_input(w, 0)
    allowed = ~inp.visited_mask
    choices = list(np.flatnonzero(allowed)[::-1][:2])

    def total():
        sess = pol.session(inp)
        a = allowed.copy()
        out = []
        for c in choices:
            out.append(sess.log_prob(a, int(c)))
            sess.feed(int(c))
            a = a.copy()
            a[c] = False
        return nn.weighted_sum([(1.0, v) for v in out])

    pol.params.zero_grad()
    total().backward()
    name = "embed.W"
    x = pol.params[name]
    num = nn.numerical_gradient(lambda: float(total().value), x)
    assert nn._rel_err(pol.params.grads[name], num) < 1e-6


def test_checkpoint_roundtrip_and_mismatch(tmp_path):
    pol = small(PolicyVariant.SEQ2SEQ_ATTENTION, seed=4)
    path = tmp_path / "ckpt.json"
    pol.save(path)
    back = PolicyNetwork.load(path)
    w = reset_world(WorldConfig(extent=4, n_poi=5), 0)
    assert sample_assignment(back, w, 0) == sample_assignment(pol, w, 0)
    other = small(PolicyVariant.POINTER).params
    other.meta = dict(pol.params.meta)
    with pytest.raises(nn.ShapeError):
        PolicyNetwork.from_params(other)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(VARIANTS), st.integers(0, 1000))
def test_replicas_identical_and_independent(variant, seed):
    pol = small(variant, seed=seed % 7)
    copies = replicate(pol, 3)
    w = reset_world(WorldConfig(extent=4, n_poi=5), seed)
    allowed = ~w.mapped
    ref = pol.session(encode_input(w, 0)).distribution(allowed)
    for c in copies:
        assert np.array_equal(c.session(encode_input(w, 0)).distribution(allowed), ref)
    for p in pol.params.params.values():
        p += 1.0
    for c in copies:
        assert np.array_equal(c.session(encode_input(w, 0)).distribution(allowed), ref)


def test_argmax_invariant_to_score_shift():
    z = np.array([0.3, -1.2, 2.0, 0.9])
    mask = np.array([True, True, False, True])
    assert np.argmax(nn.softmax(z, mask)) == np.argmax(nn.softmax(z + 17.0, mask))
