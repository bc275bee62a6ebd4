import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gbmembed.chain_embedding import (
    ChainNode,
    ChainSpec,
    coarsen_samples,
    dyadic_coarsen,
    embed_chain,
    marginal_ks,
    max_frequency_deviation,
    path_frequencies,
    ratio_distribution,
    tower_check,
    verify_joint_law,
)
from gbmembed.errors import ConsistencyError, DomainError, SpecError, TooFewSamplesError


def N(v, kids=()):
    return ChainNode(float(v), tuple(kids))


def two_step():
    return ChainSpec([(1.0, N(1, [
        (0.5, N(0.5, [(0.5, N(0.0)), (0.5, N(1.0))])),
        (0.5, N(1.5, [(0.5, N(0.0)), (0.5, N(3.0))])),
    ]))])


def iid_two_level():
    return ChainSpec([(1.0, N(1, [
        (0.5, N(0.8, [(0.5, N(0.64)), (0.5, N(0.96))])),
        (0.5, N(1.2, [(0.5, N(0.96)), (0.5, N(1.44))])),
    ]))], dyadic_level=1)


@st.composite
def chains(draw, depth=2):
    """Random supermartingale trees with a nonzero root mean <= 1."""

    def node(value, d):
        if d == 0:
            return N(value)
        if value == 0.0:
            return N(0.0, [(1.0, node(0.0, d - 1))])
        k = draw(st.integers(1, 3))
        w = draw(st.lists(st.integers(1, 9), min_size=k, max_size=k))
        probs = [x / sum(w) for x in w]
        raw = draw(st.lists(st.sampled_from([0.0, 0.25, 0.5, 1.0, 1.5, 2.0]), min_size=k, max_size=k))
        mean = sum(p * r for p, r in zip(probs, raw))
        shrink = draw(st.sampled_from([1.0, 0.9, 0.5]))
        scale = shrink / mean if mean > 0 else 1.0
        vals = [value * r * scale for r in raw]
        return N(value, [(p, node(v, d - 1)) for p, v in zip(probs, vals)])

    x0 = draw(st.sampled_from([1.0, 0.5, 0.8]))
    return ChainSpec([(1.0, node(x0, depth))])


# -- spec validation ------------------------------------------------------------

def test_spec_invariants():
    with pytest.raises(SpecError, match="supermartingale"):
        ChainSpec([(1.0, N(1, [(0.5, N(1.0)), (0.5, N(2.0))]))])
    with pytest.raises(SpecError, match="sum to 1"):
        ChainSpec([(0.5, N(1))])
    with pytest.raises(SpecError, match="root mean"):
        ChainSpec([(1.0, N(1.5))])
    with pytest.raises(SpecError, match="nonzero child"):
        ChainSpec([(1.0, N(0, [(0.5, N(0)), (0.5, N(0.0 + 1e-3))]))])
    with pytest.raises(SpecError, match="same depth"):
        ChainSpec([(0.5, N(1, [(1.0, N(1))])), (0.5, N(0.5))])


def test_equal_siblings_merge():
    spec = ChainSpec([(1.0, N(1, [(0.25, N(1.0, [(1.0, N(0.5))])), (0.75, N(1.0, [(1.0, N(1.0))]))]))])
    assert len(spec.values[1]) == 1
    assert spec.path_probabilities() == {(1.0, 1.0, 0.5): 0.25, (1.0, 1.0, 1.0): 0.75}


def test_json_roundtrip_and_errors():
    spec = two_step()
    again = ChainSpec.from_json(json.loads(json.dumps(spec.to_json())))
    assert again.path_probabilities() == spec.path_probabilities()
    with pytest.raises(SpecError) as exc:
        ChainSpec.from_json({"nodes": {"a": {"value": 1}}, "root": [{"prob": 1, "node": "b"}]})
    assert "b" in exc.value.field
    with pytest.raises(SpecError):
        ChainSpec.from_json({"nodes": {"a": {"value": 1, "children": [{"prob": 1, "node": "a"}]}},
                             "root": [{"prob": 1, "node": "a"}]})


def test_json_list_nodes():
    obj = {"nodes": [{"id": 0, "value": 1, "children": [{"prob": 1, "node": 1}]}, {"id": 1, "value": 0.5}],
           "root": [{"prob": 1, "node": 0}]}
    assert ChainSpec.from_json(obj).path_probabilities() == {(1.0, 0.5): 1.0}


# -- ratio laws -------------------------------------------------------------------

def test_ratio_distribution_examples():
    spec = ChainSpec([(1.0, N(1, [(0.5, N(0.5)), (0.5, N(1.5))]))])
    assert ratio_distribution(spec, 0, 0).atoms == ((0.5, 0.5), (1.5, 0.5))
    zero = ChainSpec([(0.5, N(0, [(1.0, N(0))])), (0.5, N(2, [(1.0, N(1))]))])
    assert ratio_distribution(zero, 0, 0).atoms == ((1.0, 1.0),)
    assert ratio_distribution(zero, 0, 1).atoms == ((0.5, 1.0),)
    with pytest.raises(DomainError):
        ratio_distribution(zero, 1, 0)


# -- analytic embedding ------------------------------------------------------------

def test_one_step_martingale():
    spec = ChainSpec([(1.0, N(1, [(0.5, N(0.5)), (0.5, N(1.5))]))])
    s = embed_chain(spec, 3, 100_000)
    assert np.mean(s.y[:, 1] == 1.5) == pytest.approx(0.5, abs=0.01)


def test_sure_decrease_pathwise():
    spec = ChainSpec([(1.0, N(1, [(1.0, N(0.5))]))])
    s = embed_chain(spec, 3, 200, "pathwise")
    assert np.all(s.y[:, 1] == 0.5)
    assert np.all(s.tau[:, 1] > s.tau[:, 0])


def test_absorbed_from_start():
    spec = ChainSpec([(1.0, N(0, [(1.0, N(0, [(1.0, N(0))]))]))])
    for mode in ("analytic", "pathwise"):
        s = embed_chain(spec, 1, 20, mode)
        assert np.all(s.y == 0.0)
        if mode == "pathwise":
            assert np.all(np.isinf(s.tau))


def test_two_step_joint_law():
    spec = two_step()
    s = embed_chain(spec, 5, 100_000)
    rep = verify_joint_law(s, spec)
    assert rep.passed and rep.max_deviation < 0.01
    assert len(rep.empirical) == 4
    for k in range(3):
        assert marginal_ks(s, spec, k) < 0.01
    assert all(row["pass"] for row in tower_check(s, spec))


def test_point_mass_chain():
    spec = ChainSpec([(1.0, N(1, [(1.0, N(0.5, [(1.0, N(0.25))]))]))])
    s = embed_chain(spec, 5, 1000)
    assert path_frequencies(s.y) == {(1.0, 0.5, 0.25): 1.0}


def test_mismatched_spec_fails():
    s = embed_chain(two_step(), 5, 20_000)
    other = ChainSpec([(1.0, N(1, [
        (0.5, N(0.5, [(1.0, N(0.5))])),
        (0.5, N(1.5, [(0.5, N(0.0)), (0.5, N(3.0))])),
    ]))])
    rep = verify_joint_law(s, other)
    assert rep.max_deviation > 0.1 and not rep.passed


def test_too_few():
    with pytest.raises(TooFewSamplesError):
        verify_joint_law(embed_chain(two_step(), 1, 999), two_step())


def test_worker_and_chunk_independence():
    spec = two_step()
    a = embed_chain(spec, 9, 5000, chunk=700)
    b = embed_chain(spec, 9, 5000, chunk=2048, workers=2)
    np.testing.assert_array_equal(a.y, b.y)


def test_consistency_error_on_foreign_ratio():
    from gbmembed.chain_embedding import _Plan

    plan = _Plan(two_step())
    with pytest.raises(ConsistencyError):
        plan.child_for(0, 0, np.array([0.7]), np.array([1.0]))


@given(chains())
@settings(max_examples=25, deadline=None)
def test_random_chains_invariants(spec):
    s = embed_chain(spec, 13, 3000)
    keys = set(spec.path_probabilities())
    assert set(path_frequencies(s.y)) <= keys
    zero = s.y[:, :-1] == 0.0
    assert np.all(s.y[:, 1:][zero] == 0.0)


@given(chains(depth=1))
@settings(max_examples=8, deadline=None)
def test_random_chains_pathwise(spec):
    s = embed_chain(spec, 17, 60, "pathwise")
    assert np.all(np.diff(s.tau, axis=1) >= 0)
    zero = s.y[:, :-1] == 0.0
    assert np.all(s.y[:, 1:][zero] == 0.0)
    assert np.all(np.isinf(s.tau[:, 1:][zero]))


@pytest.mark.slow
def test_pathwise_joint_law():
    spec = two_step()
    s = embed_chain(spec, 23, 10_000, "pathwise")
    assert np.all(np.diff(s.tau, axis=1) >= 0)
    assert verify_joint_law(s, spec, threshold=0.02).passed


def test_csv():
    buf = io.StringIO()
    embed_chain(two_step(), 1, 2, "pathwise").write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "replica,k,y,tau"
    assert len(lines) == 1 + 2 * 3


# -- dyadic coarsening --------------------------------------------------------------

def test_coarsen_identity():
    spec = two_step()
    assert dyadic_coarsen(spec, 2, 2).path_probabilities() == spec.path_probabilities()


def test_coarsen_composes_ratios():
    c = dyadic_coarsen(iid_two_level(), 1, 0)
    assert c.depth == 1 and c.dyadic_level == 0
    assert ratio_distribution(c, 0, 0).atoms == (
        (0.64, pytest.approx(0.25)), (0.96, pytest.approx(0.5)), (1.44, pytest.approx(0.25)))


def test_coarsen_errors():
    with pytest.raises(DomainError):
        dyadic_coarsen(two_step(), 1, 2)


@given(chains(depth=2))
@settings(max_examples=25, deadline=None)
def test_coarsen_preserves_law(spec):
    c = dyadic_coarsen(spec, 1, 0)
    assert c.root_mean == spec.root_mean
    fine = {}
    for path, p in spec.path_probabilities().items():
        key = path[::2]
        fine[key] = fine.get(key, 0.0) + p
    assert max_frequency_deviation(fine, c.path_probabilities()) < 1e-12


def test_coarsening_commutes_with_embedding():
    fine = iid_two_level()
    coarse = dyadic_coarsen(fine, 1, 0)
    a = coarsen_samples(embed_chain(fine, 31, 100_000), 1, 0)
    b = embed_chain(coarse, 32, 100_000)
    assert max_frequency_deviation(path_frequencies(a.y), path_frequencies(b.y)) < 0.015
