import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstest

from gbmembed.chain_embedding import ChainNode
from gbmembed.errors import DomainError, SpecError
from gbmembed.gbm_paths import PathConfig, SamplePath, simulate_gbm, simulate_gbm_until
from gbmembed.timechange import (
    TimeChangeConfig,
    absorbed_bm,
    dds_construct,
    discrete_ks,
    embed_and_bound,
    exact_sum_is_zero,
    invert_clock,
    qv_clock,
    x_marginals,
)


def N(v, kids=()):
    return ChainNode(float(v), tuple(kids))


def step_path():
    g = np.arange(21) / 10
    return SamplePath(g, np.where(g < 1, 1.0, 2.0), "gbm")


def flat_path(n=11, step=0.1):
    g = np.arange(n) * step
    return SamplePath(g, np.ones(n), "gbm")


# -- clock -------------------------------------------------------------------------

def test_constant_clock():
    a = qv_clock(flat_path())
    assert a.values[-1] == 1.0
    assert a.values[0] == 0.0 and a.path.kind == "clock"


def test_step_clock_and_scaling():
    assert qv_clock(step_path()).values[-1] == 5.0
    assert qv_clock(step_path(), 2.0).values[-1] == 20.0


def test_invert_clock_examples():
    assert invert_clock(qv_clock(flat_path()), 0.35) == pytest.approx(0.4)
    a = qv_clock(step_path())
    assert invert_clock(a, 3.0) == pytest.approx(1.6)
    assert invert_clock(a, a.a_infinity_estimate) == math.inf
    assert invert_clock(a, 1e9) == math.inf


@given(st.integers(0, 2**32), st.floats(0.1, 3.0))
@settings(max_examples=30, deadline=None)
def test_clock_monotone_and_homogeneous(seed, c):
    z = simulate_gbm(seed, np.linspace(0, 2, 201))
    a1 = qv_clock(z).values
    ac = qv_clock(z, c).values
    assert np.all(np.diff(a1) > 0)
    np.testing.assert_array_equal(ac, (c * c) * a1)


@given(st.integers(0, 2**32))
@settings(max_examples=20, deadline=None)
def test_inverse_is_identity_up_to_one_step(seed):
    z = simulate_gbm(seed, np.linspace(0, 1, 101))
    a = qv_clock(z)
    for i in range(0, 100, 7):
        assert invert_clock(a, a.values[i]) == z.grid[i + 1]


# -- absorbed BM ------------------------------------------------------------------------

def test_absorbed_bm_constant():
    b = absorbed_bm(flat_path(), np.linspace(0, 0.9, 10))
    assert np.all(b.values == 1.0)


def test_absorbed_bm_freezes():
    z = simulate_gbm_until(2, 0, PathConfig(delta=1e-2))
    clk = qv_clock(z)
    b = absorbed_bm(z, [0.0, clk.a_infinity_estimate + 1.0])
    assert b.values[0] == 1.0 and b.values[-1] == 0.0


@pytest.mark.slow
def test_absorbed_bm_variance():
    u = 0.25
    cfg = PathConfig(delta=1e-3)
    vals, alive = [], []
    for i in range(10_000):
        z = simulate_gbm_until(77, i, cfg, clock_limit=u)
        clk = qv_clock(z)
        vals.append(absorbed_bm(z, [u]).values[0])
        alive.append(clk.a_infinity_estimate > u)
    vals, alive = np.array(vals), np.array(alive)
    # all paths: Var(B0_u - 1) = E[u ^ H_0] = 0.2470
    assert np.mean((vals - 1) ** 2) == pytest.approx(0.247, abs=0.02)
    # the survivors alone are biased low, which is why the statistic above
    # keeps absorbed paths at 0 rather than conditioning on A_inf > u
    assert np.mean((vals[alive] - 1) ** 2) < 0.23


def test_absorption_eventually():
    cfg = PathConfig(delta=1e-2, horizon=200)
    assert all(simulate_gbm_until(5, i, cfg).absorbed for i in range(100))


# -- DDS ------------------------------------------------------------------------------

def test_exact_sum():
    t = np.array([[0.1, 1e16, 0.0], [0.2, 1.0, 0.0], [-0.30000000000000004, -1e16, 0.0]])
    # 0.1 + 0.2 - 0.30000000000000004 is not exactly zero in reals
    assert exact_sum_is_zero(t).tolist() == [False, False, True]
    assert exact_sum_is_zero(np.array([[1e16], [1.0], [-1e16], [-1.0]])).tolist() == [True]


def test_dds_constant_path():
    w, chk = dds_construct(flat_path())
    assert np.all(w.w == 0.0) and chk.exact_zero


@given(st.integers(0, 2**32), st.sampled_from([1.0, 2.0, 0.3, math.pi]))
@settings(max_examples=30, deadline=None)
def test_dds_residual_exact(seed, c):
    z = simulate_gbm(seed, np.linspace(0, 3, 301))
    w, chk = dds_construct(z, c)
    assert chk.exact_zero and chk.n_points == 301
    assert np.all(np.diff(w.u) > 0)


@pytest.mark.slow
def test_dds_increment_gaussian():
    u = 0.1
    cfg = PathConfig(delta=1e-3)
    ws = []
    for i in range(10_000):
        z = simulate_gbm_until(91, i, cfg, clock_limit=u)
        w, _ = dds_construct(z)
        if w.u[-1] > u:
            j = np.searchsorted(w.u, u, side="right")
            ws.append(w.w[j])
    ws = np.array(ws)
    assert len(ws) > 9900
    assert kstest(ws / math.sqrt(u), "norm").statistic < 0.02
    assert abs(ws.mean()) < 3 * math.sqrt(u / len(ws)) + 0.01


# -- embed and bound ------------------------------------------------------------------

SYM = [(1.0, N(0.0, [(0.5, N(-0.5)), (0.5, N(0.5))]))]


def test_embed_and_bound_small():
    b = embed_and_bound(SYM, 3, 300)
    assert b.violations == 0
    assert b.residual_exact.all()
    assert set(np.unique(b.w_at_T[:, 1])) <= {-0.5, 0.5}
    np.testing.assert_array_equal(b.w_at_T[:, 1], b.y[:, 1] - 1.0)
    assert np.all(b.T[:, 0] == 0.0) and np.all(b.T[:, 1] > 0)


def test_constant_chain():
    b = embed_and_bound([(1.0, N(0.0, [(1.0, N(0.0))]))], 1, 20)
    assert np.all(b.T == 0.0) and b.violations == 0


def test_lower_bound_enforced():
    with pytest.raises(DomainError):
        embed_and_bound([(1.0, N(0.0, [(0.5, N(-2.0)), (0.5, N(2.0))]))], 1, 10)
    with pytest.raises(SpecError):
        embed_and_bound([(1.0, N(0.5))], 1, 10)


def test_absorbing_chain_hits_h():
    root = [(1.0, N(0.0, [(0.5, N(-1.0)), (0.5, N(1.0))]))]
    b = embed_and_bound(root, 4, 200, TimeChangeConfig(delta=2e-3))
    dead = b.y[:, 1] == 0.0
    assert dead.any()
    np.testing.assert_array_equal(b.T[dead, 1], b.H[dead])
    assert b.violations == 0


def test_scale_c_two():
    root = [(1.0, N(0.0, [(0.5, N(-1.0)), (0.5, N(1.0))]))]
    b = embed_and_bound(root, 4, 200, TimeChangeConfig(c=2.0))
    assert set(np.unique(b.w_at_T[:, 1])) <= {-1.0, 1.0}
    assert b.violations == 0 and b.residual_exact.all()


def test_worker_independent():
    a = embed_and_bound(SYM, 8, 64, chunk=16)
    b = embed_and_bound(SYM, 8, 64, chunk=40, workers=2)
    np.testing.assert_array_equal(a.T, b.T)
    np.testing.assert_array_equal(a.H, b.H)


def test_discrete_ks():
    assert discrete_ks(np.array([-0.5, 0.5] * 50), [-0.5, 0.5], [0.5, 0.5]) == 0.0
    assert discrete_ks(np.array([0.5] * 10), [-0.5, 0.5], [0.5, 0.5]) == 0.5


def test_report_json():
    import json

    b = embed_and_bound(SYM, 3, 10)
    rep = json.loads(b.to_json(x_marginals(SYM, 1)))
    assert rep["violations"] == 0 and len(rep["bound_ok"]) == 10 and len(rep["ks"]) == 2
    assert rep["config"]["seed"] == 3
