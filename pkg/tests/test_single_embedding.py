import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from scipy.stats import ks_2samp

from gbmembed.distributions import BarrierPair, TargetDistribution, build_g_calculus
from gbmembed.errors import TooFewSamplesError, UnsupportedTargetError
from gbmembed.gbm_paths import PathConfig
from gbmembed.single_embedding import (
    EmbeddingSample,
    exit_law,
    ks_statistic,
    sample_embedding,
    sample_embedding_pathwise,
    upper_exit_probability,
    verify_conditional_mean,
    verify_law,
)
from gbmembed.gbm_paths import first_exit
from strategies import any_law

POINT1 = TargetDistribution.point_mass(1.0)
POINT_HALF = TargetDistribution.point_mass(0.5)


def test_exit_law_examples():
    assert exit_law(BarrierPair(0.0, 2.0)).points == ((0.0, 0.5), (2.0, 0.5))
    assert exit_law(BarrierPair(1.0, 1.0)).points == ((1.0, 1.0),)
    pts = dict(exit_law(BarrierPair(0.6, 1.4)).points)
    assert pts[0.6] == pytest.approx(0.5) and pts[1.4] == pytest.approx(0.5)
    assert exit_law(BarrierPair(0.3, math.inf)).points == ((0.3, 1.0),)


def test_exit_law_one_sided_edge():
    # alpha == 1 < beta: the walk starts on the lower barrier
    assert exit_law(BarrierPair(1.0, 3.0)).points == ((1.0, 1.0),)


@given(any_law)
@settings(max_examples=30, deadline=None)
def test_exit_law_is_mean_one(d):
    calc = build_g_calculus(d)
    a, b = calc.barriers(np.linspace(0, 1, 201))
    for ai, bi in zip(a, b):
        law = exit_law(BarrierPair(ai, bi))
        if math.isfinite(bi):
            assert law.mean == pytest.approx(1.0, abs=1e-12)
        else:
            assert law.points == ((ai, 1.0),)


def test_vectorized_upper_probability():
    p = upper_exit_probability([0.0, 0.6, 1.0, 0.5], [2.0, 1.4, 1.0, math.inf])
    np.testing.assert_allclose(p, [0.5, 0.5, 0.0, 0.0])


def test_point_mass_one_analytic():
    s = sample_embedding(POINT1, 5, 4)
    assert len(s) == 4
    for row in s:
        assert isinstance(row, EmbeddingSample)
        assert (row.y, row.alpha, row.beta) == (1.0, 1.0, 1.0)
        assert row.tau is None


def test_two_atom_frequency(coin02):
    s = sample_embedding(coin02, 1, 100_000)
    assert 0.49 <= np.mean(s.y == 2.0) <= 0.51
    assert set(np.unique(s.y)) == {0.0, 2.0}


def test_deficient_mean(coin01):
    s = sample_embedding(coin01, 2, 100_000)
    assert 0.49 <= s.y.mean() <= 0.51


def test_mean_above_one_unsupported():
    with pytest.raises(UnsupportedTargetError):
        sample_embedding(TargetDistribution.point_mass(1.5), 1, 10)


def test_deterministic_and_worker_independent(uniform02):
    a = sample_embedding(uniform02, 99, 70_000)
    b = sample_embedding(uniform02, 99, 70_000, workers=2)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.r, b.r)
    head = sample_embedding(uniform02, 99, 1000)
    np.testing.assert_array_equal(head.y, a.y[:1000])


def test_sample_fields_consistent(uniform02):
    s = sample_embedding(uniform02, 3, 5000)
    np.testing.assert_allclose(s.eta, uniform02.g(s.r))
    on_barrier = (s.y == s.alpha) | (s.y == s.beta)
    assert on_barrier.all()


def test_uniform_fit(uniform02):
    rep = verify_law(sample_embedding(uniform02, 7, 100_000), uniform02)
    assert rep.ks < 0.01 and rep.passed and rep.censored == 0


def test_point_mass_fit_is_exact():
    rep = verify_law(sample_embedding(POINT1, 7, 500), POINT1)
    assert rep.ks == 0.0


def test_negative_control(coin02, uniform02):
    rep = verify_law(sample_embedding(coin02, 7, 20_000), uniform02)
    assert rep.ks >= 0.25 and not rep.passed


def test_too_few_samples(uniform02):
    with pytest.raises(TooFewSamplesError):
        verify_law(sample_embedding(uniform02, 1, 99), uniform02)


def test_ks_statistic_matches_scipy_for_continuous(uniform02):
    from scipy.stats import kstest

    y = np.random.default_rng(0).uniform(0, 2, 3000)
    assert ks_statistic(y, uniform02) == pytest.approx(kstest(y, "uniform", args=(0, 2)).statistic, abs=1e-12)


def test_conditional_mean_uniform(uniform02):
    calc = build_g_calculus(uniform02)
    rep = verify_conditional_mean(sample_embedding(uniform02, 11, 100_000), calc)
    assert rep.status == "pass" and len(rep.bins) >= 10
    assert rep.max_abs_deviation() <= 0.03


def test_conditional_mean_two_atoms(coin02):
    calc = build_g_calculus(coin02)
    s = sample_embedding(coin02, 12, 100_000)
    rep = verify_conditional_mean(s, calc)
    assert rep.status == "pass"
    keep = s.eta >= calc.g_at_one
    assert s.y[keep].mean() == pytest.approx(1.0, abs=0.02)


def test_conditional_mean_vacuous():
    calc = build_g_calculus(POINT1)
    rep = verify_conditional_mean(sample_embedding(POINT1, 1, 2000), calc)
    assert rep.status == "vacuous" and rep.passed


def test_csv_output(coin01):
    buf = io.StringIO()
    sample_embedding(coin01, 1, 50).write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "r,eta,alpha,beta,y,tau,censored"
    assert any(",inf," in ln for ln in lines[1:])
    assert all(ln.endswith(",0") for ln in lines[1:])


# -- pathwise ----------------------------------------------------------------

def test_pathwise_point_mass_one():
    s = sample_embedding_pathwise(POINT1, 3, 20)
    assert np.all(s.tau == 0.0) and np.all(s.y == 1.0)


def test_pathwise_point_mass_half():
    s = sample_embedding_pathwise(POINT_HALF, 3, 500)
    assert np.all(s.y == 0.5)
    assert np.all(np.isfinite(s.tau)) and np.all(s.tau > 0)
    # E tau = 2 log 2 for the GBM hitting 1/2 (drift -1/2 on the log scale)
    assert s.tau.mean() == pytest.approx(2 * math.log(2), rel=0.2)


def test_pathwise_two_atoms(coin02):
    s = sample_embedding_pathwise(coin02, 8, 10_000)
    assert 0.48 <= np.mean(s.y == 2.0) <= 0.52


def test_pathwise_absorbs(coin01):
    s = sample_embedding_pathwise(coin01, 8, 400)
    zero = s.y == 0.0
    assert np.all(np.isinf(s.tau[zero]))
    assert np.all(np.isfinite(s.tau[~zero]))
    assert 0.4 < zero.mean() < 0.6


def test_pathwise_worker_independent(uniform02):
    a = sample_embedding_pathwise(uniform02, 5, 600, chunk=100)
    b = sample_embedding_pathwise(uniform02, 5, 600, chunk=250, workers=3)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.tau, b.tau)


@pytest.mark.slow
@pytest.mark.parametrize("name", ["uniform", "coin02", "half", "coin01"])
def test_analytic_pathwise_agree(name, uniform02, coin02, coin01):
    d = {"uniform": uniform02, "coin02": coin02, "half": POINT_HALF, "coin01": coin01}[name]
    n = 10_000
    a = sample_embedding(d, 21, n)
    p = sample_embedding_pathwise(d, 22, n)
    assert p.censored.sum() == 0
    assert ks_2samp(a.y, p.y).statistic < 0.02


ALPHAS = [0.0, 0.25, 0.5, 0.75]
BETAS = [1.25, 1.5, 2.0, 4.0]


@pytest.mark.slow
@pytest.mark.parametrize("alpha", ALPHAS)
@pytest.mark.parametrize("beta", BETAS)
def test_exit_law_grid(alpha, beta):
    # +-0.01 is only ~2 standard errors at n = 1e4, which fails some of the
    # 16 cells by chance; n = 2.5e4 makes it >= 3 SE. Cells use independent seeds.
    seed = 5000 + 10 * ALPHAS.index(alpha) + BETAS.index(beta)
    n = 25_000
    hits = sum(first_exit(seed, 1.0, alpha, beta, index=i).side == "upper" for i in range(n))
    assert hits / n == pytest.approx((1 - alpha) / (beta - alpha), abs=0.01)


@pytest.mark.parametrize("name", ["uniform", "coin02", "point1", "half", "coin01"])
def test_mean_preservation(name, uniform02, coin02, coin01):
    d = {"uniform": uniform02, "coin02": coin02, "point1": POINT1, "half": POINT_HALF, "coin01": coin01}[name]
    y = sample_embedding(d, 77, 100_000).y
    se = y.std(ddof=1) / math.sqrt(len(y))
    assert abs(y.mean() - d.mean) <= 3 * se + 1e-15
