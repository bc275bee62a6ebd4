import math
import time

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import integrate

from gbmembed.errors import DescriptorError, DomainError, QuadratureError, SpecError, TooFewSamplesError
from gbmembed.minimality import (
    TRANSIENT_CONCLUSION,
    ConditionVerdict,
    Deterministic,
    Diffusion,
    DiffusionSpec,
    DoobInflated,
    DriftedBM,
    Earliest,
    FirstExit,
    FirstHit,
    GTransform,
    MCConfig,
    MinimalityReport,
    assemble_overall,
    classify_boundaries,
    direction_check,
    g_transform,
    kotani_test,
    minimality_report,
    parse_expr,
    rule_from_json,
    scale_function,
    simulate_stopped,
    tabulate_scale,
    ui_diagnostic,
)
from gbmembed.minimality.asymptotics import Inconclusive, Tail, expand, integral_diverges
from gbmembed.minimality.diffusion import _segment_integrals
from gbmembed.minimality.expr import Add, Call, Const, Div, Mul, Neg, Piecewise, Pow, Sub, Var
from gbmembed.minimality.report import STATUSES, SHORTCUTS

IDENTITY = GTransform("identity")

# ---------------------------------------------------------------- expressions


def test_parse_operators_and_precedence():
    x = np.array([-1.5, 0.5, 2.0])
    assert np.allclose(parse_expr("1 + 2*x^2")(x), 1 + 2 * x**2)
    assert np.allclose(parse_expr("-x**2")(x), -(x**2))
    assert np.allclose(parse_expr("2^3^2")(x), 2.0**9)
    assert np.allclose(parse_expr("x/2/4")(x), x / 8)
    assert np.allclose(parse_expr("pow(abs(x), 0.5) + sqrt(4)")(x), np.sqrt(np.abs(x)) + 2)
    assert np.allclose(parse_expr("exp(log(2)) * pi")(x), 2 * math.pi)


def test_piecewise_uses_left_below_breakpoint():
    f = parse_expr("piecewise(0, -1, x + 1)")
    assert np.array_equal(f(np.array([-0.1, 0.0, 2.0])), [-1.0, 1.0, 3.0])


@pytest.mark.parametrize(
    "text",
    ["", "x +", "y + 1", "sin(x)", "x.real", "__import__('os')", "lambda: 1", "piecewise(x, 1, 2)", "exp(1, 2)", "[1]"],
)
def test_parse_rejects(text):
    with pytest.raises(SpecError):
        parse_expr(text)


def test_constant_detection():
    assert parse_expr("2*pi - 1").is_constant()
    assert parse_expr("2*pi - 1").constant_value() == pytest.approx(2 * math.pi - 1)
    assert not parse_expr("x - x").is_constant()
    with pytest.raises(SpecError):
        parse_expr("x").constant_value()


def _exprs():
    leaves = st.one_of(st.just(Var()), st.floats(-3, 3, allow_nan=False).map(lambda v: Const(round(v, 3))))

    def extend(children):
        bin_ = st.sampled_from([Add, Sub, Mul, Div])
        return st.one_of(
            st.tuples(bin_, children, children).map(lambda t: t[0](t[1], t[2])),
            children.map(Neg),
            st.tuples(st.sampled_from(["exp", "abs", "sqrt", "log"]), children).map(lambda t: Call(t[0], t[1])),
            st.tuples(children, st.integers(0, 3)).map(lambda t: Pow(t[0], Const(float(t[1])))),
            st.tuples(st.floats(-2, 2).map(lambda v: round(v, 2)), children, children).map(lambda t: Piecewise(*t)),
        )

    return st.recursive(leaves, extend, max_leaves=8)


@settings(max_examples=150, deadline=None)
@given(_exprs())
def test_printed_expression_reparses_to_same_function(e):
    x = np.linspace(-2.5, 2.5, 41)
    a, b = e(x), parse_expr(str(e))(x)
    assert np.array_equal(np.isnan(a), np.isnan(b))
    ok = ~np.isnan(a)
    assert np.allclose(a[ok], b[ok], rtol=1e-12, atol=0, equal_nan=True)


# ---------------------------------------------------------------- tail engine


def test_expansion_of_a_cancelling_difference():
    s = expand(parse_expr("sqrt(1 + x^2) - x"), Tail("+inf"))
    (key, coef) = max(s.terms, key=lambda kc: kc[0][1])
    assert key == ((), -1.0, 0.0) and coef == pytest.approx(0.5)


@pytest.mark.parametrize(
    "p,diverges",
    [(-0.5, True), (-1.0, True), (-1.5, False), (0.0, True), (-3.0, False)],
)
def test_power_tail_divergence(p, diverges):
    assert integral_diverges(expand(parse_expr(f"x^({p})"), Tail("+inf"))) is diverges


@pytest.mark.parametrize(
    "text,diverges",
    [
        ("1/(x*log(x))", True),
        ("1/(x*log(x)^2)", False),
        ("x^5*exp(-x)", False),
        ("exp(x)/x^9", True),
        ("exp(-sqrt(x))*x^3", False),
        ("(x^2 + 3)/(2*x^3 - x)", True),
        ("piecewise(5, 1, 1/x^2)", False),
    ],
)
def test_mixed_tail_divergence(text, diverges):
    assert integral_diverges(expand(parse_expr(text), Tail("+inf"))) is diverges


@settings(max_examples=60, deadline=None)
@given(st.floats(-3.0, 1.0).map(lambda v: round(v, 2)), st.floats(0.2, 3.0))
def test_power_tail_matches_quadrature(p, a):
    assume(abs(p + 1) > 0.15)
    verdict = integral_diverges(expand(parse_expr(f"{a}*x^({p})"), Tail("+inf")))
    # oracle: closed-form antiderivative over [1, W] against W -> inf
    w1, w2 = 1e6, 1e12
    part = [a * (w ** (p + 1) - 1) / (p + 1) for w in (w1, w2)]
    assert verdict is (part[1] > 2 * part[0])


def test_double_exponential_is_inconclusive():
    with pytest.raises(Inconclusive):
        integral_diverges(expand(parse_expr("exp(exp(x))"), Tail("+inf")))


def test_log_log_is_inconclusive():
    with pytest.raises(Inconclusive):
        integral_diverges(expand(parse_expr("1/(x*log(x)*log(log(x)))"), Tail("+inf")))


# ---------------------------------------------------------------- scale functions


def test_scale_unit():
    g = np.linspace(-3, 3, 601)
    tab = tabulate_scale(DiffusionSpec("0", "1"), g)
    assert np.abs(tab.values - tab.grid).max() < 1e-10


def test_scale_negative_half_drift_matches_closed_form_fast():
    spec = DiffusionSpec("-0.5", "1", c=0.0)
    grid = np.round(np.arange(-300, 301) * 0.01, 12)
    t0 = time.perf_counter()
    tab = tabulate_scale(spec, grid)
    assert time.perf_counter() - t0 < 1.0
    assert np.abs(tab.values - np.expm1(tab.grid)).max() < 1e-6


def test_scale_gbm_natural():
    spec = DiffusionSpec("0", "x", l=0.0, c=1.0)
    x = np.geomspace(1e-3, 50, 200)
    assert np.abs(scale_function(spec, x) - (x - 1)).max() < 1e-10


def test_scale_arctan_closed_form():
    # 2 mu / sigma^2 = 2x/(1+x^2) gives s' = (1+c^2)/(1+x^2)
    spec = DiffusionSpec("x/(1+x^2)", "1", c=0.5)
    x = np.linspace(-20, 20, 401)
    exact = 1.25 * (np.arctan(x) - np.arctan(0.5))
    assert np.abs(scale_function(spec, x) - exact).max() < 1e-9


def test_scale_matches_nested_quad_for_piecewise_drift():
    spec = DiffusionSpec("piecewise(0.3, 0.2, -1 + x)", "1 + 0.5*abs(x)", c=0.0)

    def inner(y):
        return integrate.quad(lambda z: float(spec.drift_ratio(z)), 0.0, y, points=[0.3] if 0 < 0.3 < y or y < 0.3 < 0 else None)[0]

    for xv in (-1.7, -0.2, 0.9, 2.4):
        ref = integrate.quad(lambda y: math.exp(-inner(y)), 0.0, xv, limit=200, epsabs=1e-13)[0]
        assert scale_function(spec, xv) == pytest.approx(ref, rel=1e-8, abs=1e-10)


def test_scale_table_invariants():
    spec = DiffusionSpec("sqrt(1 + x^2) - 1", "1 + x^2/4", c=0.2)
    tab = tabulate_scale(spec, np.linspace(-2, 3, 251))
    assert np.all(np.diff(tab.values) > 0)
    assert tab(0.2) == 0.0 and tab.values[np.searchsorted(tab.grid, 0.2)] == 0.0
    assert tab.derivative_at_c() == pytest.approx(1.0, abs=1e-6)


def test_scale_rejects_points_outside_domain():
    with pytest.raises(DomainError):
        scale_function(DiffusionSpec("0", "x", l=0.0, c=1.0), [-1.0, 1.0])


def test_quadrature_failure_reports_interval():
    spiky = parse_expr("1/(1e-8 + (x - 0.5)^2)")
    with pytest.raises(QuadratureError) as exc:
        _segment_integrals(spiky, np.array([0.0]), np.array([1.0]), 1e-12, 0.0, max_depth=2)
    assert "interval" in exc.value.diagnostics


def test_diffusion_spec_validation():
    with pytest.raises(SpecError) as exc:
        DiffusionSpec("0", "x", c=1.0)  # sigma vanishes at 0 inside (-inf, inf)
    assert exc.value.field == "sigma"
    with pytest.raises(SpecError) as exc:
        DiffusionSpec("0", "1", l=0.0, r=1.0, c=2.0)
    assert exc.value.field == "c"


# ---------------------------------------------------------------- boundaries


@pytest.mark.parametrize("a", [1.0, -1.0, 0.3, -2.5])
def test_drifted_bm_is_transient(a):
    cls = classify_boundaries(DiffusionSpec(str(a), "1"))
    assert cls.case == "transient"
    assert cls.conclusion == TRANSIENT_CONCLUSION
    assert cls.right.value is (a > 0) and cls.left.value is (a < 0)


def test_bm_is_recurrent():
    cls = classify_boundaries(DiffusionSpec("0", "1"))
    assert cls.case == "recurrent" and cls.conclusion is None


def test_gbm_boundaries():
    cls = classify_boundaries(DiffusionSpec("0", "x", l=0.0, c=1.0))
    assert cls.left.value is True and cls.right.value is False
    assert cls.case == "transient"


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.sampled_from(["0", "0.7", "-0.4", "x/(1+x^2)", "-2*x/(1+x^2)", "0.3*x"]))
def test_classification_invariant_under_reference_point(c, mu):
    base = classify_boundaries(DiffusionSpec(mu, "1", c=0.0))
    moved = classify_boundaries(DiffusionSpec(mu, "1", c=c))
    assert (base.left.value, base.right.value, base.case) == (moved.left.value, moved.right.value, moved.case)


def test_ornstein_uhlenbeck_recurrent():
    # mean reversion: exp(+x^2) scale density, both ends infinite
    assert classify_boundaries(DiffusionSpec("-x", "1")).case == "recurrent"


# ---------------------------------------------------------------- Kotani


def test_kotani_examples():
    assert kotani_test("1").verdict == "martingale"
    assert kotani_test("exp(-x)").verdict == "strict_local_martingale"
    assert kotani_test("sqrt(1+x^2)").verdict == "martingale"
    for side in (kotani_test("exp(-x)").left, kotani_test("1").right):
        assert side.method == "symbolic"


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
def test_kotani_constant_is_martingale(k):
    assert kotani_test(repr(k)).verdict == "martingale"


@pytest.mark.parametrize(
    "kappa,verdict",
    [("1 + x^2", "strict_local_martingale"), ("1 + abs(x)", "martingale"), ("exp(x^2)", "strict_local_martingale"), ("exp(x)", "strict_local_martingale")],
)
def test_kotani_growth_classes(kappa, verdict):
    assert kotani_test(kappa).verdict == verdict


def test_kotani_rejects_vanishing_kappa():
    with pytest.raises(DomainError):
        kotani_test("x")


# ---------------------------------------------------------------- g transforms


def test_g_transform_examples():
    assert g_transform("power_transient", {"y": [0, 0, 0]}, np.array([2.0, 0, 0])) == pytest.approx(0.5)
    assert g_transform("log_planar", {"z": [0, 0]}, np.array([1.0, 0])) == 0.0
    assert g_transform("power_transient", {"y": [0, 0, 0]}, np.array([np.inf, 0, 0])) == 0.0
    far = g_transform("power_transient", {"y": [0, 0, 0]}, np.array([1e12, 0, 0]))
    assert 0 < far < 1e-11


def test_g_transform_pole_and_dimension():
    with pytest.raises(DomainError):
        g_transform("log_planar", {"z": [1, 1]}, np.array([1.0, 1.0]))
    with pytest.raises(DomainError):
        g_transform("power_transient", {"y": [0, 0, 0]}, np.zeros(3))
    with pytest.raises(DomainError):
        g_transform("log_planar", {"z": [0, 0]}, np.ones(3))
    with pytest.raises(DescriptorError):
        GTransform("power_transient", {"y": [0, 0]})


def test_scale_g_signs():
    tab = tabulate_scale(DiffusionSpec("1", "1"), np.linspace(-2, 2, 401))
    g = GTransform("neg_scale").bind(tab)
    x = np.array([-1.0, 0.5])
    assert np.allclose(g(x), -(1 - np.exp(-2 * x)) / 2, atol=1e-9)


# ---------------------------------------------------------------- simulation


def test_simulation_independent_of_chunking_and_workers():
    rule = FirstExit(-1.0, 1.5)
    a = simulate_stopped(DriftedBM(), rule, IDENTITY, 5, 1500, MCConfig(chunk=1000))
    b = simulate_stopped(DriftedBM(), rule, IDENTITY, 5, 1500, MCConfig(chunk=300), workers=2)
    assert np.array_equal(a.y_probe, b.y_probe) and np.array_equal(a.tau, b.tau)


def test_exit_probabilities_of_bm():
    s = simulate_stopped(DriftedBM(), FirstExit(-1.0, 2.0), IDENTITY, 3, 20000, MCConfig(dt=0.01))
    final = s.y_probe[:, -1]
    assert set(np.unique(final)) == {-1.0, 2.0}
    p = (final == 2.0).mean()
    assert abs(p - 1 / 3) < 4 * math.sqrt(2 / 9 / 20000)


def test_deterministic_stop_is_gaussian():
    s = simulate_stopped(DriftedBM(mu=0.5, sigma=2.0), Deterministic(2.0), IDENTITY, 9, 20000)
    x = s.y_probe[:, -1]
    assert abs(x.mean() - 1.0) < 4 * 2 * math.sqrt(2) / math.sqrt(20000)
    assert np.all(s.tau == 2.0)


def test_doob_rule_doubles_the_time_one_value():
    s = simulate_stopped(DriftedBM(), DoobInflated(1.0, 2.0), IDENTITY, 4, 2000)
    i1 = int(np.searchsorted(s.probe_t, 1.0))
    ok = np.isfinite(s.tau)
    assert s.probe_t[i1] == 1.0
    assert np.allclose(s.y_probe[ok, -1], 2 * s.y_probe[ok, i1])
    assert np.all(s.tau[ok] >= 1.0)


def test_diffusion_absorbed_at_boundary():
    spec = DiffusionSpec("0", "x", l=0.0, c=1.0)
    s = simulate_stopped(Diffusion(spec, 1.0), FirstExit(0.5, 2.0), GTransform("scale"), 1, 2000, MCConfig(dt=1e-3, horizon=20.0))
    # g = s(x) = x - 1; exit values are s(0.5) or s(2)
    fin = s.y_probe[:, -1]
    assert np.allclose(np.sort(np.unique(np.round(fin, 6))), [-0.5, 1.0])
    assert abs((fin > 0).mean() - 1 / 3) < 0.05


def test_earliest_and_descriptors():
    rule = rule_from_json({"kind": "earliest", "rules": [{"kind": "deterministic", "t": 0.5}, {"kind": "first_hit", "level": 0.2}]}, 0.0)
    assert isinstance(rule, Earliest)
    s = simulate_stopped(DriftedBM(), rule, IDENTITY, 2, 1000)
    assert np.all(s.tau <= 0.5) and np.all(s.y_probe[:, -1] <= 0.2 + 1e-12)
    with pytest.raises(DescriptorError) as exc:
        rule_from_json({"kind": "hitting_cone"})
    assert exc.value.field == "rule.kind"


# ---------------------------------------------------------------- ui diagnostic


def _bm(rule, n, seed=7):
    return simulate_stopped(DriftedBM(), rule, IDENTITY, seed, n)


@pytest.mark.slow
def test_ui_hit_of_one_plus_part_satisfied():
    s = _bm(FirstHit(1.0, 0.0), 10000)
    assert ui_diagnostic(s.y_probe, "plus", s.probe_t).verdict == "satisfied"


@pytest.mark.slow
def test_ui_doob_minus_part_never_satisfied():
    for seed in (1, 2):
        s = _bm(DoobInflated(1.0, 2.0), 10000, seed)
        assert ui_diagnostic(s.y_probe, "minus", s.probe_t).verdict in ("violated", "inconclusive")


def test_ui_deterministic_time_both_parts():
    s = _bm(Deterministic(1.0), 20000)
    assert ui_diagnostic(s.y_probe, "plus", s.probe_t).verdict == "satisfied"
    assert ui_diagnostic(s.y_probe, "minus", s.probe_t).verdict == "satisfied"


def test_ui_needs_enough_replicas():
    with pytest.raises(TooFewSamplesError):
        ui_diagnostic(np.zeros((999, 3)), "plus")


def test_ui_table_embedded_in_json():
    s = _bm(Deterministic(1.0), 2000)
    js = ui_diagnostic(s.y_probe, "plus", s.probe_t).to_json()
    assert js["table"] and {"t", "K", "tail", "se", "hits"} <= set(js["table"][0])
    assert "evidence-grade" in js["note"]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 3.0), st.integers(1, 6))
def test_ui_tail_nonincreasing_in_k(seed, shape, nt):
    rng = np.random.default_rng(seed)
    v = rng.standard_t(df=1 + shape, size=(1200, nt)) * rng.uniform(0.1, 5, size=nt)
    r = ui_diagnostic(v, "plus")
    assert np.all(np.diff(r.tail, axis=1) <= 2 * r.se[:, 1:] + 1e-15)
    assert r.monotone


def test_direction_check_detects_drift():
    up = simulate_stopped(DriftedBM(mu=1.0), Deterministic(3.0), IDENTITY, 1, 5000)
    assert direction_check(up.y_probe, "super").verdict == "violated"
    assert direction_check(up.y_probe, "sub").verdict == "satisfied"
    flat = simulate_stopped(DriftedBM(), Deterministic(3.0), IDENTITY, 1, 5000)
    assert direction_check(flat.y_probe, "super").verdict == "satisfied"


# ---------------------------------------------------------------- reports


@pytest.mark.slow
def test_report_drifted_bm_deterministic():
    rep = minimality_report(DriftedBM(mu=1.0), Deterministic(5.0), "scale", 21, 10000)
    assert rep.overall == "minimal-sufficient"
    assert rep.condition_c.status == "satisfied"


@pytest.mark.slow
def test_report_bm_exit_uses_monotone_shortcut():
    rep = minimality_report({"kind": "bm"}, {"kind": "first_exit", "a": -1, "b": 1}, "identity", 22, 10000)
    assert rep.overall == "minimal-sufficient"
    assert rep.shortcut_used == "strictly-monotone-g"


@pytest.mark.slow
def test_report_doob_not_established():
    rep = minimality_report(DriftedBM(), DoobInflated(1.0, 2.0), "identity", 23, 10000)
    assert rep.overall == "not-established"
    assert rep.condition_a.status != "satisfied"


def test_report_transient_bm3():
    g = GTransform("power_transient", {"y": [0.0, 0.0, 0.0]})
    rep = minimality_report({"kind": "bm_d", "x0": [1.0, 0.0, 0.0]}, {"kind": "deterministic", "t": 1.0}, g, 3, 2000)
    assert rep.overall == "minimal-sufficient"
    assert rep.condition_b.evidence["zero_increments"] == 0


def test_report_rejects_mismatched_g():
    with pytest.raises(DescriptorError):
        minimality_report(DriftedBM(), Deterministic(1.0), GTransform("log_planar", {"z": [0, 0]}), 1, 1000)


@given(st.sampled_from(STATUSES), st.sampled_from(STATUSES), st.sampled_from(STATUSES), st.sampled_from(SHORTCUTS))
def test_overall_invariant_on_all_combinations(a, b, c, shortcut):
    overall = assemble_overall(a, b, c, shortcut)
    rep = MinimalityReport(ConditionVerdict(a), ConditionVerdict(b), ConditionVerdict(c), overall, shortcut)
    if rep.overall == "minimal-sufficient":
        assert a == "satisfied" and b == "satisfied"
        assert c == "satisfied" or shortcut == "strictly-monotone-g"
    if "violated" in (a, b) or "inconclusive" in (a, b):
        assert overall == "not-established"
    flipped = "not-established" if overall == "minimal-sufficient" else "minimal-sufficient"
    with pytest.raises(ValueError):
        MinimalityReport(ConditionVerdict(a), ConditionVerdict(b), ConditionVerdict(c), flipped, shortcut)


@pytest.mark.parametrize("sigma", ["exp(x)", "exp(-x^2)", "exp(x^2)", "2 + abs(x)^3"])
def test_saturating_coefficients_are_valid(sigma):
    DiffusionSpec("x", sigma)


@pytest.mark.parametrize("kappa", ["1 + x", "1/x", "x^3 - 2"])
def test_kotani_rejects_zero_crossing(kappa):
    with pytest.raises(DomainError):
        kotani_test(kappa)
