import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import vmila.solver as solver_mod
from vmila.core import DiagonalMetric
from vmila.inner import EpsAdaptive, EpsFixed, Eta, InnerResult, Status
from vmila.model import (
    CompositeProblem,
    FunctionSmoothTerm,
    L1Norm,
    LocalModel,
    NonnegativeIndicator,
    QuadraticTerm,
    SurrogateParams,
    ZeroTerm,
    first_difference,
)
from vmila.solver import (
    Adaptive,
    InnerSolverError,
    LineSearchError,
    LineSearchParams,
    ScaledBB,
    SolverConfig,
    Summable,
    armijo_linesearch,
    bb_steplengths,
    epsilon_schedule,
    mu_schedule,
    select_metric,
    select_steplength,
    vmila_run,
)

from conftest import random_problem


def unit_sigma(n=1):
    return SurrogateParams(1.0, DiagonalMetric.identity(n))


def test_armijo_lasso_full_step():
    p = CompositeProblem(QuadraticTerm(1.0, [0.0]), L1Norm(1))
    r = armijo_linesearch(p, unit_sigma(), 1.0, [1.0], [0.0])
    assert r.delta == pytest.approx(-1.5)
    assert r.lam == 1.0
    assert r.f_new == 0.0


def _scalar_reference(f, x, d, fx, delta, beta, dl):
    lam = 1.0
    while f(x + lam * d) > fx + beta * lam * delta:
        lam *= dl
    return lam


def test_armijo_steep_quadratic():
    p = CompositeProblem(QuadraticTerm(100.0, [0.0]), ZeroTerm(1))
    x, y = np.array([1.0]), np.array([-99.0])
    params = LineSearchParams()
    r = armijo_linesearch(p, unit_sigma(), 1.0, x, y, params)
    ref = _scalar_reference(lambda t: 50 * t[0] ** 2, x, y - x, 50.0, r.delta,
                            params.beta, params.delta)
    assert r.lam == ref
    assert r.lam < 1
    assert r.f_new <= 50.0 + params.beta * r.lam * r.delta


def test_armijo_boundary_accepts_full_step():
    beta, delta = 0.25, -2.0
    target = 1.0 + beta * delta

    def value(x):
        return 1.0 if x[0] == 0.0 else target

    p = CompositeProblem(FunctionSmoothTerm(value, lambda x: np.zeros(1)), ZeroTerm(1))
    r = armijo_linesearch(p, unit_sigma(), 1.0, [0.0], [1.0], LineSearchParams(beta=beta),
                          delta_k=delta)
    assert r.lam == 1.0 and r.backtracks == 0


def test_armijo_rejects_non_descent():
    p = CompositeProblem(QuadraticTerm(1.0, [0.0]), ZeroTerm(1))
    with pytest.raises(LineSearchError):
        armijo_linesearch(p, unit_sigma(), 1.0, [0.0], [0.0])
    with pytest.raises(LineSearchError):
        armijo_linesearch(p, unit_sigma(), 1.0, [1.0], [2.0], delta_k=0.5)


def test_armijo_nan_exhausts_backtracks():
    p = CompositeProblem(FunctionSmoothTerm(lambda x: np.nan if x[0] != 0 else 0.0,
                                            lambda x: np.ones(1)), ZeroTerm(1))
    with pytest.raises(LineSearchError):
        armijo_linesearch(p, unit_sigma(), 1.0, [0.0], [-1.0], LineSearchParams(max_backtracks=5),
                          f_x=0.0, delta_k=-1.0)


def test_armijo_treats_infinite_as_failure():
    # f1 = indicator of x >= 0, a direction that leaves the orthant for large steps
    p = CompositeProblem(FunctionSmoothTerm(lambda x: -x[0], lambda x: -np.ones(1)),
                         NonnegativeIndicator(1))

    def f_trial(lam):
        return p.f([1.0 - 3.0 * lam])

    r = armijo_linesearch(p, unit_sigma(), 0.0, [1.0], [-2.0], delta_k=-1e-3)
    assert np.isfinite(r.f_new)
    assert f_trial(1.0) == np.inf and r.lam <= 0.5


def test_linesearch_params_validation():
    for kw in ({"delta": 1.0}, {"beta": 0.0}, {"gamma": 1.5}, {"max_backtracks": -1}):
        with pytest.raises(ValueError):
            LineSearchParams(**kw)


def test_metric_identity_when_ratio_one():
    ht = np.array([0.5, 2.0, 3.0])
    D = select_metric(ht.copy(), 3, ht)
    np.testing.assert_allclose(D.diag, 1.0)


def test_metric_hand_example():
    # mu_k = 10 needs 1 + scale / k^2 = 100
    D = select_metric([2.0, 0.5], 1, [1.0, 1.0], scale=99.0)
    assert D.mu_bound == pytest.approx(10.0)
    np.testing.assert_allclose(D.diag, [0.5, 2.0])


def test_metric_clipping_and_zero_pixels():
    D = select_metric([0.0, 1e9], 1, [1.0, 1.0])
    mu = mu_schedule(1)
    np.testing.assert_allclose(D.diag, [mu, 1 / mu])


def test_mu_schedule():
    assert mu_schedule(10**5) == pytest.approx(np.sqrt(2.0))
    with pytest.raises(ValueError):
        mu_schedule(0)
    ks = np.arange(1, 200001, dtype=float)
    xi = 1e10 / ks**2
    assert np.sum(xi) <= 1e10 * np.pi**2 / 6


def test_metric_rejects_bad_ht():
    with pytest.raises(ValueError):
        select_metric([1.0, 1.0], 1, [1.0, 0.0])


def test_bb_quadratic_recovers_curvature(rng):
    c = 3.7
    s = rng.normal(size=5)
    bb1, bb2 = bb_steplengths(s, c * s, DiagonalMetric.identity(5))
    assert bb1 == pytest.approx(1 / c) and bb2 == pytest.approx(1 / c)
    a, _ = select_steplength(s, c * s, DiagonalMetric.identity(5))
    assert a == pytest.approx(1 / c)


def test_bb_negative_curvature():
    D = DiagonalMetric.identity(2)
    a, _ = select_steplength(np.array([1.0, 0.0]), np.array([-1.0, 0.0]), D, alpha_max=50.0)
    assert a == 50.0


def test_bb_first_iteration_and_alternation():
    rule = ScaledBB(alpha0=3.0)
    assert rule.first() == 3.0
    D = DiagonalMetric.identity(2)
    # BB2 / BB1 small: take the min of the stored BB2 values
    s, w = np.array([1.0, 0.0]), np.array([1.0, 10.0])
    bb1, bb2 = bb_steplengths(s, w, D)
    assert bb2 / bb1 < 0.15
    rule.bb2_memory.extend([0.01])
    assert rule.next(s, w, D) == pytest.approx(min(0.01, bb2))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=6, max_size=6),
       st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_steplength_clipped(vals, logd):
    s, w = np.array(vals[:3]), np.array(vals[3:])
    D = DiagonalMetric.from_diag(np.exp(logd))
    a, _ = select_steplength(s, w, D, 1e-5, 1e2)
    assert 1e-5 <= a <= 1e2


def test_summable_schedule():
    assert Summable(1, 2)(3) == pytest.approx(1 / 9)
    rule = epsilon_schedule(3, Summable(1, 2))
    assert isinstance(rule, EpsFixed) and rule.eps == pytest.approx(1 / 9)
    c, p = 2.0, 1.5
    k = np.arange(1, 10**6 + 1, dtype=float)
    assert np.sum(c / k**p) <= c * p / (p - 1)
    with pytest.raises(ValueError):
        Summable(1, 1.0)
    assert isinstance(epsilon_schedule(1, Adaptive(0.3)), EpsAdaptive)
    assert epsilon_schedule(5, Eta(0.5)) == Eta(0.5)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(alpha_min=1.0, alpha_max=0.5).validate()
    with pytest.raises(ValueError):
        SolverConfig(metric_strategy="newton").validate()
    with pytest.raises(ValueError):
        SolverConfig(stopping_rule="tight").validate()


def test_quadratic_converges_to_zero():
    p = CompositeProblem(QuadraticTerm(1.0, [0.0]), ZeroTerm(1))
    x, tr = vmila_run(p, SolverConfig(stopping_rule=Eta(1.0), max_outer=100), [2.0])
    assert abs(x[0]) <= 1e-8
    assert len(tr) <= 100


def test_lasso_1d_closed_form():
    p = CompositeProblem(QuadraticTerm(1.0, [3.0]), L1Norm(1))
    x, tr = vmila_run(p, SolverConfig(stopping_rule=Eta(0.5), max_outer=200), [0.0])
    assert x[0] == pytest.approx(2.0, abs=1e-8)
    assert tr.f_final == pytest.approx(2.5, abs=1e-12)


def _check_trace(p, tr, beta):
    f = tr.f_values
    assert np.all(np.diff(f) <= 0)
    d = tr.column("delta")
    lam = tr.column("lam")
    assert np.all(d < 0) and np.all((lam > 0) & (lam <= 1))
    assert np.all(f[1:] <= f[:-1] + beta * lam * d)
    return d, lam


@pytest.mark.parametrize("kind", ["l1", "nonneg", "tv1d"])
@pytest.mark.parametrize("rule", [Eta(0.3), EpsAdaptive(1.0), Summable(1.0, 2.0)])
def test_traces_monotone_and_armijo(kind, rule, rng):
    p = random_problem(rng, kind, 10)
    cfg = SolverConfig(stopping_rule=rule, max_outer=80)
    x, tr = vmila_run(p, cfg, rng.normal(size=10))
    d, lam = _check_trace(p, tr, cfg.linesearch.beta)
    # lower bound: f1 >= 0 and f0 >= 0 for these quadratics
    partial = np.cumsum(lam * -d)
    assert np.all(partial <= (tr.f_initial - 0.0) / cfg.linesearch.beta)


def test_adaptive_tau_lambda_floor(rng):
    p = random_problem(rng, "tv1d", 12)
    x, tr = vmila_run(p, SolverConfig(stopping_rule=Adaptive(0.5), max_outer=500), rng.normal(size=12))
    lam = tr.column("lam")
    assert lam.min() > 0
    tail = lam[len(lam) // 2:]
    assert tail.max() >= lam[: max(len(lam) // 2, 1)].min()


def test_metric_certificate_in_callback(rng):
    from vmila.imaging import make_test_problem

    tp = make_test_problem("phantom", 16, seed=3)
    seen = []

    def cb(k, x, sigma, res):
        mu = mu_schedule(k + 1)
        assert sigma.metric.mu_bound == pytest.approx(mu)
        assert sigma.metric.diag.min() >= 1 / mu * (1 - 1e-15)
        assert sigma.metric.diag.max() <= mu * (1 + 1e-15)
        seen.append(k)

    vmila_run(tp.problem, SolverConfig(metric_strategy="split_gradient", max_outer=5), tp.initial_point(), cb)
    assert seen == list(range(5))


def test_infeasible_start_is_projected(caplog):
    p = CompositeProblem(QuadraticTerm(1.0, [1.0, 2.0]), NonnegativeIndicator(2))
    with caplog.at_level("INFO"):
        x, tr = vmila_run(p, SolverConfig(stopping_rule=Eta(0.9), max_outer=50), [-5.0, -5.0])
    assert "projecting" in caplog.text
    np.testing.assert_allclose(x, [1.0, 2.0], atol=1e-6)


def test_nan_gradient_aborts():
    p = CompositeProblem(FunctionSmoothTerm(lambda x: 0.0, lambda x: np.full(1, np.nan)), ZeroTerm(1))
    with pytest.raises(FloatingPointError):
        vmila_run(p, SolverConfig(), [1.0])


def test_inner_failure_is_hard_error(monkeypatch):
    p = CompositeProblem(QuadraticTerm(1.0, [0.0]), ZeroTerm(1))

    def fake_inner(*args, **kwargs):
        return InnerResult(np.array([1.0]), np.zeros(1), 0.1, -1.0, 1.1, 0.1, 1500, Status.MAX_ITERATIONS)

    monkeypatch.setattr(solver_mod, "solve_inner", fake_inner)
    with pytest.raises(InnerSolverError):
        vmila_run(p, SolverConfig(), [1.0])


def test_target_tolerance_stops_early(rng):
    p = random_problem(rng, "tv1d", 12)
    _, tr = vmila_run(p, SolverConfig(stopping_rule=Eta(0.5), max_outer=500, target_tolerance=1e-6),
                      rng.normal(size=12))
    assert tr.stop_reason == "tolerance"
    assert abs(tr.records[-1].delta) <= 1e-6 * (1 + abs(tr.records[-1].f))


def test_counterexample_needs_distance_condition():
    # f0 = x^2/2, f1 = 0, y_k = x_k - (1/2)^(k+1), unit steps
    p = CompositeProblem(QuadraticTerm(1.0, [0.0]), ZeroTerm(1))
    s = unit_sigma()
    x = np.array([2.0])
    xs = [x[0]]
    for k in range(41):
        y = x - 0.5 ** (k + 1)
        m = LocalModel(p, s, x)
        delta = m.h_tilde(y)
        assert delta < 0
        # Armijo with beta = delta = 1/2 accepts lambda = 1
        r = armijo_linesearch(p, s, 1.0, x, y, LineSearchParams(delta=0.5, beta=0.5), delta_k=delta)
        assert r.lam == 1.0
        # but no eta-approximation: h(y) / h(p(x)) -> 0
        if k >= 10:
            assert m.h(y) > 1e-2 * m.h(m.z)
        x = y
        xs.append(x[0])
    k = np.arange(41)
    np.testing.assert_allclose(np.array(xs[:41]), 1.0 + 0.5**k, rtol=0, atol=1e-12)
    assert abs(xs[-1] - 1.0) < 1e-12
