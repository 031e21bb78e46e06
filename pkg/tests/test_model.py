import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vmila.core import DiagonalMetric, IdentityOperator
from vmila.model import (
    CompositeProblem,
    DomainError,
    FunctionSmoothTerm,
    InfeasiblePointError,
    L1Norm,
    LocalModel,
    NonnegativeIndicator,
    QuadraticTerm,
    SurrogateParams,
    ZeroTerm,
    eval_distance,
    eval_f,
    eval_h,
    eval_h_tilde,
    feasible_project,
    first_difference,
)
from vmila.oracle import fd_gradient

from conftest import feasible_point, random_problem, random_sigma


def lasso1d():
    return CompositeProblem(QuadraticTerm(1.0, [0.0]), L1Norm(1))


def unit_sigma(n=1, gamma=1.0, alpha=1.0):
    return SurrogateParams(alpha, DiagonalMetric.identity(n), gamma)


def test_eval_f_hand():
    assert eval_f(lasso1d(), [1.0]) == pytest.approx(1.5)


def test_eval_f_infeasible():
    p = CompositeProblem(QuadraticTerm(1.0, [0.0]), NonnegativeIndicator(1))
    assert eval_f(p, [-1.0]) == np.inf


def test_eval_f_zero():
    p = CompositeProblem(QuadraticTerm(0.0, np.zeros(3)), ZeroTerm(3))
    assert eval_f(p, [1.0, -4.0, 2.0]) == 0.0


def test_distance_examples():
    s = unit_sigma(2)
    assert eval_distance(s, [1.0, 1.0], [1.0, 1.0]) == 0.0
    assert eval_distance(s, [1.0, 1.0], [0.0, 0.0]) == pytest.approx(1.0)
    s = SurrogateParams(2.0, DiagonalMetric([4.0, 1.0], 4.0))
    assert eval_distance(s, [1.0, 2.0], [0.0, 0.0]) == pytest.approx(2.0)


def test_h_hand():
    assert eval_h(lasso1d(), unit_sigma(), [0.0], [1.0]) == pytest.approx(-1.5)
    assert eval_h(lasso1d(), unit_sigma(), [1.0], [1.0]) == 0.0


def test_h_tilde_gamma_zero():
    assert eval_h_tilde(lasso1d(), unit_sigma(gamma=0.0), [0.0], [1.0]) == pytest.approx(-2.0)


def test_h_infeasible_candidate_and_base():
    p = CompositeProblem(QuadraticTerm(1.0, [0.0]), NonnegativeIndicator(1))
    assert eval_h(p, unit_sigma(), [-1.0], [1.0]) == np.inf
    with pytest.raises(InfeasiblePointError):
        eval_h(p, unit_sigma(), [1.0], [-1.0])


def test_smooth_domain_violation_is_error():
    t = FunctionSmoothTerm(lambda x: -np.log(x).sum(), lambda x: -1 / x, domain=lambda x: np.all(x > 0))
    p = CompositeProblem(t, ZeroTerm(1))
    with pytest.raises(DomainError):
        LocalModel(p, unit_sigma(), [-1.0])


def test_feasible_project():
    p = CompositeProblem(QuadraticTerm(1.0, np.zeros(2)), NonnegativeIndicator(2))
    np.testing.assert_array_equal(feasible_project(p, [-1.0, 2.0]), [0.0, 2.0])
    np.testing.assert_array_equal(feasible_project(p, [0.5, 2.0]), [0.5, 2.0])


def test_feasible_project_grid_oracle(rng):
    p = CompositeProblem(QuadraticTerm(1.0, np.zeros(2)), NonnegativeIndicator(2))
    grid = np.linspace(0.0, 4.0, 401)
    G = np.array(list(itertools.product(grid, grid)))
    for _ in range(10):
        x = rng.uniform(-3, 3, 2)
        best = G[np.argmin(((G - x) ** 2).sum(axis=1))]
        assert np.abs(feasible_project(p, x) - best).max() <= grid[1] - grid[0]


def test_projection_idempotent_nonexpansive(rng):
    p = CompositeProblem(QuadraticTerm(1.0, np.zeros(5)), NonnegativeIndicator(5))
    for _ in range(50):
        a, b = rng.normal(size=5), rng.normal(size=5)
        pa, pb = feasible_project(p, a), feasible_project(p, b)
        np.testing.assert_array_equal(feasible_project(p, pa), pa)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-15


@pytest.mark.parametrize("kind", ["l1", "nonneg", "tv1d"])
def test_resolvent_lands_in_dom_gstar(kind, rng):
    p = random_problem(rng, kind, 6)
    term = p.nonsmooth
    for _ in range(20):
        u = rng.normal(0, 5, term.operator.shape[0])
        assert np.isfinite(term.g_conjugate_value(term.conjugate_resolvent(u, 0.3)))


@pytest.mark.parametrize("kind", ["l1", "nonneg", "tv1d"])
def test_f1_lower_bound(kind, rng):
    p = random_problem(rng, kind, 6)
    for _ in range(20):
        assert p.f1(rng.normal(size=6)) >= p.nonsmooth.lower_bound


def test_quadratic_gradient_fd(rng):
    t = QuadraticTerm(rng.uniform(0.5, 3, 5), rng.normal(size=5))
    for _ in range(5):
        x = rng.normal(size=5)
        g = t.gradient(x)
        fd = fd_gradient(t.value, x, 1e-5)
        assert np.linalg.norm(fd - g) <= 1e-5 * (1 + np.linalg.norm(g))


def test_first_difference_shape():
    A = first_difference(4)
    np.testing.assert_array_equal(A.apply([1.0, 3.0, 6.0, 10.0]), [2.0, 3.0, 4.0])


def test_surrogate_params_validation():
    D = DiagonalMetric.identity(1)
    with pytest.raises(ValueError):
        SurrogateParams(0.0, D)
    with pytest.raises(ValueError):
        SurrogateParams(1.0, D, gamma=1.5)
    with pytest.raises(ValueError):
        SurrogateParams(1e3, D, alpha_min=1e-5, alpha_max=1e2)


KINDS = st.sampled_from(["l1", "nonneg", "tv1d"])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), KINDS, st.floats(0.0, 1.0))
def test_h_tilde_below_h(seed, kind, gamma):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, kind, 5)
    s = random_sigma(rng, 5, gamma=gamma)
    x = feasible_point(p, rng)
    z = feasible_point(p, rng)
    m = LocalModel(p, s, x)
    h, ht = m.both(z)
    assert ht <= h + 1e-12 * (1 + abs(h))
    assert m.h_tilde(x) == 0.0


def test_descent_for_negative_h_tilde(rng):
    hits = 0
    for _ in range(100):
        p = random_problem(rng, "l1", 4)
        s = random_sigma(rng, 4, gamma=rng.uniform())
        x = feasible_point(p, rng)
        z = feasible_point(p, rng)
        if not LocalModel(p, s, x).h_tilde(z) < 0:
            continue
        hits += 1
        fx = p.f(x)
        assert any(p.f(x + 2.0**-j * (z - x)) < fx for j in range(1, 21))
    assert hits > 10


def test_modulus():
    s = SurrogateParams(2.0, DiagonalMetric([1.0, 3.0], 4.0))
    assert s.modulus == pytest.approx(1 / 8)
    assert isinstance(ZeroTerm(3).operator, IdentityOperator)
