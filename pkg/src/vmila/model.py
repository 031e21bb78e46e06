"""Composite objectives ``f0(x) + g(A x)`` and their forward-backward surrogates.

The surrogate at a base point ``x`` with parameters ``sigma = (alpha, D)`` is

    h(z, x) = grad f0(x)^T (z - x) + ||z - x||_D^2 / (2 alpha) + f1(z) - f1(x)

and ``h_tilde`` is the same expression with the distance term damped by
``gamma``. Infeasible points of ``f1`` evaluate to ``+inf`` instead of raising,
so a line search can reject them uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import (
    DiagonalMetric,
    IdentityOperator,
    LinearOperator,
    MatrixOperator,
    NORM_SAFETY,
    as_vector,
    metric_norm_sq,
    operator_norm_estimate,
)

__all__ = [
    "DomainError",
    "InfeasiblePointError",
    "SmoothTerm",
    "FunctionSmoothTerm",
    "QuadraticTerm",
    "NonsmoothTerm",
    "ZeroTerm",
    "L1Norm",
    "NonnegativeIndicator",
    "CompositeProblem",
    "SurrogateParams",
    "LocalModel",
    "first_difference",
    "eval_f",
    "eval_distance",
    "eval_h",
    "eval_h_tilde",
    "feasible_project",
]

# relative slack when testing membership in a closed set produced by projection
MEMBERSHIP_TOL = 1e-12


class DomainError(ValueError):
    """A point lies outside the open domain of the smooth term."""


class InfeasiblePointError(ValueError):
    """The base point of a surrogate lies outside dom f1."""


class SmoothTerm:
    """Continuously differentiable part ``f0`` of the objective.

    ``ht_one`` optionally carries the positive vector ``H^T 1`` used by the
    split-gradient metric; terms without it fall back to the identity metric.
    """

    ht_one: np.ndarray | None = None

    def value(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def in_domain(self, x) -> bool:
        return True

    def check_domain(self, x):
        if not self.in_domain(x):
            raise DomainError("point outside the domain of the smooth term")


class FunctionSmoothTerm(SmoothTerm):
    """Smooth term assembled from plain callables."""

    def __init__(self, value, gradient, domain=None, ht_one=None):
        self._value = value
        self._gradient = gradient
        self._domain = domain
        self.ht_one = None if ht_one is None else as_vector(ht_one)

    def value(self, x):
        return float(self._value(as_vector(x)))

    def gradient(self, x):
        return as_vector(self._gradient(as_vector(x)))

    def in_domain(self, x):
        return True if self._domain is None else bool(self._domain(as_vector(x)))


class QuadraticTerm(SmoothTerm):
    """Separable quadratic ``sum_i c_i (x_i - center_i)**2 / 2``."""

    def __init__(self, curvature, center):
        self.center = as_vector(center)
        self.curvature = np.broadcast_to(
            np.asarray(curvature, dtype=float), self.center.shape
        ).copy()

    def value(self, x):
        r = as_vector(x, self.center.size) - self.center
        return 0.5 * float(np.dot(self.curvature * r, r))

    def gradient(self, x):
        return self.curvature * (as_vector(x, self.center.size) - self.center)


class NonsmoothTerm:
    """Convex term ``f1 = g o A`` described through its conjugate.

    Subclasses provide ``operator`` (``A``, shape ``(m, n)``), the value of
    ``g`` and ``g*``, the resolvent of ``scale * g*`` and the Euclidean
    projection onto ``Omega = dom f1``.
    """

    operator: LinearOperator
    lower_bound: float = 0.0

    def g_value(self, u) -> float:
        raise NotImplementedError

    def g_conjugate_value(self, v) -> float:
        raise NotImplementedError

    def conjugate_resolvent(self, u, scale: float) -> np.ndarray:
        raise NotImplementedError

    def feasible_project(self, x) -> np.ndarray:
        return as_vector(x).copy()

    def value(self, x) -> float:
        return self.g_value(self.operator.apply(x))

    @cached_property
    def operator_norm(self) -> float:
        """Power-method estimate of ``||A||``, computed once."""
        return operator_norm_estimate(self.operator, iterations=100)

    @property
    def dual_lipschitz_factor(self) -> float:
        """Safe bound for ``||A||^2``; the dual curvature is ``alpha / min(D)`` times this."""
        return NORM_SAFETY * self.operator_norm**2


class ZeroTerm(NonsmoothTerm):
    """``f1 = 0`` written as ``g = 0`` with ``A = I``; ``dom g* = {0}``."""

    def __init__(self, n):
        self.operator = IdentityOperator(n)

    def g_value(self, u):
        return 0.0

    def g_conjugate_value(self, v):
        v = as_vector(v)
        return 0.0 if not np.any(v) else np.inf

    def conjugate_resolvent(self, u, scale):
        return np.zeros_like(as_vector(u))

    @cached_property
    def operator_norm(self):
        return 1.0


class L1Norm(NonsmoothTerm):
    """``f1(x) = weight * ||A x||_1``; with a difference operator this is 1-D TV."""

    def __init__(self, n, weight=1.0, operator=None):
        if weight <= 0:
            raise ValueError("weight must be positive")
        self.weight = float(weight)
        self.operator = IdentityOperator(n) if operator is None else operator
        if self.operator.shape[1] != n:
            raise ValueError("operator domain does not match n")

    def g_value(self, u):
        return self.weight * float(np.abs(as_vector(u)).sum())

    def g_conjugate_value(self, v):
        v = as_vector(v)
        if np.abs(v).max(initial=0.0) <= self.weight * (1 + MEMBERSHIP_TOL):
            return 0.0
        return np.inf

    def conjugate_resolvent(self, u, scale):
        return np.clip(as_vector(u), -self.weight, self.weight)


class NonnegativeIndicator(NonsmoothTerm):
    """Indicator of the nonnegative orthant; ``g*`` is the indicator of ``R^n_{<=0}``."""

    def __init__(self, n):
        self.operator = IdentityOperator(n)

    def g_value(self, u):
        return 0.0 if np.all(as_vector(u) >= 0) else np.inf

    def g_conjugate_value(self, v):
        return 0.0 if np.all(as_vector(v) <= 0) else np.inf

    def conjugate_resolvent(self, u, scale):
        return np.minimum(as_vector(u), 0.0)

    def feasible_project(self, x):
        return np.maximum(as_vector(x), 0.0)

    @cached_property
    def operator_norm(self):
        return 1.0


def first_difference(n) -> LinearOperator:
    """Forward-difference operator ``(Ax)_i = x_{i+1} - x_i``, shape ``(n-1, n)``."""
    return MatrixOperator(np.diff(np.eye(n), axis=0))


@dataclass(frozen=True)
class CompositeProblem:
    smooth: SmoothTerm
    nonsmooth: NonsmoothTerm

    @property
    def n(self) -> int:
        return self.nonsmooth.operator.shape[1]

    def f1(self, x) -> float:
        return self.nonsmooth.value(as_vector(x, self.n))

    def f(self, x) -> float:
        return eval_f(self, x)


@dataclass(frozen=True)
class SurrogateParams:
    """Distance parameters ``sigma = (alpha, D)`` plus the damping ``gamma``."""

    alpha: float
    metric: DiagonalMetric
    gamma: float = 1.0
    alpha_min: float | None = None
    alpha_max: float | None = None

    def __post_init__(self):
        lo = self.alpha_min if self.alpha_min is not None else 0.0
        hi = self.alpha_max if self.alpha_max is not None else np.inf
        if not (self.alpha > 0 and lo <= self.alpha <= hi):
            raise ValueError(f"alpha={self.alpha} outside ({lo}, {hi}]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma={self.gamma} outside [0, 1]")

    @property
    def modulus(self) -> float:
        """Conservative strong-convexity modulus ``1 / (alpha * mu)`` of ``h(., x)``."""
        return 1.0 / (self.alpha * self.metric.mu_bound)


def eval_f(p: CompositeProblem, x) -> float:
    x = as_vector(x, p.n)
    f1 = p.f1(x)
    if not np.isfinite(f1):
        return np.inf
    p.smooth.check_domain(x)
    return p.smooth.value(x) + f1


def eval_distance(sigma: SurrogateParams, z, x) -> float:
    """Scaled Euclidean distance ``||z - x||_D^2 / (2 alpha)``."""
    d = as_vector(z) - as_vector(x)
    return metric_norm_sq(sigma.metric, d) / (2.0 * sigma.alpha)


def feasible_project(p: CompositeProblem, x) -> np.ndarray:
    return p.nonsmooth.feasible_project(as_vector(x, p.n))


class LocalModel:
    """Surrogate functions of ``p`` frozen at a base point ``x``.

    Holds the quantities that stay fixed while an inner solver iterates:
    ``grad f0(x)``, ``f1(x)``, ``A x`` and the forward point
    ``z = x - alpha D^{-1} grad f0(x)``.
    """

    def __init__(self, p: CompositeProblem, sigma: SurrogateParams, x, grad=None):
        x = as_vector(x, p.n)
        p.smooth.check_domain(x)
        self.problem = p
        self.sigma = sigma
        self.x = x
        self.Ax = p.nonsmooth.operator.apply(x)
        self.f1_x = p.nonsmooth.g_value(self.Ax)
        if not np.isfinite(self.f1_x):
            raise InfeasiblePointError("surrogate base point lies outside dom f1")
        self.grad = p.smooth.gradient(x) if grad is None else as_vector(grad, p.n)
        self.dinv = sigma.metric.inverse_diag
        self.z = x - sigma.alpha * self.dinv * self.grad

    def _linear_and_distance(self, y):
        w = y - self.x
        lin = float(np.dot(self.grad, w))
        dist = metric_norm_sq(self.sigma.metric, w) / (2.0 * self.sigma.alpha)
        return lin, dist

    def h(self, y, f1_y=None) -> float:
        y = as_vector(y, self.x.size)
        if f1_y is None:
            f1_y = self.problem.f1(y)
        if not np.isfinite(f1_y):
            return np.inf
        lin, dist = self._linear_and_distance(y)
        return lin + dist + f1_y - self.f1_x

    def h_tilde(self, y, f1_y=None, gamma=None) -> float:
        y = as_vector(y, self.x.size)
        gamma = self.sigma.gamma if gamma is None else gamma
        if f1_y is None:
            f1_y = self.problem.f1(y)
        if not np.isfinite(f1_y):
            return np.inf
        lin, dist = self._linear_and_distance(y)
        return lin + gamma * dist + f1_y - self.f1_x

    def both(self, y, f1_y=None):
        """``(h, h_tilde)`` at `y` with a single evaluation of ``f1``."""
        y = as_vector(y, self.x.size)
        if f1_y is None:
            f1_y = self.problem.f1(y)
        if not np.isfinite(f1_y):
            return np.inf, np.inf
        lin, dist = self._linear_and_distance(y)
        base = lin + f1_y - self.f1_x
        return base + dist, base + self.sigma.gamma * dist


def eval_h(p, sigma, z, x) -> float:
    return LocalModel(p, sigma, x).h(z)


def eval_h_tilde(p, sigma, z, x) -> float:
    return LocalModel(p, sigma, x).h_tilde(z)
