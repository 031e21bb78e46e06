"""Variable-metric inexact line-search forward-backward method.

One outer iteration chooses a steplength ``alpha_k`` and a diagonal metric
``D_k``, computes an inexact proximal point ``y_k`` with the dual inner
solver, and moves along ``d_k = y_k - x_k`` with a backtracking Armijo rule
whose decrease measure is ``Delta_k = h_tilde(y_k, x_k)``.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field, fields

import numpy as np

from .core import DiagonalMetric, as_vector
from .inner import (
    DEFAULT_A_PARAM,
    DEFAULT_INNER_MAX,
    EpsAdaptive,
    EpsFixed,
    Eta,
    InnerResult,
    Status,
    solve_inner,
)
from .model import CompositeProblem, LocalModel, SurrogateParams

__all__ = [
    "LineSearchError",
    "InnerSolverError",
    "LineSearchParams",
    "LineSearchResult",
    "Summable",
    "Adaptive",
    "SolverConfig",
    "TraceRecord",
    "IterateTrace",
    "armijo_linesearch",
    "mu_schedule",
    "select_metric",
    "bb_steplengths",
    "ScaledBB",
    "select_steplength",
    "epsilon_schedule",
    "vmila_run",
]

log = logging.getLogger(__name__)


class LineSearchError(RuntimeError):
    pass


class InnerSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class LineSearchParams:
    delta: float = 0.5
    beta: float = 1e-4
    gamma: float = 1.0
    max_backtracks: int = 60

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.max_backtracks < 0:
            raise ValueError("max_backtracks must be nonnegative")


@dataclass(frozen=True)
class LineSearchResult:
    lam: float
    f_new: float
    backtracks: int
    delta: float


def armijo_linesearch(p, sigma, gamma, x, y_tilde, params=LineSearchParams(),
                      f_x=None, delta_k=None) -> LineSearchResult:
    """Backtracking along ``d = y_tilde - x`` from ``lambda = 1``.

    Returns the largest ``lambda`` in ``{1, delta, delta**2, ...}`` with
    ``f(x + lambda d) <= f(x) + beta * lambda * Delta`` where
    ``Delta = h_tilde(y_tilde, x)`` computed with damping `gamma`.
    An infeasible trial point (``f = inf``) counts as a failed test.
    """
    x = as_vector(x, p.n)
    y_tilde = as_vector(y_tilde, p.n)
    if delta_k is None:
        delta_k = LocalModel(p, sigma, x).h_tilde(y_tilde, gamma=gamma)
    if not delta_k < 0.0:
        raise LineSearchError(f"not a descent direction: Delta = {delta_k!r}")
    if f_x is None:
        f_x = p.f(x)
    d = y_tilde - x
    lam = 1.0
    for j in range(params.max_backtracks + 1):
        f_new = p.f(x + lam * d)
        if f_new <= f_x + params.beta * lam * delta_k:
            return LineSearchResult(lam, f_new, j, delta_k)
        lam *= params.delta
    raise LineSearchError(
        f"Armijo condition not met after {params.max_backtracks} reductions "
        f"(f(x) = {f_x!r}, Delta = {delta_k!r})"
    )


def mu_schedule(k, scale=1e10) -> float:
    """Metric bound ``sqrt(1 + scale / k**2)`` for the 1-based iteration count `k`."""
    if k < 1:
        raise ValueError("mu schedule is defined for k >= 1")
    return float(np.sqrt(1.0 + scale / float(k) ** 2))


def select_metric(x, k, ht_one, scale=1e10) -> DiagonalMetric:
    """Split-gradient diagonal metric clipped to ``[1/mu_k, mu_k]``.

    ``D_ii = 1 / max(min(x_i / [H^T 1]_i, mu_k), 1 / mu_k)``.
    """
    x = as_vector(x)
    ht_one = as_vector(ht_one, x.size)
    if np.any(ht_one <= 0):
        raise ValueError("H^T 1 must be strictly positive")
    mu = mu_schedule(k, scale)
    ratio = np.maximum(np.minimum(x / ht_one, mu), 1.0 / mu)
    return DiagonalMetric(1.0 / ratio, mu)


def bb_steplengths(s, w, D: DiagonalMetric):
    """Metric-scaled Barzilai-Borwein pair; ``nan`` where curvature is not positive."""
    s = as_vector(s)
    w = as_vector(w, s.size)
    Ds = D.diag * s
    Dinv_w = w / D.diag
    sDw = float(np.dot(Ds, w))
    sDinvw = float(np.dot(s, Dinv_w))
    bb1 = float(np.dot(Ds, Ds)) / sDw if sDw > 0 else np.nan
    wDw = float(np.dot(Dinv_w, Dinv_w))
    bb2 = sDinvw / wDw if sDinvw > 0 and wDw > 0 else np.nan
    return bb1, bb2


class ScaledBB:
    """Adaptive alternation of the two scaled BB rules.

    When ``BB2 / BB1`` falls below `threshold` the minimum of the last
    `memory` BB2 values is used, otherwise BB1. Values are clipped to
    ``[alpha_min, alpha_max]``.
    """

    def __init__(self, alpha_min=1e-5, alpha_max=1e2, alpha0=1.0, threshold=0.15, memory=3):
        self.alpha_min = alpha_min
        self.alpha_max = alpha_max
        self.alpha0 = alpha0
        self.threshold = threshold
        self.bb2_memory = deque(maxlen=memory)

    def clip(self, a):
        return float(min(max(a, self.alpha_min), self.alpha_max))

    def first(self):
        return self.clip(self.alpha0)

    def next(self, s, w, D):
        bb1, bb2 = bb_steplengths(s, w, D)
        if np.isnan(bb1):
            self.bb2_memory.append(self.alpha_max)
            return self.alpha_max
        bb1 = self.clip(bb1)
        bb2 = self.alpha_max if np.isnan(bb2) else self.clip(bb2)
        self.bb2_memory.append(bb2)
        if bb2 / bb1 < self.threshold:
            return min(self.bb2_memory)
        return bb1


def select_steplength(s, w, D, alpha_min=1e-5, alpha_max=1e2, bb2_history=(),
                      threshold=0.15, memory=3, alpha0=1.0):
    """Stateless form of :class:`ScaledBB`.

    With ``s is None`` (first iteration) returns the clipped `alpha0`.
    Returns ``(alpha, bb2_history)``.
    """
    rule = ScaledBB(alpha_min, alpha_max, alpha0, threshold, memory)
    rule.bb2_memory.extend(bb2_history)
    if s is None:
        return rule.first(), tuple(rule.bb2_memory)
    return rule.next(s, w, D), tuple(rule.bb2_memory)


@dataclass(frozen=True)
class Summable:
    """Prefixed tolerances ``eps_k = c / k**p`` with ``p > 1``."""

    c: float = 1.0
    p: float = 2.0

    def __post_init__(self):
        if not self.p > 1.0:
            raise ValueError(f"summable schedule needs p > 1, got {self.p}")
        if not self.c > 0.0:
            raise ValueError(f"summable schedule needs c > 0, got {self.c}")

    def __call__(self, k):
        return self.c / float(k) ** self.p


@dataclass(frozen=True)
class Adaptive:
    tau: float

    def __post_init__(self):
        if not self.tau > 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")


def epsilon_schedule(k, variant):
    """Inner stopping rule for the 1-based outer iteration `k`.

    Fixed rules (``Eta``, ``EpsFixed``, ``EpsAdaptive``) are returned as is.
    """
    if isinstance(variant, Summable):
        if k < 1:
            raise ValueError("summable schedule is indexed from k = 1")
        return EpsFixed(variant(k))
    if isinstance(variant, Adaptive):
        return EpsAdaptive(variant.tau)
    if isinstance(variant, (Eta, EpsFixed, EpsAdaptive)):
        return variant
    raise TypeError(f"unknown schedule {variant!r}")


METRIC_STRATEGIES = ("identity", "split_gradient")


@dataclass
class SolverConfig:
    alpha_min: float = 1e-5
    alpha_max: float = 1e2
    metric_strategy: str = "identity"
    # None selects the adaptive scaled BB rule; a number fixes alpha
    fixed_alpha: float | None = None
    alpha0: float = 1.0
    bb_threshold: float = 0.15
    bb_memory: int = 3
    stopping_rule: object = field(default_factory=lambda: Eta(1e-6))
    mu_scale: float = 1e10
    linesearch: LineSearchParams = field(default_factory=LineSearchParams)
    max_outer: int = 500
    inner_max: int = DEFAULT_INNER_MAX
    a_param: float = DEFAULT_A_PARAM
    target_tolerance: float = 0.0
    warm_start: bool = True
    # "raise" or "stop" when the inner budget ends without a descent direction
    inner_failure: str = "raise"

    def validate(self):
        if not 0.0 < self.alpha_min <= self.alpha_max:
            raise ValueError("need 0 < alpha_min <= alpha_max")
        if self.metric_strategy not in METRIC_STRATEGIES:
            raise ValueError(f"metric_strategy must be one of {METRIC_STRATEGIES}")
        if self.fixed_alpha is not None and not (
            self.alpha_min <= self.fixed_alpha <= self.alpha_max
        ):
            raise ValueError("fixed_alpha outside [alpha_min, alpha_max]")
        if not self.mu_scale >= 0.0:
            raise ValueError("mu_scale must be nonnegative")
        if self.max_outer < 0 or self.inner_max < 1:
            raise ValueError("iteration budgets must be positive")
        if not self.a_param > 2.0:
            raise ValueError("a_param must exceed 2")
        if self.inner_failure not in ("raise", "stop"):
            raise ValueError("inner_failure must be 'raise' or 'stop'")
        if not self.target_tolerance >= 0.0:
            raise ValueError("target_tolerance must be nonnegative")
        try:
            epsilon_schedule(1, self.stopping_rule)
        except TypeError as exc:
            raise ValueError(str(exc)) from None
        return self


@dataclass
class TraceRecord:
    k: int
    f: float
    delta: float
    lam: float
    backtracks: int
    inner_iters: int
    eps_or_eta: float
    time_s: float
    alpha: float = np.nan
    mu: float = 1.0
    inner_status: str = ""
    min_gap: float = np.inf


@dataclass
class IterateTrace:
    records: list = field(default_factory=list)
    f_initial: float = np.nan
    f_final: float = np.nan
    stop_reason: str = ""

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    @property
    def f_values(self):
        """``f(x_0), ..., f(x_K)`` including the final iterate."""
        return np.append(self.column("f"), self.f_final) if self.records else np.array([self.f_final])

    @staticmethod
    def field_names():
        return [f.name for f in fields(TraceRecord)]


def _check_finite(name, value):
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite {name} encountered")


def vmila_run(p: CompositeProblem, config: SolverConfig, x0, callback=None, timer=time.perf_counter):
    """Run the outer loop from `x0`; returns ``(x_final, IterateTrace)``.

    Stops when the inner solver certifies an exactly stationary point, when
    ``|Delta_k| <= target_tolerance * (1 + |f(x_k)|)``, or after
    ``max_outer`` iterations. `callback(k, x, sigma, inner_result)` is called
    after each inner solve.
    """
    config.validate()
    x = as_vector(x0, p.n).copy()
    if not np.isfinite(p.f1(x)):
        log.info("initial point infeasible; projecting onto dom f1")
        x = p.nonsmooth.feasible_project(x)
    f_x = p.f(x)
    _check_finite("objective at x0", f_x)
    if config.metric_strategy == "split_gradient" and p.smooth.ht_one is None:
        raise ValueError("split_gradient metric needs a smooth term exposing ht_one")
    steps = ScaledBB(config.alpha_min, config.alpha_max, config.alpha0,
                     config.bb_threshold, config.bb_memory)
    trace = IterateTrace(f_initial=f_x)
    grad = p.smooth.gradient(x)
    _check_finite("gradient", grad)
    x_prev = grad_prev = None
    v_warm = None
    ls = config.linesearch

    for k in range(config.max_outer):
        t0 = timer()
        kk = k + 1
        if config.metric_strategy == "split_gradient":
            D = select_metric(x, kk, p.smooth.ht_one, config.mu_scale)
        else:
            D = DiagonalMetric.identity(p.n)
        if config.fixed_alpha is not None:
            alpha = float(config.fixed_alpha)
        elif x_prev is None:
            alpha = steps.first()
        else:
            alpha = steps.next(x - x_prev, grad - grad_prev, D)
        sigma = SurrogateParams(alpha, D, ls.gamma, config.alpha_min, config.alpha_max)
        model = LocalModel(p, sigma, x, grad=grad)
        rule = epsilon_schedule(kk, config.stopping_rule)
        res: InnerResult = solve_inner(
            p, sigma, x, rule, config.inner_max,
            warm_start=v_warm if config.warm_start else None,
            model=model, a_param=config.a_param,
        )
        if callback is not None:
            callback(k, x, sigma, res)
        if res.status is Status.EXACT_STATIONARY:
            trace.stop_reason = "stationary"
            break
        delta_k = res.h_tilde_value
        if not delta_k < 0.0:
            if res.status is Status.MAX_ITERATIONS:
                if config.inner_failure == "stop":
                    log.warning("outer iteration %d: no descent direction within the inner budget", k)
                    trace.stop_reason = "inner_failure"
                    break
                raise InnerSolverError(
                    f"outer iteration {k}: inner budget exhausted without a descent "
                    f"direction (h_tilde = {delta_k!r})"
                )
            trace.stop_reason = "stationary"
            break
        _check_finite("inexact proximal point", res.y_tilde)
        step = armijo_linesearch(p, sigma, ls.gamma, x, res.y_tilde, ls, f_x=f_x, delta_k=delta_k)
        x_new = x + step.lam * (res.y_tilde - x)
        grad_new = p.smooth.gradient(x_new)
        _check_finite("gradient", grad_new)
        elapsed = timer() - t0
        trace.records.append(TraceRecord(
            k, f_x, delta_k, step.lam, step.backtracks, res.inner_iterations,
            float(res.eps_used), elapsed, alpha, D.mu_bound, res.status.value, res.min_gap,
        ))
        x_prev, grad_prev = x, grad
        x, grad, f_x = x_new, grad_new, step.f_new
        v_warm = res.v
        if abs(delta_k) <= config.target_tolerance * (1.0 + abs(trace.records[-1].f)):
            trace.stop_reason = "tolerance"
            break
    else:
        trace.stop_reason = "max_outer"
    trace.f_final = f_x
    return x, trace
