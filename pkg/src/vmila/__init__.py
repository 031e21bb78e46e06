"""Variable-metric inexact line-search forward-backward solver.

Minimizes ``f0(x) + g(A x)`` with inexact scaled proximal steps computed on
the dual problem, and ships the TV-regularized Poisson deblurring problems
used to exercise it.
"""

from .core import DiagonalMetric, LinearOperator, MatrixOperator, metric_norm_sq
from .inner import EpsAdaptive, EpsFixed, Eta, InnerResult, Status, solve_inner
from .model import (
    CompositeProblem,
    L1Norm,
    LocalModel,
    NonnegativeIndicator,
    QuadraticTerm,
    SurrogateParams,
    ZeroTerm,
    eval_f,
    eval_h,
    eval_h_tilde,
)
from .solver import (
    Adaptive,
    IterateTrace,
    LineSearchParams,
    SolverConfig,
    Summable,
    armijo_linesearch,
    vmila_run,
)

__version__ = "0.1.0"

__all__ = [
    "DiagonalMetric", "LinearOperator", "MatrixOperator", "metric_norm_sq",
    "EpsAdaptive", "EpsFixed", "Eta", "InnerResult", "Status", "solve_inner",
    "CompositeProblem", "L1Norm", "LocalModel", "NonnegativeIndicator", "QuadraticTerm",
    "SurrogateParams", "ZeroTerm", "eval_f", "eval_h", "eval_h_tilde",
    "Adaptive", "IterateTrace", "LineSearchParams", "SolverConfig", "Summable",
    "armijo_linesearch", "vmila_run",
]
