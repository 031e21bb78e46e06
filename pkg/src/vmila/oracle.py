"""Reference computations for tests: exact prox points, finite differences, f*.

The dual loop in :func:`prox_bruteforce` is written independently of the
production inner solver (plain FISTA with gradient restart and its own
stepsize); only the gap evaluation is shared.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import IdentityOperator, as_vector
from .inner import Eta, gap as eval_gap
from .model import L1Norm, LocalModel, NonnegativeIndicator, ZeroTerm

__all__ = [
    "OracleConfig",
    "OracleError",
    "ReferenceResult",
    "prox_bruteforce",
    "fd_gradient",
    "reference_optimum",
    "config_hash",
    "write_fixture",
    "read_fixture",
]

log = logging.getLogger(__name__)


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleConfig:
    tolerance: float = 1e-12
    max_iterations: int = 1_000_000

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def _closed_form(p, sigma, m):
    term = p.nonsmooth
    d = sigma.metric.diag
    if isinstance(term, ZeroTerm):
        return m.z.copy()
    if isinstance(term, NonnegativeIndicator):
        return np.maximum(m.z, 0.0)
    if isinstance(term, L1Norm) and isinstance(term.operator, IdentityOperator):
        thr = sigma.alpha * term.weight / d
        return np.sign(m.z) * np.maximum(np.abs(m.z) - thr, 0.0)
    return None


def prox_bruteforce(p, sigma, x, config=OracleConfig()) -> np.ndarray:
    """Minimizer of ``h(., x)``.

    Separable terms use closed forms. Otherwise the dual is maximized by
    restarted FISTA until the primal-dual gap is below
    ``tolerance * max(1, |h|)``.
    """
    m = LocalModel(p, sigma, x)
    y = _closed_form(p, sigma, m)
    if y is not None:
        return y
    A = p.nonsmooth.operator
    term = p.nonsmooth
    dinv = m.dinv
    # dense norm of A D^-1 A^T by SVD: independent of the power method
    dense = np.column_stack([A.apply(e) for e in np.eye(p.n)])
    lip = sigma.alpha * np.linalg.norm(dense * np.sqrt(dinv), 2) ** 2
    step = 1.0 / lip if lip > 0 else 1.0

    def primal(v):
        return m.z - sigma.alpha * dinv * A.adjoint(v)

    v = np.zeros(A.shape[0])
    u, t = v.copy(), 1.0
    for it in range(config.max_iterations):
        v_new = term.conjugate_resolvent(u + step * A.apply(primal(u)), step)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        # restart when the step moves against the dual ascent direction
        if np.dot(u - v_new, v_new - v) > 0:
            t_new, u = 1.0, v_new.copy()
        else:
            u = v_new + ((t - 1.0) / t_new) * (v_new - v)
        v, t = v_new, t_new
        if it % 50 == 0 or it == config.max_iterations - 1:
            y = term.feasible_project(primal(v))
            g = eval_gap(p, sigma, y, v, x, model=m)
            if g <= config.tolerance * max(1.0, abs(m.h(y))):
                return y
    raise OracleError(f"gap {g:.3e} above tolerance after {config.max_iterations} iterations")


def fd_gradient(f, x, h=1e-6) -> np.ndarray:
    """Central differences; one-sided where a stencil point evaluates to a non-finite value."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = as_vector(x)
    f0 = None
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fp, fm = f(x + e), f(x - e)
        if np.isfinite(fp) and np.isfinite(fm):
            g[i] = (fp - fm) / (2 * h)
            continue
        if f0 is None:
            f0 = f(x)
        if np.isfinite(fp):
            g[i] = (fp - f0) / h
        elif np.isfinite(fm):
            g[i] = (f0 - fm) / h
        else:
            raise ValueError(f"f is not finite on either side of coordinate {i}")
    return g


@dataclass(frozen=True)
class ReferenceResult:
    f_star: float
    x_star: np.ndarray
    budget: int
    source: str


def reference_optimum(p, budget, x0=None, eta=0.9, inner_max=3000, fixed_alpha=1.0) -> ReferenceResult:
    """Smallest objective value over a long tight-tolerance VMILA run and a fixed-step run."""
    from .solver import SolverConfig, vmila_run

    x0 = np.zeros(p.n) if x0 is None else as_vector(x0, p.n)
    metric = "split_gradient" if p.smooth.ht_one is not None else "identity"
    runs = {
        "vmila": SolverConfig(metric_strategy=metric, stopping_rule=Eta(eta),
                              max_outer=budget, inner_max=inner_max, inner_failure="stop"),
        "fixed": SolverConfig(metric_strategy="identity", fixed_alpha=fixed_alpha,
                              stopping_rule=Eta(eta), max_outer=budget, inner_max=inner_max,
                              inner_failure="stop"),
    }
    best = None
    for name, cfg in runs.items():
        x, trace = vmila_run(p, cfg, x0)
        log.info("reference run %s: f = %.17g after %d iterations (%s)",
                 name, trace.f_final, len(trace), trace.stop_reason)
        if best is None or trace.f_final < best.f_star:
            best = ReferenceResult(trace.f_final, x, budget, name)
    return best


def config_hash(items: dict) -> str:
    text = "\n".join(f"{k}={items[k]}" for k in sorted(items))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_fixture(path, values: dict):
    lines = [f"{k}={values[k]!r}" if isinstance(values[k], float) else f"{k}={values[k]}"
             for k in values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_fixture(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: malformed line {line!r}")
        key, val = key.strip(), val.strip()
        try:
            out[key] = int(val)
        except ValueError:
            try:
                out[key] = float(val)
            except ValueError:
                out[key] = val
    return out
