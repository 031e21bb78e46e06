"""Vector arithmetic, diagonal metrics and linear operators.

Vectors are plain 1-D ``float64`` numpy arrays. Metrics are restricted to
diagonal matrices; a full SPD metric would need a linear solve in
:func:`metric_inverse_apply` and a factorization for the norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DiagonalMetric",
    "LinearOperator",
    "MatrixOperator",
    "IdentityOperator",
    "StackedOperator",
    "as_vector",
    "metric_norm_sq",
    "metric_inverse_apply",
    "operator_norm_estimate",
    "NORM_SAFETY",
]

#: Multiplicative guard applied to power-method norm estimates.
NORM_SAFETY = 1.05


def as_vector(x, n=None):
    """Return `x` as a contiguous 1-D float64 array, checking length."""
    v = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    if n is not None and v.size != n:
        raise ValueError(f"expected vector of length {n}, got {v.size}")
    return v


@dataclass(frozen=True)
class DiagonalMetric:
    """Diagonal SPD matrix certified to lie in the class M_mu.

    Every entry of `diag` lies in ``[1/mu_bound, mu_bound]``.
    """

    diag: np.ndarray
    mu_bound: float = 1.0

    def __post_init__(self):
        d = as_vector(self.diag)
        d.setflags(write=False)
        object.__setattr__(self, "diag", d)
        mu = float(self.mu_bound)
        if not mu >= 1.0:
            raise ValueError(f"mu_bound must be >= 1, got {mu}")
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise ValueError("metric entries must be finite and positive")
        # one ulp of slack: entries produced by 1/clip(.) may round outward
        tol = 4 * np.finfo(float).eps
        if d.min() < (1.0 / mu) * (1 - tol) or d.max() > mu * (1 + tol):
            raise ValueError(
                f"metric entries in [{d.min():.3g}, {d.max():.3g}] "
                f"outside [1/{mu:.3g}, {mu:.3g}]"
            )
        object.__setattr__(self, "mu_bound", mu)

    @classmethod
    def identity(cls, n):
        return cls(np.ones(n), 1.0)

    @classmethod
    def from_diag(cls, diag):
        """Build a metric with the tightest certified bound for `diag`."""
        d = as_vector(diag)
        mu = max(float(d.max()), 1.0 / float(d.min()), 1.0)
        return cls(d, mu)

    @property
    def size(self):
        return self.diag.size

    @property
    def inverse_diag(self):
        return 1.0 / self.diag

    def apply(self, x):
        return self.diag * as_vector(x, self.size)


def metric_norm_sq(D: DiagonalMetric, x) -> float:
    """Scaled squared norm ``sum_i D_ii x_i**2``."""
    x = as_vector(x, D.size)
    return float(np.dot(D.diag * x, x))


def metric_inverse_apply(D: DiagonalMetric, g) -> np.ndarray:
    """Componentwise ``g / D_ii``."""
    return as_vector(g, D.size) / D.diag


class LinearOperator:
    """Abstract linear map from R^n to R^m with an explicit adjoint.

    Subclasses set ``shape = (m, n)`` and implement :meth:`apply` and
    :meth:`adjoint`.
    """

    shape: tuple[int, int] = (0, 0)

    @property
    def dims(self):
        """``(n, m)``: domain then range dimension."""
        m, n = self.shape
        return n, m

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, v):
        raise NotImplementedError

    def __call__(self, x):
        return self.apply(x)


class MatrixOperator(LinearOperator):
    """Dense matrix wrapped as a :class:`LinearOperator`."""

    def __init__(self, matrix):
        self.matrix = np.array(matrix, dtype=np.float64, ndmin=2)
        self.matrix.setflags(write=False)
        self.shape = self.matrix.shape

    def apply(self, x):
        return self.matrix @ as_vector(x, self.shape[1])

    def adjoint(self, v):
        return self.matrix.T @ as_vector(v, self.shape[0])


class IdentityOperator(LinearOperator):
    def __init__(self, n):
        self.shape = (n, n)

    def apply(self, x):
        return as_vector(x, self.shape[1]).copy()

    def adjoint(self, v):
        return as_vector(v, self.shape[0]).copy()


class StackedOperator(LinearOperator):
    """Vertical stack ``[A_1; A_2; ...]`` of operators sharing a domain."""

    def __init__(self, *blocks: LinearOperator):
        if not blocks:
            raise ValueError("need at least one block")
        n = blocks[0].shape[1]
        if any(b.shape[1] != n for b in blocks):
            raise ValueError("stacked operators must share the domain dimension")
        self.blocks = tuple(blocks)
        self.offsets = np.cumsum([0] + [b.shape[0] for b in blocks])
        self.shape = (int(self.offsets[-1]), n)

    def apply(self, x):
        x = as_vector(x, self.shape[1])
        return np.concatenate([b.apply(x) for b in self.blocks])

    def adjoint(self, v):
        v = as_vector(v, self.shape[0])
        out = np.zeros(self.shape[1])
        for b, lo, hi in zip(self.blocks, self.offsets[:-1], self.offsets[1:]):
            out += b.adjoint(v[lo:hi])
        return out


def operator_norm_estimate(A: LinearOperator, iterations: int = 50, seed: int = 0) -> float:
    """Power-method estimate of the spectral norm ``||A||_2``.

    Runs power iteration on ``A^T A`` from a fixed random start, so the
    result is deterministic. The Rayleigh-quotient estimate is
    nondecreasing in `iterations` and never exceeds the true norm.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    n = A.shape[1]
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iterations):
        y = A.adjoint(A.apply(x))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        # ||A x||^2 for unit x: Rayleigh quotient of A^T A
        est = max(est, float(np.dot(x, y)))
        x = y / ny
    ax = A.apply(x)
    est = max(est, float(np.dot(ax, ax)))
    return float(np.sqrt(est))
