"""Dense linear algebra primitives and the scalar helpers used everywhere else.

All numeric data in this package is plain float64 numpy arrays.  ``as_matrix``
and ``as_vector`` are the validated constructors: public entry points pass
user-supplied data through them once, so downstream code can assume finite
entries and the right dtype/shape.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ConvergenceError",
    "as_matrix",
    "as_vector",
    "soft_indicator",
    "norm_pq",
    "spectral_norm",
    "spectral_norm_stack",
    "stack_upper",
]

# Fixed seed for the power-iteration start vector: every run reproduces bitwise.
_POWER_SEED = 0x5EED


class ConvergenceError(RuntimeError):
    """Power iteration ran out of iterations; carries the last iterate."""

    def __init__(self, message, last_estimate, last_vector):
        super().__init__(message)
        self.last_estimate = float(last_estimate)
        self.last_vector = np.asarray(last_vector)


def as_matrix(entries) -> np.ndarray:
    """Validate and return a float64 2-d array with finite entries."""
    a = np.asarray(entries, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {a.shape}")
    if a.size and not np.isfinite(a).all():
        raise ValueError("matrix entries must be finite (no NaN/Inf)")
    return a


def as_vector(entries) -> np.ndarray:
    """Validate and return a float64 1-d array with finite entries."""
    v = np.asarray(entries, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d array, got shape {v.shape}")
    if v.size and not np.isfinite(v).all():
        raise ValueError("vector entries must be finite (no NaN/Inf)")
    return v


def soft_indicator(t: float, kappa: float) -> float:
    """Continuous threshold surrogate: 1 below ``kappa``, 0 above ``2*kappa``.

    Linear in between, hence ``1/kappa``-Lipschitz in ``t``.  ``kappa`` may be
    ``inf``, in which case the indicator is identically 1 (a disabled check).
    """
    if not kappa > 0.0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    if t < 0.0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if t <= kappa:
        return 1.0
    if t >= 2.0 * kappa:
        return 0.0
    return 2.0 - t / kappa


def soft_indicator_arr(t: np.ndarray, kappa: float) -> np.ndarray:
    """Vectorized :func:`soft_indicator` for a nonnegative array of arguments."""
    if not kappa > 0.0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    t = np.asarray(t, dtype=np.float64)
    if np.isinf(kappa):
        return np.ones_like(t)
    return np.clip(2.0 - t / kappa, 0.0, 1.0)


def norm_pq(a, p: float, q: float) -> float:
    """Mixed entrywise norm: p-norm down each column, q-norm across columns."""
    a = as_matrix(a)
    if p <= 0 or q <= 0:
        raise ValueError("p and q must be positive")
    col = np.sum(np.abs(a) ** p, axis=0) ** (1.0 / p)
    return float(np.sum(col**q) ** (1.0 / q))


def spectral_norm(a, rel_tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on ``A^T A``.

    Deterministic: the start vector comes from a fixed seed.  Raises
    :class:`ConvergenceError` (carrying the last iterate) if the estimate has
    not stabilized to ``rel_tol`` within ``max_iter`` iterations.
    """
    a = as_matrix(a)
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise ValueError("spectral_norm requires nonzero dimensions")
    rng = np.random.default_rng(_POWER_SEED)
    v = rng.standard_normal(a.shape[1])
    v /= np.linalg.norm(v)
    est_prev = np.inf
    est = 0.0
    for _ in range(max_iter):
        w = a @ v
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        u = a.T @ w
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return est
        v = u / nu
        if abs(est - est_prev) <= rel_tol * max(est, 1e-300):
            return est
        est_prev = est
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations",
        est,
        v,
    )


def spectral_norm_stack(stack: np.ndarray) -> np.ndarray:
    """Largest singular value of each matrix in a ``(..., m, n)`` stack.

    Throughput path for the measurement and probing loops; backed by batched
    LAPACK SVD.  Agrees with :func:`spectral_norm` to well below any tolerance
    at which the two are compared (property-tested).
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim < 2 or stack.shape[-1] == 0 or stack.shape[-2] == 0:
        raise ValueError("expected a stack of nonempty matrices")
    return np.linalg.svd(stack, compute_uv=False)[..., 0]


def stack_upper(x1: float, x2: float) -> float:
    """Combine two unit-interval attenuations: ``(x1 - 1) * x2 + 1``.

    The result stays in [0, 1], never falls below ``x1``, and composes
    associatively: stacking with ``x2`` then ``x3`` equals stacking with
    ``x2 * x3``.
    """
    if not (0.0 <= x1 <= 1.0 and 0.0 <= x2 <= 1.0):
        raise ValueError(f"arguments must lie in [0, 1], got ({x1}, {x2})")
    return (x1 - 1.0) * x2 + 1.0
