"""Natural cubic spline basis (truncated-power form, linear past the boundary knots)."""

import numpy as np

from .errors import DomainError


def quantile_knots(x, df: int) -> np.ndarray:
    """``df + 1`` knots: the data range plus ``df - 1`` equispaced-quantile interior knots."""
    x = np.asarray(x, dtype=float)
    if df < 2:
        raise DomainError("natural spline needs df >= 2")
    knots = np.quantile(x, np.linspace(0.0, 1.0, df + 1))
    if np.unique(x).size < df + 1 or not np.all(np.diff(knots) > 0):
        raise DomainError(
            f"column has {np.unique(x).size} distinct values; df={df} needs "
            f"{df + 1} strictly increasing knots"
        )
    return knots


def natural_spline_basis(x, knots) -> np.ndarray:
    """Evaluate the ``len(knots) - 1`` non-constant natural cubic spline columns."""
    x = np.asarray(x, dtype=float)
    knots = np.asarray(knots, dtype=float)
    lo, hi = knots[0], knots[-1]
    u = (x - lo) / (hi - lo)
    k = (knots - lo) / (hi - lo)

    def d(j):
        return (np.maximum(u - k[j], 0.0) ** 3 - np.maximum(u - k[-1], 0.0) ** 3) / (k[-1] - k[j])

    last = d(len(k) - 2)
    return np.column_stack([u] + [d(j) - last for j in range(len(k) - 2)])
