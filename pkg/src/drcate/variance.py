"""Variance estimation and confidence intervals for the CATE estimator.

The estimated variance is the sum of

* a bootstrap term: the variance, over resamples of the rows, of the
  posterior-mean second-stage prediction.  Because OLS is linear in the
  response, the posterior mean over draws of each resample's prediction is
  the prediction from the posterior-mean pseudo-outcome ``z_bar``, so one
  regression per resample suffices;
* a posterior term: the variance of the prediction across posterior draws.

A frequentist plug-in comparator with an HC0 sandwich variance is also
provided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .cate import BasisSpec, CateFit, CrossFit, RANK_TOL, build_design, ols_coefficients
from .dataset import Dataset
from .errors import ConfigError, SingularDesignError
from .nuisance import PosteriorDraws, as_seed_sequence
from .pseudo import pseudo_outcome

MAX_REDRAWS = 10


@dataclass(frozen=True, eq=False)
class VarianceBreakdown:
    bootstrap_term: np.ndarray
    posterior_term: np.ndarray
    M: int
    B: int
    redraws: int = 0
    ridge_count: int = 0

    @property
    def total(self) -> np.ndarray:
        return self.bootstrap_term + self.posterior_term


@dataclass(frozen=True, eq=False)
class IntervalEstimate:
    point: np.ndarray
    se: np.ndarray
    level: float
    lower: np.ndarray
    upper: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def posterior_variance_term(delta_draws) -> np.ndarray:
    """Sample variance (divisor ``B - 1``) across draws, per query point."""
    d = np.asarray(delta_draws, dtype=float)
    if d.ndim == 1:
        d = d[:, None]
    if d.shape[0] < 2:
        raise ConfigError("posterior variance needs at least 2 draws")
    # shifting by the first draw keeps identical draws at exactly zero
    return (d - d[0]).var(axis=0, ddof=1)


def resample_indices(n: int, M: int, seed=None) -> np.ndarray:
    """``(M, n)`` row indices; resample ``m`` uses its own seed substream."""
    children = as_seed_sequence(seed).spawn(M)
    return np.stack([np.random.default_rng(c).integers(0, n, n) for c in children])


def _bootstrap_predictions(design, qdesign, z_bar, M, seed=None, indices=None):
    n, k = design.shape
    if indices is None:
        rngs = [np.random.default_rng(c) for c in as_seed_sequence(seed).spawn(M)]
        indices = [rng.integers(0, n, n) for rng in rngs]
    else:
        rngs = [None] * len(indices)
    preds = np.empty((len(indices), qdesign.shape[0]))
    redraws = ridged = 0
    for m, idx in enumerate(indices):
        for attempt in range(MAX_REDRAWS + 1):
            try:
                coef = ols_coefficients(design[idx], z_bar[idx])
                break
            except SingularDesignError:
                if rngs[m] is None or attempt == MAX_REDRAWS:
                    X = design[idx]
                    xtx = X.T @ X
                    lam = 1e-8 * np.mean(np.diag(xtx))
                    coef = linalg.solve(xtx + lam * np.eye(k), X.T @ z_bar[idx],
                                        assume_a="pos")
                    ridged += 1
                    break
                idx = rngs[m].integers(0, n, n)
                redraws += 1
        preds[m] = qdesign @ coef
    return preds, redraws, ridged


def bootstrap_variance_term(z_bar, v, spec: BasisSpec | None = None, query=None,
                            M: int = 250, seed=None, *, knots=None, indices=None):
    """Variance over row resamples of the prediction from ``z_bar``.

    ``v`` and ``query`` are modifier rows (intercept first).  Spline knots
    are fitted once on ``v`` (or taken from ``knots``) and held fixed across
    resamples.  Returns ``(variance, redraws, ridge_count)``.
    """
    spec = spec or BasisSpec()
    if M < 2:
        raise ConfigError("bootstrap needs at least 2 resamples")
    v = np.asarray(v, dtype=float)
    z_bar = np.asarray(z_bar, dtype=float)
    if v.shape[0] < v.shape[1]:
        raise SingularDesignError("fewer rows than modifier columns")
    design, knots = build_design(v, spec, knots)
    qdesign, _ = build_design(v if query is None else np.atleast_2d(query), spec, knots)
    preds, redraws, ridged = _bootstrap_predictions(design, qdesign, z_bar, M, seed, indices)
    return preds.var(axis=0, ddof=1), redraws, ridged


def variance_estimate(fit: CateFit, M: int = 250, seed=None, *, indices=None) -> VarianceBreakdown:
    """Bootstrap term plus posterior term for a fitted :class:`CateFit`."""
    if M < 2:
        raise ConfigError("bootstrap needs at least 2 resamples")
    preds, redraws, ridged = _bootstrap_predictions(fit.design, fit.query_design,
                                                    fit.z_bar, M, seed, indices)
    boot = preds.var(axis=0, ddof=1)
    post = posterior_variance_term(fit.delta_draws) if fit.B >= 2 \
        else np.zeros_like(boot)
    return VarianceBreakdown(boot, post, len(preds), fit.B, redraws, ridged)


def combine_crossfit(v1: VarianceBreakdown, v2: VarianceBreakdown) -> VarianceBreakdown:
    """Variance of the two-fold average: ``(V1 + V2) / 4`` termwise."""
    return VarianceBreakdown((v1.bootstrap_term + v2.bootstrap_term) / 4.0,
                             (v1.posterior_term + v2.posterior_term) / 4.0,
                             v1.M, v1.B, v1.redraws + v2.redraws,
                             v1.ridge_count + v2.ridge_count)


def crossfit_variance(cf: CrossFit, M: int = 250, seed=None) -> VarianceBreakdown:
    s1, s2 = as_seed_sequence(seed).spawn(2)
    return combine_crossfit(variance_estimate(cf.folds[0], M, s1),
                            variance_estimate(cf.folds[1], M, s2))


def confidence_interval(point, variance, level: float = 0.95) -> IntervalEstimate:
    """Normal-approximation interval ``point +/- z * sqrt(variance)``.

    ``variance`` may be an array or a :class:`VarianceBreakdown`.
    """
    if not 0 < level < 1:
        raise ConfigError("level must lie in (0, 1)")
    if isinstance(variance, VarianceBreakdown):
        variance = variance.total
    point = np.asarray(point, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ConfigError("variance must be non-negative")
    se = np.sqrt(variance)
    half = norm.ppf(0.5 + level / 2.0) * se
    return IntervalEstimate(point, se, level, point - half, point + half)


def ols_weights(design) -> np.ndarray:
    """``(V'V)^{-1} V'`` via pivoted QR, shape ``(k, n)``."""
    q, r, piv = linalg.qr(np.asarray(design, dtype=float), mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    if d[-1] <= RANK_TOL * d[0]:
        raise SingularDesignError("second-stage design is rank deficient")
    w = linalg.solve_triangular(r, q.T)
    out = np.empty_like(w)
    out[piv] = w
    return out


def dml_baseline(ds: Dataset, draws: PosteriorDraws, spec: BasisSpec | None = None,
                 query=None, level: float = 0.95) -> IntervalEstimate:
    """Plug-in comparator: one pseudo-outcome from posterior-mean nuisances,
    OLS second stage, HC0 sandwich variance of each query prediction."""
    spec = spec or BasisSpec()
    p1, m1, m0 = draws.posterior_means()
    z = pseudo_outcome(ds.y, ds.t, p1, m1, m0)
    design, knots = build_design(ds.v, spec)
    qdesign, _ = build_design(ds.v if query is None else np.atleast_2d(query), spec, knots)
    w = ols_weights(design)
    coef = w @ z
    resid = z - design @ coef
    lam = qdesign @ w
    var = (lam**2) @ (resid**2)
    return confidence_interval(qdesign @ coef, var, level)
