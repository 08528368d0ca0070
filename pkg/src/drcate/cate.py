"""Second-stage regression of pseudo-outcomes on effect modifiers.

For one vector of pseudo-outcomes ``z`` the CATE at query rows ``vq`` is the
least-squares prediction ``vq (V'V)^{-1} V'z``.  The point estimate averages
this prediction over posterior draws of ``z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .dataset import Dataset
from .errors import ConfigError, DomainError, SchemaError, SingularDesignError
from .nuisance import PosteriorDraws, as_seed_sequence
from .pseudo import draw_mean, pseudo_outcome_draws
from .splines import natural_spline_basis, quantile_knots

RANK_TOL = 1e-10


@dataclass(frozen=True)
class BasisSpec:
    """``linear`` uses the modifiers as given; ``spline`` expands every
    non-intercept modifier into an additive natural cubic spline."""

    kind: str = "linear"
    df: int = 3

    def __post_init__(self):
        if self.kind not in ("linear", "spline"):
            raise ConfigError(f"unknown basis kind {self.kind!r}")
        if self.kind == "spline" and self.df < 2:
            raise ConfigError("spline basis needs df >= 2")


def build_design(v, spec: BasisSpec, knots=None):
    """Expand modifier rows ``v`` (intercept first) into a regression design.

    With ``knots=None`` the knots are fitted on ``v`` (fit mode); otherwise
    the stored knots are reused (transform mode).  Returns ``(design, knots)``.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 2:
        raise SchemaError("modifier matrix must be 2-d")
    if spec.kind == "linear":
        return v.copy(), None
    if knots is None:
        knots = tuple(quantile_knots(v[:, j], spec.df) for j in range(1, v.shape[1]))
    elif len(knots) != v.shape[1] - 1:
        raise SchemaError("knot record does not match the number of modifiers")
    cols = [v[:, :1]] + [natural_spline_basis(v[:, j + 1], kn) for j, kn in enumerate(knots)]
    return np.hstack(cols), knots


def count_extrapolated(v, knots) -> int:
    """Rows of ``v`` with any modifier outside its boundary knots."""
    if knots is None:
        return 0
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[0], dtype=bool)
    for j, kn in enumerate(knots):
        out |= (v[:, j + 1] < kn[0]) | (v[:, j + 1] > kn[-1])
    return int(out.sum())


def ols_coefficients(design, z):
    """Least-squares coefficients by column-pivoted QR.

    ``z`` may be a vector or an ``(n, B)`` matrix of responses.  Raises
    :class:`SingularDesignError` instead of pseudo-inverting.
    """
    design = np.asarray(design, dtype=float)
    n, k = design.shape
    if n < k:
        raise SingularDesignError(f"design has {n} rows but {k} columns")
    q, r, piv = linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag[-1] <= RANK_TOL * diag[0]:
        raise SingularDesignError("second-stage design is rank deficient")
    sol = linalg.solve_triangular(r, q.T @ z)
    coef = np.empty_like(sol)
    coef[piv] = sol
    return coef


def delta(design, query, z):
    """OLS of ``z`` on ``design`` evaluated at ``query`` rows."""
    return np.asarray(query, dtype=float) @ ols_coefficients(design, z)


@dataclass(frozen=True, eq=False)
class CateFit:
    design: np.ndarray
    query_design: np.ndarray
    coef_draws: np.ndarray
    delta_draws: np.ndarray
    estimate: np.ndarray
    z_bar: np.ndarray
    spec: BasisSpec
    knots: tuple | None = None
    n_extrapolated: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def B(self) -> int:
        return self.delta_draws.shape[0]


def _check_query(query, q):
    query = np.atleast_2d(np.asarray(query, dtype=float))
    if query.shape[1] != q:
        raise SchemaError(f"query points have {query.shape[1]} columns, modifiers have {q}")
    return query


def estimate(draws: PosteriorDraws, ds: Dataset, spec: BasisSpec | None = None,
             query=None) -> CateFit:
    """Posterior mean over draws of the second-stage prediction.

    ``query`` rows follow the layout of ``ds.v`` (intercept first); ``None``
    evaluates at the observed modifier values.
    """
    spec = spec or BasisSpec()
    query = ds.v if query is None else _check_query(query, ds.q)
    pod = pseudo_outcome_draws(draws, ds)
    design, knots = build_design(ds.v, spec)
    qdesign, _ = build_design(query, spec, knots)
    # solve for the first draw and for offsets from it, so identical draws
    # give bit-identical coefficients
    z0 = pod.z[0]
    coef = ols_coefficients(design, (pod.z - z0).T).T + ols_coefficients(design, z0)
    deltas = coef @ qdesign.T
    diag = dict(draws.diagnostics)
    diag["clip_count"] = draws.clip_count
    return CateFit(design, qdesign, coef, deltas, draw_mean(deltas), pod.z_bar, spec,
                   knots, count_extrapolated(query, knots), diag)


@dataclass(frozen=True, eq=False)
class CrossFit:
    folds: tuple
    splits: tuple
    estimate: np.ndarray


def _split(t, rng):
    first = np.zeros(t.shape[0], dtype=bool)
    for arm in (0, 1):
        idx = rng.permutation(np.flatnonzero(t == arm))
        first[idx[: idx.size // 2]] = True
    # odd arm sizes leave the halves unequal by at most one unit per arm
    return np.flatnonzero(first), np.flatnonzero(~first)


def crossfit_estimate(ds: Dataset, nuisance, spec: BasisSpec | None = None, query=None,
                      seed=None, max_attempts: int = 20) -> CrossFit:
    """Two-fold cross-fitting: nuisances from one half, CATE on the other.

    ``nuisance`` is any object with ``sample(train, seed, newdata)``.  The
    combined estimate averages the two fold estimates; pair it with
    :func:`drcate.variance.crossfit_variance`.
    """
    spec = spec or BasisSpec()
    if ds.n < 4 * ds.q:
        raise ConfigError(f"cross-fitting needs n >= 4q (n={ds.n}, q={ds.q})")
    query = ds.v if query is None else _check_query(query, ds.q)
    s_split, s_a, s_b = as_seed_sequence(seed).spawn(3)
    rng = np.random.default_rng(s_split)
    for _ in range(max_attempts):
        i1, i2 = _split(ds.t, rng)
        try:
            d1, d2 = ds.subset(i1), ds.subset(i2)
            if spec.kind == "spline":
                build_design(d1.v, spec)
                build_design(d2.v, spec)
        except DomainError:
            continue
        break
    else:
        raise DomainError(f"no valid split found in {max_attempts} attempts")
    fit_a = estimate(nuisance.sample(d1, s_a, newdata=d2), d2, spec, query)
    fit_b = estimate(nuisance.sample(d2, s_b, newdata=d1), d1, spec, query)
    return CrossFit((fit_a, fit_b), (i1, i2), 0.5 * (fit_a.estimate + fit_b.estimate))
