"""Posterior samplers for the propensity score and outcome regression.

Every sampler returns ``B`` retained draws of per-unit nuisance values:
``p1`` (probability of treatment), ``m1`` and ``m0`` (mean outcome under
treatment and control).  Built-in models:

* Bayesian linear outcome model, normal / inverse-gamma Gibbs sampler;
* Bayesian probit propensity model, Albert & Chib data augmentation;
* continuous spike-and-slab versions of both for ``p`` comparable to or
  larger than ``n``.

Samplers for other models plug in through :func:`import_external_draws` or
by implementing the ``sample(train, seed, newdata)`` method used by
:class:`BayesianGLM` and :class:`SpikeSlab`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.special import ndtr, ndtri

from .dataset import Dataset
from .errors import ConfigError, DomainError, SchemaError, SingularDesignError

MAX_DRAWS = 10**6
SEPARATION_BOUND = 50.0


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(as_seed_sequence(seed))


@dataclass(frozen=True)
class GlmPrior:
    """Weakly informative Gaussian prior on standardized coefficients.

    Scales multiply the residual SD in the linear model (conjugate form) and
    are absolute for the probit model.
    """

    coef_scale: float = 2.5
    intercept_scale: float = 10.0
    shape: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        for name in ("coef_scale", "intercept_scale", "shape", "scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"GlmPrior.{name} must be strictly positive")


@dataclass(frozen=True)
class SpikeSlabPrior:
    """Continuous two-component Gaussian mixture prior.

    ``theta_b=None`` means Beta(theta_a, number of selectable columns).
    """

    spike_sd: float = 0.001
    slab_sd: float = 1.0
    theta_a: float = 1.0
    theta_b: float | None = None
    intercept_sd: float = 10.0
    shape: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if not (self.spike_sd > 0 and self.slab_sd > 0):
            raise ConfigError("spike and slab SDs must be positive")
        if not self.spike_sd < self.slab_sd:
            raise ConfigError("spike SD must be strictly smaller than slab SD")
        if not self.theta_a > 0 or (self.theta_b is not None and not self.theta_b > 0):
            raise ConfigError("inclusion hyperparameters must be positive")


@dataclass(frozen=True, eq=False)
class OutcomeDraws:
    m1: np.ndarray
    m0: np.ndarray
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class PropensityDraws:
    p1: np.ndarray
    clip_count: int = 0
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Aligned ``(B, n)`` draws of the four nuisance values."""

    p1: np.ndarray
    m1: np.ndarray
    m0: np.ndarray
    clip_count: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        p1 = np.atleast_2d(np.asarray(self.p1, dtype=float))
        m1 = np.atleast_2d(np.asarray(self.m1, dtype=float))
        m0 = np.atleast_2d(np.asarray(self.m0, dtype=float))
        if not (p1.shape == m1.shape == m0.shape):
            raise SchemaError(
                f"draw matrices disagree in shape: p1 {p1.shape}, m1 {m1.shape}, m0 {m0.shape}"
            )
        if not (np.all(p1 > 0) and np.all(p1 < 1)):
            raise DomainError("propensity draws must lie strictly inside (0, 1)")
        if not (np.all(np.isfinite(m1)) and np.all(np.isfinite(m0))):
            raise DomainError("outcome draws must be finite")
        for a in (p1, m1, m0):
            a.setflags(write=False)
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "m1", m1)
        object.__setattr__(self, "m0", m0)

    @property
    def p0(self) -> np.ndarray:
        return 1.0 - self.p1

    @property
    def B(self) -> int:
        return self.p1.shape[0]

    @property
    def n(self) -> int:
        return self.p1.shape[1]

    @classmethod
    def combine(cls, propensity: PropensityDraws, outcome: OutcomeDraws) -> "PosteriorDraws":
        diag = {**outcome.diagnostics, **propensity.diagnostics}
        return cls(propensity.p1, outcome.m1, outcome.m0, propensity.clip_count, diag)

    def posterior_means(self):
        """Plug-in nuisance estimates ``(p1, m1, m0)`` averaged over draws."""
        return self.p1.mean(axis=0), self.m1.mean(axis=0), self.m0.mean(axis=0)


def clip_propensity(p1, clip: float):
    if not 0 <= clip < 0.5:
        raise ConfigError("clip bound must lie in [0, 0.5)")
    p1 = np.asarray(p1, dtype=float)
    if clip == 0:
        return p1, 0
    out = np.clip(p1, clip, 1.0 - clip)
    return out, int(np.count_nonzero(out != p1))


# Designs -------------------------------------------------------------------

def outcome_design(ds: Dataset, kind: str = "full"):
    """Observed, all-treated and all-control outcome designs.

    ``full`` is ``[1, T, X, T*V]`` (modifier columns without the intercept);
    ``intercept`` is the constant-mean model.
    """
    n = ds.n
    one = np.ones((n, 1))
    if kind == "intercept":
        return one, one, one
    if kind != "full":
        raise ConfigError(f"unknown outcome design {kind!r}")
    mods = ds.v[:, 1:]

    def build(t):
        t = np.asarray(t, dtype=float).reshape(n, 1)
        return np.hstack([one, t, ds.x, t * mods])

    return build(ds.t), build(np.ones(n)), build(np.zeros(n))


def propensity_design(ds: Dataset, kind: str = "full"):
    one = np.ones((ds.n, 1))
    if kind == "intercept":
        return one
    if kind != "full":
        raise ConfigError(f"unknown propensity design {kind!r}")
    return np.hstack([one, ds.x])


class _ColumnScaler:
    """Center and scale non-constant columns using the training design."""

    def __init__(self, X):
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.constant = ~(sd > 0)
        self.mean[self.constant] = 0.0
        sd[self.constant] = 1.0
        self.sd = sd

    def __call__(self, X):
        return (X - self.mean) / self.sd


def _check_rank(X, what):
    k = X.shape[1]
    if X.shape[0] < k or np.linalg.matrix_rank(X) < k:
        raise SingularDesignError(f"{what} design with {k} columns is rank deficient")


def _check_draws(draws, burnin):
    if not 1 <= draws <= MAX_DRAWS:
        raise ConfigError(f"draw count must be in [1, {MAX_DRAWS}], got {draws}")
    if burnin < 0:
        raise ConfigError("burn-in must be non-negative")


# Low-level samplers --------------------------------------------------------

def gibbs_normal_regression(X, y, prior_sd, shape=1.0, scale=1.0, *, draws=500,
                            burnin=500, seed=None):
    """Two-block Gibbs sampler for ``y ~ N(X beta, sigma2 I)``.

    Prior: ``beta | sigma2 ~ N(0, sigma2 diag(prior_sd**2))`` and
    ``sigma2 ~ InvGamma(shape, scale)``.  Returns ``(beta_draws, sigma2_draws)``.
    """
    _check_draws(draws, burnin)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    rng = _rng(seed)
    prior_prec = 1.0 / np.broadcast_to(np.asarray(prior_sd, dtype=float), (k,)) ** 2
    xtx = X.T @ X
    xty = X.T @ y
    yty = float(y @ y)
    chol = linalg.cho_factor(xtx + np.diag(prior_prec), lower=True)
    mean = linalg.cho_solve(chol, xty)
    total = burnin + draws
    # beta = mean + sigma * w, w ~ N(0, Lambda^{-1}) independent of sigma
    w = linalg.solve_triangular(chol[0], rng.standard_normal((k, total)),
                                lower=True, trans="T").T
    post_shape = shape + 0.5 * (n + k)
    sigma2 = max(float(np.var(y - X @ mean)), 1e-8)
    betas = np.empty((draws, k))
    sig = np.empty(draws)
    for it in range(total):
        beta = mean + np.sqrt(sigma2) * w[it]
        rss = yty - 2.0 * beta @ xty + beta @ xtx @ beta
        ss = max(rss, 0.0) + beta @ (prior_prec * beta)
        sigma2 = (scale + 0.5 * ss) / rng.gamma(post_shape)
        if it >= burnin:
            betas[it - burnin] = beta
            sig[it - burnin] = sigma2
    return betas, sig


def _truncated_latent(eta, t, rng):
    """Latent ``z ~ N(eta, 1)`` truncated to ``z > 0`` if t else ``z <= 0``."""
    u = 1.0 - rng.random(eta.shape)
    pos = t == 1
    z = np.empty_like(eta)
    z[pos] = eta[pos] - ndtri(np.maximum(u[pos] * ndtr(eta[pos]), 1e-300))
    z[~pos] = eta[~pos] + ndtri(np.maximum(u[~pos] * ndtr(-eta[~pos]), 1e-300))
    return z


def albert_chib_probit(X, t, prior_sd, *, draws=500, burnin=500, seed=None):
    """Probit regression by latent-Gaussian data augmentation.

    Prior ``beta ~ N(0, diag(prior_sd**2))``.  Returns ``(B, k)`` draws.
    """
    _check_draws(draws, burnin)
    X = np.asarray(X, dtype=float)
    t = np.asarray(t)
    n, k = X.shape
    rng = _rng(seed)
    prior_prec = 1.0 / np.broadcast_to(np.asarray(prior_sd, dtype=float), (k,)) ** 2
    chol = linalg.cho_factor(X.T @ X + np.diag(prior_prec), lower=True)
    beta = np.zeros(k)
    out = np.empty((draws, k))
    for it in range(burnin + draws):
        z = _truncated_latent(X @ beta, t, rng)
        mean = linalg.cho_solve(chol, X.T @ z)
        beta = mean + linalg.solve_triangular(chol[0], rng.standard_normal(k),
                                              lower=True, trans="T")
        if it >= burnin:
            out[it - burnin] = beta
    return out


def spike_slab_gibbs(X, y, prior: SpikeSlabPrior, forced, *, link="identity",
                     draws=500, burnin=500, seed=None):
    """Continuous spike-and-slab regression (identity or probit link).

    ``forced`` flags columns that always take the slab (intercept columns,
    identified as constant columns, take ``intercept_sd`` instead).
    Returns ``(beta_draws, gamma_draws, sigma2_draws)``.
    """
    from ._kernels import spike_slab_sweep

    _check_draws(draws, burnin)
    if link not in ("identity", "probit"):
        raise ConfigError(f"unknown link {link!r}")
    X = np.asfortranarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    rng = _rng(seed)
    forced = np.asarray(forced, dtype=np.bool_)
    constant = np.ptp(X, axis=0) == 0
    slab_var = np.full(k, prior.slab_sd**2)
    slab_var[constant] = prior.intercept_sd**2
    spike_var = np.full(k, prior.spike_sd**2)
    n_sel = int((~forced).sum())
    a = prior.theta_a
    b = prior.theta_b if prior.theta_b is not None else max(n_sel, 1)
    xtx = np.einsum("ij,ij->j", X, X)

    beta = np.zeros(k)
    gamma = forced.astype(np.int64)
    theta = a / (a + b)
    probit = link == "probit"
    sigma2 = 1.0 if probit else max(float(np.var(y)), 1e-8)
    eta = np.zeros(n)
    r = y.copy()
    betas = np.empty((draws, k))
    gammas = np.empty((draws, k), dtype=np.int8)
    sigmas = np.empty(draws)
    for it in range(burnin + draws):
        if probit:
            z = _truncated_latent(eta, y, rng)
            r = z - eta
        n_in = spike_slab_sweep(X, xtx, r, beta, gamma, slab_var, spike_var, forced,
                                np.log(theta) - np.log1p(-theta), sigma2,
                                rng.standard_normal(k), rng.random(k))
        theta = min(max(rng.beta(a + n_in, b + n_sel - n_in), 1e-12), 1 - 1e-12)
        if probit:
            eta = z - r
        else:
            sigma2 = (prior.scale + 0.5 * float(r @ r)) / rng.gamma(prior.shape + 0.5 * n)
        if it >= burnin:
            j = it - burnin
            betas[j] = beta
            gammas[j] = gamma
            sigmas[j] = sigma2
    return betas, gammas, sigmas


# Model-level fits ----------------------------------------------------------

def _glm_prior_sd(prior, scaler):
    return np.where(scaler.constant, prior.intercept_scale, prior.coef_scale)


def fit_linear_outcome(ds: Dataset, prior: GlmPrior | None = None, draws: int = 500,
                       seed=None, *, burnin: int = 500, design: str = "full",
                       newdata: Dataset | None = None) -> OutcomeDraws:
    """Bayesian linear outcome model; ``m1``/``m0`` toggle T in one fit."""
    prior = prior or GlmPrior()
    _check_draws(draws, burnin)
    X, _, _ = outcome_design(ds, design)
    _check_rank(X, "outcome")
    scaler = _ColumnScaler(X)
    beta, sigma2 = gibbs_normal_regression(
        scaler(X), ds.y, _glm_prior_sd(prior, scaler), prior.shape, prior.scale,
        draws=draws, burnin=burnin, seed=seed)
    _, X1, X0 = outcome_design(newdata if newdata is not None else ds, design)
    return OutcomeDraws(beta @ scaler(X1).T, beta @ scaler(X0).T,
                        {"outcome_model": f"glm[{design}]",
                         "sigma2_mean": float(sigma2.mean())})


def _propensity_from_coefs(Xnew, beta, clip, diag):
    p1 = ndtr(beta @ Xnew.T)
    p1, clipped = clip_propensity(p1, clip)
    return PropensityDraws(p1, clipped, diag)


def fit_probit_propensity(ds: Dataset, prior: GlmPrior | None = None, draws: int = 500,
                          seed=None, *, burnin: int = 500, clip: float = 0.01,
                          design: str = "full",
                          newdata: Dataset | None = None) -> PropensityDraws:
    """Bayesian probit propensity model with clipped draws."""
    prior = prior or GlmPrior()
    _check_draws(draws, burnin)
    X = propensity_design(ds, design)
    _check_rank(X, "propensity")
    scaler = _ColumnScaler(X)
    beta = albert_chib_probit(scaler(X), ds.t, _glm_prior_sd(prior, scaler),
                              draws=draws, burnin=burnin, seed=seed)
    separated = int(np.count_nonzero(np.abs(beta).max(axis=1) > SEPARATION_BOUND))
    if separated > draws // 2:
        warnings.warn("probit coefficients persistently exceed the separation bound; "
                      "the propensity model may be perfectly separated", RuntimeWarning)
    Xnew = scaler(propensity_design(newdata if newdata is not None else ds, design))
    return _propensity_from_coefs(Xnew, beta, clip,
                                  {"propensity_model": f"probit[{design}]",
                                   "separation_draws": separated})


def fit_spike_slab_linear(ds: Dataset, prior: SpikeSlabPrior | None = None,
                          draws: int = 500, seed=None, *, burnin: int = 500,
                          newdata: Dataset | None = None) -> OutcomeDraws:
    """Spike-and-slab outcome model on ``[1, T, X, T*V]``.

    The outcome is standardized internally; intercept and treatment columns
    always take the slab.
    """
    prior = prior or SpikeSlabPrior()
    _check_draws(draws, burnin)
    X, _, _ = outcome_design(ds)
    scaler = _ColumnScaler(X)
    y_mean, y_sd = float(ds.y.mean()), float(ds.y.std())
    if not y_sd > 0:
        raise DomainError("outcome has zero variance")
    forced = np.zeros(X.shape[1], dtype=bool)
    forced[:2] = True
    beta, gamma, _ = spike_slab_gibbs(scaler(X), (ds.y - y_mean) / y_sd, prior, forced,
                                      draws=draws, burnin=burnin, seed=seed)
    _, X1, X0 = outcome_design(newdata if newdata is not None else ds)
    m1 = y_mean + y_sd * (beta @ scaler(X1).T)
    m0 = y_mean + y_sd * (beta @ scaler(X0).T)
    return OutcomeDraws(m1, m0, {"outcome_model": "spike-slab",
                                 "outcome_inclusion": gamma.mean(axis=0)})


def fit_spike_slab_probit(ds: Dataset, prior: SpikeSlabPrior | None = None,
                          draws: int = 500, seed=None, *, burnin: int = 500,
                          clip: float = 0.01,
                          newdata: Dataset | None = None) -> PropensityDraws:
    """Spike-and-slab probit propensity model on ``[1, X]``."""
    prior = prior or SpikeSlabPrior()
    _check_draws(draws, burnin)
    X = propensity_design(ds)
    scaler = _ColumnScaler(X)
    forced = np.zeros(X.shape[1], dtype=bool)
    forced[0] = True
    beta, gamma, _ = spike_slab_gibbs(scaler(X), ds.t, prior, forced, link="probit",
                                      draws=draws, burnin=burnin, seed=seed)
    Xnew = scaler(propensity_design(newdata if newdata is not None else ds))
    return _propensity_from_coefs(Xnew, beta, clip,
                                  {"propensity_model": "spike-slab-probit",
                                   "propensity_inclusion": gamma.mean(axis=0)})


def import_external_draws(p1_path, m1_path, m0_path, *, clip: float = 0.01) -> PosteriorDraws:
    """Load draws from three header-less CSV files, one ``B x n`` matrix each."""
    mats = []
    for path in (p1_path, m1_path, m0_path):
        try:
            mats.append(np.loadtxt(Path(path), delimiter=",", ndmin=2))
        except ValueError as exc:
            raise SchemaError(f"{path}: {exc}") from None
    p1, m1, m0 = mats
    if not (p1.shape == m1.shape == m0.shape):
        raise SchemaError(
            f"draw files disagree in shape: p1 {p1.shape}, m1 {m1.shape}, m0 {m0.shape}"
        )
    tol = 1e-12
    if np.any(p1 < -tol) or np.any(p1 > 1 + tol) or not np.all(np.isfinite(p1)):
        raise DomainError(f"{p1_path}: propensity draws outside (0, 1)")
    if clip == 0 and (np.any(p1 <= 0) or np.any(p1 >= 1)):
        raise DomainError(f"{p1_path}: propensity draws on the boundary need clipping")
    p1, clipped = clip_propensity(p1, clip)
    return PosteriorDraws(p1, m1, m0, clipped, {"propensity_model": "external",
                                                "outcome_model": "external"})


# Uniform interface ---------------------------------------------------------

@dataclass(frozen=True)
class BayesianGLM:
    """Probit propensity plus linear outcome model (the ``DR-Linear`` nuisances)."""

    prior: GlmPrior = field(default_factory=GlmPrior)
    draws: int = 500
    burnin: int = 500
    clip: float = 0.01
    outcome: str = "full"
    propensity: str = "full"

    def sample(self, train: Dataset, seed=None, newdata: Dataset | None = None) -> PosteriorDraws:
        s_prop, s_out = as_seed_sequence(seed).spawn(2)
        prop = fit_probit_propensity(train, self.prior, self.draws, s_prop,
                                     burnin=self.burnin, clip=self.clip,
                                     design=self.propensity, newdata=newdata)
        out = fit_linear_outcome(train, self.prior, self.draws, s_out,
                                 burnin=self.burnin, design=self.outcome, newdata=newdata)
        return PosteriorDraws.combine(prop, out)


@dataclass(frozen=True)
class SpikeSlab:
    """Spike-and-slab probit propensity plus spike-and-slab linear outcome."""

    prior: SpikeSlabPrior = field(default_factory=SpikeSlabPrior)
    draws: int = 500
    burnin: int = 500
    clip: float = 0.01

    def sample(self, train: Dataset, seed=None, newdata: Dataset | None = None) -> PosteriorDraws:
        s_prop, s_out = as_seed_sequence(seed).spawn(2)
        prop = fit_spike_slab_probit(train, self.prior, self.draws, s_prop,
                                     burnin=self.burnin, clip=self.clip, newdata=newdata)
        out = fit_spike_slab_linear(train, self.prior, self.draws, s_out,
                                    burnin=self.burnin, newdata=newdata)
        return PosteriorDraws.combine(prop, out)


@dataclass(frozen=True)
class ExternalDraws:
    """Wraps pre-computed draws so they can stand in for a sampler."""

    draws: PosteriorDraws

    def sample(self, train: Dataset, seed=None, newdata: Dataset | None = None) -> PosteriorDraws:
        if newdata is not None:
            raise ConfigError("external draws cannot be re-evaluated on new data")
        if self.draws.n != train.n:
            raise SchemaError(f"external draws cover {self.draws.n} units, data has {train.n}")
        return self.draws
