"""End-to-end estimation for one named method on one dataset.

Both the simulation runner and the command-line ``analyze`` path go through
:func:`run_method`, so a dataset analysed in-process and via CSV give the
same numbers for the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .cate import BasisSpec, build_design, crossfit_estimate, estimate
from .dataset import Dataset
from .errors import ConfigError, DomainError
from .nuisance import (BayesianGLM, ExternalDraws, GlmPrior, SpikeSlab, SpikeSlabPrior,
                       as_seed_sequence)
from .variance import (IntervalEstimate, confidence_interval, crossfit_variance,
                       dml_baseline, variance_estimate)

BASE_METHODS = ("DR-Linear", "DR-SpikeSlab", "DR-External", "DML-Baseline",
                "DR-PropensityOnly", "DR-OutcomeOnly")
CROSSFIT_SUFFIX = "-CF"

# fixed substream keys so a method's random numbers do not depend on which
# other methods run alongside it
_NUISANCE_KEY = {"glm": 1, "spikeslab": 2, "glm-outcome-intercept": 3,
                 "glm-propensity-intercept": 4}
_METHOD_KEY = {m: 10 + i for i, m in enumerate(BASE_METHODS)}


def valid_method(name: str) -> bool:
    base = name[: -len(CROSSFIT_SUFFIX)] if name.endswith(CROSSFIT_SUFFIX) else name
    if base not in BASE_METHODS:
        return False
    return not (name.endswith(CROSSFIT_SUFFIX) and base in ("DML-Baseline", "DR-External"))


def child_seed(root, *keys) -> np.random.SeedSequence:
    root = as_seed_sequence(root)
    return np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + keys)


@dataclass(frozen=True)
class MethodSettings:
    draws: int = 500
    burnin: int = 500
    resamples: int = 250
    clip: float = 0.01
    level: float = 0.95
    basis: BasisSpec = field(default_factory=BasisSpec)
    glm_prior: GlmPrior = field(default_factory=GlmPrior)
    spike_slab_prior: SpikeSlabPrior = field(default_factory=SpikeSlabPrior)
    baseline_nuisance: str = "glm"

    def __post_init__(self):
        if self.draws < 2:
            raise ConfigError("draws must be >= 2")
        if self.resamples < 2:
            raise ConfigError("resamples must be >= 2")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        if self.baseline_nuisance not in ("glm", "spikeslab"):
            raise ConfigError("baseline_nuisance must be 'glm' or 'spikeslab'")

    def nuisance(self, key: str):
        common = dict(draws=self.draws, burnin=self.burnin, clip=self.clip)
        if key == "glm":
            return BayesianGLM(self.glm_prior, **common)
        if key == "spikeslab":
            return SpikeSlab(self.spike_slab_prior, **common)
        if key == "glm-outcome-intercept":
            return BayesianGLM(self.glm_prior, outcome="intercept", **common)
        if key == "glm-propensity-intercept":
            return BayesianGLM(self.glm_prior, propensity="intercept", **common)
        raise ConfigError(f"unknown nuisance model {key!r}")


def _nuisance_key(base: str, settings: MethodSettings) -> str:
    return {"DR-Linear": "glm", "DR-SpikeSlab": "spikeslab",
            "DR-PropensityOnly": "glm-outcome-intercept",
            "DR-OutcomeOnly": "glm-propensity-intercept",
            "DML-Baseline": settings.baseline_nuisance}[base]


@dataclass(frozen=True, eq=False)
class MethodResult:
    method: str
    interval: IntervalEstimate
    bootstrap_term: np.ndarray
    posterior_term: np.ndarray
    fitted_observed: np.ndarray
    z_bar: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def run_method(method: str, ds: Dataset, query, settings: MethodSettings, seed, *,
               external=None, cache: dict | None = None) -> MethodResult:
    """Fit ``method`` on ``ds`` and return intervals at ``query`` rows.

    ``external`` supplies draws for ``DR-External`` (a
    :class:`~drcate.nuisance.PosteriorDraws` or any object with ``sample``).
    ``cache`` shares nuisance draws between methods that use the same model.
    """
    if not valid_method(method):
        raise ConfigError(f"unknown method {method!r}")
    cache = {} if cache is None else cache
    query = ds.v if query is None else np.atleast_2d(np.asarray(query, dtype=float))
    spec = settings.basis
    crossfit = method.endswith(CROSSFIT_SUFFIX)
    base = method[: -len(CROSSFIT_SUFFIX)] if crossfit else method
    boot_seed = child_seed(seed, _METHOD_KEY[base], int(crossfit))

    if base == "DR-External":
        if external is None:
            raise ConfigError("DR-External needs externally supplied posterior draws")
        model = external if hasattr(external, "sample") else ExternalDraws(external)
        key = "external"
    else:
        key = _nuisance_key(base, settings)
        model = settings.nuisance(key)

    if crossfit:
        cf = crossfit_estimate(ds, model, spec, query, child_seed(seed, _NUISANCE_KEY[key], 99))
        vb = crossfit_variance(cf, settings.resamples, boot_seed)
        obs = np.mean([build_design(ds.v, spec, f.knots)[0] @ f.coef_draws.mean(axis=0)
                       for f in cf.folds], axis=0)
        diag = {"clip_count": sum(f.diagnostics.get("clip_count", 0) for f in cf.folds),
                "ridge_count": vb.ridge_count}
        return MethodResult(method, confidence_interval(cf.estimate, vb, settings.level),
                            vb.bootstrap_term, vb.posterior_term, obs, None, diag)

    if key not in cache:
        nuisance_seed = child_seed(seed, _NUISANCE_KEY.get(key, 0))
        cache[key] = model.sample(ds, nuisance_seed)
    draws = cache[key]

    if base == "DML-Baseline":
        ci = dml_baseline(ds, draws, spec, query, settings.level)
        obs = dml_baseline(ds, draws, spec, ds.v, settings.level).point
        zeros = np.zeros_like(ci.point)
        return MethodResult(method, ci, ci.se**2, zeros, obs, None,
                            {"clip_count": draws.clip_count})

    fit = estimate(draws, ds, spec, query)
    vb = variance_estimate(fit, settings.resamples, boot_seed)
    obs = fit.design @ fit.coef_draws.mean(axis=0)
    diag = dict(fit.diagnostics)
    diag.update(ridge_count=vb.ridge_count, n_extrapolated=fit.n_extrapolated)
    return MethodResult(method, confidence_interval(fit.estimate, vb, settings.level),
                        vb.bootstrap_term, vb.posterior_term, obs, fit.z_bar, diag)


@dataclass(frozen=True, eq=False)
class UnivariateCurve:
    modifier: str
    grid: np.ndarray
    interval: IntervalEstimate
    basis: str


def univariate_grid(v, points: int = 100) -> np.ndarray:
    lo, hi = np.quantile(v, [0.025, 0.975])
    return np.linspace(lo, hi, points)


def univariate_curves(method: str, ds: Dataset, modifiers, settings: MethodSettings, seed, *,
                      points: int = 100, external=None) -> list[UnivariateCurve]:
    """CATE as a function of one modifier at a time.

    Nuisances are fitted once on the full dataset; each curve regresses the
    same pseudo-outcomes on a cubic spline in a single modifier.  A modifier
    with too few distinct values for the spline falls back to a linear term.
    """
    if method.endswith(CROSSFIT_SUFFIX) or not valid_method(method):
        raise ConfigError(f"method {method!r} is not available for univariate curves")
    if method == "DR-External":
        if external is None:
            raise ConfigError("DR-External needs externally supplied posterior draws")
        model = external if hasattr(external, "sample") else ExternalDraws(external)
        key = 0
    else:
        nkey = _nuisance_key(method, settings)
        model, key = settings.nuisance(nkey), _NUISANCE_KEY[nkey]
    draws = model.sample(ds, child_seed(seed, key))
    df = settings.basis.df if settings.basis.kind == "spline" else 3
    curves = []
    for j, name in enumerate(modifiers):
        if name not in ds.v_names[1:]:
            raise ConfigError(f"unknown modifier {name!r}")
        col = ds.v[:, ds.v_names.index(name)]
        distinct = np.unique(col).size
        if distinct < 2:
            raise DomainError(f"modifier '{name}' is constant; spline knots are degenerate")
        spec = BasisSpec("spline", df) if distinct > df else BasisSpec("linear")
        sub = replace(ds, v=np.column_stack([np.ones(ds.n), col]),
                      v_names=(ds.v_names[0], name))
        grid = univariate_grid(col, points)
        query = np.column_stack([np.ones(points), grid])
        boot_seed = child_seed(seed, _METHOD_KEY[method], 1000 + j)
        if method == "DML-Baseline":
            ci = dml_baseline(sub, draws, spec, query, settings.level)
        else:
            fit = estimate(draws, sub, spec, query)
            ci = confidence_interval(fit.estimate,
                                     variance_estimate(fit, settings.resamples, boot_seed),
                                     settings.level)
        curves.append(UnivariateCurve(name, grid, ci, spec.kind))
    return curves
