"""Simulation scenarios, replicate runner and the three evaluation metrics.

Every scenario draws ``X ~ N(0, I_p)``, ``T ~ Bernoulli(p(X))`` and
``Y ~ N(tau(V) T + m0(X), 1)`` with the modifiers ``V`` being the first ten
columns of ``X``.  Replicates are seeded from ``(seed, replicate)`` so any
replicate can be regenerated on its own.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import ndtr

from .cate import BasisSpec
from .dataset import Dataset
from .errors import ConfigError, DrcateError
from .pipeline import MethodSettings, run_method, valid_method

SCENARIOS = ("linear", "nonlinear", "highdim", "nonlinear_tau")
N_MODIFIERS = 10
FAILURE_THRESHOLD = 0.10
# random: fresh points each replicate; fixed: one set shared by all replicates
QUERY_MODES = ("random", "fixed", "observed")
_FIXED_QUERY_KEY = 2**32 - 1

RECORD_COLUMNS = ["scenario", "n", "query_mode", "replicate", "method", "location",
                  "estimate", "se", "lower", "upper", "truth", "bootstrap_term",
                  "posterior_term"]
METRICS = ["rmse", "scaled_rmse", "se_ratio", "coverage", "coverage_mcse", "ci_width",
           "mean_variance", "mc_variance", "mean_abs_bias", "est_variability",
           "true_variability", "replicates", "failures"]


class ExperimentFailure(DrcateError):
    """More than the tolerated fraction of replicates failed."""

    def __init__(self, message, failures):
        super().__init__(message)
        self.failures = failures


# -- truth -------------------------------------------------------------------

def true_propensity(scenario: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    x1, x2, x3, x4 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    if scenario == "nonlinear":
        return ndtr((x1 > 0) - np.cos(x2) + 0.3 * np.abs(x3) - np.sin(x4))
    return ndtr(0.3 * x1 - 0.3 * x2 + 0.3 * x3 - 0.3 * x4)


def true_control_mean(scenario: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    x1, x2, x3, x4, x6 = x[:, 0], x[:, 1], x[:, 2], x[:, 3], x[:, 5]
    if scenario == "nonlinear":
        return (np.cos(x1) + (x2 > 1) - 0.05 * x3**3 + 0.1 * np.exp(x4)
                + 1.0 / (x6**2 + 1.0))
    return 0.9 * x1 - 0.6 * x3 + 0.6 * x4 + 0.7 * x6


def true_cate(scenario: str, v) -> np.ndarray:
    """CATE at modifier values ``v`` given without the intercept column."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    v1, v2, v8 = v[:, 0], v[:, 1], v[:, 7]
    if scenario == "nonlinear_tau":
        return 0.3 + 0.4 * np.cos(v1) - 0.2 * v2**2 + 0.7 * np.abs(v8)
    return 0.3 + 0.4 * v1 - 0.2 * v2 + 0.7 * v8


# -- configuration ---------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "linear"
    n: int = 500
    p: int | None = None
    replicates: int = 200
    query: str = "random"
    n_query: int = 100
    methods: tuple = ("DR-Linear",)
    seed: int = 0
    draws: int = 500
    burnin: int = 500
    resamples: int = 250
    clip: float = 0.01
    spline_df: int = 3
    basis: str = "auto"
    level: float = 0.95

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.query not in QUERY_MODES:
            raise ConfigError(f"query must be one of {QUERY_MODES}")
        if self.basis not in ("auto", "linear", "spline"):
            raise ConfigError("basis must be 'auto', 'linear' or 'spline'")
        if self.replicates < 2:
            raise ConfigError("replicates must be >= 2")
        if self.n_query < 1:
            raise ConfigError("n_query must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        object.__setattr__(self, "methods", tuple(self.methods))
        for m in self.methods:
            if not valid_method(m):
                raise ConfigError(f"unknown method {m!r}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        if self.scenario == "highdim":
            if self.p is None:
                object.__setattr__(self, "p", 2 * self.n)
            elif self.p != 2 * self.n:
                raise ConfigError(f"highdim scenario requires p = 2n = {2 * self.n}, got {self.p}")
        elif self.p is None:
            object.__setattr__(self, "p", N_MODIFIERS)
        if self.p < N_MODIFIERS:
            raise ConfigError(f"p must be >= {N_MODIFIERS}")
        if self.n < 2 * (N_MODIFIERS + 1):
            raise ConfigError(f"n must be >= {2 * (N_MODIFIERS + 1)}")
        # validates draws, resamples, level
        self.settings()

    @property
    def basis_spec(self) -> BasisSpec:
        kind = self.basis
        if kind == "auto":
            kind = "spline" if self.scenario == "nonlinear_tau" else "linear"
        return BasisSpec(kind, self.spline_df)

    def settings(self) -> MethodSettings:
        return MethodSettings(
            draws=self.draws, burnin=self.burnin, resamples=self.resamples, clip=self.clip,
            level=self.level, basis=self.basis_spec,
            baseline_nuisance="spikeslab" if self.scenario == "highdim" else "glm")

    def replicate_seed(self, rep: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed, spawn_key=(rep,))

    def echo(self) -> dict:
        d = asdict(self)
        d["methods"] = ",".join(self.methods)
        return d


@dataclass(frozen=True, eq=False)
class TruthRecord:
    query: np.ndarray
    tau_query: np.ndarray
    tau_observed: np.ndarray
    p1: np.ndarray
    m0: np.ndarray

    @classmethod
    def from_covariates(cls, scenario: str, x, query) -> "TruthRecord":
        x = np.asarray(x, dtype=float)
        query = np.asarray(query, dtype=float)
        return cls(query, true_cate(scenario, query[:, 1:]),
                   true_cate(scenario, x[:, :N_MODIFIERS]),
                   true_propensity(scenario, x), true_control_mean(scenario, x))


def gen_scenario(cfg: ScenarioConfig, rep: int):
    """Simulate replicate ``rep``: returns ``(Dataset, TruthRecord)``."""
    s_data, s_query = cfg.replicate_seed(rep).spawn(2)
    rng = np.random.default_rng(s_data)
    x = rng.standard_normal((cfg.n, cfg.p))
    p1 = true_propensity(cfg.scenario, x)
    t = (rng.random(cfg.n) < p1).astype(np.int8)
    tau = true_cate(cfg.scenario, x[:, :N_MODIFIERS])
    y = tau * t + true_control_mean(cfg.scenario, x) + rng.standard_normal(cfg.n)
    names = [f"X{j + 1}" for j in range(cfg.p)]
    ds = Dataset.from_arrays(y, t, x, x[:, :N_MODIFIERS], y_name="Y", t_name="T",
                             x_names=names, modifier_names=names[:N_MODIFIERS])
    if cfg.query in ("random", "fixed"):
        if cfg.query == "fixed":
            s_query = np.random.SeedSequence(cfg.seed, spawn_key=(_FIXED_QUERY_KEY,))
        qv = np.random.default_rng(s_query).standard_normal((cfg.n_query, N_MODIFIERS))
        query = np.column_stack([np.ones(cfg.n_query), qv])
    else:
        query = ds.v
    return ds, TruthRecord.from_covariates(cfg.scenario, x, query)


# -- replicates ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReplicateResult:
    replicate: int
    records: list = field(default_factory=list)
    summaries: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def run_replicate(cfg: ScenarioConfig, rep: int, methods=None, *, external=None) -> ReplicateResult:
    """Fit each method on replicate ``rep``; a failing method is recorded, not raised.

    ``external`` is a callable ``(dataset, truth, seed) -> PosteriorDraws``
    used by ``DR-External``.
    """
    methods = cfg.methods if methods is None else tuple(methods)
    ds, truth = gen_scenario(cfg, rep)
    settings = cfg.settings()
    seed = cfg.replicate_seed(rep)
    cache: dict = {}
    out = ReplicateResult(rep)
    true_var = float(np.var(truth.tau_observed, ddof=1))
    for method in methods:
        try:
            ext = None
            if method.startswith("DR-External"):
                if external is None:
                    raise ConfigError("no external posterior draws supplied")
                ext = external(ds, truth, seed)
            res = run_method(method, ds, truth.query, settings, seed, external=ext, cache=cache)
        except (DrcateError, np.linalg.LinAlgError, FloatingPointError) as exc:
            out.failures.append({"replicate": rep, "method": method,
                                 "error": f"{type(exc).__name__}: {exc}"})
            continue
        ci = res.interval
        for loc in range(ci.point.size):
            out.records.append({
                "scenario": cfg.scenario, "n": cfg.n, "query_mode": cfg.query,
                "replicate": rep, "method": method, "location": loc,
                "estimate": float(ci.point[loc]), "se": float(ci.se[loc]),
                "lower": float(ci.lower[loc]), "upper": float(ci.upper[loc]),
                "truth": float(truth.tau_query[loc]),
                "bootstrap_term": float(res.bootstrap_term[loc]),
                "posterior_term": float(res.posterior_term[loc]),
            })
        out.summaries.append({
            "scenario": cfg.scenario, "n": cfg.n, "query_mode": cfg.query,
            "replicate": rep, "method": method,
            "est_variability": float(np.var(res.fitted_observed, ddof=1)),
            "true_variability": true_var,
            "clip_count": int(res.diagnostics.get("clip_count", 0)),
            "ridge_count": int(res.diagnostics.get("ridge_count", 0)),
        })
    return out


# -- aggregation -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SimReport:
    """Wide table, one row per (scenario, method, n, query mode)."""

    table: pd.DataFrame

    def cell(self, method: str, n: int | None = None, scenario: str | None = None) -> pd.Series:
        t = self.table[self.table.method == method]
        if n is not None:
            t = t[t.n == n]
        if scenario is not None:
            t = t[t.scenario == scenario]
        if len(t) != 1:
            raise KeyError(f"{len(t)} report rows match method={method!r}, n={n!r}")
        return t.iloc[0]

    def long(self) -> pd.DataFrame:
        keys = ["scenario", "method", "n", "query_mode"]
        return (self.table.melt(id_vars=keys, value_vars=METRICS, var_name="metric")
                .sort_values(keys + ["metric"], kind="stable").reset_index(drop=True))


_KEYS = ["scenario", "method", "n", "query_mode"]


def aggregate_metrics(records, summaries=None, failures=None) -> SimReport:
    """Per-location metrics over replicates, then averaged over locations.

    Query locations may differ between replicates, so location ``k`` of
    every replicate is pooled and the Monte Carlo spread is taken over the
    errors ``estimate - truth``; with fixed locations this equals the spread
    of the estimates.
    """
    df = pd.DataFrame(records, columns=RECORD_COLUMNS) if not isinstance(records, pd.DataFrame) \
        else records
    if df.empty:
        raise ConfigError("no records to aggregate")
    df = df.assign(err=df.estimate - df.truth,
                   covered=((df.lower <= df.truth) & (df.truth <= df.upper)).astype(float),
                   width=df.upper - df.lower, var=df.se**2)
    rows = []
    for key, cell in df.groupby(_KEYS, sort=True):
        R = cell.replicate.nunique()
        if R < 2:
            raise ConfigError(f"cell {key} has {R} replicate(s); at least 2 are needed")
        g = cell.groupby("location")
        mc_sd = g.err.std(ddof=1)
        cov = float(g.covered.mean().mean())
        rows.append(dict(zip(_KEYS, key), **{
            "rmse": float(np.sqrt(g.err.apply(lambda e: np.mean(e**2))).mean()),
            "se_ratio": float((g.se.mean() / mc_sd).mean()),
            "coverage": cov,
            "coverage_mcse": float(np.sqrt(cov * (1 - cov) / R)),
            "ci_width": float(g.width.mean().mean()),
            "mean_variance": float(g["var"].mean().mean()),
            "mc_variance": float((mc_sd**2).mean()),
            "mean_abs_bias": float(g.err.mean().abs().mean()),
            "replicates": R,
        }))
    table = pd.DataFrame(rows)
    cells = ["scenario", "n", "query_mode"]
    table["scaled_rmse"] = table.rmse / table.groupby(cells).rmse.transform("min")
    table["est_variability"] = np.nan
    table["true_variability"] = np.nan
    if summaries is not None and len(summaries):
        s = pd.DataFrame(summaries).groupby(_KEYS)[["est_variability", "true_variability"]].mean()
        idx = pd.MultiIndex.from_frame(table[_KEYS])
        table["est_variability"] = s.est_variability.reindex(idx).to_numpy()
        table["true_variability"] = s.true_variability.reindex(idx).to_numpy()
    fails = pd.DataFrame(failures or [], columns=["replicate", "method", "error"])
    table["failures"] = table.method.map(fails.groupby("method").size()).fillna(0).astype(int)
    return SimReport(table[_KEYS + METRICS].reset_index(drop=True))


# -- experiments -----------------------------------------------------------

def _run_one(args):
    cfg, rep, external = args
    return run_replicate(cfg, rep, external=external)


@dataclass(frozen=True, eq=False)
class Experiment:
    config: ScenarioConfig
    report: SimReport
    records: pd.DataFrame
    summaries: pd.DataFrame
    failures: pd.DataFrame

    def failed_replicates(self) -> int:
        return self.failures.replicate.nunique()


def run_experiment(cfg: ScenarioConfig, *, workers: int = 1, external=None,
                   out_dir=None) -> Experiment:
    """Run all replicates of ``cfg`` and aggregate.

    Replicates may run in ``workers`` processes; results are collected in
    replicate order so the output does not depend on scheduling.  Raises
    :class:`ExperimentFailure` when more than 10% of replicates have at least
    one failed method.
    """
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    jobs = [(cfg, rep, external) for rep in range(cfg.replicates)]
    if workers == 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    records = [r for res in results for r in res.records]
    summaries = [s for res in results for s in res.summaries]
    failures = [f for res in results for f in res.failures]
    fdf = pd.DataFrame(failures, columns=["replicate", "method", "error"])
    n_failed = fdf.replicate.nunique()
    if n_failed > FAILURE_THRESHOLD * cfg.replicates:
        raise ExperimentFailure(
            f"{n_failed} of {cfg.replicates} replicates failed; first: "
            f"{failures[0]['method']} in replicate {failures[0]['replicate']}: "
            f"{failures[0]['error']}", fdf)
    report = aggregate_metrics(records, summaries, failures)
    exp = Experiment(cfg, report, pd.DataFrame(records, columns=RECORD_COLUMNS),
                     pd.DataFrame(summaries), fdf)
    if out_dir is not None:
        write_experiment(exp, out_dir)
    return exp


def run_campaign(cfg: ScenarioConfig, sizes, **kwargs) -> Experiment:
    """Run ``cfg`` at several sample sizes and aggregate into one report."""
    parts = [run_experiment(replace(cfg, n=int(n), p=None if cfg.scenario == "highdim" else cfg.p),
                            **kwargs) for n in sizes]
    records = pd.concat([e.records for e in parts], ignore_index=True)
    summaries = pd.concat([e.summaries for e in parts], ignore_index=True)
    failures = pd.concat([e.failures for e in parts], ignore_index=True)
    report = aggregate_metrics(records, summaries, failures.to_dict("records"))
    return Experiment(cfg, report, records, summaries, failures)


def config_header(config: dict) -> str:
    return "".join(f"# {k}={v}\n" for k, v in config.items())


def frame_to_csv(df: pd.DataFrame, config: dict | None = None) -> str:
    buf = io.StringIO()
    if config:
        buf.write(config_header(config))
    df.to_csv(buf, index=False, float_format="%.17g", lineterminator="\n",
              quoting=csv.QUOTE_MINIMAL)
    return buf.getvalue()


def write_experiment(exp: Experiment, out_dir) -> dict:
    """Write records, report and failures CSVs; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo = exp.config.echo()
    paths = {"records": out / "records.csv", "report": out / "report.csv",
             "failures": out / "failures.csv"}
    paths["records"].write_text(frame_to_csv(exp.records, echo))
    paths["report"].write_text(frame_to_csv(exp.report.long(), echo))
    paths["failures"].write_text(frame_to_csv(exp.failures, echo))
    return paths
