"""Doubly robust estimation of conditional average treatment effects.

Posterior draws of the propensity and outcome models are turned into AIPW
pseudo-outcomes, regressed on effect modifiers by least squares, and
averaged over draws.  The variance adds a bootstrap term over rows to the
spread across posterior draws.
"""

from .cate import BasisSpec, CateFit, CrossFit, build_design, crossfit_estimate, estimate
from .dataset import Dataset, Schema, dichotomize, load_csv, standardize, write_csv
from .errors import (ConfigError, DomainError, DrcateError, ParseError, SchemaError,
                     SingularDesignError)
from .nuisance import (BayesianGLM, ExternalDraws, GlmPrior, PosteriorDraws, SpikeSlab,
                       SpikeSlabPrior, import_external_draws)
from .pipeline import MethodSettings, run_method, univariate_curves
from .pseudo import decompose, pseudo_outcome
from .simlab import (ScenarioConfig, SimReport, TruthRecord, aggregate_metrics, gen_scenario,
                     run_experiment, run_replicate)
from .variance import (IntervalEstimate, VarianceBreakdown, confidence_interval,
                       crossfit_variance, dml_baseline, variance_estimate)

__version__ = "0.1.0"

__all__ = [
    "BasisSpec", "BayesianGLM", "CateFit", "ConfigError", "CrossFit", "Dataset", "DomainError",
    "DrcateError", "ExternalDraws", "GlmPrior", "IntervalEstimate", "MethodSettings",
    "ParseError", "PosteriorDraws", "ScenarioConfig", "Schema", "SchemaError", "SimReport",
    "SingularDesignError", "SpikeSlab", "SpikeSlabPrior", "TruthRecord", "VarianceBreakdown",
    "aggregate_metrics", "build_design", "confidence_interval", "crossfit_estimate",
    "crossfit_variance", "decompose", "dichotomize", "dml_baseline", "estimate",
    "gen_scenario", "import_external_draws", "load_csv", "pseudo_outcome", "run_experiment",
    "run_method", "run_replicate", "standardize", "univariate_curves", "variance_estimate",
    "write_csv",
]
