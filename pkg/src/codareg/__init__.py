"""Bayesian hierarchical Dirichlet regression for compositional data.

Submodules: ``special`` (log-gamma family), ``dirichlet`` (distribution),
``reference`` (MLE and reference choice), ``model`` (links, likelihood,
gradients), ``sampler`` (NUTS), ``diagnostics`` (R-hat, ESS), ``metrics``
(distances, coverage, DIC, WAIC), ``simulation`` (studies), ``io`` and
``cli``.
"""

__version__ = "0.1.0"

from .dirichlet import DirichletParams, entropy, log_density, moments, sample
from .estimators import DirichletMLE, HierarchicalDirichletRegressor
from .metrics import FitReport, aitchison_distance, coverage_95, dic, kl_divergence, rmse_percent, waic
from .model import CoDaTable, ModelSpec, log_posterior, log_posterior_and_gradient
from .reference import fit_dirichlet_mle, select_reference, shape_metrics
from .sampler import PosteriorDraws, SamplerConfig, nuts_sample
from .special import digamma, log_gamma, trigamma

__all__ = [
    "CoDaTable",
    "DirichletMLE",
    "DirichletParams",
    "FitReport",
    "HierarchicalDirichletRegressor",
    "ModelSpec",
    "PosteriorDraws",
    "SamplerConfig",
    "aitchison_distance",
    "coverage_95",
    "dic",
    "digamma",
    "entropy",
    "fit_dirichlet_mle",
    "kl_divergence",
    "log_density",
    "log_gamma",
    "log_posterior",
    "log_posterior_and_gradient",
    "moments",
    "nuts_sample",
    "rmse_percent",
    "sample",
    "select_reference",
    "shape_metrics",
    "trigamma",
    "waic",
]
