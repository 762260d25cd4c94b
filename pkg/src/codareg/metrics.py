"""Fit and prediction diagnostics for compositional regression.

Distances compare observed compositions with fitted ones; coverage and rMSE
score predictive intervals and parameter recovery; DIC and WAIC summarize
the posterior's out-of-sample deviance.
"""

from dataclasses import asdict, dataclass, field
import math

import numpy as np

from .model import log_likelihood, pointwise_log_likelihood
from .sampler import PosteriorDraws
from .validation import CompositionError

__all__ = [
    "FitReport",
    "aitchison_distance",
    "kl_divergence",
    "coverage",
    "coverage_95",
    "rmse_percent",
    "dic",
    "dic_from_loglik",
    "waic",
    "waic_from_pointwise",
    "UnderflowError",
]


class UnderflowError(FloatingPointError):
    """An observation has zero predictive density under every draw."""


def _pair(y1, y2):
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if y1.shape != y2.shape:
        raise ValueError(f"shape mismatch: {y1.shape} vs {y2.shape}")
    if np.any(y1 <= 0) or np.any(y2 <= 0):
        raise CompositionError("compositions must have strictly positive parts")
    return y1, y2


def aitchison_distance(y1, y2):
    """Aitchison distance between compositions (row-wise for 2-d input).

    ``sqrt(sum_c (ln r_c - mean_c ln r_c)**2)`` with ``r = y1 / y2``. Inputs
    need not be closed; the centering removes any scale.
    """
    y1, y2 = _pair(y1, y2)
    lr = np.log(y1) - np.log(y2)
    lr = lr - lr.mean(axis=-1, keepdims=True)
    out = np.sqrt(np.sum(lr * lr, axis=-1))
    return float(out) if out.ndim == 0 else out


def kl_divergence(y1, y2):
    """``sum_c y1_c ln(y1_c / y2_c)`` (row-wise for 2-d input)."""
    y1, y2 = _pair(y1, y2)
    out = np.sum(y1 * (np.log(y1) - np.log(y2)), axis=-1)
    return float(out) if out.ndim == 0 else out


def coverage(observed, predictive, level=0.95):
    """Fraction of observed parts inside central predictive intervals.

    Parameters
    ----------
    observed : array_like, shape (n, C)
    predictive : array_like, shape (S, n, C)
        Predictive draws per observation.
    level : float
        Central interval mass; bounds are the ``(1 - level)/2`` and
        ``(1 + level)/2`` quantiles (linear interpolation), closed.

    Returns
    -------
    mean : float
        Average over components.
    per_component : ndarray, shape (C,)
    """
    observed = np.atleast_2d(np.asarray(observed, dtype=float))
    predictive = np.asarray(predictive, dtype=float)
    if observed.size == 0 or predictive.size == 0:
        raise ValueError("coverage needs non-empty observations and predictive draws")
    if predictive.shape[1:] != observed.shape:
        raise ValueError(f"predictive draws {predictive.shape} do not match observations {observed.shape}")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(predictive, [tail, 1.0 - tail], axis=0)
    inside = (observed >= lo) & (observed <= hi)
    per_component = inside.mean(axis=0)
    return float(per_component.mean()), per_component


def coverage_95(observed, predictive):
    return coverage(observed, predictive, 0.95)


def rmse_percent(estimated, truth):
    """``100 * sqrt(mean((estimated - truth)**2))``."""
    est = np.ravel(np.asarray(estimated, dtype=float))
    true = np.ravel(np.asarray(truth, dtype=float))
    if est.shape != true.shape:
        raise ValueError(f"length mismatch: {est.size} vs {true.size}")
    return float(100.0 * np.sqrt(np.mean((est - true) ** 2)))


def _flat_draws(draws):
    if isinstance(draws, PosteriorDraws):
        return draws.flat()
    return np.atleast_2d(np.asarray(draws, dtype=float))


def dic_from_loglik(loglik, draws):
    """DIC for any model given ``loglik(theta) -> float`` and draws ``(S, dim)``.

    Returns ``(dic, p_d)`` with ``D = -2 log L`` and ``p_d = mean(D) - D(mean)``.
    """
    flat = _flat_draws(draws)
    dev = np.array([-2.0 * loglik(q) for q in flat])
    dev_at_mean = -2.0 * loglik(flat.mean(axis=0))
    if not math.isfinite(dev_at_mean):
        raise FloatingPointError("non-finite deviance at the posterior mean")
    p_d = float(dev.mean() - dev_at_mean)
    return float(dev_at_mean + 2.0 * p_d), p_d


def dic(draws, data, spec, implementation="loop", min_draws=100):
    """Deviance information criterion of the regression model.

    Returns ``(dic, p_d)``; the posterior mean is taken over unconstrained
    draws.
    """
    flat = _flat_draws(draws)
    if flat.shape[0] < min_draws:
        raise ValueError(f"DIC needs at least {min_draws} draws, got {flat.shape[0]}")
    return dic_from_loglik(lambda q: log_likelihood(spec, q, data, implementation), flat)


def pointwise_matrix(draws, data, spec, implementation="loop"):
    """Log-likelihood of every observation under every draw, ``(S, n)``."""
    flat = _flat_draws(draws)
    return np.stack([pointwise_log_likelihood(spec, q, data, implementation) for q in flat])


def waic_from_pointwise(ll):
    """WAIC pieces from an ``(S, n)`` log-likelihood matrix.

    Returns a dict with ``lppd``, ``p_waic``, ``elppd`` and ``waic``
    (``-2 * elppd``).
    """
    ll = np.asarray(ll, dtype=float)
    S = ll.shape[0]
    top = ll.max(axis=0)
    if not np.all(np.isfinite(top)):
        i = int(np.argmax(~np.isfinite(top)))
        raise UnderflowError(f"observation {i} has zero density under every draw")
    lppd_i = top + np.log(np.exp(ll - top).sum(axis=0)) - math.log(S)
    p_i = ll.var(axis=0, ddof=1) if S > 1 else np.zeros(ll.shape[1])
    lppd = float(lppd_i.sum())
    p_waic = float(p_i.sum())
    elppd = lppd - p_waic
    return {"lppd": lppd, "p_waic": p_waic, "elppd": elppd, "waic": -2.0 * elppd}


def waic(draws, data, spec, implementation="loop", min_draws=100):
    """Widely applicable information criterion.

    Returns ``(waic, p_waic, lppd)``; see :func:`waic_from_pointwise` for the
    full breakdown.
    """
    flat = _flat_draws(draws)
    if flat.shape[0] < min_draws:
        raise ValueError(f"WAIC needs at least {min_draws} draws, got {flat.shape[0]}")
    parts = waic_from_pointwise(pointwise_matrix(flat, data, spec, implementation))
    return parts["waic"], parts["p_waic"], parts["lppd"]


@dataclass
class FitReport:
    """All diagnostics of one fit; per-component vectors as lists."""

    aitchison_mean: float = math.nan
    kl_mean: float = math.nan
    coverage_95: float = math.nan
    rmse_percent: float = math.nan
    dic: float = math.nan
    p_d: float = math.nan
    waic: float = math.nan
    p_waic: float = math.nan
    lppd: float = math.nan
    elppd: float = math.nan
    coverage_per_component: list = field(default_factory=list)
    aitchison_per_observation_sd: float = math.nan
    kl_per_component: list = field(default_factory=list)
    rmse_per_component: list = field(default_factory=list)
    n_observations: int = 0

    def to_dict(self):
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v

        return {k: clean(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        known = {k: (math.nan if v is None else v) for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def prediction_report(observed, fitted, predictive):
    """Distances, coverage and rMSE of fitted compositions against observations.

    ``fitted`` is one point prediction per observation ``(n, C)``;
    ``predictive`` the draws used for intervals ``(S, n, C)``.
    """
    observed = np.atleast_2d(observed)
    ad = aitchison_distance(observed, fitted)
    kl_terms = observed * (np.log(observed) - np.log(fitted))
    cov, cov_c = coverage(observed, predictive, 0.95)
    sq = (observed - fitted) ** 2
    return FitReport(
        aitchison_mean=float(np.mean(ad)),
        aitchison_per_observation_sd=float(np.std(ad, ddof=1)) if ad.size > 1 else 0.0,
        kl_mean=float(kl_terms.sum(axis=1).mean()),
        kl_per_component=kl_terms.mean(axis=0).tolist(),
        coverage_95=cov,
        coverage_per_component=cov_c.tolist(),
        rmse_percent=rmse_percent(fitted, observed),
        rmse_per_component=(100.0 * np.sqrt(sq.mean(axis=0))).tolist(),
        n_observations=int(observed.shape[0]),
    )
