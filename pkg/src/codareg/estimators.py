"""Scikit-learn style estimators.

``DirichletMLE`` fits a plain Dirichlet and recommends a reference
component; ``HierarchicalDirichletRegressor`` samples the posterior of the
multi-group regression with NUTS.
"""

import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import metrics
from .diagnostics import summary_table
from .dirichlet import DirichletParams
from .model import (
    CoDaTable,
    Layout,
    ModelSpec,
    log_posterior_and_gradient,
    mean_and_precision,
    predict as model_predict,
)
from .reference import dirichlet_loglik, fit_dirichlet_mle, select_reference, shape_metrics
from .sampler import SamplerConfig, nuts_sample
from .validation import check_compositions, check_design, encode_groups

__all__ = ["DirichletMLE", "HierarchicalDirichletRegressor", "PosteriorTarget"]


class DirichletMLE(BaseEstimator):
    """Maximum likelihood Dirichlet fit with gamma shape summary.

    Parameters
    ----------
    max_iter : int, default=500
    tol : float, default=1e-8
        Gradient max-norm of the mean log-likelihood at convergence.
    zero_adjust : bool, default=False
        Shrink zero parts away before fitting.

    Attributes
    ----------
    alpha_ : ndarray, shape (C,)
    shape_report_ : ShapeReport
    reference_ : int
        Component with the largest fitted alpha.
    """

    def __init__(self, max_iter=500, tol=1e-8, zero_adjust=False):
        self.max_iter = max_iter
        self.tol = tol
        self.zero_adjust = zero_adjust

    def fit(self, Y, y=None, component_names=None):
        Y = check_compositions(Y, zero_adjust=self.zero_adjust)
        params = fit_dirichlet_mle(Y, max_iter=self.max_iter, tol=self.tol)
        self.alpha_ = params.alpha.copy()
        self.n_components_ = Y.shape[1]
        self.shape_report_ = shape_metrics(params, component_names)
        self.reference_ = select_reference(self.shape_report_)
        return self

    @property
    def params_(self):
        check_is_fitted(self, "alpha_")
        return DirichletParams(self.alpha_)

    def score(self, Y, y=None):
        """Mean log-likelihood per composition."""
        check_is_fitted(self, "alpha_")
        Y = check_compositions(Y, zero_adjust=self.zero_adjust)
        return dirichlet_loglik(self.alpha_, Y) / Y.shape[0]


class PosteriorTarget:
    """Picklable ``q -> (log posterior, gradient)`` for the sampler."""

    def __init__(self, spec, data, implementation="loop"):
        self.spec = spec
        self.data = data
        self.implementation = implementation

    def __call__(self, q):
        return log_posterior_and_gradient(self.spec, q, self.data, self.implementation)


class HierarchicalDirichletRegressor(BaseEstimator):
    """Bayesian Dirichlet regression pooling several datasets.

    Each group (dataset) gets its own mean and precision coefficients, drawn
    around shared global coefficients. The mean uses a softmax link with the
    reference component's predictor fixed at zero; the precision a log link.

    Parameters
    ----------
    reference : "auto" or int, default="auto"
        Reference component (0-based). ``"auto"`` picks the component with
        the largest alpha in a plain Dirichlet fit.
    fit_intercept : bool, default=True
        Prepend a constant column to the mean and precision designs.
    prior_scale_beta, prior_scale_theta : float, default=5.0
        Normal prior scales of the global coefficients.
    hyper_scale : float, default=2.5
        Half-Cauchy scale of the group dispersions.
    chains, warmup, samples, target_accept, max_tree_depth, init_jitter
        Sampler settings, see :class:`~codareg.sampler.SamplerConfig`.
    random_state : int, default=0
        Chain ``k`` uses seed ``random_state + k``.
    n_jobs : int, default=1
        Chains run in parallel when > 1.
    implementation : {"loop", "vectorized"}, default="loop"
        Likelihood/gradient code path.
    zero_adjust : bool, default=False

    Attributes
    ----------
    spec_ : ModelSpec
    draws_ : PosteriorDraws
    reference_ : int
    levels_ : list
        Group labels in code order.
    coef_ : ndarray, shape (C, P)
        Posterior mean of global mean coefficients; reference row is zero.
    precision_coef_ : ndarray, shape (Q,)
    """

    def __init__(
        self,
        reference="auto",
        fit_intercept=True,
        prior_scale_beta=5.0,
        prior_scale_theta=5.0,
        hyper_scale=2.5,
        chains=4,
        warmup=1000,
        samples=1000,
        target_accept=0.8,
        max_tree_depth=10,
        init_jitter=2.0,
        random_state=0,
        n_jobs=1,
        implementation="loop",
        zero_adjust=False,
    ):
        self.reference = reference
        self.fit_intercept = fit_intercept
        self.prior_scale_beta = prior_scale_beta
        self.prior_scale_theta = prior_scale_theta
        self.hyper_scale = hyper_scale
        self.chains = chains
        self.warmup = warmup
        self.samples = samples
        self.target_accept = target_accept
        self.max_tree_depth = max_tree_depth
        self.init_jitter = init_jitter
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.implementation = implementation
        self.zero_adjust = zero_adjust

    def _design(self, M, n, name):
        if M is None:
            return np.ones((n, 1))
        M = check_design(M, n, name)
        if self.fit_intercept:
            M = np.hstack([np.ones((n, 1)), M])
        return M

    def _table(self, X, Y, groups, Z, levels=None):
        Y = check_compositions(Y, zero_adjust=self.zero_adjust)
        n = Y.shape[0]
        x = self._design(X, n, "X")
        z = self._design(Z, n, "Z")
        codes, levels = encode_groups(groups, n, levels)
        return CoDaTable(Y, x, z, codes, len(levels), levels)

    def sampler_config(self):
        return SamplerConfig(
            chains=self.chains,
            warmup=self.warmup,
            samples=self.samples,
            seed=self.random_state,
            target_accept=self.target_accept,
            max_tree_depth=self.max_tree_depth,
            init_jitter=self.init_jitter,
            n_jobs=self.n_jobs,
        )

    def fit(self, X, Y, groups=None, Z=None, component_names=None):
        """Sample the posterior.

        Parameters
        ----------
        X : array_like, shape (n, p) or None
            Mean covariates (without intercept when ``fit_intercept``).
        Y : array_like, shape (n, C)
            Compositions.
        groups : array_like, shape (n,), optional
            Dataset label per row.
        Z : array_like, shape (n, q), optional
            Precision covariates; intercept only when omitted.
        """
        data = self._table(X, Y, groups, Z)
        empty = [l for l, m in zip(data.levels, data.members) if m.size == 0]
        if empty:
            raise ValueError(f"groups without observations: {empty}")
        C = data.C
        if self.reference == "auto":
            selector = DirichletMLE(zero_adjust=False).fit(data.y, component_names=component_names)
            self.shape_report_ = selector.shape_report_
            reference = selector.reference_
        else:
            reference = int(self.reference)
        spec = ModelSpec(
            C=C,
            P=data.x.shape[1],
            Q=data.z.shape[1],
            L=data.n_groups,
            reference=reference,
            prior_scale_beta=self.prior_scale_beta,
            prior_scale_theta=self.prior_scale_theta,
            hyper_scale=self.hyper_scale,
        )
        self.layout_ = Layout(spec, list(component_names) if component_names is not None else None)
        target = PosteriorTarget(spec, data, self.implementation)
        self.draws_ = nuts_sample(
            target, self.sampler_config(), np.zeros(spec.layout.size), names=self.layout_.names
        )
        self.spec_ = spec
        self.reference_ = reference
        self.levels_ = data.levels
        self.n_components_ = C
        self.data_ = data
        mean = self.draws_.flat().mean(axis=0)
        u = spec.layout.unpack(mean)
        coef = np.insert(u["beta"], reference, 0.0, axis=0)
        self.coef_ = coef
        self.precision_coef_ = u["theta"].copy()
        return self

    @classmethod
    def from_draws(cls, spec, draws, levels, data=None, **params):
        """Rebuild a fitted estimator from stored draws.

        ``data`` (the training table) is only needed by :meth:`diagnose`.
        """
        est = cls(reference=spec.reference, **params)
        est.spec_ = spec
        est.draws_ = draws
        est.reference_ = spec.reference
        est.levels_ = list(levels)
        est.n_components_ = spec.C
        est.layout_ = spec.layout
        if data is not None:
            est.data_ = data
        u = spec.layout.unpack(draws.flat().mean(axis=0))
        est.coef_ = np.insert(u["beta"], spec.reference, 0.0, axis=0)
        est.precision_coef_ = u["theta"].copy()
        return est

    def _new_table(self, X, groups, Z, n=None):
        check_is_fitted(self, "draws_")
        if n is None:
            n = len(groups) if groups is not None else (np.asarray(X).shape[0] if X is not None else 1)
        x = self._design(X, n, "X")
        z = self._design(Z, n, "Z")
        if x.shape[1] != self.spec_.P or z.shape[1] != self.spec_.Q:
            raise ValueError(
                f"design has P={x.shape[1]}, Q={z.shape[1]}; the model was fitted with "
                f"P={self.spec_.P}, Q={self.spec_.Q}"
            )
        codes, _ = encode_groups(groups, n, self.levels_)
        return x, z, codes

    def predict(self, X, groups=None, Z=None):
        """Posterior mean of the mean composition, shape ``(n, C)``."""
        x, z, codes = self._new_table(X, groups, Z)
        flat = self.draws_.flat()
        out = np.zeros((x.shape[0], self.spec_.C))
        for q in flat:
            out += mean_and_precision(self.spec_, q, x, z, codes)[0]
        return out / flat.shape[0]

    def predict_precision(self, X=None, groups=None, Z=None, n=None):
        """Posterior mean precision per row."""
        x, z, codes = self._new_table(X, groups, Z, n)
        flat = self.draws_.flat()
        return np.mean([mean_and_precision(self.spec_, q, x, z, codes)[1] for q in flat], axis=0)

    def sample_predictive(self, X, groups=None, Z=None, random_state=None):
        """One predictive composition per posterior draw and row, ``(S, n, C)``."""
        x, z, codes = self._new_table(X, groups, Z)
        rng = np.random.default_rng(self.random_state if random_state is None else random_state)
        pred, _ = model_predict(self.spec_, self.draws_.flat(), x, z, codes, rng)
        return pred

    def score(self, X, Y, groups=None, Z=None):
        """Negative mean Aitchison distance between ``Y`` and :meth:`predict`."""
        Y = check_compositions(Y, zero_adjust=self.zero_adjust)
        return -float(np.mean(metrics.aitchison_distance(Y, self.predict(X, groups, Z))))

    def diagnose(self, X=None, Y=None, groups=None, Z=None, random_state=None):
        """Information criteria on the training data plus prediction metrics.

        Prediction metrics use ``(X, Y, groups, Z)`` when given (e.g. a
        held-out set) and the training data otherwise.
        """
        check_is_fitted(self, "draws_")
        data = self.data_
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            dic_value, p_d = metrics.dic(self.draws_, data, self.spec_, self.implementation)
            parts = metrics.waic_from_pointwise(
                metrics.pointwise_matrix(self.draws_, data, self.spec_, self.implementation)
            )
        if Y is None:
            Y_obs, x, z, codes = data.y, data.x, data.z, data.group
        else:
            Y_obs = check_compositions(Y, zero_adjust=self.zero_adjust)
            x, z, codes = self._new_table(X, groups, Z, Y_obs.shape[0])
        rng = np.random.default_rng(self.random_state if random_state is None else random_state)
        pred, fitted = model_predict(self.spec_, self.draws_.flat(), x, z, codes, rng)
        report = metrics.prediction_report(Y_obs, fitted, pred)
        report.dic, report.p_d = dic_value, p_d
        report.waic, report.p_waic = parts["waic"], parts["p_waic"]
        report.lppd, report.elppd = parts["lppd"], parts["elppd"]
        return report

    def convergence_summary(self):
        check_is_fitted(self, "draws_")
        return summary_table(self.draws_)
