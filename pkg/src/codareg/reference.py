"""Choosing the reference component from a plain Dirichlet fit.

A composition is a normalized vector of independent Gamma(alpha_c, 1) parts,
so each part carries the gamma skewness ``2/sqrt(alpha_c)`` and kurtosis
``3 + 6/alpha_c``. The recommended reference is the part with the largest
fitted ``alpha``, which has both the smallest skewness and kurtosis.
"""

from dataclasses import dataclass, field
import warnings

import numpy as np

from .dirichlet import DirichletParams, entropy
from .special import _digamma, _lgamma, _trigamma
from .validation import check_compositions

__all__ = [
    "MLEConvergenceError",
    "ShapeReport",
    "fit_dirichlet_mle",
    "dirichlet_loglik",
    "shape_metrics",
    "select_reference",
]

TIE_TOL = 1e-9


class MLEConvergenceError(RuntimeError):
    """Newton iterations stopped before the gradient tolerance was reached."""

    def __init__(self, message, alpha, grad_norm):
        super().__init__(message)
        self.alpha = alpha
        self.grad_norm = grad_norm


def dirichlet_loglik(alpha, Y):
    """Total log-likelihood of ``Dir(alpha)`` over the rows of ``Y``."""
    alpha = np.asarray(alpha, dtype=float)
    Y = np.atleast_2d(Y)
    n = Y.shape[0]
    return float(
        n * (_lgamma(alpha.sum()) - np.sum(_lgamma(alpha)))
        + np.sum(np.log(Y) @ (alpha - 1.0))
    )


def _mean_loglik(alpha, mean_log):
    return float(_lgamma(alpha.sum()) - np.sum(_lgamma(alpha)) + (alpha - 1.0) @ mean_log)


def _moment_init(Y):
    m1 = Y.mean(axis=0)
    m2 = (Y * Y).mean(axis=0)
    denom = m2 - m1 * m1
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (m1 - m2) / denom
    s = s[np.isfinite(s) & (s > 0)]
    phi = float(np.mean(s)) if s.size else 1.0
    return m1 * phi


def fit_dirichlet_mle(Y, max_iter=500, tol=1e-8):
    """Maximum likelihood shape vector of a plain Dirichlet model.

    Starts from the method-of-moments estimate and runs damped Newton steps
    in ``log(alpha)``, falling back to the (always concave) ``alpha``-space
    Newton direction when the log-space Hessian is not negative definite.
    Convergence is declared when the max-norm of the gradient of the mean
    per-observation log-likelihood drops to ``tol``.

    Parameters
    ----------
    Y : array_like, shape (n, C)
        Interior compositions, ``n >= C + 1``.

    Returns
    -------
    DirichletParams

    Raises
    ------
    MLEConvergenceError
        After ``max_iter`` iterations without convergence.
    """
    Y = check_compositions(Y)
    n, C = Y.shape
    if n < C + 1:
        raise ValueError(f"need at least C + 1 = {C + 1} observations, got {n}")
    mean_log = np.log(Y).mean(axis=0)
    alpha = _moment_init(Y)
    ll = _mean_loglik(alpha, mean_log)
    gnorm = np.inf
    for _ in range(max_iter):
        phi = alpha.sum()
        g = _digamma(phi) - _digamma(alpha) + mean_log
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= tol:
            return DirichletParams(alpha)
        tri = _trigamma(alpha)
        tri_phi = float(_trigamma(phi))
        # alpha-space Newton direction: H = tri_phi * 11' - diag(tri), solved
        # with Sherman-Morrison
        q = g / tri
        b = tri_phi * q.sum() / (1.0 - tri_phi * np.sum(1.0 / tri))
        d_alpha = q + b / tri
        # log-space Newton direction
        H = tri_phi * np.outer(alpha, alpha) - np.diag(tri * alpha * alpha) + np.diag(alpha * g)
        try:
            L = np.linalg.cholesky(-H)
            du = np.linalg.solve(L.T, np.linalg.solve(L, alpha * g))
        except np.linalg.LinAlgError:
            du = d_alpha / alpha
        step = 1.0
        while step > 1e-12:
            trial = alpha * np.exp(step * du)
            if np.all(np.isfinite(trial)) and np.all(trial > 0):
                ll_trial = _mean_loglik(trial, mean_log)
                if ll_trial >= ll - 1e-15 * abs(ll):
                    break
            step *= 0.5
        else:
            # no ascent along the Newton ray: try the alpha-space direction
            du = d_alpha / alpha
            trial = alpha * np.exp(np.clip(du, -1.0, 1.0))
            ll_trial = _mean_loglik(trial, mean_log)
        alpha, ll = trial, ll_trial
    raise MLEConvergenceError(
        f"Dirichlet MLE did not converge in {max_iter} iterations (gradient max-norm {gnorm:.3g})",
        alpha,
        gnorm,
    )


@dataclass
class ShapeReport:
    """Per-component gamma shape summary of a fitted Dirichlet."""

    alpha_hat: np.ndarray
    skewness: np.ndarray
    kurtosis: np.ndarray
    phi_hat: float
    entropy_hat: float
    reference: int
    tie: bool = False
    names: list = field(default=None)

    def __post_init__(self):
        if self.names is None:
            self.names = [f"c{i + 1}" for i in range(len(self.alpha_hat))]

    def to_dict(self):
        return {
            "components": [
                {
                    "index": i,
                    "name": name,
                    "alpha_hat": float(a),
                    "skewness": float(s),
                    "kurtosis": float(k),
                }
                for i, (name, a, s, k) in enumerate(
                    zip(self.names, self.alpha_hat, self.skewness, self.kurtosis)
                )
            ],
            "phi_hat": self.phi_hat,
            "entropy_hat": self.entropy_hat,
            "reference_index": self.reference,
            "reference_name": self.names[self.reference],
            "tie": self.tie,
        }


def _argmax_tie(values):
    top = float(np.max(values))
    candidates = np.flatnonzero(values >= top - TIE_TOL)
    return int(candidates[0]), candidates.size > 1


def shape_metrics(params, names=None):
    """Skewness ``2/sqrt(alpha)`` and kurtosis ``3 + 6/alpha`` per component."""
    if not isinstance(params, DirichletParams):
        params = DirichletParams(params)
    a = params.alpha
    ref, tie = _argmax_tie(a)
    return ShapeReport(
        alpha_hat=a.copy(),
        skewness=2.0 / np.sqrt(a),
        kurtosis=3.0 + 6.0 / a,
        phi_hat=params.phi,
        entropy_hat=entropy(params),
        reference=ref,
        tie=tie,
        names=list(names) if names is not None else None,
    )


def select_reference(report):
    """Index (0-based) of the component with the largest fitted alpha.

    Ties within 1e-9 resolve to the lowest index and emit a ``RuntimeWarning``.
    """
    ref, tie = _argmax_tie(np.asarray(report.alpha_hat))
    if tie:
        warnings.warn(
            f"several components share the largest alpha; using component {ref}",
            RuntimeWarning,
            stacklevel=2,
        )
    return ref
