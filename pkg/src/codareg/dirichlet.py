"""Dirichlet distribution on the open simplex.

Compositions are plain float arrays: one composition is shape ``(C,)``, a
sample of them ``(n, C)``. :class:`DirichletParams` holds the shape vector and
exposes the mean/precision view (``alpha = mu * phi``).
"""

from dataclasses import dataclass

import numpy as np

from .special import _digamma, _lgamma, log_gamma
from .validation import check_compositions

__all__ = [
    "DirichletParams",
    "DegenerateSampleError",
    "log_density",
    "moments",
    "entropy",
    "sample",
    "gamma_components",
    "standard_gamma",
    "log_standard_gamma",
]

_MAX_RESAMPLE = 100


class DegenerateSampleError(RuntimeError):
    """Raised when a draw keeps collapsing onto the simplex boundary."""


@dataclass(frozen=True, eq=False)
class DirichletParams:
    """Shape parameters of a Dirichlet distribution.

    Parameters
    ----------
    alpha : array_like, shape (C,)
        Strictly positive shape vector, ``C >= 2``.
    """

    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        if alpha.ndim != 1 or alpha.size < 2:
            raise ValueError(f"alpha must be a vector with at least 2 entries, got shape {alpha.shape}")
        if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
            raise ValueError(f"alpha must be finite and strictly positive, got {alpha}")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def from_mean_precision(cls, mu, phi):
        mu = np.asarray(mu, dtype=float)
        if not np.isclose(mu.sum(), 1.0, rtol=0, atol=1e-9):
            raise ValueError(f"mean composition must sum to 1, got {mu.sum()!r}")
        if not phi > 0:
            raise ValueError(f"precision must be positive, got {phi!r}")
        return cls(mu * phi)

    @property
    def n_components(self):
        return self.alpha.size

    @property
    def phi(self):
        return float(self.alpha.sum())

    @property
    def mu(self):
        return self.alpha / self.alpha.sum()

    def __repr__(self):
        return f"DirichletParams(alpha={np.array2string(self.alpha, precision=4)})"


def _as_params(params):
    if isinstance(params, DirichletParams):
        return params
    return DirichletParams(params)


def log_density(params, y):
    """Log-density of one composition or of each row of a sample.

    Returns a float for a single composition and an array of shape ``(n,)``
    for an ``(n, C)`` sample.
    """
    params = _as_params(params)
    y_arr = np.asarray(y, dtype=float)
    single = y_arr.ndim == 1
    y_arr = np.atleast_2d(y_arr)
    if y_arr.shape[1] != params.n_components:
        raise ValueError(
            f"composition has {y_arr.shape[1]} parts but alpha has {params.n_components}"
        )
    a = params.alpha
    norm = log_gamma(a.sum()) - float(np.sum(log_gamma(a)))
    out = norm + np.log(y_arr) @ (a - 1.0)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite Dirichlet log-density; check that compositions are interior")
    return float(out[0]) if single else out


def moments(params):
    """Mean vector, variance vector and covariance matrix."""
    a = _as_params(params).alpha
    phi = a.sum()
    mean = a / phi
    denom = phi * phi * (phi + 1.0)
    cov = -np.outer(a, a) / denom
    var = a * (phi - a) / denom
    np.fill_diagonal(cov, var)
    return mean, var, cov


def entropy(params):
    """Differential entropy of the Dirichlet distribution (nats)."""
    a = _as_params(params).alpha
    phi = a.sum()
    C = a.size
    return float(
        np.sum(_lgamma(a))
        - _lgamma(phi)
        + (phi - C) * _digamma(phi)
        - np.sum((a - 1.0) * _digamma(a))
    )


def log_standard_gamma(shape, rng):
    """Logs of independent Gamma(shape, 1) variates.

    Marsaglia-Tsang squeeze/rejection for shape >= 1. Shapes below one are
    boosted: ``G(a) = G(a + 1) * U**(1/a)``, applied in log space so very small
    shapes do not underflow.

    Parameters
    ----------
    shape : array_like
        Positive shape parameters; output has the same shape.
    rng : numpy.random.Generator
    """
    shape = np.asarray(shape, dtype=float)
    flat = shape.ravel()
    small = flat < 1.0
    a = np.where(small, flat + 1.0, flat)
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty_like(a)
    pending = np.arange(a.size)
    while pending.size:
        x = rng.standard_normal(pending.size)
        u = rng.random(pending.size)
        v = 1.0 + c[pending] * x
        ok = v > 0
        v = np.where(ok, v, 1.0) ** 3
        x2 = x * x
        dp = d[pending]
        squeeze = u < 1.0 - 0.0331 * x2 * x2
        with np.errstate(divide="ignore"):
            full = np.log(u) < 0.5 * x2 + dp * (1.0 - v + np.log(v))
        accept = ok & (squeeze | full)
        idx = pending[accept]
        out[idx] = np.log(dp[accept]) + np.log(v[accept])
        pending = pending[~accept]
    if np.any(small):
        u = rng.random(int(small.sum()))
        # 1 - u lies in (0, 1], so the log is finite
        out[small] += np.log1p(-u) / flat[small]
    return out.reshape(shape.shape)


def standard_gamma(shape, rng):
    """Independent Gamma(shape, 1) variates."""
    return np.exp(log_standard_gamma(shape, rng))


def _rvs(alpha, rng):
    """One Dirichlet draw per row of an ``(n, C)`` shape matrix."""
    alpha = np.asarray(alpha, dtype=float)
    out = np.empty_like(alpha)
    pending = np.arange(alpha.shape[0])
    for _ in range(_MAX_RESAMPLE):
        logw = log_standard_gamma(alpha[pending], rng)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        y = w / w.sum(axis=1, keepdims=True)
        bad = ~np.all((y > 0) & np.isfinite(y), axis=1)
        out[pending[~bad]] = y[~bad]
        pending = pending[bad]
        if not pending.size:
            return out
    raise DegenerateSampleError(
        f"{pending.size} Dirichlet draws still on the simplex boundary after {_MAX_RESAMPLE} attempts"
    )


def sample(params, n, rng):
    """Draw ``n`` compositions by normalizing independent gamma variates.

    Parameters
    ----------
    params : DirichletParams or array_like
    n : int
        Number of draws, at least 1.
    rng : numpy.random.Generator
        Consumed; the output is a deterministic function of its state.

    Returns
    -------
    ndarray, shape (n, C)
    """
    params = _as_params(params)
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    alpha = np.broadcast_to(params.alpha, (n, params.n_components))
    return _rvs(alpha, rng)


def gamma_components(params, y_sample, rng):
    """Recover gamma-scale parts ``w`` with ``w / w.sum() == y`` for each row.

    The total of independent Gamma(alpha_c, 1) variates is Gamma(phi, 1) and
    independent of their normalized proportions, so scaling each composition
    by a fresh Gamma(phi, 1) total yields columns distributed as
    Gamma(alpha_c, 1) whenever the sample comes from ``Dir(alpha)``.

    Returns
    -------
    ndarray, shape (n, C)
    """
    params = _as_params(params)
    y = check_compositions(y_sample)
    if y.shape[1] != params.n_components:
        raise ValueError(f"sample has {y.shape[1]} parts but alpha has {params.n_components}")
    totals = standard_gamma(np.full(y.shape[0], params.phi), rng)
    return y * totals[:, None]


def symmetric(C, phi):
    """Symmetric parameters ``alpha_c = phi / C``."""
    if C < 2:
        raise ValueError("C must be at least 2")
    return DirichletParams(np.full(C, phi / C))
