"""Hierarchical Dirichlet regression with a softmax mean and log precision.

For observation ``i`` in group ``l``::

    eta_ic   = x_i' beta_cl            (eta_i,ref = 0)
    mu_i     = softmax(eta_i)
    phi_i    = exp(z_i' theta_l)
    y_i      ~ Dirichlet(mu_i * phi_i)

    beta_cl  = beta_c + sigma_beta * beta_raw_lc
    theta_l  = theta + sigma_theta * theta_raw_l

Group deviations are non-centered: ``beta_raw`` and ``theta_raw`` are
standard normal a priori and the dispersions ``sigma`` carry half-Cauchy
priors, sampled on the log scale. The reference component has no stored
coefficients at all. With a single group the hierarchy is dropped.

All parameters live in one flat unconstrained vector; :class:`Layout` maps
names to slices of it.
"""

from dataclasses import dataclass, field
from functools import cached_property
import math
import warnings

import numba
import numpy as np

from .dirichlet import _rvs
from .special import _digamma, _lgamma, digamma_scalar, lgamma_scalar
from .validation import check_compositions, check_design

__all__ = [
    "ModelSpec",
    "CoDaTable",
    "Layout",
    "NonFiniteError",
    "mean_link",
    "precision_link",
    "log_likelihood",
    "pointwise_log_likelihood",
    "log_prior",
    "log_posterior",
    "gradient",
    "log_posterior_and_gradient",
    "predict",
    "summarize_predictive",
    "IMPLEMENTATIONS",
]

IMPLEMENTATIONS = ("vectorized", "loop")
_LOG_2PI = math.log(2.0 * math.pi)
_EXP_LIMIT = 700.0
_ETA_WARN = 30.0


class NonFiniteError(FloatingPointError):
    """A model quantity overflowed or became non-finite.

    ``index`` is the first offending observation, or ``None``; ``parameter``
    names the offending gradient entry when relevant.
    """

    def __init__(self, message, index=None, parameter=None):
        super().__init__(message)
        self.index = index
        self.parameter = parameter


@dataclass(frozen=True)
class ModelSpec:
    """Dimensions, reference component and prior scales.

    ``reference`` is a 0-based component index.
    """

    C: int
    P: int = 1
    Q: int = 1
    L: int = 1
    reference: int = 0
    prior_scale_beta: float = 5.0
    prior_scale_theta: float = 5.0
    hyper_scale: float = 2.5

    def __post_init__(self):
        if self.C < 2:
            raise ValueError(f"C must be at least 2, got {self.C}")
        for name in ("P", "Q", "L"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not 0 <= self.reference < self.C:
            raise ValueError(f"reference must be in 0..{self.C - 1}, got {self.reference}")
        for name in ("prior_scale_beta", "prior_scale_theta", "hyper_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def hierarchical(self):
        return self.L > 1

    @property
    def free_components(self):
        """Indices of components with coefficients, in storage order."""
        return [c for c in range(self.C) if c != self.reference]

    @cached_property
    def layout(self):
        return Layout(self)


class Layout:
    """Slices of the flat parameter vector and their labels."""

    def __init__(self, spec, component_names=None):
        self.spec = spec
        C1, P, Q, L = spec.C - 1, spec.P, spec.Q, spec.L
        sizes = [("beta", C1 * P), ("theta", Q)]
        if spec.hierarchical:
            sizes += [
                ("beta_raw", L * C1 * P),
                ("theta_raw", L * Q),
                ("log_sigma_beta", 1),
                ("log_sigma_theta", 1),
            ]
        self.slices = {}
        start = 0
        for name, size in sizes:
            self.slices[name] = slice(start, start + size)
            start += size
        self.size = start
        self.component_names = component_names or [f"c{c + 1}" for c in range(spec.C)]

    def unpack(self, params):
        """Dictionary of shaped views into ``params``."""
        s, sp = self.slices, self.spec
        C1 = sp.C - 1
        out = {
            "beta": params[s["beta"]].reshape(C1, sp.P),
            "theta": params[s["theta"]],
        }
        if sp.hierarchical:
            out["beta_raw"] = params[s["beta_raw"]].reshape(sp.L, C1, sp.P)
            out["theta_raw"] = params[s["theta_raw"]].reshape(sp.L, sp.Q)
            out["log_sigma_beta"] = params[s["log_sigma_beta"]][0]
            out["log_sigma_theta"] = params[s["log_sigma_theta"]][0]
        return out

    def pack(self, beta, theta, beta_raw=None, theta_raw=None, log_sigma_beta=0.0, log_sigma_theta=0.0):
        out = np.zeros(self.size)
        s = self.slices
        out[s["beta"]] = np.ravel(beta)
        out[s["theta"]] = np.ravel(theta)
        if self.spec.hierarchical:
            if beta_raw is not None:
                out[s["beta_raw"]] = np.ravel(beta_raw)
            if theta_raw is not None:
                out[s["theta_raw"]] = np.ravel(theta_raw)
            out[s["log_sigma_beta"]] = log_sigma_beta
            out[s["log_sigma_theta"]] = log_sigma_theta
        return out

    def group_effects(self, params):
        """Group-level coefficients ``(L, C-1, P)`` and ``(L, Q)``."""
        u = self.unpack(np.asarray(params, dtype=float))
        L = self.spec.L
        if not self.spec.hierarchical:
            return np.broadcast_to(u["beta"], (L,) + u["beta"].shape), np.broadcast_to(
                u["theta"], (L, self.spec.Q)
            )
        sb = math.exp(u["log_sigma_beta"])
        st = math.exp(u["log_sigma_theta"])
        return u["beta"] + sb * u["beta_raw"], u["theta"] + st * u["theta_raw"]

    @property
    def names(self):
        sp = self.spec
        comp = [self.component_names[c] for c in sp.free_components]
        labels = [f"beta[{c},{p}]" for c in comp for p in range(sp.P)]
        labels += [f"theta[{q}]" for q in range(sp.Q)]
        if sp.hierarchical:
            labels += [
                f"beta_raw[{l},{c},{p}]" for l in range(sp.L) for c in comp for p in range(sp.P)
            ]
            labels += [f"theta_raw[{l},{q}]" for l in range(sp.L) for q in range(sp.Q)]
            labels += ["log_sigma_beta", "log_sigma_theta"]
        return labels


@dataclass(frozen=True, eq=False)
class CoDaTable:
    """Compositions with mean covariates, precision covariates and groups.

    ``group`` holds 0-based codes; ``levels`` the original labels.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    group: np.ndarray
    n_groups: int
    levels: list = field(default=None)

    def __post_init__(self):
        n = self.y.shape[0]
        if self.x.shape[0] != n or self.z.shape[0] != n or self.group.shape != (n,):
            raise ValueError("y, x, z and group must have the same number of rows")
        if n and (self.group.min() < 0 or self.group.max() >= self.n_groups):
            raise ValueError("group codes must lie in 0..n_groups-1")
        log_y = np.log(self.y)
        members = [np.flatnonzero(self.group == l) for l in range(self.n_groups)]
        onehot = np.zeros((self.n_groups, n))
        onehot[self.group, np.arange(n)] = 1.0
        for name, value in (("log_y", log_y), ("members", members), ("onehot", onehot)):
            object.__setattr__(self, name, value)
        if self.levels is None:
            object.__setattr__(self, "levels", list(range(self.n_groups)))

    @classmethod
    def from_arrays(cls, y, x=None, z=None, group=None, n_groups=None, levels=None, zero_adjust=False):
        y = check_compositions(y, zero_adjust=zero_adjust)
        n = y.shape[0]
        x = check_design(x, n, "x")
        z = check_design(z, n, "z")
        group = np.zeros(n, dtype=int) if group is None else np.asarray(group, dtype=int)
        if n_groups is None:
            n_groups = int(group.max()) + 1 if n else 1
        return cls(y, x, z, group, n_groups, levels)

    @classmethod
    def empty(cls, spec):
        return cls(
            np.empty((0, spec.C)),
            np.empty((0, spec.P)),
            np.empty((0, spec.Q)),
            np.empty(0, dtype=int),
            spec.L,
        )

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def C(self):
        return self.y.shape[1]

    def check_against(self, spec):
        if (self.C, self.x.shape[1], self.z.shape[1]) != (spec.C, spec.P, spec.Q):
            raise ValueError(
                f"data dimensions (C={self.C}, P={self.x.shape[1]}, Q={self.z.shape[1]}) "
                f"do not match the model (C={spec.C}, P={spec.P}, Q={spec.Q})"
            )
        if self.n_groups > spec.L:
            raise ValueError(f"data has {self.n_groups} groups but the model has {spec.L}")

    def concat(self, other):
        return CoDaTable(
            np.vstack([self.y, other.y]),
            np.vstack([self.x, other.x]),
            np.vstack([self.z, other.z]),
            np.concatenate([self.group, other.group]),
            max(self.n_groups, other.n_groups),
            self.levels,
        )

    def take(self, index):
        index = np.asarray(index)
        return CoDaTable(
            self.y[index], self.x[index], self.z[index], self.group[index], self.n_groups, self.levels
        )


def _full_eta(spec, eta_free):
    """Insert the zero reference column into ``(..., C-1)`` predictors."""
    return np.insert(eta_free, spec.reference, 0.0, axis=-1)


def _softmax(eta):
    shifted = eta - eta.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_eta(eta):
    if eta.size and np.abs(eta).max() > _ETA_WARN:
        warnings.warn(
            f"linear predictor magnitude exceeds {_ETA_WARN:g}; mean composition is near the boundary",
            RuntimeWarning,
            stacklevel=3,
        )


def mean_link(spec, params, x_row, group=0):
    """Mean composition for one covariate row in one group."""
    B, _ = spec.layout.group_effects(params)
    x_row = np.asarray(x_row, dtype=float)
    if x_row.shape != (spec.P,):
        raise ValueError(f"x_row must have length {spec.P}")
    eta = _full_eta(spec, B[group] @ x_row)
    if not np.all(np.isfinite(eta)):
        raise NonFiniteError("non-finite linear predictor")
    _check_eta(eta)
    return _softmax(eta)


def precision_link(spec, params, z_row, group=0, index=None):
    """Precision ``exp(z' theta_l)`` for one row."""
    _, T = spec.layout.group_effects(params)
    z_row = np.asarray(z_row, dtype=float)
    if z_row.shape != (spec.Q,):
        raise ValueError(f"z_row must have length {spec.Q}")
    h = float(T[group] @ z_row)
    if not abs(h) <= _EXP_LIMIT:
        where = "" if index is None else f" at observation {index}"
        raise NonFiniteError(f"log precision {h:.4g} overflows{where}", index)
    return math.exp(h)


def _predictors(spec, B, T, data):
    """Full linear predictors ``(n, C)`` and log precisions ``(n,)``."""
    eta_free = np.einsum("np,ncp->nc", data.x, B[data.group], optimize=False)
    log_phi = np.einsum("nq,nq->n", data.z, T[data.group])
    return _full_eta(spec, eta_free), log_phi


def _first_bad(arr):
    bad = ~np.isfinite(arr)
    if arr.ndim > 1:
        bad = bad.any(axis=tuple(range(1, arr.ndim)))
    return int(np.argmax(bad))


def _alpha(eta, log_phi):
    if log_phi.size and np.abs(log_phi).max() > _EXP_LIMIT:
        i = int(np.argmax(np.abs(log_phi) > _EXP_LIMIT))
        raise NonFiniteError(f"log precision {log_phi[i]:.4g} overflows at observation {i}", i)
    mu = _softmax(eta)
    phi = np.exp(log_phi)
    alpha = mu * phi[..., None]
    if not np.all(alpha > 0):
        i = _first_bad(np.where(alpha > 0, alpha, np.nan))
        raise NonFiniteError(f"Dirichlet shape underflows to zero at observation {i}", i)
    return mu, phi, alpha


def _pointwise_vectorized(spec, params, data):
    B, T = spec.layout.group_effects(params)
    eta, log_phi = _predictors(spec, B, T, data)
    _, phi, alpha = _alpha(eta, log_phi)
    ll = _lgamma(phi) - _lgamma(alpha).sum(axis=1) + ((alpha - 1.0) * data.log_y).sum(axis=1)
    return ll


def _pointwise_loop(spec, params, data):
    B, T = spec.layout.group_effects(params)
    ll, _, _, bad = _loop_kernel(
        data.x, data.z, data.group, data.log_y,
        np.ascontiguousarray(B), np.ascontiguousarray(T), spec.reference, False,
    )
    _raise_bad(bad)
    return ll


def pointwise_log_likelihood(spec, params, data, implementation="loop"):
    """Per-observation log-likelihood, shape ``(n,)``."""
    params = np.asarray(params, dtype=float)
    if data.n == 0:
        return np.zeros(0)
    data.check_against(spec)
    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        if implementation == "vectorized":
            ll = _pointwise_vectorized(spec, params, data)
        elif implementation == "loop":
            ll = _pointwise_loop(spec, params, data)
        else:
            raise ValueError(f"implementation must be one of {IMPLEMENTATIONS}")
    if not np.all(np.isfinite(ll)):
        i = _first_bad(ll)
        raise NonFiniteError(f"non-finite log-likelihood at observation {i}", i)
    return ll


def log_likelihood(spec, params, data, implementation="loop"):
    """Sum of Dirichlet log-densities over all observations."""
    return float(np.sum(pointwise_log_likelihood(spec, params, data, implementation)))


def _normal_lp(v, scale):
    v = np.asarray(v)
    return float(-0.5 * np.sum((v / scale) ** 2) - v.size * (math.log(scale) + 0.5 * _LOG_2PI))


def _log_sigma_lp(u, scale):
    # half-Cauchy density of sigma = exp(u) plus the log-Jacobian u
    r = math.exp(u) / scale
    return math.log(2.0 / (math.pi * scale)) - math.log1p(r * r) + u


def log_prior(spec, params):
    u = spec.layout.unpack(np.asarray(params, dtype=float))
    lp = _normal_lp(u["beta"], spec.prior_scale_beta) + _normal_lp(u["theta"], spec.prior_scale_theta)
    if spec.hierarchical:
        lp += _normal_lp(u["beta_raw"], 1.0) + _normal_lp(u["theta_raw"], 1.0)
        lp += _log_sigma_lp(u["log_sigma_beta"], spec.hyper_scale)
        lp += _log_sigma_lp(u["log_sigma_theta"], spec.hyper_scale)
    return lp


def log_posterior(spec, params, data, implementation="loop"):
    """Unnormalized log-posterior on the unconstrained scale."""
    return log_likelihood(spec, params, data, implementation) + log_prior(spec, params)


def _prior_gradient(spec, params):
    layout = spec.layout
    u = layout.unpack(params)
    g = np.zeros(layout.size)
    s = layout.slices
    g[s["beta"]] = -u["beta"].ravel() / spec.prior_scale_beta**2
    g[s["theta"]] = -u["theta"] / spec.prior_scale_theta**2
    if spec.hierarchical:
        g[s["beta_raw"]] = -u["beta_raw"].ravel()
        g[s["theta_raw"]] = -u["theta_raw"].ravel()
        for name in ("log_sigma_beta", "log_sigma_theta"):
            r2 = math.exp(2.0 * u[name]) / spec.hyper_scale**2
            g[s[name]] = 1.0 - 2.0 * r2 / (1.0 + r2)
    return g


def _chain_to_params(spec, params, dB, dT):
    """Map gradients w.r.t. group effects onto the flat parameter vector."""
    layout = spec.layout
    s = layout.slices
    g = np.zeros(layout.size)
    g[s["beta"]] = dB.sum(axis=0).ravel()
    g[s["theta"]] = dT.sum(axis=0)
    if spec.hierarchical:
        u = layout.unpack(params)
        sb = math.exp(u["log_sigma_beta"])
        st = math.exp(u["log_sigma_theta"])
        g[s["beta_raw"]] = sb * dB.ravel()
        g[s["theta_raw"]] = st * dT.ravel()
        g[s["log_sigma_beta"]] = sb * float(np.sum(u["beta_raw"] * dB))
        g[s["log_sigma_theta"]] = st * float(np.sum(u["theta_raw"] * dT))
    return g


def _loglik_grad_vectorized(spec, params, data):
    B, T = spec.layout.group_effects(params)
    eta, log_phi = _predictors(spec, B, T, data)
    mu, phi, alpha = _alpha(eta, log_phi)
    ll = _lgamma(phi) - _lgamma(alpha).sum(axis=1) + ((alpha - 1.0) * data.log_y).sum(axis=1)
    # d ll / d alpha_c
    g = _digamma(phi)[:, None] - _digamma(alpha) + data.log_y
    d_eta = alpha * (g - (mu * g).sum(axis=1, keepdims=True))
    d_log_phi = (alpha * g).sum(axis=1)
    d_eta_free = np.delete(d_eta, spec.reference, axis=1)
    n, C1, P = data.n, spec.C - 1, spec.P
    per_obs = np.hstack([(d_eta_free[:, :, None] * data.x[:, None, :]).reshape(n, C1 * P), d_log_phi[:, None] * data.z])
    summed = np.zeros((spec.L, C1 * P + spec.Q))
    summed[: data.n_groups] = data.onehot @ per_obs
    dB = summed[:, : C1 * P].reshape(spec.L, C1, P)
    dT = summed[:, C1 * P :]
    return ll, dB, dT


@numba.njit(cache=True, nogil=True)
def _loop_kernel(x, z, group, log_y, B, T, ref, want_grad):
    """Per-observation log-likelihood and group-effect gradients.

    Returns ``(ll, dB, dT, bad)``; ``bad`` is ``-1`` or the index of the first
    observation whose precision overflows or whose shape underflows.
    """
    n, P = x.shape
    C = log_y.shape[1]
    Q = z.shape[1]
    L = B.shape[0]
    ll = np.empty(n)
    dB = np.zeros((L, C - 1, P))
    dT = np.zeros((L, Q))
    eta = np.empty(C)
    alpha = np.empty(C)
    g = np.empty(C)
    for i in range(n):
        l = group[i]
        k = 0
        top = 0.0
        for c in range(C):
            if c == ref:
                eta[c] = 0.0
            else:
                acc = 0.0
                for p in range(P):
                    acc += x[i, p] * B[l, k, p]
                eta[c] = acc
                k += 1
            if eta[c] > top:
                top = eta[c]
        h = 0.0
        for q in range(Q):
            h += z[i, q] * T[l, q]
        if not abs(h) <= 700.0:
            return ll, dB, dT, i
        phi = math.exp(h)
        total = 0.0
        for c in range(C):
            alpha[c] = math.exp(eta[c] - top)
            total += alpha[c]
        lli = lgamma_scalar(phi)
        for c in range(C):
            alpha[c] = alpha[c] / total * phi
            if not alpha[c] > 0.0:
                return ll, dB, dT, i
            lli += (alpha[c] - 1.0) * log_y[i, c] - lgamma_scalar(alpha[c])
        ll[i] = lli
        if want_grad:
            psi_phi = digamma_scalar(phi)
            mean_g = 0.0
            d_log_phi = 0.0
            for c in range(C):
                g[c] = psi_phi - digamma_scalar(alpha[c]) + log_y[i, c]
                mean_g += alpha[c] * g[c]
                d_log_phi += alpha[c] * g[c]
            mean_g /= phi
            k = 0
            for c in range(C):
                if c == ref:
                    continue
                d_eta = alpha[c] * (g[c] - mean_g)
                for p in range(P):
                    dB[l, k, p] += d_eta * x[i, p]
                k += 1
            for q in range(Q):
                dT[l, q] += d_log_phi * z[i, q]
    return ll, dB, dT, -1


def _raise_bad(bad):
    if bad >= 0:
        raise NonFiniteError(f"precision overflow or shape underflow at observation {bad}", bad)


@numba.njit(cache=True, nogil=True)
def _posterior_kernel(params, x, z, group, log_y, L, ref, hierarchical, scale_beta, scale_theta, hyper):
    """Log-posterior and gradient in one compiled pass.

    Returns ``(lp, grad, bad)`` with ``bad`` as in :func:`_loop_kernel`.
    """
    P = x.shape[1]
    Q = z.shape[1]
    C1 = log_y.shape[1] - 1
    nb = C1 * P
    grad = np.zeros(params.size)
    beta = params[:nb]
    theta = params[nb : nb + Q]
    lp = 0.0
    for j in range(nb):
        v = beta[j] / scale_beta
        lp -= 0.5 * v * v + math.log(scale_beta) + 0.5 * _LOG_2PI
        grad[j] = -beta[j] / (scale_beta * scale_beta)
    for q in range(Q):
        v = theta[q] / scale_theta
        lp -= 0.5 * v * v + math.log(scale_theta) + 0.5 * _LOG_2PI
        grad[nb + q] = -theta[q] / (scale_theta * scale_theta)
    B = np.empty((L, C1, P))
    T = np.empty((L, Q))
    o_braw = nb + Q
    o_traw = o_braw + L * nb
    o_sig = o_traw + L * Q
    sb = 0.0
    st = 0.0
    if hierarchical:
        for j in range(o_braw, o_sig):
            lp -= 0.5 * params[j] * params[j] + 0.5 * _LOG_2PI
            grad[j] = -params[j]
        for j in range(2):
            u = params[o_sig + j]
            r2 = math.exp(2.0 * u) / (hyper * hyper)
            lp += math.log(2.0 / (math.pi * hyper)) - math.log1p(r2) + u
            grad[o_sig + j] = 1.0 - 2.0 * r2 / (1.0 + r2)
        sb = math.exp(params[o_sig])
        st = math.exp(params[o_sig + 1])
    for l in range(L):
        for k in range(C1):
            for p in range(P):
                B[l, k, p] = beta[k * P + p]
                if hierarchical:
                    B[l, k, p] += sb * params[o_braw + l * nb + k * P + p]
        for q in range(Q):
            T[l, q] = theta[q]
            if hierarchical:
                T[l, q] += st * params[o_traw + l * Q + q]
    ll, dB, dT, bad = _loop_kernel(x, z, group, log_y, B, T, ref, True)
    if bad >= 0:
        return lp, grad, bad
    for i in range(ll.size):
        lp += ll[i]
    d_sb = 0.0
    d_st = 0.0
    for l in range(L):
        for k in range(C1):
            for p in range(P):
                d = dB[l, k, p]
                grad[k * P + p] += d
                if hierarchical:
                    j = o_braw + l * nb + k * P + p
                    grad[j] += sb * d
                    d_sb += params[j] * d
        for q in range(Q):
            d = dT[l, q]
            grad[nb + q] += d
            if hierarchical:
                j = o_traw + l * Q + q
                grad[j] += st * d
                d_st += params[j] * d
    if hierarchical:
        grad[o_sig] += sb * d_sb
        grad[o_sig + 1] += st * d_st
    return lp, grad, -1


def log_posterior_and_gradient(spec, params, data, implementation="loop"):
    """Log-posterior and its gradient w.r.t. the flat parameter vector.

    ``implementation`` selects the compiled per-observation loop (``"loop"``)
    or numpy broadcasting over all observations (``"vectorized"``). Both
    compute the same quantities.
    """
    params = np.asarray(params, dtype=float)
    if params.shape != (spec.layout.size,):
        raise ValueError(f"expected {spec.layout.size} parameters, got shape {params.shape}")
    if data.n:
        data.check_against(spec)
    if implementation == "loop":
        lp, grad, bad = _posterior_kernel(
            params, data.x, data.z, data.group, data.log_y, spec.L, spec.reference,
            spec.hierarchical, spec.prior_scale_beta, spec.prior_scale_theta, spec.hyper_scale,
        )
        _raise_bad(bad)
        if not math.isfinite(lp):
            raise NonFiniteError("non-finite log-posterior")
    elif implementation == "vectorized":
        lp = log_prior(spec, params)
        grad = _prior_gradient(spec, params)
        if data.n:
            with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
                ll, dB, dT = _loglik_grad_vectorized(spec, params, data)
            if not np.all(np.isfinite(ll)):
                i = _first_bad(ll)
                raise NonFiniteError(f"non-finite log-likelihood at observation {i}", i)
            lp += float(ll.sum())
            grad += _chain_to_params(spec, params, dB, dT)
    else:
        raise ValueError(f"implementation must be one of {IMPLEMENTATIONS}")
    if not np.all(np.isfinite(grad)):
        j = _first_bad(grad)
        name = spec.layout.names[j]
        raise NonFiniteError(f"non-finite gradient for {name}", parameter=name)
    return lp, grad


def gradient(spec, params, data, implementation="loop"):
    """Analytic gradient of :func:`log_posterior`."""
    return log_posterior_and_gradient(spec, params, data, implementation)[1]


def mean_and_precision(spec, params, x, z, group):
    """Mean compositions ``(n, C)`` and precisions ``(n,)`` for design rows."""
    B, T = spec.layout.group_effects(params)
    eta_free = np.einsum("np,ncp->nc", x, B[group], optimize=False)
    eta = _full_eta(spec, eta_free)
    log_phi = np.einsum("nq,nq->n", z, T[group])
    with np.errstate(over="ignore", under="ignore"):
        mu, phi, _ = _alpha(eta, log_phi)
    return mu, phi


def predict(spec, draws, new_x, new_z, groups, rng):
    """Posterior predictive compositions.

    Parameters
    ----------
    draws : ndarray, shape (S, dim)
        Flat unconstrained parameter draws, one per row.
    new_x, new_z : ndarray
        Design matrices for the ``n`` prediction rows.
    groups : ndarray of int, shape (n,)
        0-based group codes.
    rng : numpy.random.Generator

    Returns
    -------
    predictive : ndarray, shape (S, n, C)
        One Dirichlet draw per posterior draw and row.
    mean_mu : ndarray, shape (n, C)
        Posterior mean of the mean composition.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] == 0:
        raise ValueError("no posterior draws")
    if draws.shape[1] != spec.layout.size:
        raise ValueError(f"draws have {draws.shape[1]} columns, the model has {spec.layout.size}")
    n = len(groups)
    new_x = check_design(new_x, n, "new_x")
    new_z = check_design(new_z, n, "new_z")
    if new_x.shape[1] != spec.P or new_z.shape[1] != spec.Q:
        raise ValueError(
            f"design has P={new_x.shape[1]}, Q={new_z.shape[1]}; the model expects P={spec.P}, Q={spec.Q}"
        )
    groups = np.asarray(groups, dtype=int)
    if n and (groups.min() < 0 or groups.max() >= spec.L):
        raise ValueError(f"group codes must lie in 0..{spec.L - 1}")
    S = draws.shape[0]
    alphas = np.empty((S, n, spec.C))
    mean_mu = np.zeros((n, spec.C))
    for s in range(S):
        mu, phi = mean_and_precision(spec, draws[s], new_x, new_z, groups)
        alphas[s] = mu * phi[:, None]
        mean_mu += mu
    mean_mu /= S
    pred = _rvs(alphas.reshape(S * n, spec.C), rng).reshape(S, n, spec.C)
    return pred, mean_mu


SUMMARY_QUANTILES = (0.025, 0.05, 0.95, 0.975)


def summarize_predictive(pred):
    """Componentwise quantiles and mean of predictive draws ``(S, n, C)``.

    Returns a dict with keys ``q2.5``, ``q5``, ``mean``, ``q95``, ``q97.5``,
    each of shape ``(n, C)``. Quantiles interpolate linearly between order
    statistics.
    """
    q = np.quantile(pred, SUMMARY_QUANTILES, axis=0)
    return {
        "q2.5": q[0],
        "q5": q[1],
        "mean": pred.mean(axis=0),
        "q95": q[2],
        "q97.5": q[3],
    }
