"""Split-chain R-hat and autocorrelation-based effective sample size."""

import numpy as np

__all__ = ["rhat", "effective_sample_size", "summary_table", "InsufficientDrawsError"]

ESS_CAP = 1.5


class InsufficientDrawsError(ValueError):
    """Too few chains or draws to compute a convergence statistic."""


def _as_chains(draws, param):
    if param is None:
        x = np.asarray(draws, dtype=float)
    else:
        x = np.asarray(draws.get(param), dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    return x


def _split(x):
    n = x.shape[1] // 2
    return np.vstack([x[:, :n], x[:, x.shape[1] - n :]])


def rhat(draws, param=None, min_chains=2):
    """Split potential scale reduction factor.

    Parameters
    ----------
    draws : PosteriorDraws or array_like, shape (chains, draws)
    param : str, optional
        Parameter name when ``draws`` is a :class:`PosteriorDraws`.

    Returns
    -------
    float
        ``sqrt(var_plus / W)`` over the half-chains. Constant input gives 1.0;
        constant chains at different levels give ``inf``.
    """
    x = _as_chains(draws, param)
    if x.shape[0] < min_chains or x.shape[1] < 4:
        raise InsufficientDrawsError(
            f"R-hat needs at least {min_chains} chains of 4 draws, got shape {x.shape}"
        )
    s = _split(x)
    n = s.shape[1]
    W = s.var(axis=1, ddof=1).mean()
    B_over_n = s.mean(axis=1).var(ddof=1)
    if W == 0:
        return 1.0 if B_over_n == 0 else np.inf
    var_plus = (n - 1) / n * W + B_over_n
    return float(np.sqrt(var_plus / W))


def _autocovariance(x):
    """Biased autocovariance of each row, via FFT."""
    n = x.shape[1]
    centered = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n]
    return acov / n


def effective_sample_size(draws, param=None):
    """Effective sample size over split chains.

    Autocorrelations are combined across chains, truncated at the first
    negative sum of an even/odd pair (Geyer's initial positive sequence) and
    made monotone. The estimate is capped at ``1.5 * total draws``.
    """
    x = _as_chains(draws, param)
    if x.shape[1] < 4:
        raise InsufficientDrawsError(f"ESS needs at least 4 draws per chain, got shape {x.shape}")
    s = _split(x)
    m, n = s.shape
    total = x.size
    acov = _autocovariance(s)
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += s.mean(axis=1).var(ddof=1)
    if var_plus == 0:
        return float(total)
    mean_acov = acov.mean(axis=0)
    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - mean_acov[1]) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0:
        rho_even = 1.0 - (mean_var - mean_acov[t + 1]) / var_plus
        rho_odd = 1.0 - (mean_var - mean_acov[t + 2]) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = (rho[t - 1] + rho[t]) / 2.0
        t += 2
    tau = -1.0 + 2.0 * rho[:max_t].sum() + rho[max_t + 1]
    tau = max(tau, 1.0 / ESS_CAP)
    return float(m * n / tau)


def summary_table(draws):
    """Per-parameter mean, sd, quantiles, R-hat and ESS as a list of dicts."""
    rows = []
    for j, name in enumerate(draws.names):
        x = draws.values[:, :, j]
        flat = x.ravel()
        q = np.quantile(flat, [0.025, 0.5, 0.975])
        try:
            r = rhat(x)
        except InsufficientDrawsError:
            r = np.nan
        try:
            ess = effective_sample_size(x)
        except InsufficientDrawsError:
            ess = np.nan
        rows.append(
            {
                "name": name,
                "mean": float(flat.mean()),
                "sd": float(flat.std(ddof=1)) if flat.size > 1 else 0.0,
                "q2.5": float(q[0]),
                "median": float(q[1]),
                "q97.5": float(q[2]),
                "rhat": float(r),
                "ess": float(ess),
            }
        )
    return rows
