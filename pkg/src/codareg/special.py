"""Log-gamma, digamma and trigamma for positive real arguments.

All three functions shift the argument upward with the exact recurrences

    lnG(x)   = lnG(x + n) - ln(x (x + 1) ... (x + n - 1))
    psi(x)   = psi(x + n) - sum_{k<n} 1 / (x + k)
    psi'(x)  = psi'(x + n) + sum_{k<n} 1 / (x + k)**2

until the argument reaches ``_SHIFT`` and then evaluate the Stirling /
de Moivre asymptotic series. With ``_SHIFT = 10`` the first omitted term of
every series is below 1e-16 relative.

The scalar kernels are compiled with numba so the likelihood loops can call
them; the ``_lgamma``/``_digamma``/``_trigamma`` ufuncs apply them to arrays
without validation. The public functions validate their input.
"""

import math

import numba
import numpy as np

__all__ = ["DomainError", "log_gamma", "digamma", "trigamma"]

_SHIFT = 10.0
_LOWEST = 1e-300
_HIGHEST = 1e300
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# Stirling series for lnG: B_{2k} / (2k (2k - 1)), k = 1..7
_LG = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
)
# psi(x) ~ ln x - 1/(2x) - sum B_{2k} / (2k x^{2k}), k = 1..7
_DG = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
# psi'(x) ~ 1/x + 1/(2x^2) + sum B_{2k} / x^{2k+1}, k = 1..8
_TG = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
)


class DomainError(ValueError):
    """Raised when a special function is evaluated outside (0, inf)."""


@numba.njit(cache=True, nogil=True)
def lgamma_scalar(x):
    prod = 1.0
    while x < _SHIFT:
        prod *= x
        x += 1.0
    r = 1.0 / x
    t = r * r
    s = _LG[6]
    s = s * t + _LG[5]
    s = s * t + _LG[4]
    s = s * t + _LG[3]
    s = s * t + _LG[2]
    s = s * t + _LG[1]
    s = s * t + _LG[0]
    return (x - 0.5) * math.log(x) - x + _HALF_LOG_2PI + r * s - math.log(prod)


@numba.njit(cache=True, nogil=True)
def digamma_scalar(x):
    acc = 0.0
    while x < _SHIFT:
        acc += 1.0 / x
        x += 1.0
    t = 1.0 / (x * x)
    s = _DG[6]
    s = s * t + _DG[5]
    s = s * t + _DG[4]
    s = s * t + _DG[3]
    s = s * t + _DG[2]
    s = s * t + _DG[1]
    s = s * t + _DG[0]
    return math.log(x) - 0.5 / x - t * s - acc


@numba.njit(cache=True, nogil=True)
def trigamma_scalar(x):
    acc = 0.0
    while x < _SHIFT:
        acc += 1.0 / (x * x)
        x += 1.0
    r = 1.0 / x
    t = r * r
    s = _TG[7]
    s = s * t + _TG[6]
    s = s * t + _TG[5]
    s = s * t + _TG[4]
    s = s * t + _TG[3]
    s = s * t + _TG[2]
    s = s * t + _TG[1]
    s = s * t + _TG[0]
    return r + 0.5 * t + r * t * s + acc


_lgamma = numba.vectorize(["float64(float64)"], cache=True)(lgamma_scalar.py_func)
_digamma = numba.vectorize(["float64(float64)"], cache=True)(digamma_scalar.py_func)
_trigamma = numba.vectorize(["float64(float64)"], cache=True)(trigamma_scalar.py_func)


def _check(x, name):
    arr = np.asarray(x, dtype=float)
    bad = ~np.isfinite(arr) | (arr < _LOWEST) | (arr > _HIGHEST)
    if np.any(bad):
        first = arr[bad].flat[0]
        raise DomainError(f"{name} is defined here for 1e-300 <= x <= 1e300, got {first!r}")
    return arr


def _scalar_or_array(value, like):
    if np.ndim(like) == 0:
        return float(value)
    return value


def log_gamma(x):
    """Natural log of the gamma function.

    Parameters
    ----------
    x : float or array_like
        Arguments in ``[1e-300, 1e300]``.

    Returns
    -------
    float or ndarray
        ``ln Gamma(x)``, same shape as ``x``.

    Raises
    ------
    DomainError
        If any element is non-positive, non-finite or out of range.
    """
    arr = _check(x, "log_gamma")
    return _scalar_or_array(_lgamma(arr), x)


def digamma(x):
    """Derivative of :func:`log_gamma`."""
    arr = _check(x, "digamma")
    return _scalar_or_array(_digamma(arr), x)


def trigamma(x):
    """Second derivative of :func:`log_gamma`; strictly positive."""
    arr = _check(x, "trigamma")
    return _scalar_or_array(_trigamma(arr), x)
