import numpy as np
import pytest
from scipy.optimize import minimize, root

from codareg.model import CoDaTable, ModelSpec, gradient, log_posterior


def random_table(spec, n, rng):
    """Random interior compositions with random designs and groups."""
    y = rng.dirichlet(np.full(spec.C, 2.0), size=n)
    x = np.hstack([np.ones((n, 1)), rng.normal(size=(n, spec.P - 1))])
    z = np.hstack([np.ones((n, 1)), rng.normal(scale=0.5, size=(n, spec.Q - 1))])
    group = np.arange(n) % spec.L
    return CoDaTable(y, x, z, group, spec.L)


@pytest.fixture
def small_problem():
    spec = ModelSpec(C=3, P=2, Q=1, L=2, reference=2)
    data = random_table(spec, 20, np.random.default_rng(42))
    return spec, data


def posterior_mode(spec, data):
    res = minimize(
        lambda q: -log_posterior(spec, q, data),
        np.zeros(spec.layout.size),
        jac=lambda q: -gradient(spec, q, data),
        method="BFGS",
    )
    return root(lambda q: gradient(spec, q, data), res.x, tol=1e-12).x


def laplace_draws(spec, data, n_draws, rng):
    """Normal approximation around the posterior mode (stand-in for MCMC draws)."""
    mode = posterior_mode(spec, data)
    d = mode.size
    H = np.empty((d, d))
    for j in range(d):
        h = 1e-5 * (1.0 + abs(mode[j]))
        e = np.zeros(d)
        e[j] = h
        H[j] = (gradient(spec, mode + e, data) - gradient(spec, mode - e, data)) / (2 * h)
    cov = np.linalg.inv(-(H + H.T) / 2)
    return rng.multivariate_normal(mode, cov, size=n_draws)
