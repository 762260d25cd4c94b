import math

import numpy as np
import pytest
from scipy import stats
from scipy.optimize import minimize, root

from codareg.dirichlet import DirichletParams, log_density
from codareg.model import (
    CoDaTable,
    ModelSpec,
    NonFiniteError,
    gradient,
    log_likelihood,
    log_posterior,
    log_posterior_and_gradient,
    log_prior,
    mean_and_precision,
    mean_link,
    pointwise_log_likelihood,
    precision_link,
    predict,
    summarize_predictive,
)

from conftest import random_table


def _random_params(spec, rng, scale=0.5):
    return rng.normal(scale=scale, size=spec.layout.size)


def test_mean_link_zero_parameters_is_uniform():
    spec = ModelSpec(C=4, P=2, Q=1, L=1, reference=0)
    mu = mean_link(spec, np.zeros(spec.layout.size), np.array([1.0, 0.7]))
    np.testing.assert_allclose(mu, 0.25, rtol=0, atol=1e-15)


def test_mean_link_intercepts_example():
    spec = ModelSpec(C=3, P=1, Q=1, L=1, reference=2)
    params = spec.layout.pack(beta=np.array([[2.0], [3.0]]), theta=np.zeros(1))
    mu = mean_link(spec, params, np.array([1.0]))
    e = np.exp([2.0, 3.0, 0.0])
    np.testing.assert_allclose(mu, e / e.sum(), rtol=1e-14)
    # the rounded figures quoted for this case are good to about 1e-5
    np.testing.assert_allclose(mu, [0.25949, 0.70538, 0.03513], atol=2e-5)
    assert mu.sum() == pytest.approx(1.0, abs=1e-15)


def test_mean_link_reference_component_changes_result():
    a = ModelSpec(C=3, P=1, Q=1, L=1, reference=2)
    b = ModelSpec(C=3, P=1, Q=1, L=1, reference=0)
    beta = np.array([[2.0], [3.0]])
    mu_a = mean_link(a, a.layout.pack(beta=beta, theta=np.zeros(1)), np.ones(1))
    mu_b = mean_link(b, b.layout.pack(beta=beta, theta=np.zeros(1)), np.ones(1))
    assert not np.allclose(mu_a, mu_b)


def test_mean_link_large_predictor_warns_but_stays_finite():
    spec = ModelSpec(C=3, P=1, Q=1, L=1, reference=2)
    params = spec.layout.pack(beta=np.array([[800.0], [0.0]]), theta=np.zeros(1))
    with pytest.warns(RuntimeWarning):
        mu = mean_link(spec, params, np.ones(1))
    assert np.all(np.isfinite(mu))
    assert mu.sum() == pytest.approx(1.0)


def test_precision_link_examples():
    spec = ModelSpec(C=3, P=1, Q=1, L=1, reference=2)
    zero = np.zeros(spec.layout.size)
    assert precision_link(spec, zero, np.ones(1)) == 1.0
    params = spec.layout.pack(beta=np.zeros((2, 1)), theta=np.array([math.log(13.0)]))
    assert precision_link(spec, params, np.ones(1)) == pytest.approx(13.0, rel=1e-14)


def test_precision_link_group_deviation():
    spec = ModelSpec(C=3, P=1, Q=1, L=2, reference=2)
    params = spec.layout.pack(
        beta=np.zeros((2, 1)),
        theta=np.array([math.log(5.0)]),
        beta_raw=np.zeros((2, 2, 1)),
        theta_raw=np.array([[0.003], [0.0]]),
        log_sigma_theta=0.0,
    )
    expected = 5.0 * math.exp(0.003)
    assert precision_link(spec, params, np.ones(1), group=0) == pytest.approx(expected, rel=1e-13)
    assert precision_link(spec, params, np.ones(1), group=1) == pytest.approx(5.0, rel=1e-13)


def test_precision_overflow_names_observation():
    spec = ModelSpec(C=3, P=1, Q=2, L=1, reference=2)
    y = np.full((3, 3), 1 / 3)
    z = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    data = CoDaTable(y, np.ones((3, 1)), z, np.zeros(3, dtype=int), 1)
    params = spec.layout.pack(beta=np.zeros((2, 1)), theta=np.array([0.0, 800.0]))
    for impl in ("loop", "vectorized"):
        with pytest.raises(NonFiniteError) as info:
            log_posterior_and_gradient(spec, params, data, impl)
        assert info.value.index == 2
    with pytest.raises(NonFiniteError):
        precision_link(spec, params, z[2])


def test_log_likelihood_uniform_beta_example():
    # C = 2, all-zero parameters: Dirichlet(1/2, 1/2) at (1/2, 1/2)
    spec = ModelSpec(C=2, P=1, Q=1, L=1, reference=1)
    data = CoDaTable(np.array([[0.5, 0.5]]), np.ones((1, 1)), np.ones((1, 1)), np.zeros(1, dtype=int), 1)
    ll = log_likelihood(spec, np.zeros(spec.layout.size), data)
    assert ll == pytest.approx(-math.log(math.pi) + math.log(2.0), abs=1e-12)
    assert ll == pytest.approx(-0.4516, abs=5e-5)


def test_two_components_match_beta_density():
    rng = np.random.default_rng(1)
    spec = ModelSpec(C=2, P=2, Q=1, L=1, reference=1)
    data = random_table(spec, 200, rng)
    params = _random_params(spec, rng)
    mu, phi = _mu_phi(spec, params, data)
    a, b = mu[:, 0] * phi, mu[:, 1] * phi
    expected = stats.beta.logpdf(data.y[:, 0], a, b)
    for impl in ("loop", "vectorized"):
        got = pointwise_log_likelihood(spec, params, data, impl)
        np.testing.assert_allclose(got, expected, rtol=1e-10, atol=1e-10)


def _mu_phi(spec, params, data):
    return mean_and_precision(spec, params, data.x, data.z, data.group)


def test_pointwise_matches_dirichlet_log_density(small_problem):
    spec, data = small_problem
    params = _random_params(spec, np.random.default_rng(3))
    mu, phi = _mu_phi(spec, params, data)
    expected = [log_density(DirichletParams(m * p), y) for m, p, y in zip(mu, phi, data.y)]
    np.testing.assert_allclose(pointwise_log_likelihood(spec, params, data), expected, rtol=1e-12)


def test_duplicated_dataset_doubles_log_likelihood(small_problem):
    spec, data = small_problem
    params = _random_params(spec, np.random.default_rng(4))
    single = log_likelihood(spec, params, data)
    double = log_likelihood(spec, params, data.concat(data))
    assert double == pytest.approx(2.0 * single, rel=1e-12)


def test_permuting_observations_leaves_posterior_unchanged(small_problem):
    spec, data = small_problem
    rng = np.random.default_rng(5)
    params = _random_params(spec, rng)
    perm = rng.permutation(data.n)
    for impl in ("loop", "vectorized"):
        a = log_posterior(spec, params, data, impl)
        b = log_posterior(spec, params, data.take(perm), impl)
        assert a == pytest.approx(b, rel=1e-12)


def _reference_prior(spec, params):
    u = spec.layout.unpack(params)
    lp = stats.norm.logpdf(u["beta"], scale=spec.prior_scale_beta).sum()
    lp += stats.norm.logpdf(u["theta"], scale=spec.prior_scale_theta).sum()
    if spec.hierarchical:
        lp += stats.norm.logpdf(u["beta_raw"]).sum() + stats.norm.logpdf(u["theta_raw"]).sum()
        for name in ("log_sigma_beta", "log_sigma_theta"):
            s = math.exp(u[name])
            lp += stats.halfcauchy.logpdf(s, scale=spec.hyper_scale) + u[name]
    return lp


@pytest.mark.parametrize("L", [1, 3])
def test_empty_table_gives_prior_only(L):
    spec = ModelSpec(C=3, P=2, Q=2, L=L, reference=0)
    empty = CoDaTable.empty(spec)
    rng = np.random.default_rng(6)
    for _ in range(50):
        params = _random_params(spec, rng, scale=1.5)
        expected = _reference_prior(spec, params)
        for impl in ("loop", "vectorized"):
            assert log_posterior(spec, params, empty, impl) == pytest.approx(expected, rel=1e-12, abs=1e-12)
        assert log_prior(spec, params) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_posterior_minus_prior_is_likelihood(small_problem):
    spec, data = small_problem
    params = _random_params(spec, np.random.default_rng(7))
    lp = log_posterior(spec, params, data)
    assert lp - log_prior(spec, params) == pytest.approx(log_likelihood(spec, params, data), rel=1e-12)


def _fd_gradient(f, params):
    g = np.empty_like(params)
    for j in range(params.size):
        h = 1e-6 * (1.0 + abs(params[j]))
        up, down = params.copy(), params.copy()
        up[j] += h
        down[j] -= h
        g[j] = (f(up) - f(down)) / (2.0 * h)
    return g


@pytest.mark.parametrize("impl", ["loop", "vectorized"])
def test_gradient_matches_finite_differences(small_problem, impl):
    spec, data = small_problem
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        params = _random_params(spec, rng)
        analytic = gradient(spec, params, data, impl)
        numeric = _fd_gradient(lambda q: log_posterior(spec, q, data, impl), params)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        worst = max(worst, float(err.max()))
    assert worst <= 1e-5


def test_loop_and_vectorized_agree(small_problem):
    spec, data = small_problem
    rng = np.random.default_rng(9)
    for _ in range(20):
        params = _random_params(spec, rng, scale=1.0)
        lp_a, g_a = log_posterior_and_gradient(spec, params, data, "loop")
        lp_b, g_b = log_posterior_and_gradient(spec, params, data, "vectorized")
        assert lp_a == pytest.approx(lp_b, rel=1e-10, abs=1e-10)
        np.testing.assert_allclose(g_a, g_b, rtol=1e-10, atol=1e-10)


def test_gradient_zero_at_maximizer():
    rng = np.random.default_rng(10)
    spec = ModelSpec(C=3, P=2, Q=1, L=1, reference=2)
    data = random_table(spec, 60, rng)
    res = minimize(
        lambda q: -log_posterior(spec, q, data),
        np.zeros(spec.layout.size),
        jac=lambda q: -gradient(spec, q, data),
        method="BFGS",
        options={"gtol": 1e-9, "maxiter": 1000},
    )
    # polish the stationary point by solving grad = 0 directly
    sol = root(lambda q: gradient(spec, q, data), res.x, tol=1e-13)
    assert sol.success
    assert np.abs(gradient(spec, sol.x, data)).max() <= 1e-6
    assert log_posterior(spec, sol.x, data) >= -res.fun - 1e-9


def test_symmetric_data_gives_symmetric_gradient():
    rng = np.random.default_rng(11)
    spec = ModelSpec(C=3, P=1, Q=1, L=1, reference=2)
    y = rng.dirichlet([2.0, 2.0, 2.0], size=15)
    y = np.vstack([y, y[:, [1, 0, 2]]])
    data = CoDaTable(y, np.ones((30, 1)), np.ones((30, 1)), np.zeros(30, dtype=int), 1)
    g = gradient(spec, np.zeros(spec.layout.size), data)
    beta = spec.layout.unpack(g)["beta"]
    assert beta[0, 0] == pytest.approx(beta[1, 0], rel=1e-12, abs=1e-12)


def test_collapsed_dispersion_makes_groups_identical():
    spec = ModelSpec(C=3, P=2, Q=1, L=3, reference=1)
    rng = np.random.default_rng(12)
    u = spec.layout.unpack(_random_params(spec, rng, scale=1.0))
    params = spec.layout.pack(u["beta"], u["theta"], u["beta_raw"], u["theta_raw"], -60.0, -60.0)
    B, T = spec.layout.group_effects(params)
    for l in range(1, 3):
        np.testing.assert_allclose(B[l], B[0], atol=1e-20)
        np.testing.assert_allclose(T[l], T[0], atol=1e-20)


def test_shifting_all_coefficients_is_identifiable(small_problem):
    spec, data = small_problem
    params = np.zeros(spec.layout.size)
    shifted = params.copy()
    shifted[spec.layout.slices["beta"]] += 0.5
    assert log_posterior(spec, params, data) != pytest.approx(log_posterior(spec, shifted, data))


def test_single_group_has_no_hierarchical_parameters():
    spec = ModelSpec(C=4, P=2, Q=3, L=1, reference=0)
    assert not spec.hierarchical
    assert spec.layout.size == 3 * 2 + 3
    assert len(spec.layout.names) == spec.layout.size


def test_layout_round_trip():
    spec = ModelSpec(C=4, P=2, Q=2, L=3, reference=1)
    params = np.arange(spec.layout.size, dtype=float)
    u = spec.layout.unpack(params)
    again = spec.layout.pack(
        u["beta"], u["theta"], u["beta_raw"], u["theta_raw"], u["log_sigma_beta"], u["log_sigma_theta"]
    )
    np.testing.assert_array_equal(again, params)
    assert len(set(spec.layout.names)) == spec.layout.size


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(C=1, P=1, Q=1, L=1, reference=0),
        dict(C=3, P=0, Q=1, L=1, reference=0),
        dict(C=3, P=1, Q=1, L=0, reference=0),
        dict(C=3, P=1, Q=1, L=1, reference=3),
        dict(C=3, P=1, Q=1, L=1, reference=0, hyper_scale=0.0),
    ],
)
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        ModelSpec(**kwargs)


def test_data_dimension_mismatch(small_problem):
    spec, data = small_problem
    other = ModelSpec(C=4, P=2, Q=1, L=2, reference=0)
    with pytest.raises(ValueError):
        log_posterior(other, np.zeros(other.layout.size), data)
    with pytest.raises(ValueError):
        log_posterior_and_gradient(spec, np.zeros(spec.layout.size + 1), data)


def test_predict_shapes_and_simplex(small_problem):
    spec, data = small_problem
    rng = np.random.default_rng(13)
    draws = rng.normal(scale=0.3, size=(40, spec.layout.size))
    pred, mean_mu = predict(spec, draws, data.x[:5], data.z[:5], data.group[:5], rng)
    assert pred.shape == (40, 5, 3)
    assert mean_mu.shape == (5, 3)
    np.testing.assert_allclose(pred.sum(axis=2), 1.0, atol=1e-12)
    assert np.all(pred > 0)
    summary = summarize_predictive(pred)
    assert set(summary) == {"q2.5", "q5", "mean", "q95", "q97.5"}
    assert np.all(summary["q2.5"] <= summary["q97.5"])


def test_predict_zero_draw_is_centred():
    spec = ModelSpec(C=3, P=1, Q=1, L=1, reference=2)
    rng = np.random.default_rng(14)
    draws = np.zeros((20000, spec.layout.size))
    draws[:, spec.layout.slices["theta"]] = math.log(10.0)
    pred, mean_mu = predict(spec, draws, np.ones((1, 1)), np.ones((1, 1)), np.zeros(1, dtype=int), rng)
    np.testing.assert_allclose(mean_mu, 1 / 3, atol=1e-15)
    se = math.sqrt((1 / 3) * (2 / 3) / 11 / 20000)
    np.testing.assert_allclose(pred.mean(axis=0)[0], 1 / 3, atol=4 * se)


def test_predict_rejects_bad_inputs(small_problem):
    spec, _ = small_problem
    rng = np.random.default_rng(15)
    draws = np.zeros((3, spec.layout.size))
    with pytest.raises(ValueError):
        predict(spec, draws, np.ones((2, 3)), np.ones((2, 1)), np.zeros(2, dtype=int), rng)
    with pytest.raises(ValueError):
        predict(spec, draws, np.ones((2, 2)), np.ones((2, 1)), np.array([0, 5]), rng)
    with pytest.raises(ValueError):
        predict(spec, np.zeros((0, spec.layout.size)), np.ones((2, 2)), np.ones((2, 1)), np.zeros(2, dtype=int), rng)
