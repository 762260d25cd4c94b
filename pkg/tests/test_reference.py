import math
import warnings

import numpy as np
import pytest

from codareg.dirichlet import DirichletParams, gamma_components, sample
from codareg.reference import (
    MLEConvergenceError,
    _moment_init,
    dirichlet_loglik,
    fit_dirichlet_mle,
    select_reference,
    shape_metrics,
)
from codareg.special import _digamma

SCENARIO_1 = (4.59, 1.88, 1.87, 1.13, 1.26, 1.36, 1.65)


def _mean_grad(alpha, Y):
    return _digamma(alpha.sum()) - _digamma(alpha) + np.log(Y).mean(axis=0)


def test_mle_recovers_scenario_one():
    Y = sample(DirichletParams(SCENARIO_1), 5000, np.random.default_rng(0))
    fit = fit_dirichlet_mle(Y)
    assert np.all(np.abs(fit.alpha - SCENARIO_1) < 0.15)
    assert np.max(np.abs(_mean_grad(fit.alpha, Y))) <= 1e-8


def test_mle_uniform():
    Y = sample(DirichletParams([1, 1]), 5000, np.random.default_rng(1))
    assert np.all(np.abs(fit_dirichlet_mle(Y).alpha - 1.0) < 0.06)


def test_mle_dominates_truth_and_init():
    Y = sample(DirichletParams([2, 3, 5]), 200, np.random.default_rng(2))
    a = fit_dirichlet_mle(Y).alpha
    assert dirichlet_loglik(a, Y) >= dirichlet_loglik([2, 3, 5], Y)
    assert dirichlet_loglik(a, Y) >= dirichlet_loglik(_moment_init(Y), Y)


def test_mle_duplication_invariant():
    Y = sample(DirichletParams([0.7, 2.0, 4.0]), 300, np.random.default_rng(3))
    a1 = fit_dirichlet_mle(Y).alpha
    a2 = fit_dirichlet_mle(np.vstack([Y, Y])).alpha
    assert np.max(np.abs(a1 - a2)) < 1e-6


def test_mle_small_shapes():
    Y = sample(DirichletParams([0.3, 0.5, 0.2]), 3000, np.random.default_rng(4))
    a = fit_dirichlet_mle(Y).alpha
    assert np.all(np.abs(a / np.array([0.3, 0.5, 0.2]) - 1) < 0.1)


def test_mle_needs_enough_rows():
    with pytest.raises(ValueError):
        fit_dirichlet_mle([[0.2, 0.3, 0.5], [0.3, 0.3, 0.4], [0.1, 0.1, 0.8]])


def test_mle_non_convergence_reports_state():
    Y = sample(DirichletParams([2, 3, 5]), 100, np.random.default_rng(5))
    with pytest.raises(MLEConvergenceError) as info:
        fit_dirichlet_mle(Y, max_iter=1, tol=1e-300)
    assert info.value.alpha.shape == (3,)
    assert info.value.grad_norm > 0


@pytest.mark.parametrize(
    "alpha, skew, kurt",
    # 3 + 6/5.27 = 4.13852, so four decimals give 4.1385
    [(4.59, 0.9335, 4.3072), (5.27, 0.8712, 4.1385), (4.0, 1.0, 4.5)],
)
def test_shape_metric_examples(alpha, skew, kurt):
    r = shape_metrics(DirichletParams([alpha, 1.0]))
    assert r.kurtosis[0] == 3.0 + 6.0 / alpha
    assert r.skewness[0] == pytest.approx(skew, abs=5e-5)
    assert r.kurtosis[0] == pytest.approx(kurt, abs=5e-5)


def test_shape_metrics_monotone_and_reference():
    rng = np.random.default_rng(6)
    for _ in range(50):
        a = rng.uniform(0.1, 10, size=6)
        r = shape_metrics(DirichletParams(a))
        order = np.argsort(a)
        assert np.all(np.diff(r.skewness[order]) < 0)
        assert np.all(np.diff(r.kurtosis[order]) < 0)
        ref = select_reference(r)
        assert ref == np.argmax(a) == np.argmin(r.skewness) == np.argmin(r.kurtosis)


def test_boosted_scenario_three():
    row = (1.55, 1.44, 4.17, 1.81, 1.72, 1.32, 1.71)
    assert select_reference(shape_metrics(DirichletParams(row))) == 2


def test_tie_warns_and_picks_lowest():
    r = shape_metrics(DirichletParams([2, 2, 2]))
    assert r.tie
    with pytest.warns(RuntimeWarning):
        assert select_reference(r) == 0


def test_no_warning_without_tie():
    r = shape_metrics(DirichletParams([2, 3, 2]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert select_reference(r) == 1


def test_report_dict():
    r = shape_metrics(DirichletParams(SCENARIO_1), names=list("abcdefg"))
    d = r.to_dict()
    assert d["reference_name"] == "a"
    assert d["phi_hat"] == pytest.approx(sum(SCENARIO_1))
    assert d["entropy_hat"] == pytest.approx(-7.99, abs=0.05)
    assert len(d["components"]) == 7


def test_empirical_shape_matches_formula():
    p = DirichletParams(SCENARIO_1)
    rng = np.random.default_rng(8)
    w = gamma_components(p, sample(p, 10000, rng), rng)
    m = w.mean(axis=0)
    c = w - m
    skew = (c**3).mean(axis=0) / (c**2).mean(axis=0) ** 1.5
    formula = shape_metrics(p).skewness
    # Monte-Carlo sd of sample skewness is roughly sqrt(6 (1 + 1.5 * skew^2 ...)/n); use a loose 4-sigma band
    assert np.all(np.abs(skew - formula) < 4 * np.sqrt(6.0 * (1 + 3 * formula**2) / 10000))
