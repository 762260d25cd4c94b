import numpy as np
import pytest

from codareg.diagnostics import InsufficientDrawsError, effective_sample_size, rhat, summary_table
from codareg.sampler import PosteriorDraws


def _ar1(rho, n_chains, n, rng):
    x = np.empty((n_chains, n))
    x[:, 0] = rng.normal(size=n_chains)
    noise = rng.normal(scale=np.sqrt(1 - rho**2), size=(n_chains, n))
    for t in range(1, n):
        x[:, t] = rho * x[:, t - 1] + noise[:, t]
    return x


def test_rhat_iid_chains():
    x = np.random.default_rng(0).normal(size=(4, 1000))
    assert 0.99 <= rhat(x) <= 1.02


def test_rhat_disjoint_chains():
    rng = np.random.default_rng(1)
    x = np.vstack([rng.normal(0.0, 1.0, 500), rng.normal(10.0, 1.0, 500)])
    assert rhat(x) > 3


def test_rhat_affine_invariance():
    x = _ar1(0.5, 3, 400, np.random.default_rng(2))
    assert rhat(-3.5 * x + 17.0) == pytest.approx(rhat(x), abs=1e-10)


def test_rhat_detects_drift_within_chain():
    # splitting catches a trend that whole-chain R-hat would miss
    x = np.tile(np.linspace(0.0, 10.0, 400), (2, 1)) + np.random.default_rng(3).normal(size=(2, 400))
    assert rhat(x) > 1.5


def test_rhat_constant_chains():
    assert rhat(np.zeros((2, 10))) == 1.0
    assert rhat(np.vstack([np.zeros(10), np.ones(10)])) == np.inf


def test_rhat_insufficient():
    with pytest.raises(InsufficientDrawsError):
        rhat(np.zeros((1, 100)))
    with pytest.raises(InsufficientDrawsError):
        rhat(np.zeros((3, 3)))
    with pytest.raises(InsufficientDrawsError):
        effective_sample_size(np.zeros((3, 3)))


def test_ess_iid():
    x = np.random.default_rng(4).normal(size=(4, 1000))
    M = x.size
    assert 0.8 * M <= effective_sample_size(x) <= 1.2 * M


def test_ess_ar1():
    rho = 0.9
    x = _ar1(rho, 4, 5000, np.random.default_rng(5))
    expected = x.size * (1 - rho) / (1 + rho)
    assert effective_sample_size(x) == pytest.approx(expected, rel=0.3)


def test_ess_cap():
    # negative autocorrelation pushes the raw estimate above the draw count
    rng = np.random.default_rng(6)
    for rho in (-0.9, -0.5, 0.0):
        x = _ar1(rho, 4, 500, rng)
        assert effective_sample_size(x) <= 1.5 * x.size


def test_summary_table():
    rng = np.random.default_rng(7)
    values = rng.normal(size=(2, 50, 2))
    shape = (2, 50)
    draws = PosteriorDraws(
        names=["a", "b"],
        values=values,
        log_density=np.zeros(shape),
        accept_stat=np.zeros(shape),
        step_size=np.zeros(shape),
        tree_depth=np.zeros(shape, dtype=int),
        n_leapfrog=np.zeros(shape, dtype=int),
        divergent=np.zeros(shape, dtype=bool),
        energy=np.zeros(shape),
    )
    rows = summary_table(draws)
    assert [r["name"] for r in rows] == ["a", "b"]
    assert rows[1]["mean"] == pytest.approx(values[:, :, 1].mean())
    assert rows[0]["rhat"] == pytest.approx(rhat(values[:, :, 0]))
    assert rows[0]["q2.5"] <= rows[0]["median"] <= rows[0]["q97.5"]
    assert rhat(draws, "b") == pytest.approx(rows[1]["rhat"])
