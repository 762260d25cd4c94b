import math

import numpy as np
import pytest

from codareg import simulation
from codareg.model import ModelSpec, mean_and_precision
from codareg.sampler import SamplerConfig
from codareg.simulation import (
    ScenarioSpec,
    SimulationError,
    boosted_alpha,
    regression_truth,
    run_entropy_sweep,
    run_reference_illustration,
    run_regression_sim,
    shape_table_rows,
    simulate_table,
)


def test_generator_matches_mean_link_at_large_n():
    spec = ModelSpec(C=3, P=2, Q=1, L=2, reference=2)
    rng = np.random.default_rng(0)
    params = spec.layout.pack(
        beta=np.array([[0.5, 0.3], [1.0, -0.4]]),
        theta=np.array([math.log(13.0)]),
        beta_raw=rng.normal(size=(2, 2, 2)),
        theta_raw=rng.normal(size=(2, 1)),
        log_sigma_beta=math.log(0.3),
        log_sigma_theta=math.log(0.2),
    )
    N = 5000
    for l in range(2):
        x = np.tile([1.0, 0.7], (N, 1))
        z = np.ones((N, 1))
        g = np.full(N, l)
        table = simulate_table(spec, params, x, z, g, rng)
        mu, phi = mean_and_precision(spec, params, x[:1], z[:1], g[:1])
        se = np.sqrt(mu[0] * (1 - mu[0]) / (phi[0] + 1) / N)
        assert np.all(np.abs(table.y.mean(axis=0) - mu[0]) <= 3 * se)


def test_regression_truth_layout():
    spec, truth = regression_truth(13.0)
    assert (spec.C, spec.P, spec.Q, spec.L, spec.reference) == (3, 1, 1, 4, 2)
    np.testing.assert_array_equal(truth["beta"][:, 0], [2.0, 3.0])
    assert truth["theta"][0] == pytest.approx(math.log(13.0))
    np.testing.assert_allclose(truth["group_beta"][1, :, 0], [2.003, 3.003])
    np.testing.assert_allclose(truth["group_theta"][:, 0], math.log(13.0) + np.array([0.002, 0.003, -0.002, -0.003]))


def test_boosted_alpha_ranges():
    rng = np.random.default_rng(1)
    draws = np.array([boosted_alpha(7, 2, rng) for _ in range(2000)])
    others = np.delete(draws, 2, axis=1)
    assert others.min() >= 1.1 and others.max() <= 1.9
    assert draws[:, 2].mean() == pytest.approx(1.5 + 4.0, abs=0.1)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="nonsense"),
        dict(kind="regression-sim", replicates=0),
        dict(kind="regression-sim", phi=0.0),
        dict(kind="regression-sim", C=4),
        dict(kind="regression-sim", L=5),
        dict(kind="reference-illustration", C=7, N=5),
    ],
)
def test_scenario_validation(kwargs):
    with pytest.raises(ValueError):
        ScenarioSpec(**kwargs)


def test_scenario_constructors():
    ref = ScenarioSpec.reference_illustration()
    assert (ref.kind, ref.C, ref.N, ref.replicates) == ("reference-illustration", 7, 2000, 20)
    reg = ScenarioSpec.regression(5, 10, seed=3)
    assert (reg.kind, reg.C, reg.L, reg.N, reg.phi, reg.seed) == ("regression-sim", 3, 4, 10, 5, 3)
    assert reg.to_dict()["phi"] == 5


def test_entropy_sweep_peaks_at_uniform():
    rows = run_entropy_sweep()
    for C in range(3, 14):
        curve = [r for r in rows if r["C"] == C]
        peak = [r for r in curve if r["is_max"]]
        assert len(peak) == 1 and peak[0]["phi"] == C
        assert peak[0]["entropy"] == pytest.approx(-math.lgamma(C), abs=1e-12)
        h = np.array([r["entropy"] for r in curve])
        k = int(np.argmax(h))
        assert np.all(np.diff(h[: k + 1]) > 0) and np.all(np.diff(h[k:]) < 0)
    c3 = next(r for r in rows if r["C"] == 3 and r["phi"] == 3.0)
    assert c3["entropy"] == pytest.approx(-math.log(2), abs=1e-12)
    with pytest.raises(ValueError):
        run_entropy_sweep(phi_grid=[])


def test_reference_illustration_small_run():
    spec = ScenarioSpec.reference_illustration(replicates=4, N=2000, seed=5)
    rows = run_reference_illustration(spec)
    assert len(rows) == 7
    for row in rows:
        s = row["boosted"]
        assert row["selection_rate"] == 1.0
        assert row["alpha_hat"][s] == max(row["alpha_hat"])
        assert row["kurtosis"][s] == min(row["kurtosis"])
        assert row["replicates"] == 4 and row["failures"] == 0
    again = run_reference_illustration(spec)
    assert again == rows
    flat = shape_table_rows(rows)
    assert len(flat) == 49
    assert sum(r["boosted"] for r in flat) == 7


def test_reference_illustration_fixed_truth():
    alphas = np.full((3, 3), 1.5) + 3.0 * np.eye(3)
    spec = ScenarioSpec.reference_illustration(replicates=3, N=3000, C=3, seed=2)
    rows = run_reference_illustration(spec, alphas=alphas)
    for row in rows:
        np.testing.assert_array_equal(row["alpha_true"], alphas[row["boosted"]])
        np.testing.assert_allclose(row["alpha_hat"], alphas[row["boosted"]], rtol=0.15)
    with pytest.raises(ValueError):
        run_reference_illustration(spec, alphas=np.ones((2, 3)))
    with pytest.raises(ValueError):
        run_reference_illustration(ScenarioSpec.regression(13, 10))


TINY = SamplerConfig(chains=2, warmup=150, samples=100, seed=0)


def test_tiny_regression_sim_is_deterministic():
    spec = ScenarioSpec.regression(13, 10, replicates=2, seed=7)
    a = run_regression_sim(spec, sampler=TINY)
    b = run_regression_sim(spec, sampler=TINY)
    assert a == b
    s = a["summary"]
    assert s["replicates"] == 2 and s["failures"] == 0
    assert 0 <= s["param_coverage_mean"] <= 1
    assert s["param_coverage_mean"] == pytest.approx(s["param_coverage_pooled"])
    assert s["aitchison"] > 0 and s["kl"] > 0
    rep = a["replicates"][0]
    assert len(rep["param_inside"]) == 15
    assert rep["param_rmse_percent"] == pytest.approx(100 * rep["param_rmse"])


def test_regression_sim_fails_when_too_many_replicates_fail(monkeypatch):
    def broken(spec_s, sampler, replicate, implementation):
        return {"replicate": replicate, "ok": False, "error": "boom"}

    monkeypatch.setattr(simulation, "_regression_replicate", broken)
    with pytest.raises(SimulationError) as info:
        run_regression_sim(ScenarioSpec.regression(13, 10, replicates=3), sampler=TINY)
    assert len(info.value.report["failures"]) == 3
