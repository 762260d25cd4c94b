"""Seeded simulation studies.

Three experiments:

* reference illustration: one boosted component per scenario, fitted with
  the Dirichlet MLE, checking that the reference rule picks it;
* entropy sweep: entropy of symmetric Dirichlets against precision;
* regression simulation: multi-group data from known coefficients, fitted
  with NUTS and scored on a held-out batch.

Every replicate seeds its own generator from ``(seed, scenario, replicate)``
so results do not depend on execution order or worker count.
"""

from dataclasses import asdict, dataclass
import math
import warnings

import numpy as np
from joblib import Parallel, delayed

from . import metrics
from .dirichlet import DirichletParams, _rvs, entropy, sample, symmetric
from .estimators import HierarchicalDirichletRegressor
from .model import CoDaTable, ModelSpec, NonFiniteError, mean_and_precision, predict as model_predict
from .reference import MLEConvergenceError, fit_dirichlet_mle, shape_metrics
from .sampler import SamplerConfig, SamplerError

__all__ = [
    "ScenarioSpec",
    "SimulationError",
    "simulate_table",
    "regression_truth",
    "boosted_alpha",
    "run_reference_illustration",
    "run_entropy_sweep",
    "run_regression_sim",
    "KINDS",
]

KINDS = ("reference-illustration", "entropy-sweep", "regression-sim")

GROUP_DEVIATIONS = (0.002, 0.003, -0.002, -0.003)
GLOBAL_BETA = (2.0, 3.0, 0.0)


class SimulationError(RuntimeError):
    """Too many replicates failed; ``report`` lists the failures."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class ScenarioSpec:
    """Configuration of one simulation study.

    Parameters
    ----------
    kind : {"reference-illustration", "entropy-sweep", "regression-sim"}
    C : int
        Number of components (7 for the reference illustration, 3 for the
        regression simulation).
    L : int
        Number of groups (regression only).
    N : int
        Observations per fit: per group in the regression simulation, total
        in the reference illustration.
    phi : float
        True precision (regression only).
    replicates : int
    seed : int
    """

    kind: str
    C: int = 3
    L: int = 4
    N: int = 30
    phi: float = 13.0
    replicates: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.C < 2:
            raise ValueError("C must be at least 2")
        if self.kind == "reference-illustration" and self.N < self.C + 1:
            raise ValueError("the reference illustration needs N >= C + 1 observations")
        if self.kind == "regression-sim":
            if self.N < 1 or self.L < 1:
                raise ValueError("regression simulation needs N >= 1 and L >= 1")
            if not self.phi > 0:
                raise ValueError("phi must be positive")
            if self.C != len(GLOBAL_BETA):
                raise ValueError(f"regression simulation uses C = {len(GLOBAL_BETA)}")
            if self.L > len(GROUP_DEVIATIONS):
                raise ValueError(f"at most {len(GROUP_DEVIATIONS)} groups have listed deviations")

    @classmethod
    def reference_illustration(cls, replicates=20, N=2000, C=7, seed=0):
        return cls("reference-illustration", C=C, L=1, N=N, replicates=replicates, seed=seed)

    @classmethod
    def regression(cls, phi, N, replicates=20, seed=0, L=4):
        return cls("regression-sim", C=3, L=L, N=N, phi=phi, replicates=replicates, seed=seed)

    def to_dict(self):
        return asdict(self)


def _rng(seed, *keys):
    return np.random.default_rng([int(seed), *[int(k) for k in keys]])


def simulate_table(spec, params, x, z, groups, rng, levels=None):
    """Draw one composition per row from the regression model.

    Parameters
    ----------
    spec : ModelSpec
    params : ndarray
        Flat parameter vector in ``spec.layout`` order.
    x, z : ndarray
        Mean and precision designs.
    groups : ndarray of int
        0-based group codes.
    rng : numpy.random.Generator

    Returns
    -------
    CoDaTable
    """
    groups = np.asarray(groups, dtype=int)
    mu, phi = mean_and_precision(spec, params, x, z, groups)
    y = _rvs(mu * phi[:, None], rng)
    return CoDaTable.from_arrays(y, x, z, groups, spec.L, levels)


# ---------------------------------------------------------------- reference


def boosted_alpha(C, boosted, rng):
    """``U(1.1, 1.9)`` shapes with ``N(4, 1)`` added to component ``boosted``."""
    alpha = rng.uniform(1.1, 1.9, size=C)
    boost = rng.normal(4.0, 1.0)
    while alpha[boosted] + boost <= 0:
        boost = rng.normal(4.0, 1.0)
    alpha[boosted] += boost
    return alpha


def _reference_replicate(C, N, boosted, seed, scenario, replicate, alpha=None):
    rng = _rng(seed, scenario, replicate)
    if alpha is None:
        alpha = boosted_alpha(C, boosted, rng)
    y = sample(DirichletParams(alpha), N, rng)
    try:
        fitted = fit_dirichlet_mle(y)
    except MLEConvergenceError as exc:
        return {"ok": False, "error": str(exc)}
    report = shape_metrics(fitted)
    return {
        "ok": True,
        "alpha_true": alpha,
        "alpha_hat": report.alpha_hat,
        "skewness": report.skewness,
        "kurtosis": report.kurtosis,
        "phi_hat": report.phi_hat,
        "entropy": report.entropy_hat,
        "selected": report.reference,
    }


def run_reference_illustration(spec, n_jobs=1, max_failure_rate=0.05, alphas=None):
    """Boost one component per scenario and check the reference rule.

    By default every replicate of scenario ``s`` draws fresh shapes with
    :func:`boosted_alpha` (component ``s`` boosted), samples ``spec.N``
    compositions and fits the Dirichlet MLE. Passing ``alphas`` (one row of
    true shapes per scenario, row ``s`` boosting component ``s``) keeps the
    truth fixed and only resamples the data. Shape metrics are averaged over
    successful replicates.

    Returns
    -------
    list of dict
        One row per scenario with averaged ``alpha_hat``, ``skewness``,
        ``kurtosis`` (lists over components), ``phi_hat``, ``entropy``, the
        boosted index and ``selection_rate``.

    Raises
    ------
    SimulationError
        If more than ``max_failure_rate`` of the MLE fits in any scenario fail.
    """
    if spec.kind != "reference-illustration":
        raise ValueError(f"expected a reference-illustration scenario, got {spec.kind!r}")
    C, R = spec.C, spec.replicates
    if alphas is not None:
        alphas = np.asarray(alphas, dtype=float)
        if alphas.shape != (C, C):
            raise ValueError(f"alphas must have shape ({C}, {C}), got {alphas.shape}")
    jobs = [(s, r) for s in range(C) for r in range(R)]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_reference_replicate)(C, spec.N, s, spec.seed, s, r, None if alphas is None else alphas[s])
        for s, r in jobs
    )
    rows = []
    for s in range(C):
        reps = results[s * R : (s + 1) * R]
        good = [r for r in reps if r["ok"]]
        failures = [r["error"] for r in reps if not r["ok"]]
        if len(failures) > max_failure_rate * R:
            raise SimulationError(
                f"scenario {s + 1}: {len(failures)} of {R} Dirichlet fits failed",
                {"scenario": s, "failures": failures},
            )
        stack = lambda key: np.mean([r[key] for r in good], axis=0)
        rows.append(
            {
                "scenario": s + 1,
                "boosted": s,
                "alpha_true": stack("alpha_true").tolist(),
                "alpha_hat": stack("alpha_hat").tolist(),
                "skewness": stack("skewness").tolist(),
                "kurtosis": stack("kurtosis").tolist(),
                "phi_hat": float(stack("phi_hat")),
                "entropy": float(stack("entropy")),
                "selection_rate": float(np.mean([r["selected"] == s for r in good])),
                "replicates": len(good),
                "failures": len(failures),
            }
        )
    return rows


# ------------------------------------------------------------------ entropy


def default_phi_grid():
    return np.round(np.arange(0.5, 40.0 + 1e-9, 0.5), 10)


def run_entropy_sweep(C_range=range(3, 14), phi_grid=None):
    """Entropy of ``Dir(phi/C, ..., phi/C)`` over a precision grid.

    Returns
    -------
    list of dict
        Rows ``{"C", "phi", "entropy", "is_max"}``; ``is_max`` flags the
        grid point with the largest entropy for each ``C``.
    """
    grid = default_phi_grid() if phi_grid is None else np.asarray(phi_grid, dtype=float)
    C_values = list(C_range)
    if grid.size == 0 or not C_values:
        raise ValueError("entropy sweep needs a non-empty grid and C range")
    rows = []
    for C in C_values:
        h = np.array([entropy(symmetric(C, phi)) for phi in grid])
        best = int(np.argmax(h))
        for k, (phi, value) in enumerate(zip(grid, h)):
            rows.append({"C": int(C), "phi": float(phi), "entropy": float(value), "is_max": k == best})
    return rows


# --------------------------------------------------------------- regression


def regression_truth(phi, L=4, beta=GLOBAL_BETA, deviations=GROUP_DEVIATIONS, reference=2):
    """Model spec and true parameters for the multi-group simulation.

    Group ``l`` gets ``beta + d_l`` for every non-reference coefficient and
    ``ln(phi) + d_l`` for the log-precision intercept.

    Returns
    -------
    spec : ModelSpec
    truth : dict
        ``beta`` (C-1, 1), ``theta`` (1,), ``group_beta`` (L, C-1, 1) and
        ``group_theta`` (L, 1), all without the reference row.
    """
    C = len(beta)
    spec = ModelSpec(C=C, P=1, Q=1, L=L, reference=reference)
    free = np.delete(np.asarray(beta, dtype=float), reference)[:, None]
    theta = np.array([math.log(phi)])
    d = np.asarray(deviations[:L], dtype=float)
    group_beta = free[None, :, :] + d[:, None, None]
    group_theta = theta[None, :] + d[:, None]
    return spec, {"beta": free, "theta": theta, "group_beta": group_beta, "group_theta": group_theta}


def _truth_vector(truth):
    return np.concatenate(
        [truth["beta"].ravel(), truth["theta"], truth["group_beta"].ravel(), truth["group_theta"].ravel()]
    )


def _parameter_draws(spec, flat):
    """Globals followed by group-level effects for every draw, ``(S, J)``."""
    out = []
    for q in flat:
        u = spec.layout.unpack(q)
        B, T = spec.layout.group_effects(q)
        out.append(np.concatenate([u["beta"].ravel(), u["theta"], B.ravel(), T.ravel()]))
    return np.array(out)


def _sim_batch(spec, truth, N, rng):
    L = spec.L
    groups = np.repeat(np.arange(L), N)
    mu = np.empty((L, spec.C))
    phi = np.empty(L)
    for l in range(L):
        eta = np.insert(truth["group_beta"][l, :, 0], spec.reference, 0.0)
        e = np.exp(eta - eta.max())
        mu[l] = e / e.sum()
        phi[l] = math.exp(truth["group_theta"][l, 0])
    alpha = mu[groups] * phi[groups, None]
    return _rvs(alpha, rng), groups


def _regression_replicate(spec_s, sampler, replicate, implementation):
    rng = _rng(spec_s.seed, 0, replicate)
    spec, truth = regression_truth(spec_s.phi, spec_s.L)
    y_fit, g_fit = _sim_batch(spec, truth, spec_s.N, rng)
    y_new, g_new = _sim_batch(spec, truth, spec_s.N, rng)
    seed = int(rng.integers(2**31 - 1))
    est = HierarchicalDirichletRegressor(
        reference=spec.reference,
        chains=sampler.chains,
        warmup=sampler.warmup,
        samples=sampler.samples,
        target_accept=sampler.target_accept,
        max_tree_depth=sampler.max_tree_depth,
        init_jitter=sampler.init_jitter,
        random_state=seed,
        implementation=implementation,
    )
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            est.fit(None, y_fit, groups=g_fit)
    except (SamplerError, NonFiniteError, FloatingPointError) as exc:
        return {"replicate": replicate, "ok": False, "error": f"{type(exc).__name__}: {exc}"}

    flat = est.draws_.flat()
    pars = _parameter_draws(est.spec_, flat)
    true_vec = _truth_vector(truth)
    lo, hi = np.quantile(pars, [0.025, 0.975], axis=0)
    est_vec = pars.mean(axis=0)
    inside = (true_vec >= lo) & (true_vec <= hi)

    x_new = np.ones((y_new.shape[0], 1))
    pred, fitted = model_predict(est.spec_, flat, x_new, x_new, g_new, rng)
    report = metrics.prediction_report(y_new, fitted, pred)
    err2 = (est_vec - true_vec) ** 2
    n_global = truth["beta"].size + truth["theta"].size
    rmse = float(np.sqrt(err2.mean()))
    return {
        "replicate": replicate,
        "ok": True,
        "param_inside": inside.astype(int).tolist(),
        "param_coverage": float(inside.mean()),
        "param_rmse": rmse,
        "param_rmse_percent": metrics.rmse_percent(est_vec, true_vec),
        "param_rmse_global": float(np.sqrt(err2[:n_global].mean())),
        "param_rmse_group": float(np.sqrt(err2[n_global:].mean())),
        "aitchison": report.aitchison_mean,
        "kl": report.kl_mean,
        "pred_coverage": report.coverage_95,
        "pred_rmse_percent": report.rmse_percent,
        "divergence_rate": est.draws_.divergence_rate,
    }


def run_regression_sim(spec, sampler=None, n_jobs=1, implementation="loop", max_failure_rate=0.10):
    """Fit the hierarchical model to simulated multi-group data.

    Each replicate simulates ``spec.N`` observations per group for fitting
    and a second batch of the same size for prediction. Parameters are
    scored on the globals plus every group-level effect; predictions use
    the posterior mean of the mean composition as point prediction and one
    predictive draw per posterior draw for the intervals.

    Parameters
    ----------
    spec : ScenarioSpec
    sampler : SamplerConfig, optional
        Defaults to the light profile (4 chains of 1000 + 1000).
    n_jobs : int
        Replicates run in parallel with joblib.

    Returns
    -------
    dict
        ``"summary"`` (aggregates) and ``"replicates"`` (per-replicate rows).
        Parameter coverage is reported both as the mean of per-replicate
        coverages and pooled over all (replicate, parameter) pairs.

    Raises
    ------
    SimulationError
        If more than ``max_failure_rate`` of the replicates fail.
    """
    if spec.kind != "regression-sim":
        raise ValueError(f"expected a regression-sim scenario, got {spec.kind!r}")
    sampler = SamplerConfig.light() if sampler is None else sampler
    reps = Parallel(n_jobs=n_jobs)(
        delayed(_regression_replicate)(spec, sampler, r, implementation) for r in range(spec.replicates)
    )
    good = [r for r in reps if r["ok"]]
    failed = [r for r in reps if not r["ok"]]
    if len(failed) > max_failure_rate * spec.replicates:
        raise SimulationError(
            f"{len(failed)} of {spec.replicates} replicates failed",
            {"failures": [(r["replicate"], r["error"]) for r in failed]},
        )
    mean = lambda key: float(np.mean([r[key] for r in good]))
    pooled = np.concatenate([r["param_inside"] for r in good])
    summary = {
        "phi": spec.phi,
        "N": spec.N,
        "replicates": len(good),
        "failures": len(failed),
        "param_coverage_mean": mean("param_coverage"),
        "param_coverage_pooled": float(pooled.mean()),
        "param_rmse": mean("param_rmse"),
        "param_rmse_percent": mean("param_rmse_percent"),
        "param_rmse_global": mean("param_rmse_global"),
        "param_rmse_group": mean("param_rmse_group"),
        "aitchison": mean("aitchison"),
        "pred_coverage": mean("pred_coverage"),
        "pred_rmse_percent": mean("pred_rmse_percent"),
        "kl": mean("kl"),
        "divergence_rate": mean("divergence_rate"),
    }
    return {"summary": summary, "replicates": reps}


REGRESSION_COLUMNS = (
    "phi",
    "N",
    "param_coverage_mean",
    "param_coverage_pooled",
    "param_rmse",
    "param_rmse_percent",
    "aitchison",
    "pred_coverage",
    "pred_rmse_percent",
    "kl",
)


def shape_table_rows(rows):
    """Flatten reference-illustration rows into CSV records.

    One record per (scenario, component) with alpha, skewness and kurtosis,
    plus the scenario's precision, entropy and selection rate.
    """
    out = []
    for row in rows:
        for c, (a, s, k) in enumerate(zip(row["alpha_hat"], row["skewness"], row["kurtosis"])):
            out.append(
                {
                    "scenario": row["scenario"],
                    "component": c + 1,
                    "boosted": int(c == row["boosted"]),
                    "alpha_hat": a,
                    "skewness": s,
                    "kurtosis": k,
                    "phi_hat": row["phi_hat"],
                    "entropy": row["entropy"],
                    "selection_rate": row["selection_rate"],
                }
            )
    return out
