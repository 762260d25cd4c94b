"""Command-line interface: ``codareg <subcommand> [options]``.

Exit codes: 0 success, 1 unexpected error, 2 bad input (ingestion,
configuration, mismatched covariates), 3 sampler or simulation failure,
4 convergence failure.
"""

import argparse
import csv
import json
import math
from pathlib import Path
import sys
import warnings

import numpy as np

from . import __version__
from .diagnostics import InsufficientDrawsError
from .estimators import HierarchicalDirichletRegressor
from .io import IngestionError, RunConfig, RunManifest, ingest_csv, load_config
from .model import ModelSpec, NonFiniteError, predict as model_predict, summarize_predictive
from .reference import MLEConvergenceError, fit_dirichlet_mle, select_reference, shape_metrics
from .sampler import PosteriorDraws, SamplerError
from .simulation import (
    REGRESSION_COLUMNS,
    ScenarioSpec,
    SimulationError,
    run_entropy_sweep,
    run_reference_illustration,
    run_regression_sim,
    shape_table_rows,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INPUT = 2
EXIT_SAMPLER = 3
EXIT_CONVERGENCE = 4

RHAT_MAX = 1.05
DIVERGENCE_MAX = 0.01


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ----------------------------------------------------------------- helpers


def _write_csv(path, rows, columns):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _table_text(rows, columns, formats=None):
    """Aligned plain-text table."""
    formats = formats or {}
    cells = [[str(c) for c in columns]]
    for row in rows:
        line = []
        for c in columns:
            v = row[c]
            if isinstance(v, (float, np.floating)):
                line.append("nan" if not math.isfinite(v) else format(v, formats.get(c, ".4f")))
            else:
                line.append(str(v))
        cells.append(line)
    widths = [max(len(r[j]) for r in cells) for j in range(len(columns))]
    out = []
    for i, r in enumerate(cells):
        parts = [r[0].ljust(widths[0])] + [v.rjust(w) for v, w in zip(r[1:], widths[1:])]
        out.append("  ".join(parts).rstrip())
    return "\n".join(out) + "\n"


def _config(args):
    try:
        config = load_config(args.config) if args.config else RunConfig()
    except IngestionError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    overrides = {"seed": args.seed, "threads": args.threads}
    for key in ("chains", "warmup", "samples", "reference", "implementation"):
        overrides[key] = getattr(args, key, None)
    if getattr(args, "components", None):
        overrides["components"] = [c.strip() for c in args.components.split(",") if c.strip()]
    try:
        return config.with_overrides(**overrides)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_INPUT) from exc


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _ingest(path, config, **kwargs):
    try:
        return ingest_csv(path, config, **kwargs)
    except IngestionError as exc:
        raise CliError(f"ingestion failed: {exc}", EXIT_INPUT) from exc


def _dry_run(command, config, extra):
    print(json.dumps(_jsonable({"command": command, "config": config.to_dict(), **extra}), indent=2, sort_keys=True))
    return EXIT_OK


def _resolve_reference(config, table, components):
    if config.reference == "auto":
        try:
            report = shape_metrics(fit_dirichlet_mle(table.y), components)
        except MLEConvergenceError as exc:
            raise CliError(f"reference selection failed: {exc}", EXIT_CONVERGENCE) from exc
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            index = select_reference(report)
        return index, "auto", report, [str(w.message) for w in caught]
    if config.reference in components:
        return components.index(config.reference), "name", None, []
    index = int(config.reference)
    if index >= len(components):
        raise CliError(f"reference index {index} out of range for {len(components)} components", EXIT_INPUT)
    return index, "index", None, []


def _spec_from(resolved, config):
    return ModelSpec(
        C=len(resolved["components"]),
        P=resolved["P"],
        Q=resolved["Q"],
        L=len(resolved["levels"]),
        reference=resolved["reference_index"],
        prior_scale_beta=config.prior_scale_beta,
        prior_scale_theta=config.prior_scale_theta,
        hyper_scale=config.hyper_scale,
    )


def _load_run(run_dir):
    run_dir = Path(run_dir)
    try:
        manifest = RunManifest.read(run_dir)
        config = RunConfig.from_mapping(manifest.config)
        draws = PosteriorDraws.from_csv(run_dir / "draws.csv", run_dir / "sampler_stats.json")
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load fit outputs from {run_dir}: {exc}", EXIT_INPUT) from exc
    if manifest.command != "fit":
        raise CliError(f"{run_dir} holds a {manifest.command!r} run, not a fit", EXIT_INPUT)
    spec = _spec_from(manifest.resolved, config)
    if draws.values.shape[2] != spec.layout.size:
        raise CliError("draws do not match the model recorded in the manifest", EXIT_INPUT)
    return manifest, config, spec, draws


def _estimator(config, spec, draws, levels, data=None):
    return HierarchicalDirichletRegressor.from_draws(
        spec,
        draws,
        levels,
        data=data,
        random_state=config.seed,
        implementation=config.implementation,
        zero_adjust=config.zero_adjust,
    )


REPORT_COLUMNS = ("set", "aDist", "Cover95", "rMSE%", "KL", "DIC", "p_D", "WAIC", "p_WAIC", "lppd")


def _report_row(label, report):
    return {
        "set": label,
        "aDist": report.aitchison_mean,
        "Cover95": report.coverage_95,
        "rMSE%": report.rmse_percent,
        "KL": report.kl_mean,
        "DIC": report.dic,
        "p_D": report.p_d,
        "WAIC": report.waic,
        "p_WAIC": report.p_waic,
        "lppd": report.lppd,
    }


_REPORT_FORMATS = {"aDist": ".3f", "Cover95": ".3f", "rMSE%": ".3f", "KL": ".3f", "DIC": ".2f", "p_D": ".2f", "WAIC": ".2f", "p_WAIC": ".2f", "lppd": ".2f"}


# ---------------------------------------------------------------- commands


def cmd_select_reference(args):
    config = _config(args)
    table, components = _ingest(args.input, config)
    if args.dry_run:
        return _dry_run("select-reference", config, {"input": args.input, "rows": table.n, "components": components})
    out = _out_dir(args)
    manifest = RunManifest("select-reference", config.to_dict(), config.seed, version=__version__)
    manifest.add_input(args.input)
    index, mode, report, notes = _resolve_reference(config.with_overrides(reference="auto"), table, components)
    result = report.to_dict()
    result["selected_index"] = index
    result["selected_name"] = components[index]
    result["warnings"] = notes
    _write_json(out / "reference.json", result)
    _write_csv(out / "shape_metrics.csv", result["components"], ("name", "alpha_hat", "skewness", "kurtosis"))
    manifest.outputs = ["reference.json", "shape_metrics.csv"]
    manifest.resolved = {"reference_index": index, "reference_name": components[index]}
    manifest.write(out)
    print(json.dumps({"selected_index": index, "selected_name": components[index]}))
    return EXIT_OK


def cmd_fit(args):
    config = _config(args)
    table, components = _ingest(args.input, config)
    resolved = {
        "components": components,
        "levels": table.levels,
        "P": table.x.shape[1],
        "Q": table.z.shape[1],
        "n_rows": table.n,
    }
    if args.dry_run:
        return _dry_run("fit", config, {"input": args.input, "resolved": resolved})
    if config.chains < 2 or config.samples < 4:
        raise CliError(
            f"cannot assess convergence with {config.chains} chain(s) of {config.samples} draw(s); "
            "R-hat needs at least 2 chains of 4 draws",
            EXIT_CONVERGENCE,
        )
    out = _out_dir(args)
    manifest = RunManifest("fit", config.to_dict(), config.seed, version=__version__)
    manifest.add_input(args.input)
    index, mode, report, notes = _resolve_reference(config, table, components)
    resolved.update(reference_index=index, reference_name=components[index], reference_mode=mode)
    if report is not None:
        resolved["shape_report"] = report.to_dict()
    resolved["warnings"] = notes
    manifest.resolved = resolved

    est = HierarchicalDirichletRegressor(
        reference=index,
        prior_scale_beta=config.prior_scale_beta,
        prior_scale_theta=config.prior_scale_theta,
        hyper_scale=config.hyper_scale,
        chains=config.chains,
        warmup=config.warmup,
        samples=config.samples,
        target_accept=config.target_accept,
        max_tree_depth=config.max_tree_depth,
        init_jitter=config.init_jitter,
        random_state=config.seed,
        n_jobs=config.threads,
        implementation=config.implementation,
        zero_adjust=config.zero_adjust,
    )
    try:
        est.sampler_config()
    except ValueError as exc:
        raise CliError(f"invalid sampler settings: {exc}", EXIT_INPUT) from exc
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            est.fit(
                table.x[:, 1:] if table.x.shape[1] > 1 else None,
                table.y,
                groups=table.group,
                Z=table.z[:, 1:] if table.z.shape[1] > 1 else None,
                component_names=components,
            )
    except (SamplerError, NonFiniteError, FloatingPointError) as exc:
        manifest.exit_code = EXIT_SAMPLER
        manifest.write(out)
        raise CliError(f"sampler failed: {exc}", EXIT_SAMPLER) from exc
    est.levels_ = table.levels
    draws = est.draws_
    draws.to_csv(out / "draws.csv", out / "sampler_stats.json")

    summary = est.convergence_summary()
    rhats = np.array([r["rhat"] for r in summary])
    max_rhat = float(np.max(rhats)) if rhats.size and np.all(np.isfinite(rhats)) else math.nan
    n_div = int(draws.divergent.sum())
    div_rate = draws.divergence_rate
    converged = math.isfinite(max_rhat) and max_rhat <= RHAT_MAX and div_rate <= DIVERGENCE_MAX

    try:
        fit_report = est.diagnose().to_dict()
    except (ValueError, FloatingPointError) as exc:
        fit_report = {"error": str(exc)}
    convergence = {
        "max_rhat": max_rhat,
        "min_ess": float(np.nanmin([r["ess"] for r in summary])) if summary else math.nan,
        "divergences": n_div,
        "divergences_per_chain": draws.divergent.sum(axis=1).tolist(),
        "divergence_rate": div_rate,
        "rhat_threshold": RHAT_MAX,
        "divergence_threshold": DIVERGENCE_MAX,
        "converged": converged,
    }
    _write_json(out / "report.json", {"fit": fit_report, "convergence": convergence, "parameters": summary})
    text = [
        f"reference component: {components[index]} (index {index}, {mode})",
        f"chains: {draws.n_chains}  draws per chain: {draws.n_draws}  divergences: {n_div} ({div_rate:.4f})",
        f"max R-hat: {max_rhat:.4f}  converged: {'yes' if converged else 'no'}",
        "",
        _table_text(summary, ("name", "mean", "sd", "q2.5", "median", "q97.5", "rhat", "ess"), {"ess": ".0f"}),
    ]
    (out / "summary.txt").write_text("\n".join(text), encoding="utf-8")
    manifest.outputs = ["draws.csv", "sampler_stats.json", "report.json", "summary.txt"]
    manifest.exit_code = EXIT_OK if converged else EXIT_CONVERGENCE
    manifest.write(out)
    print("\n".join(text[:3]))
    if not converged:
        print(
            f"convergence check failed: need every R-hat <= {RHAT_MAX} and divergence rate <= {DIVERGENCE_MAX}",
            file=sys.stderr,
        )
        return EXIT_CONVERGENCE
    return EXIT_OK


def cmd_predict(args):
    manifest, config, spec, draws = _load_run(args.run)
    resolved = manifest.resolved
    data_config = config.with_overrides(components=resolved["components"])
    table, _ = _ingest(args.input, data_config, levels=resolved["levels"], require_compositions=False)
    if table.x.shape[1] != spec.P or table.z.shape[1] != spec.Q:
        raise CliError("covariate columns do not match the fitted model", EXIT_INPUT)
    seed = config.seed if args.seed is None else args.seed
    if args.dry_run:
        return _dry_run("predict", config, {"run": args.run, "input": args.input, "rows": table.n, "seed": seed})
    out = _out_dir(args)
    run_manifest = RunManifest("predict", {**config.to_dict(), "run": str(args.run)}, seed, version=__version__)
    run_manifest.add_input(args.input)
    run_manifest.add_input(Path(args.run) / "draws.csv")
    rng = np.random.default_rng(seed)
    pred, mean_mu = model_predict(spec, draws.flat(), table.x, table.z, table.group, rng)
    q = summarize_predictive(pred)
    rows = []
    for i in range(table.n):
        for c, name in enumerate(resolved["components"]):
            rows.append(
                {
                    "row": i,
                    "group": table.levels[table.group[i]],
                    "component": name,
                    "mean_mu": mean_mu[i, c],
                    "pred_mean": q["mean"][i, c],
                    "q2.5": q["q2.5"][i, c],
                    "q5": q["q5"][i, c],
                    "q95": q["q95"][i, c],
                    "q97.5": q["q97.5"][i, c],
                }
            )
    _write_csv(out / "predictions.csv", rows, ("row", "group", "component", "mean_mu", "pred_mean", "q2.5", "q5", "q95", "q97.5"))
    run_manifest.outputs = ["predictions.csv"]
    run_manifest.write(out)
    print(f"wrote {len(rows)} prediction rows to {out / 'predictions.csv'}")
    return EXIT_OK


def cmd_diagnose(args):
    manifest, config, spec, draws = _load_run(args.run)
    resolved = manifest.resolved
    data_config = config.with_overrides(components=resolved["components"])
    train_path = next(iter(manifest.inputs))
    train, _ = _ingest(train_path, data_config, levels=resolved["levels"])
    held = None
    if args.input:
        held, _ = _ingest(args.input, data_config, levels=resolved["levels"])
    seed = config.seed if args.seed is None else args.seed
    if args.dry_run:
        return _dry_run("diagnose", config, {"run": args.run, "train": train_path, "input": args.input})
    out = _out_dir(args)
    run_manifest = RunManifest("diagnose", {**config.to_dict(), "run": str(args.run)}, seed, version=__version__)
    run_manifest.add_input(train_path)
    run_manifest.add_input(Path(args.run) / "draws.csv")
    est = _estimator(config, spec, draws, resolved["levels"], data=train)
    reports = {}
    rows = []
    try:
        fit = est.diagnose(random_state=seed)
        reports["fit"] = fit.to_dict()
        rows.append(_report_row("fit", fit))
        if held is not None:
            run_manifest.add_input(args.input)
            pred = est.diagnose(
                held.x[:, 1:] if held.x.shape[1] > 1 else None,
                held.y,
                groups=np.array(resolved["levels"], dtype=object)[held.group],
                Z=held.z[:, 1:] if held.z.shape[1] > 1 else None,
                random_state=seed,
            )
            reports["prediction"] = pred.to_dict()
            rows.append(_report_row("prediction", pred))
    except (ValueError, FloatingPointError) as exc:
        raise CliError(f"diagnostics failed: {exc}", EXIT_SAMPLER) from exc
    text = _table_text(rows, REPORT_COLUMNS, _REPORT_FORMATS)
    _write_json(out / "report.json", reports)
    (out / "report.txt").write_text(text, encoding="utf-8")
    run_manifest.outputs = ["report.json", "report.txt"]
    run_manifest.write(out)
    print(text, end="")
    return EXIT_OK


def cmd_simulate(args):
    seed = 0 if args.seed is None else args.seed
    threads = 1 if args.threads is None else args.threads
    replicates = args.replicates if args.replicates is not None else (100 if args.full else 20)
    scenario = args.scenario
    if scenario == "reference":
        specs = [ScenarioSpec.reference_illustration(replicates=replicates, N=args.n or 2000, seed=seed)]
    elif scenario == "entropy":
        specs = []
    else:
        specs = [
            ScenarioSpec.regression(phi, n, replicates=replicates, seed=seed)
            for phi in (args.phi or [13.0])
            for n in (args.n_list or [30])
        ]
    config = {
        "scenario": scenario,
        "specs": [s.to_dict() for s in specs],
        "threads": threads,
        "full": bool(args.full),
    }
    if scenario == "entropy":
        config["C_range"] = [3, 13]
    if args.dry_run:
        print(json.dumps(config, indent=2, sort_keys=True))
        return EXIT_OK
    out = _out_dir(args)
    manifest = RunManifest("simulate", config, seed, version=__version__)
    try:
        if scenario == "reference":
            rows = run_reference_illustration(specs[0], n_jobs=threads)
            _write_csv(out / "shape_table.csv", shape_table_rows(rows), ("scenario", "component", "boosted", "alpha_hat", "skewness", "kurtosis", "phi_hat", "entropy", "selection_rate"))
            _write_csv(out / "selection.csv", rows, ("scenario", "boosted", "selection_rate", "phi_hat", "entropy", "replicates", "failures"))
            manifest.outputs = ["shape_table.csv", "selection.csv"]
            print(_table_text(rows, ("scenario", "boosted", "selection_rate", "phi_hat", "entropy")), end="")
        elif scenario == "entropy":
            rows = run_entropy_sweep()
            _write_csv(out / "entropy.csv", rows, ("C", "phi", "entropy", "is_max"))
            manifest.outputs = ["entropy.csv"]
            print(_table_text([r for r in rows if r["is_max"]], ("C", "phi", "entropy")), end="")
        else:
            summaries = []
            replicate_rows = []
            for spec in specs:
                res = run_regression_sim(spec, n_jobs=threads)
                summaries.append(res["summary"])
                for r in res["replicates"]:
                    replicate_rows.append(
                        {
                            "phi": spec.phi,
                            "N": spec.N,
                            "replicate": r["replicate"],
                            "ok": r["ok"],
                            **{k: r.get(k, math.nan) for k in _REPLICATE_COLUMNS},
                        }
                    )
            _write_csv(out / "regression_table.csv", summaries, REGRESSION_COLUMNS)
            _write_csv(out / "replicates.csv", replicate_rows, ("phi", "N", "replicate", "ok") + _REPLICATE_COLUMNS)
            manifest.outputs = ["regression_table.csv", "replicates.csv"]
            print(_table_text(summaries, REGRESSION_COLUMNS), end="")
    except SimulationError as exc:
        manifest.exit_code = EXIT_SAMPLER
        manifest.resolved = {"failures": exc.report}
        manifest.write(out)
        raise CliError(f"simulation failed: {exc}", EXIT_SAMPLER) from exc
    manifest.write(out)
    return EXIT_OK


_REPLICATE_COLUMNS = (
    "param_coverage",
    "param_rmse",
    "param_rmse_percent",
    "aitchison",
    "pred_coverage",
    "pred_rmse_percent",
    "kl",
    "divergence_rate",
)


# ------------------------------------------------------------------ parser


def _common(parser):
    parser.add_argument("--config", help="key = value configuration file (or a run manifest)")
    parser.add_argument("--seed", type=int, default=None, help="random seed (overrides the configuration)")
    parser.add_argument("--out", default="codareg-run", help="output directory (default: codareg-run)")
    parser.add_argument("--threads", type=int, default=None, help="parallel chains or replicates")
    parser.add_argument("--dry-run", action="store_true", help="validate inputs, print the resolved configuration, stop")


def build_parser():
    parser = argparse.ArgumentParser(prog="codareg", description="Bayesian multi-group Dirichlet regression")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select-reference", help="fit a Dirichlet and recommend the reference component")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--components", help="comma-separated component columns")
    p.set_defaults(func=cmd_select_reference)

    p = sub.add_parser("fit", help="sample the posterior of the regression")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--components", help="comma-separated component columns")
    p.add_argument("--reference", help="'auto', 0-based index or component name")
    p.add_argument("--chains", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--implementation", choices=("loop", "vectorized"))
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior predictive compositions for new rows")
    _common(p)
    p.add_argument("--run", required=True, help="output directory of a fit")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("diagnose", help="fit and prediction metrics of a fitted run")
    _common(p)
    p.add_argument("--run", required=True, help="output directory of a fit")
    p.add_argument("--input", help="held-out CSV with compositions")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("simulate", help="run a simulation study")
    _common(p)
    p.add_argument("--scenario", choices=("reference", "entropy", "regression"), required=True)
    p.add_argument("--phi", type=float, nargs="+", help="true precision(s), regression only")
    p.add_argument("--n", type=int, default=None, help="observations per fit (reference: total, default 2000)")
    p.add_argument("--n-list", type=int, nargs="+", help="per-group sample sizes, regression only (default 30)")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--full", action="store_true", help="100 replicates instead of 20")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate" and args.scenario == "regression" and args.n is not None and not args.n_list:
        args.n_list = [args.n]
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InsufficientDrawsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
