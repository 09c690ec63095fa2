"""Command-line front end: fit, simulate, and report subcommands.

``fit`` analyzes a unit-level CSV: it picks the balance-optimal scope
vector, estimates per-subgroup effects with bootstrap standard errors and
FDR-adjusted p-values, and writes delimited tables plus a manifest.
``simulate`` drives the replicated benchmark harness and writes the
per-subgroup and averaged performance tables.  ``report`` re-renders the
human-readable summary and the figures from a run directory's saved CSVs
without recomputing anything.

Every table written by a run carries the run id (a hash of the resolved
configuration) on a leading comment line, and reruns with the same
configuration produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .balance import smd_table
from .data import build_index
from .inference import EffectReport, report_effects
from .io import LoadedDataset, read_covariate_table, read_dataset
from .matching import match_all
from .pipeline import PipelineConfig, run_pipeline
from .propensity import score
from .simulation import (ExperimentConfig, PerformanceTable, ShiwLikeConfig,
                         Sim1Config, run_experiment)

PRESETS = {
    # desk-scale benchmark: minutes instead of days
    "sim1-small": dict(replicates=100, bootstrap=200, restarts=100,
                       subgroups=20, per_group=100),
    # the full published configuration (long-running)
    "sim1-paper": dict(replicates=1000, bootstrap=1000, restarts=1000,
                       subgroups=20, per_group=100),
    # the larger-but-smaller-subgroups variant
    "sim1-wide": dict(replicates=100, bootstrap=200, restarts=100,
                      subgroups=40, per_group=50),
}

_INT_KEYS = {"seed", "workers", "bootstrap", "restarts", "replicates",
             "subgroups", "per_group", "exhaustive_cap"}
_FLOAT_KEYS = {"noise_sd", "beta0"}
_BOOL_KEYS = {"no_outcome", "fixed_scope_bootstrap", "no_figures"}


def _parse_config_file(path: str) -> dict:
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key in _INT_KEYS:
            values[key] = int(value)
        elif key in _FLOAT_KEYS:
            values[key] = float(value)
        elif key in _BOOL_KEYS:
            values[key] = value.lower() in ("1", "true", "yes")
        else:
            values[key] = value
    return values


def _csv_list(text: Optional[str]) -> Optional[tuple[str, ...]]:
    if text is None:
        return None
    items = tuple(part.strip() for part in text.split(",") if part.strip())
    return items or None


def _float_list(text: Optional[str]) -> Optional[tuple[float, ...]]:
    items = _csv_list(text)
    return None if items is None else tuple(float(v) for v in items)


def _fmt(value) -> str:
    if isinstance(value, float):
        if np.isnan(value):
            return ""
        return repr(value)
    return str(value)


def _cell(value: float, width: int) -> str:
    return f"{value:>{width}.2f}" if np.isfinite(value) else f"{'--':>{width}}"


def run_id_for(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def write_table(path: Path, header: list[str], rows: list[list],
                run_id: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write(f"# run_id={run_id}\n")
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_table(path: Path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [dict(zip(header, row)) for row in reader]


def _write_manifest(out: Path, command: str, config_echo: dict, seed: int,
                    run_id: str, outputs: list[str], warnings: list[str],
                    extra: Optional[dict] = None) -> None:
    manifest = {
        "run_id": run_id,
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config_echo,
        "outputs": outputs,
        "warnings": warnings,
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


# ---------------------------------------------------------------- fit ----

def _effects_rows(report: EffectReport, loaded: LoadedDataset,
                  index) -> list[list]:
    rows = []
    for r in range(1, report.R + 1):
        i = r - 1
        rows.append([
            r, loaded.original_label(r),
            index.n_treated(r), index.n_control(r),
            float(report.tau_hat[i]), float(report.se_hat[i]),
            float(report.ci_low[i]), float(report.ci_high[i]),
            float(report.p_value[i]), float(report.p_adjusted[i]),
            int(report.bootstrap_undefined[i]),
        ])
    return rows


def _balance_rows(dataset, loaded: LoadedDataset, table) -> list[list]:
    rows = []
    for k, name in enumerate(dataset.covariate_names):
        rows.append(["overall", "overall", name,
                     float(table.overall_before[k]),
                     float(table.overall_after[k])])
    for r in range(1, dataset.R + 1):
        for k, name in enumerate(dataset.covariate_names):
            rows.append([r, loaded.original_label(r), name,
                         float(table.per_subgroup_before[r - 1, k]),
                         float(table.per_subgroup_after[r - 1, k])])
    return rows


def _fit_summary(report: Optional[EffectReport], scope, f_value, criterion,
                 balance_rows, warnings, run_id) -> str:
    lines = [f"run {run_id}", ""]
    lines.append(f"criterion: {criterion}")
    lines.append("scope vector: " + "".join(str(v) for v in scope))
    lines.append(f"subgroup-fit fraction: {scope.subgroup_fit_fraction():.2f}")
    if f_value is not None:
        lines.append(f"criterion value: {f_value:.6g}")
    lines.append("")
    if report is not None:
        lines.append(f"effects ({report.estimator} estimator, "
                     f"B={report.B} bootstrap replicates)")
        lines.append(f"{'group':>8} {'effect':>10} {'se':>8} "
                     f"{'95% CI':>19} {'p':>6} {'adj. p':>6}")
        for i in range(report.R):
            ci = (f"[{report.ci_low[i]:.2f}, {report.ci_high[i]:.2f}]"
                  if np.isfinite(report.ci_low[i]) else "[--, --]")
            lines.append(
                f"{i + 1:>8} {_cell(report.tau_hat[i], 10)} "
                f"{_cell(report.se_hat[i], 8)} {ci:>19} "
                f"{_cell(report.p_value[i], 6)} "
                f"{_cell(report.p_adjusted[i], 6)}")
        lines.append("")
    before = [abs(float(r[3])) for r in balance_rows if r[0] != "overall"]
    after = [abs(float(r[4])) for r in balance_rows
             if r[0] != "overall" and np.isfinite(float(r[4]))]
    if before and after:
        lines.append(f"mean |SMD| across (subgroup, covariate): "
                     f"{np.mean(before):.3f} before, {np.mean(after):.3f} after")
    if warnings:
        lines.append("")
        lines.append("warnings:")
        lines.extend(f"  - {w}" for w in warnings)
    return "\n".join(lines) + "\n"


def run_fit(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    covariates = _csv_list(args.covariates)
    terms = _csv_list(args.terms)
    loaded = read_dataset(args.input, covariates=covariates,
                          require_outcome=not args.no_outcome)
    dataset = loaded.dataset
    index = build_index(dataset)

    config = PipelineConfig(
        method="sbps", criterion=args.criterion,
        estimators=(args.estimator,), terms=terms,
        search=args.search, restarts=args.restarts,
        exhaustive_cap=args.exhaustive_cap,
        reoptimize_in_bootstrap=not args.fixed_scope_bootstrap)

    echo = {
        "input": str(args.input), "covariates": covariates, "terms": terms,
        "criterion": args.criterion, "estimator": args.estimator,
        "search": args.search, "restarts": args.restarts,
        "exhaustive_cap": args.exhaustive_cap, "bootstrap": args.bootstrap,
        "no_outcome": args.no_outcome,
        "fixed_scope_bootstrap": args.fixed_scope_bootstrap,
        "seed": args.seed, "version": __version__,
    }
    run_id = run_id_for(echo)
    warnings: list[str] = []
    outputs: list[str] = []

    if args.no_outcome or dataset.y is None:
        from ._rng import derive
        result = run_pipeline(dataset, config, search_seed=derive(args.seed, 0))
        report = None
        scope, criterion_value = result.scope, result.f_value
        warnings.extend(result.warnings)
    else:
        report = report_effects(dataset, config, B=args.bootstrap,
                                seed=args.seed, workers=args.workers)
        scope, criterion_value = report.scope, report.f_value
        result = run_pipeline(dataset, config, fixed_scope=scope)
        warnings.extend(report.warnings)

    # balance diagnostics under the chosen scope vector
    prop = score(dataset, result.cache, scope)
    matched = result.matched or match_all(dataset, prop, index=index)
    table = smd_table(dataset, matched)
    balance_rows = _balance_rows(dataset, loaded, table)
    write_table(out / "balance.csv",
                ["subgroup", "label", "covariate", "smd_before", "smd_after"],
                balance_rows, run_id)
    outputs.append("balance.csv")

    scope_rows = [[r, loaded.original_label(r), scope[r - 1]]
                  for r in range(1, dataset.R + 1)]
    write_table(out / "scope.csv", ["subgroup", "label", "scope"],
                scope_rows, run_id)
    outputs.append("scope.csv")

    if report is not None:
        write_table(
            out / "effects.csv",
            ["subgroup", "label", "n_treated", "n_control", "tau_hat",
             "se_hat", "ci_low", "ci_high", "p_value", "p_adjusted",
             "bootstrap_undefined"],
            _effects_rows(report, loaded, index), run_id)
        outputs.append("effects.csv")

    summary = _fit_summary(report, scope, criterion_value, args.criterion,
                           balance_rows, warnings, run_id)
    (out / "summary.txt").write_text(summary)
    outputs.append("summary.txt")

    _write_manifest(out, "fit", echo, args.seed, run_id, outputs, warnings,
                    extra={
                        "scope_vector": list(scope.values),
                        "criterion_value": criterion_value,
                        "label_mapping": loaded.label_mapping,
                    })
    print(summary, end="")
    return 0


# ----------------------------------------------------------- simulate ----

def _cells_rows(tables: list[PerformanceTable]) -> tuple[list[list], list[list]]:
    by_subgroup = []
    summary = []
    for table in tables:
        for cell in table.cells:
            for r in range(len(table.true_tau)):
                by_subgroup.append([
                    cell.model, cell.method, cell.estimator, r + 1,
                    float(table.true_tau[r]), float(cell.abs_bias[r]),
                    float(cell.rmse[r]), float(cell.coverage[r]),
                    int(cell.n_excluded[r]), int(cell.n_ci_excluded[r])])
            summary.append([
                cell.model, cell.method, cell.estimator,
                cell.abs_bias_avg, cell.rmse_avg, cell.coverage_avg,
                float(table.scope_fractions.get(cell.method, np.nan)),
                table.V, table.B])
    return by_subgroup, summary


def _simulate_summary(summary_rows, failures, run_id) -> str:
    lines = [f"run {run_id}", ""]
    lines.append(f"{'model':<13} {'method':<12} {'estimator':<9} "
                 f"{'B_bar':>7} {'E_bar':>7} {'C_bar':>6} {'frac S=2':>9}")
    for row in summary_rows:
        model, method, est, b, e, c, frac = row[:7]
        lines.append(f"{model:<13} {method:<12} {est:<9} "
                     f"{_cell(b, 7)} {_cell(e, 7)} {_cell(c, 6)} "
                     f"{_cell(frac, 9)}")
    if failures:
        lines.append("")
        lines.append(f"replicate failures: {len(failures)}")
        lines.extend(f"  - {f}" for f in failures[:10])
    return "\n".join(lines) + "\n"


def _build_experiment(args, model: str) -> ExperimentConfig:
    if args.dgp == "sim1":
        dgp = Sim1Config(R=args.subgroups, n_per_group=args.per_group)
    else:
        if not args.covariates_csv:
            raise SystemExit("--covariates-csv is required for --dgp shiw-like")
        x, g, names, _ = read_covariate_table(args.covariates_csv,
                                              covariates=_csv_list(args.covariates))
        delta = _float_list(args.delta)
        alpha = _float_list(args.alpha)
        beta = _float_list(args.beta)
        eta = _float_list(args.eta)
        if not all((delta, alpha, beta, eta)):
            raise SystemExit("--delta, --alpha, --beta and --eta are required "
                             "for --dgp shiw-like")
        dgp = ShiwLikeConfig(x=x, g=g, delta=delta, alpha=alpha,
                             beta0=args.beta0, beta=beta, eta=eta,
                             noise_sd=args.noise_sd,
                             covariate_names=tuple(names),
                             drop_covariate=args.drop_covariate)
    return ExperimentConfig(
        dgp=dgp, model=model,
        methods=_csv_list(args.methods) or ("traditional", "sbps-smd", "sbps-psw"),
        estimators=_csv_list(args.estimators) or ("direct", "psw"),
        V=args.replicates, B=args.bootstrap, restarts=args.restarts,
        seed=args.seed, workers=args.workers)


def run_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models = (("correct", "misspecified") if args.model == "both"
              else (args.model,))

    echo = {
        "preset": args.preset, "dgp": args.dgp, "model": args.model,
        "subgroups": args.subgroups, "per_group": args.per_group,
        "replicates": args.replicates, "bootstrap": args.bootstrap,
        "restarts": args.restarts,
        "methods": _csv_list(args.methods), "estimators": _csv_list(args.estimators),
        "covariates_csv": args.covariates_csv, "drop_covariate": args.drop_covariate,
        "seed": args.seed, "version": __version__,
    }
    run_id = run_id_for(echo)

    tables = []
    failures: list[str] = []
    for model in models:
        table = run_experiment(_build_experiment(args, model))
        tables.append(table)
        failures.extend(table.failures)

    by_subgroup, summary_rows = _cells_rows(tables)
    write_table(out / "results_by_subgroup.csv",
                ["model", "method", "estimator", "subgroup", "true_tau",
                 "abs_bias", "rmse", "coverage", "n_excluded", "n_ci_excluded"],
                by_subgroup, run_id)
    write_table(out / "results_summary.csv",
                ["model", "method", "estimator", "abs_bias_avg", "rmse_avg",
                 "coverage_avg", "scope_fraction", "replicates", "bootstrap"],
                summary_rows, run_id)

    summary = _simulate_summary(summary_rows, failures, run_id)
    (out / "summary.txt").write_text(summary)
    _write_manifest(out, "simulate", echo, args.seed, run_id,
                    ["results_by_subgroup.csv", "results_summary.csv",
                     "summary.txt"],
                    failures)
    print(summary, end="")
    return 0


# -------------------------------------------------------------- report ----

def run_report(args) -> int:
    from .figures import render_run_figures

    run_dir = Path(args.run)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise SystemExit(f"no manifest.json in {run_dir}")
    manifest = json.loads(manifest_path.read_text())
    run_id = manifest["run_id"]

    if manifest["command"] == "simulate":
        _, rows = read_table(run_dir / "results_summary.csv")
        summary_rows = [[row["model"], row["method"], row["estimator"],
                         float(row["abs_bias_avg"]), float(row["rmse_avg"]),
                         float(row["coverage_avg"] or "nan"),
                         float(row["scope_fraction"] or "nan")]
                        for row in rows]
        text = _simulate_summary(summary_rows, manifest.get("warnings", []),
                                 run_id)
    else:
        text = (run_dir / "summary.txt").read_text()

    (run_dir / "summary.txt").write_text(text)
    figures = render_run_figures(run_dir)
    print(text, end="")
    for fig in figures:
        print(f"wrote {fig}")
    return 0


# ---------------------------------------------------------------- main ----

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--config", help="key=value configuration file "
                        "(flags override file values)")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="sbps",
        description="Subgroup treatment effect estimation with "
                    "balance-optimized propensity scores")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    fit = sub.add_parser("fit", help="analyze a unit-level CSV")
    fit.add_argument("--input", required=True, help="CSV with z, g, y and "
                     "covariate columns")
    fit.add_argument("--covariates", help="comma-separated covariate columns "
                     "(default: all non-reserved columns)")
    fit.add_argument("--terms", help="comma-separated model terms, e.g. "
                     "'x1,x2,x1^2,x1*x4' (default: all covariates)")
    fit.add_argument("--criterion", choices=("smd", "psw"), default="smd")
    fit.add_argument("--estimator", choices=("direct", "psw"), default="direct")
    fit.add_argument("--search", choices=("auto", "exhaustive", "stochastic"),
                     default="auto")
    fit.add_argument("--restarts", type=int, default=1000,
                     help="stochastic search restarts (L)")
    fit.add_argument("--exhaustive-cap", type=int, default=15)
    fit.add_argument("--bootstrap", type=int, default=1000,
                     help="bootstrap replicates (B)")
    fit.add_argument("--no-outcome", action="store_true",
                     help="balance-only run; input needs no y column")
    fit.add_argument("--fixed-scope-bootstrap", action="store_true",
                     help="do not re-optimize the scope vector inside "
                     "bootstrap replicates (anti-conservative)")
    _add_common(fit)

    sim = sub.add_parser("simulate", help="run the benchmark harness")
    sim.add_argument("--preset", choices=sorted(PRESETS))
    sim.add_argument("--dgp", choices=("sim1", "shiw-like"), default="sim1")
    sim.add_argument("--subgroups", type=int, default=20)
    sim.add_argument("--per-group", type=int, default=100)
    sim.add_argument("--replicates", type=int, default=1000)
    sim.add_argument("--bootstrap", type=int, default=1000)
    sim.add_argument("--restarts", type=int, default=1000)
    sim.add_argument("--model", choices=("correct", "misspecified", "both"),
                     default="both")
    sim.add_argument("--methods",
                     help="comma-separated subset of traditional,sbps-smd,sbps-psw")
    sim.add_argument("--estimators", help="comma-separated subset of direct,psw")
    sim.add_argument("--covariates-csv", help="covariate table for --dgp shiw-like")
    sim.add_argument("--covariates", help="covariate columns for --dgp shiw-like")
    sim.add_argument("--delta", help="comma-separated per-subgroup intercepts")
    sim.add_argument("--alpha", help="comma-separated treatment coefficients")
    sim.add_argument("--beta0", type=float, default=0.0)
    sim.add_argument("--beta", help="comma-separated outcome coefficients")
    sim.add_argument("--eta", help="comma-separated true subgroup effects")
    sim.add_argument("--noise-sd", type=float, default=50.0)
    sim.add_argument("--drop-covariate",
                     help="covariate removed from the misspecified analysis model")
    _add_common(sim)

    rep = sub.add_parser("report", help="re-render summary and figures from "
                         "a saved run")
    rep.add_argument("--run", required=True, help="run output directory")
    return parser, {"fit": fit, "simulate": sim, "report": rep}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser, subparsers = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)

    # config-file values become parser defaults, so explicit flags override
    file_values: dict = {}
    if "--config" in argv:
        file_values = _parse_config_file(argv[argv.index("--config") + 1])
        for sub in subparsers.values():
            known = {a.dest for a in sub._actions}
            sub.set_defaults(**{k: v for k, v in file_values.items()
                                if k in known})
    args = parser.parse_args(argv)

    # presets fill in whatever neither a flag nor the config file set
    if getattr(args, "preset", None):
        for key, value in PRESETS[args.preset].items():
            if f"--{key.replace('_', '-')}" not in argv and key not in file_values:
                setattr(args, key, value)

    try:
        if args.subcommand == "fit":
            return run_fit(args)
        if args.subcommand == "simulate":
            return run_simulate(args)
        return run_report(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
