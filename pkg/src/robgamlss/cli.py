"""Batch command-line front end: fit, predict, weights, tune, simulate.

Data comes in as RFC-4180 CSV with a header row; configurations and fit
artifacts are JSON; results go out as CSV.  Every command is deterministic
given --seed.  Exit codes: 0 success, 1 schema/configuration error, 2
non-convergence or runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from ._version import __version__
from .artifact import (
    ArtifactError,
    ConfigError,
    ModelConfig,
    SchemaError,
    artifact_from_fit,
    build_design,
    load_artifact,
    parse_model_config,
    predict_from_artifact,
    save_artifact,
)
from .families import get_family
from .robust import LogLogisticRho
from .simharness import StudyConfig, run_study
from .smoothsel import fit_model
from .tuning import MdpConfig, tune_c

__all__ = ["main", "entry_point"]


# ---------------------------------------------------------------------------
# CSV helpers


def read_csv_columns(path) -> dict[str, np.ndarray]:
    """Read a CSV with header into numeric columns (floats where possible)."""

    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        rows = list(reader)
    columns: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        raw = [row[j] if j < len(row) else "" for row in rows]
        try:
            columns[name] = np.array([float(v) for v in raw])
        except ValueError:
            columns[name] = np.array(raw, dtype=object)
    return columns


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _require_numeric(data, column, path):
    if column not in data:
        raise SchemaError(f"{path} is missing the required column {column!r}")
    col = data[column]
    if col.dtype == object:
        raise SchemaError(f"column {column!r} in {path} is not numeric")
    return np.asarray(col, dtype=float)


# ---------------------------------------------------------------------------
# fit / tune shared machinery


def _fit_from_config(config: ModelConfig, data, data_path, seed):
    y = _require_numeric(data, config.response, data_path)
    design = build_design(config, data)
    tune_trace = tuned_c = None
    if config.robust == "tune":
        result = tune_c(
            design,
            y,
            config.tune,
            integrator=config.integrator,
            select=config.select,
            seed=seed if seed is not None else config.seed,
            efs_options=config.efs,
            tr_options=config.optimizer,
        )
        fit = result.fit
        tune_trace = [[c, m] for c, m in result.trace]
        tuned_c = result.c
    else:
        fit = fit_model(
            design,
            y,
            c=config.robust,
            select=config.select,
            integrator=config.integrator,
            grid=config.grid,
            efs_options=config.efs,
            tr_options=config.optimizer,
        )
    return fit, y, tune_trace, tuned_c


def _fitted_rows(artifact, data, y, fit):
    pred = predict_from_artifact(artifact, data, cov=artifact.get("config", {}).get("cov", "posterior"))
    names = artifact["param_names"]
    covs = sorted({c for term in artifact["terms"] for c in term["covariates"]})
    header = ["row"] + covs
    for name in names:
        header.append(f"eta_{name}")
    header += names
    header.append("weight")
    for name in names:
        header += [f"eta_{name}_lo", f"eta_{name}_hi"]
    rows = []
    weights = np.asarray(artifact["weights"])
    for i in range(len(y)):
        row = [i] + [_fmt(float(data[c][i])) for c in covs]
        row += [_fmt(float(pred["eta"][i, d])) for d in range(len(names))]
        row += [_fmt(float(pred["params"][d][i])) for d in range(len(names))]
        row.append(_fmt(float(weights[i])))
        for d in range(len(names)):
            row += [_fmt(float(pred["lower"][i, d])), _fmt(float(pred["upper"][i, d]))]
        rows.append(row)
    return header, rows


def _print_fit_summary(fit, artifact, stream=sys.stdout):
    lam_text = ", ".join(
        f"{label}={value:.4g}" for label, value in artifact["lambda"].items()
    )
    edf = artifact["edf"]
    per = ", ".join(f"{k}={v:.2f}" for k, v in edf["per_param"].items())
    lines = [
        f"family            {artifact['family']} (n={artifact['n']}, p={artifact['p']})",
        f"robustness        {'ML (no downweighting)' if artifact['c'] is None else 'c=%.4g' % artifact['c']}",
        f"selection         {artifact['select']}",
        f"converged         {artifact['converged']}",
        f"objective         {fit.state.value:.6f}",
        f"lambda            {lam_text or '(none)'}",
        f"edf               total={edf['total']:.2f} ({per})",
        f"weights           min={min(artifact['weights']):.4f} "
        f"median={float(np.median(artifact['weights'])):.4f}",
    ]
    print("\n".join(lines), file=stream)


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    with open(args.config, encoding="utf-8") as handle:
        config = parse_model_config(json.load(handle))
    data = read_csv_columns(args.data)
    fit, y, tune_trace, tuned_c = _fit_from_config(config, data, args.data, args.seed)
    artifact = artifact_from_fit(fit, config, tune_trace, tuned_c)
    out = args.out or "fit_artifact.json"
    save_artifact(out, artifact)
    fitted_path = args.fitted_out or out.rsplit(".", 1)[0] + "_fitted.csv"
    header, rows = _fitted_rows(artifact, data, y, fit)
    write_csv(fitted_path, header, rows)
    _print_fit_summary(fit, artifact)
    print(f"artifact -> {out}\nfitted   -> {fitted_path}")
    return 0 if fit.converged else 2


def cmd_predict(args) -> int:
    artifact = load_artifact(args.artifact)
    data = read_csv_columns(args.data)
    pred = predict_from_artifact(artifact, data, cov=args.cov, level=args.level)
    names = artifact["param_names"]
    covs = sorted({c for term in artifact["terms"] for c in term["covariates"]})
    header = ["row"] + covs
    header += [f"eta_{n}" for n in names] + names
    for name in names:
        header += [f"eta_{name}_lo", f"eta_{name}_hi"]
    header.append("outside_envelope")
    n = pred["eta"].shape[0]
    rows = []
    for i in range(n):
        row = [i] + [_fmt(float(data[c][i])) for c in covs]
        row += [_fmt(float(pred["eta"][i, d])) for d in range(len(names))]
        row += [_fmt(float(pred["params"][d][i])) for d in range(len(names))]
        for d in range(len(names)):
            row += [_fmt(float(pred["lower"][i, d])), _fmt(float(pred["upper"][i, d]))]
        row.append(int(pred["outside_envelope"][i]))
        rows.append(row)
    out = args.out or "predictions.csv"
    write_csv(out, header, rows)
    n_outside = int(pred["outside_envelope"].sum())
    if n_outside:
        print(
            f"warning: {n_outside} row(s) outside the training basis envelope "
            "(flagged, clamped to the boundary)",
            file=sys.stderr,
        )
    print(f"predictions -> {out}")
    return 0


def cmd_weights(args) -> int:
    artifact = load_artifact(args.artifact)
    data = read_csv_columns(args.data)
    response = artifact["response"]
    y = _require_numeric(data, response, args.data)
    if artifact["c"] is None:
        raise SchemaError("artifact stores a classical fit; weights need a robust fit")
    pred = predict_from_artifact(artifact, data)
    family = get_family(artifact["family"])
    ll = family.log_density_eta(y, pred["eta"])
    rho = LogLogisticRho(artifact["c"])
    weights = rho.rho_prime(ll)
    order = np.argsort(weights, kind="stable")
    rows = [
        [int(i), _fmt(float(ll[i])), _fmt(float(weights[i]))]
        for i in order
    ]
    out = args.out or "weights.csv"
    write_csv(out, ["row", "loglik", "weight"], rows)
    print(f"weights (most downweighted first) -> {out}")
    return 0


def cmd_tune(args) -> int:
    with open(args.config, encoding="utf-8") as handle:
        config = parse_model_config(json.load(handle))
    data = read_csv_columns(args.data)
    y = _require_numeric(data, config.response, args.data)
    design = build_design(config, data)
    bracket = config.tune.bracket
    if args.c_bracket:
        lo, hi = args.c_bracket.split(":")
        bracket = (float(lo), float(hi))
    cfg = MdpConfig(
        target=args.target_mdp,
        replications=args.replications,
        bracket=bracket,
    )
    result = tune_c(
        design,
        y,
        cfg,
        integrator=config.integrator,
        select=config.select,
        seed=args.seed if args.seed is not None else config.seed,
        efs_options=config.efs,
        tr_options=config.optimizer,
    )
    artifact = artifact_from_fit(
        result.fit, config, [[c, m] for c, m in result.trace], result.c
    )
    out = args.out or "tuned_artifact.json"
    save_artifact(out, artifact)
    print(f"tuned c = {result.c:.4g} (target MDP {cfg.target})")
    for c, m in result.trace:
        print(f"  c={c:<10.4g} MDP={m:.4f}")
    if result.boundary:
        print("note: target not bracketed; returned a bracket endpoint")
    print(f"artifact -> {out}")
    return 0


def cmd_simulate(args) -> int:
    estimators = tuple(args.estimators.split(","))
    config = StudyConfig(
        design=args.design,
        n=args.n,
        mask_stride=args.mask_stride,
        replications=args.reps,
        contaminate=args.contaminate,
        estimators=estimators,
        c=args.c,
        mdp_target=args.mdp_target,
        seed=args.seed if args.seed is not None else 0,
    )
    result = run_study(config, workers=max(args.threads, 1))
    out = args.out or "study_results.csv"
    header = [
        "replication",
        "estimator",
        "scenario",
        "target",
        "mse",
        "edf",
        "converged",
        "flagged",
        "error",
    ]
    rows = [
        [
            r["replication"],
            r["estimator"],
            r["scenario"],
            r["target"],
            _fmt(r["mse"]),
            _fmt(r["edf"]),
            int(r["converged"]),
            int(r["flagged"]),
            r["error"],
        ]
        for r in result.records
    ]
    write_csv(out, header, rows)
    summary_path = args.summary_out or out.rsplit(".", 1)[0] + "_summary.csv"
    sum_header = [
        "scenario",
        "estimator",
        "target",
        "average",
        "sd",
        "median",
        "iqr",
        "replications",
        "failed",
    ]
    sum_rows = [
        [row[k] if not isinstance(row[k], float) else _fmt(row[k]) for k in sum_header]
        for row in result.summary
    ]
    write_csv(summary_path, sum_header, sum_rows)
    print(f"study (c={result.c:.4g}, {result.failures} failed fits)")
    widths = (14, 12, 8)
    print(f"{'estimator':<{widths[0]}}{'target':<{widths[1]}}{'median':>{widths[2]}}")
    for row in result.summary:
        print(
            f"{row['estimator']:<{widths[0]}}{row['target']:<{widths[1]}}"
            f"{row['median']:>{widths[2]}.3f}"
        )
    print(f"results -> {out}\nsummary -> {summary_path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robgamlss",
        description="Robust location-scale-shape additive model fitting",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="random seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.add_argument("--out", help="output path")

    p_fit = sub.add_parser("fit", help="fit a model from a JSON config and CSV data")
    p_fit.add_argument("config")
    p_fit.add_argument("data")
    p_fit.add_argument("--fitted-out", help="fitted-values CSV path")
    common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="predict from a stored artifact")
    p_pred.add_argument("artifact")
    p_pred.add_argument("data")
    p_pred.add_argument("--cov", choices=("posterior", "sandwich"), default="posterior")
    p_pred.add_argument("--level", type=float, default=0.95)
    common(p_pred)
    p_pred.set_defaults(func=cmd_predict)

    p_w = sub.add_parser("weights", help="robustness-weight diagnostics per row")
    p_w.add_argument("artifact")
    p_w.add_argument("data")
    common(p_w)
    p_w.set_defaults(func=cmd_weights)

    p_tune = sub.add_parser("tune", help="tune the robustness constant by MDP")
    p_tune.add_argument("config")
    p_tune.add_argument("data")
    p_tune.add_argument("--target-mdp", type=float, default=0.95)
    p_tune.add_argument("--B", dest="replications", type=int, default=100)
    p_tune.add_argument("--c-bracket", help="lo:hi bracket for c")
    common(p_tune)
    p_tune.set_defaults(func=cmd_tune)

    p_sim = sub.add_parser("simulate", help="run a replication study")
    p_sim.add_argument(
        "--design", choices=("poisson-gam", "gamma-gamlss-2d"), required=True
    )
    p_sim.add_argument("--reps", type=int, default=50)
    p_sim.add_argument("--contaminate", action="store_true")
    p_sim.add_argument(
        "--estimators",
        default="classical,robust-efs",
        help="comma-separated subset of classical,robust-efs,robust-raic,robust-rbic",
    )
    p_sim.add_argument("--n", type=int, default=100, help="Poisson design sample size")
    p_sim.add_argument(
        "--mask-stride", type=int, default=2, help="gamma design lattice stride (1=full)"
    )
    p_sim.add_argument("--c", type=float, default=None)
    p_sim.add_argument("--mdp-target", type=float, default=None)
    p_sim.add_argument("--summary-out")
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaError, ArtifactError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry_point() -> None:  # console-script shim
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
