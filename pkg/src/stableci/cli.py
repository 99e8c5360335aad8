"""Command line front end.

Subcommands:
  select      run one noisy selector on (X, y) from CSV, write a selection file
  ci          refit a selected model and write simultaneous intervals
  experiment  run a Monte Carlo eta sweep from a JSON config into a directory
  budget      print composed stability budgets for given step parameters

Exit codes: 0 ok, 2 bad input / parameters / config schema, 3 dimension
mismatch, 4 rank-deficient fit, 5 not enough rows to estimate sigma.

All floats are written with repr() so files round-trip exactly; experiment
outputs are byte-identical for any worker count because trials are keyed by
(master_seed, path), not by scheduling order.
"""

from __future__ import annotations

import argparse
import csv
import json
import multiprocessing
import os
import sys
import time

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from . import __version__
from .errors import (
    DegenerateLevel,
    DimensionMismatch,
    InsufficientSamples,
    RankDeficient,
    StableCIError,
)
from .experiments import (
    DEFAULT_ETA_GRID,
    WIDTH_QUANTILE_LEVELS,
    ExperimentConfig,
    SelectorSpec,
    eta_sweep,
)
from .linmodel import (
    DesignMatrix,
    FitResult,
    ModelSet,
    ols_fit,
    sigma_hat_full_model,
    stderr_known_sigma,
)
from .noise import RngStream, Subgaussian
from .selectors import SelectionResult, lambda_to_c1, stable_fs, stable_lasso, stable_screening
from .selectors import LassoConfig
from .stability import (
    KNOWN_SIGMA,
    EstimatedSigma,
    StabilityBudget,
    align_slack,
    alpha_split,
    best_posi_constant,
    build_intervals,
    compose_adaptive_advanced,
    compose_adaptive_simple,
    sparse_selection_eta,
)

SCHEMA_VERSION = 1

_SELECTION_COLUMNS = ["record", "f1", "f2", "f3", "f4", "f5", "f6"]


class CliParseError(ValueError):
    """Malformed file or option combination; maps to exit code 2."""


# ---------------------------------------------------------------------------
# formatting / file helpers

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: str, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _read_rows(path: str) -> list[list[str]]:
    try:
        with open(path, newline="") as fh:
            return [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    except OSError as e:
        raise CliParseError(f"cannot read {path}: {e}") from e


def _all_floats(row: list[str]) -> bool:
    try:
        [float(c) for c in row]
        return True
    except ValueError:
        return False


def read_matrix(path: str) -> np.ndarray:
    """Numeric CSV, one row per line; a single leading non-numeric row is
    treated as a header and skipped."""
    rows = _read_rows(path)
    if rows and not _all_floats(rows[0]):
        rows = rows[1:]
    if not rows:
        raise CliParseError(f"{path}: no numeric rows")
    width = len(rows[0])
    data = []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise CliParseError(f"{path}: row {i} has {len(row)} fields, expected {width}")
        try:
            data.append([float(c) for c in row])
        except ValueError as e:
            raise CliParseError(f"{path}: row {i}: {e}") from e
    return np.asarray(data, dtype=np.float64)


def read_vector(path: str) -> np.ndarray:
    mat = read_matrix(path)
    if mat.shape[1] == 1:
        return mat[:, 0]
    if mat.shape[0] == 1:
        return mat[0, :]
    raise CliParseError(f"{path}: expected a single column or row, got shape {mat.shape}")


def _write_manifest(path: str, command: str, params: dict, outputs: list[str],
                    started: float) -> None:
    doc = {
        "command": command,
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "parameters": params,
        "outputs": outputs,
        "wall_clock_sec": time.time() - started,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# selection file round trip

def write_selection(path: str, method: str, params: dict, result: SelectionResult) -> None:
    rows: list[list[str]] = [["meta", "schema", str(SCHEMA_VERSION)], ["meta", "method", method]]
    for key in sorted(params):
        rows.append(["meta", key, _fmt(params[key])])
    for j in result.model:
        rows.append(["selected", str(j)])
    if result.theta is not None:
        for j, v in enumerate(result.theta):
            if v != 0.0:
                rows.append(["theta", str(j), repr(float(v))])
    for label, b in zip(("advanced", "linear"), result.budgets):
        rows.append(["budget", label, repr(b.eta), repr(b.tau), repr(b.nu)])
    for t in result.trace:
        row = ["trace", str(t.step), str(t.chosen), repr(t.exact_score),
               repr(t.noisy_score), repr(t.best_exact)]
        if t.objective is not None:
            row.append(repr(t.objective))
        rows.append(row)
    padded = [row + [""] * (len(_SELECTION_COLUMNS) - len(row)) for row in rows]
    _write_csv(path, _SELECTION_COLUMNS, padded)


def read_selection(path: str) -> tuple[ModelSet, list[StabilityBudget], dict]:
    rows = _read_rows(path)
    if rows and rows[0][0] == "record":
        rows = rows[1:]
    indices: list[int] = []
    budgets: list[StabilityBudget] = []
    meta: dict = {}
    for row in rows:
        kind = row[0]
        try:
            if kind == "selected":
                indices.append(int(row[1]))
            elif kind == "budget":
                budgets.append(StabilityBudget(float(row[2]), float(row[3]), float(row[4])))
            elif kind == "meta":
                meta[row[1]] = row[2]
        except (IndexError, ValueError) as e:
            raise CliParseError(f"{path}: bad {kind} row {row}: {e}") from e
    if not budgets:
        budgets = [StabilityBudget(0.0, 0.0, 0.0)]
    return ModelSet.from_unordered(indices), budgets, meta


# ---------------------------------------------------------------------------
# select

def cmd_select(args) -> int:
    started = time.time()
    X = DesignMatrix(read_matrix(args.x))
    y = read_vector(args.y)
    if y.shape[0] != X.n:
        raise DimensionMismatch(f"y has {y.shape[0]} rows, X has {X.n}")
    family = Subgaussian(args.sigma)
    rng = RngStream(args.seed)
    params = {"n": X.n, "d": X.d, "delta": args.delta, "eta_step": args.eta,
              "sigma": args.sigma, "seed": args.seed}
    if args.method in ("screen", "fs"):
        if args.k is None:
            raise CliParseError(f"--k is required for method {args.method!r}")
        params["k"] = args.k
        if args.method == "screen":
            result = stable_screening(X, y, args.k, args.delta, args.eta, family, rng=rng)
        else:
            result = stable_fs(X, y, args.k, args.delta, args.eta, family, rng=rng)
    else:  # lasso
        if (args.c1 is None) == (args.lam is None):
            raise CliParseError("lasso needs exactly one of --c1 or --lam")
        c1 = args.c1 if args.c1 is not None else lambda_to_c1(X, y, args.lam)
        if c1 <= 0.0:
            raise CliParseError(f"penalty {args.lam} zeroes every coordinate; nothing to select")
        if args.lam is not None:
            params["lam"] = args.lam
        params["c1"] = c1
        cfg = LassoConfig(c1=c1, steps=args.steps, delta=args.delta, eta_step=args.eta,
                          family=family)
        params["steps"] = cfg.resolved_steps(X)
        result = stable_lasso(X, y, cfg, rng)
    write_selection(args.out, args.method, params, result)
    manifest = args.out + ".manifest.json"
    _write_manifest(manifest, "select",
                    {**params, "method": args.method,
                     "model": [int(j) for j in result.model],
                     "budgets": [[b.eta, b.tau, b.nu] for b in result.budgets]},
                    [args.out], started)
    print(f"selected {len(result.model)} of {X.d} columns -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# ci

def _parse_sigma_mode(text: str):
    """--sigma accepts 'estimate', 'known:VALUE', or a bare number."""
    if text == "estimate":
        return ("estimate", None)
    if text.startswith("known:"):
        text = text.split(":", 1)[1]
    try:
        value = float(text)
    except ValueError as e:
        raise CliParseError(f"--sigma must be 'estimate', 'known:VALUE', or a number, got {text!r}") from e
    if not (value > 0):
        raise CliParseError(f"sigma must be positive, got {value}")
    return ("known", value)


def _parse_weights(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise CliParseError(f"--weights needs three comma-separated numbers, got {text!r}")
    try:
        w = tuple(float(p) for p in parts)
    except ValueError as e:
        raise CliParseError(f"bad --weights {text!r}: {e}") from e
    return w


def cmd_ci(args) -> int:
    started = time.time()
    X = DesignMatrix(read_matrix(args.x))
    y = read_vector(args.y)
    if y.shape[0] != X.n:
        raise DimensionMismatch(f"y has {y.shape[0]} rows, X has {X.n}")
    if args.selection is not None:
        model, budgets, _ = read_selection(args.selection)
    else:
        indices = [int(p) for p in args.model.split(",")] if args.model.strip() else []
        model = ModelSet.from_unordered(indices)
        budgets = [StabilityBudget(0.0, 0.0, 0.0)]
    if model.indices and model.indices[-1] >= X.d:
        raise DimensionMismatch(f"selected column {model.indices[-1]} out of range for d={X.d}")

    aligned = align_slack(budgets)
    slack = aligned[0].slack
    if args.weights is not None:
        w = _parse_weights(args.weights)
        alpha_split(args.alpha, w)  # validates
        delta_level = w[0] * args.alpha
        if slack > (w[1] + w[2]) * args.alpha + 1e-12:
            raise CliParseError(
                f"budget slack {slack} exceeds the tau+nu weight allowance "
                f"{(w[1] + w[2]) * args.alpha}")
    else:
        delta_level = args.alpha - slack
        if delta_level <= 0:
            raise CliParseError(f"budget slack {slack} leaves no level within alpha={args.alpha}")

    mode_name, sigma_value = _parse_sigma_mode(args.sigma)
    if mode_name == "estimate":
        sigma_value, dof = sigma_hat_full_model(X, y)
        mode = EstimatedSigma(dof)
    else:
        mode = KNOWN_SIGMA

    if len(model) == 0:
        K, chosen = 0.0, aligned[0]
        rows = []
    else:
        K, chosen = best_posi_constant(len(model), delta_level, aligned, mode)
        coef = ols_fit(X, model, y)
        stderrs = stderr_known_sigma(X, model, sigma_value)
        ivals = build_intervals(FitResult(model=model, coefficients=coef, stderrs=stderrs), K)
        rows = [[str(j), repr(float(ivals.estimates[i])), repr(float(ivals.stderrs[i])),
                 repr(K), repr(float(ivals.lower[i])), repr(float(ivals.upper[i]))]
                for i, j in enumerate(model)]
    _write_csv(args.out, ["index", "estimate", "stderr", "K", "lower", "upper"], rows)
    _write_manifest(args.out + ".manifest.json", "ci",
                    {"alpha": args.alpha, "delta_level": delta_level, "K": K,
                     "sigma_mode": mode_name, "sigma": sigma_value,
                     "model": [int(j) for j in model],
                     "budget_used": [chosen.eta, chosen.tau, chosen.nu],
                     "weights": args.weights},
                    [args.out], started)
    print(f"K={K!r} delta_level={delta_level!r} model_size={len(model)} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# experiment

_CONFIG_SCHEMA = {
    "type": "object",
    "required": ["n", "d", "trials", "master_seed", "selector"],
    "additionalProperties": False,
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "d": {"type": "integer", "minimum": 1},
        "trials": {"type": "integer", "minimum": 1},
        "master_seed": {"type": "integer", "minimum": 0},
        "signal": {"type": "number"},
        "active_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "regenerate_x_per_trial": {"type": "boolean"},
        "sigma_mode": {"enum": ["known", "estimate"]},
        "eta_grid": {
            "type": "array", "minItems": 1,
            "items": {"type": "number", "exclusiveMinimum": 0},
        },
        "alpha_weights": {
            "type": ["array", "null"], "minItems": 3, "maxItems": 3,
            "items": {"type": "number", "minimum": 0},
        },
        "selector": {
            "type": "object",
            "required": ["method"],
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["fixed", "screen", "fs", "lasso"]},
                "k": {"type": "integer", "minimum": 1},
                "c1": {"type": "number", "exclusiveMinimum": 0},
                "lam": {"type": "number", "exclusiveMinimum": 0},
                "steps": {"type": "integer", "minimum": 1},
                "fixed_model": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "support_threshold": {"type": "number", "minimum": 0},
            },
        },
    },
}


def load_config(path: str) -> tuple[ExperimentConfig, list[float]]:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as e:
        raise CliParseError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise CliParseError(f"{path} is not valid JSON: {e}") from e
    if jsonschema is not None:
        try:
            jsonschema.validate(raw, _CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            raise CliParseError(f"{path}: {e.message} (at {'/'.join(map(str, e.path))})") from e
    sel = raw["selector"]
    spec = SelectorSpec(
        method=sel["method"],
        k=sel.get("k"),
        c1=sel.get("c1"),
        lam=sel.get("lam"),
        steps=sel.get("steps"),
        fixed_model=tuple(sel.get("fixed_model", ())),
        support_threshold=sel.get("support_threshold", 1e-12),
    )
    weights = raw.get("alpha_weights")
    cfg = ExperimentConfig(
        n=raw["n"],
        d=raw["d"],
        selector=spec,
        trials=raw["trials"],
        master_seed=raw["master_seed"],
        beta_spec=(raw.get("signal", 5.0), raw.get("active_fraction", 0.8)),
        sigma=raw.get("sigma", 1.0),
        alpha=raw.get("alpha", 0.1),
        regenerate_x_per_trial=raw.get("regenerate_x_per_trial", True),
        sigma_mode=raw.get("sigma_mode", "known"),
        alpha_weights=tuple(weights) if weights is not None else None,
    )
    grid = [float(e) for e in raw.get("eta_grid", DEFAULT_ETA_GRID)]
    return cfg, grid


def _records_rows(eta: float, records) -> list[list[str]]:
    rows = []
    for r in records:
        rows.append([
            repr(eta), str(r.trial_index), r.flagged or "",
            str(len(r.model)), "|".join(str(j) for j in r.model),
            "1" if r.covered else "0", repr(r.fdr),
            "" if r.risk is None else repr(r.risk), repr(r.K),
            repr(r.budget_used.eta), repr(r.budget_used.tau), repr(r.budget_used.nu),
            "|".join(repr(float(w)) for w in r.widths),
        ])
    return rows


def cmd_experiment(args) -> int:
    started = time.time()
    cfg, grid = load_config(args.config)
    workers = args.workers
    if workers is None:
        workers = int(os.environ.get("STABLECI_WORKERS", "1"))
    if workers < 1:
        raise CliParseError(f"workers must be >= 1, got {workers}")
    os.makedirs(args.out_dir, exist_ok=True)

    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            sweep = eta_sweep(cfg, grid, pool.map)
    else:
        sweep = eta_sweep(cfg, grid, map)

    record_rows: list[list[str]] = []
    summary_rows: list[list[str]] = []
    plot_width, plot_fdr, plot_risk = [], [], []
    for eta, records, summary in sweep:
        record_rows.extend(_records_rows(eta, records))
        q = summary.width_quantiles
        summary_rows.append([
            repr(eta), str(summary.trials), str(summary.flagged),
            str(summary.empty_models), repr(summary.empirical_coverage),
            repr(summary.width_max),
            *(repr(q[lvl]) for lvl in WIDTH_QUANTILE_LEVELS),
            repr(summary.mean_fdr),
            "" if summary.mean_risk is None else repr(summary.mean_risk),
            repr(summary.mean_K),
        ])
        plot_width.append([repr(eta), repr(q[0.90]), repr(summary.width_max)])
        plot_fdr.append([repr(eta), repr(summary.mean_fdr)])
        plot_risk.append([repr(eta), "" if summary.mean_risk is None else repr(summary.mean_risk)])

    paths = {
        "records.csv": (["eta", "trial", "flagged", "model_size", "model", "covered",
                         "fdr", "risk", "K", "budget_eta", "budget_tau", "budget_nu",
                         "widths"], record_rows),
        "summary.csv": (["eta", "trials", "flagged", "empty_models", "coverage",
                         "width_max", "width_q80", "width_q85", "width_q90",
                         "width_q100", "mean_fdr", "mean_risk", "mean_K"], summary_rows),
        "plot_width.csv": (["eta", "width_q90", "width_max"], plot_width),
        "plot_fdr.csv": (["eta", "mean_fdr"], plot_fdr),
        "plot_risk.csv": (["eta", "mean_risk"], plot_risk),
    }
    for name, (header, rows) in paths.items():
        _write_csv(os.path.join(args.out_dir, name), header, rows)
    _write_manifest(os.path.join(args.out_dir, "manifest.json"), "experiment",
                    {"config_path": args.config, "eta_grid": grid, "workers": workers,
                     "trials": cfg.trials, "master_seed": cfg.master_seed},
                    sorted(paths), started)
    print(f"wrote {', '.join(sorted(paths))} to {args.out_dir} "
          f"({len(grid)} etas x {cfg.trials} trials, {workers} workers)")
    return 0


# ---------------------------------------------------------------------------
# budget

def cmd_budget(args) -> int:
    printed = False
    if args.k is not None:
        if args.eta_step is None:
            raise CliParseError("--eta-step is required with --k")
        eta_s, tau_s = compose_adaptive_simple(args.eta_step, args.tau_step, args.k)
        print(f"simple eta={eta_s!r} tau={tau_s!r} "
              f"(k={args.k}, eta_step={args.eta_step!r}, tau_step={args.tau_step!r})")
        eta_a = compose_adaptive_advanced(args.eta_step, args.k, args.delta)
        print(f"advanced eta={eta_a!r} nu={args.delta!r} "
              f"(k={args.k}, eta_step={args.eta_step!r}, delta={args.delta!r})")
        printed = True
    if args.sparse is not None:
        d, s, tau = int(args.sparse[0]), int(args.sparse[1]), float(args.sparse[2])
        eta = sparse_selection_eta(d, s, tau)
        print(f"sparse eta={eta!r} (d={d}, s={s}, tau={tau!r})")
        printed = True
    if not printed:
        raise CliParseError("nothing to do: give --k/--eta-step and/or --sparse D S TAU")
    return 0


# ---------------------------------------------------------------------------
# parser / dispatch

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="stableci",
        description="Simultaneous post-selection intervals for stabilized selectors.")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("select", help="run a noisy selector on CSV data")
    ps.add_argument("--x", required=True, help="design matrix CSV")
    ps.add_argument("--y", required=True, help="response CSV (single column)")
    ps.add_argument("--method", required=True, choices=["screen", "fs", "lasso"])
    ps.add_argument("--k", type=int, default=None, help="rounds (screen/fs)")
    ps.add_argument("--c1", type=float, default=None, help="lasso l1 radius")
    ps.add_argument("--lam", type=float, default=None,
                    help="lasso penalty; converted to an l1 radius on this data")
    ps.add_argument("--steps", type=int, default=None, help="lasso iteration override")
    ps.add_argument("--eta", type=float, required=True, help="per-step privacy parameter")
    ps.add_argument("--delta", type=float, default=0.05, help="per-run stability slack")
    ps.add_argument("--sigma", type=float, default=1.0, help="noise scale of the response")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", default="selection.csv")
    ps.set_defaults(func=cmd_select)

    pc = sub.add_parser("ci", help="simultaneous intervals for a selected model")
    pc.add_argument("--x", required=True)
    pc.add_argument("--y", required=True)
    group = pc.add_mutually_exclusive_group(required=True)
    group.add_argument("--selection", default=None, help="selection CSV from `select`")
    group.add_argument("--model", default=None,
                       help="comma-separated column indices (assumes a zero budget)")
    pc.add_argument("--alpha", type=float, default=0.1, help="total miscoverage target")
    pc.add_argument("--sigma", default="estimate",
                    help="'estimate', 'known:VALUE', or a number")
    pc.add_argument("--weights", default=None,
                    help="delta,tau,nu split of alpha (default: remainder rule)")
    pc.add_argument("--out", default="intervals.csv")
    pc.set_defaults(func=cmd_ci)

    pe = sub.add_parser("experiment", help="Monte Carlo eta sweep from a JSON config")
    pe.add_argument("--config", required=True)
    pe.add_argument("--out-dir", required=True)
    pe.add_argument("--workers", type=int, default=None,
                    help="process count (default: STABLECI_WORKERS or 1)")
    pe.set_defaults(func=cmd_experiment)

    pb = sub.add_parser("budget", help="print composed stability budgets")
    pb.add_argument("--k", type=int, default=None, help="number of adaptive steps")
    pb.add_argument("--eta-step", type=float, default=None)
    pb.add_argument("--tau-step", type=float, default=0.0)
    pb.add_argument("--delta", type=float, default=0.05)
    pb.add_argument("--sparse", nargs=3, default=None, metavar=("D", "S", "TAU"),
                    help="also print the union bound for s-sparse selection")
    pb.set_defaults(func=cmd_budget)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DimensionMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except RankDeficient as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except InsufficientSamples as e:
        print(f"error: {e}", file=sys.stderr)
        return 5
    except (CliParseError, DegenerateLevel, StableCIError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
