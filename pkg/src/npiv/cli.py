"""Command-line interface for simulation, estimation, selection and rate studies.

Subcommands:
  simulate    draw a synthetic sample to CSV
  estimate    fit the series estimator at a fixed dimension
  select      run the fully data-driven dimension selection
  oracle      tabulate best dimensions and rate values for known weights
  rate-study  Monte Carlo over a sample-size grid with slope fitting

Exit codes: 0 success, 2 usage or config errors, 3 I/O errors, 4 internal
invariant failures.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import math
import os
import sys

import numpy as np

from .basis import WeightSequence, parse_weights
from .estimator import (
    diagonal_estimate,
    derivative_coeffs,
    empirical_operator_matrix,
    galerkin_estimate,
    load_csv,
    risk_weighted,
    write_csv,
)
from .selection import (
    dimension_cutoff,
    dimension_cutoff_lower,
    oracle_dimension,
    penalized_select,
    penalty_sequences,
)
from .simulate import (
    OperatorSpec,
    StructuralSpec,
    generate_sample,
    make_operator,
    make_structural,
    noise_sigma_for_snr,
    task_seed,
)

JOBS_ENV = "NPIV_JOBS"
SCHEMA = 1


class UsageError(Exception):
    """Bad flags or config content; maps to exit code 2."""


class InternalError(Exception):
    """Violated runtime invariant; maps to exit code 4."""


# -- config handling ------------------------------------------------------

_SECTION_KEYS = {
    "structural": {"profile", "smoothness", "radius", "truncation", "coeffs"},
    "operator": {"decay", "a", "truncation"},
    "noise": {"sigma", "snr"},
    "selection": {"derivative_order", "penalty_const"},
    "study": {"n_grid", "replications", "seed", "k_max"},
}


def _check_keys(section: str, obj: dict) -> None:
    if not isinstance(obj, dict):
        raise UsageError(f"config section {section!r} must be an object")
    unknown = set(obj) - _SECTION_KEYS[section]
    if unknown:
        raise UsageError(
            f"config section {section!r} has unknown keys: {', '.join(sorted(unknown))}"
        )


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    unknown = set(cfg) - set(_SECTION_KEYS)
    if unknown:
        raise UsageError(f"{path}: unknown config sections: {', '.join(sorted(unknown))}")
    for section, obj in cfg.items():
        _check_keys(section, obj)
    return cfg


def structural_from_config(cfg: dict) -> StructuralSpec:
    sec = cfg.get("structural")
    if sec is None:
        raise UsageError("config needs a 'structural' section")
    _check_keys("structural", sec)
    try:
        return make_structural(
            smoothness=sec.get("smoothness", 2.0),
            radius=sec.get("radius", 1.0),
            truncation=sec.get("truncation", 200),
            profile=sec.get("profile", "power_law"),
            coeffs=sec.get("coeffs"),
        )
    except ValueError as exc:
        raise UsageError(f"bad structural config: {exc}") from None


def operator_from_config(cfg: dict) -> OperatorSpec:
    sec = cfg.get("operator")
    if sec is None:
        raise UsageError("config needs an 'operator' section")
    _check_keys("operator", sec)
    try:
        return make_operator(
            decay=sec.get("decay", "polynomial"),
            a=sec.get("a", 1.0),
            truncation=sec.get("truncation", 64),
        )
    except ValueError as exc:
        raise UsageError(f"bad operator config: {exc}") from None


def sigma_from_config(cfg: dict, phi: StructuralSpec) -> float:
    sec = cfg.get("noise")
    if sec is None:
        raise UsageError("config needs a 'noise' section")
    _check_keys("noise", sec)
    has_sigma = "sigma" in sec
    has_snr = "snr" in sec
    if has_sigma == has_snr:
        raise UsageError("noise config needs exactly one of 'sigma' or 'snr'")
    try:
        if has_sigma:
            sigma = float(sec["sigma"])
            if sigma < 0:
                raise ValueError(f"sigma must be nonnegative, got {sigma}")
            return sigma
        return noise_sigma_for_snr(phi, float(sec["snr"]))
    except ValueError as exc:
        raise UsageError(f"bad noise config: {exc}") from None


def selection_from_config(cfg: dict) -> tuple[int, float]:
    sec = cfg.get("selection", {})
    _check_keys("selection", sec)
    s = sec.get("derivative_order", 0)
    if int(s) != s or s < 0:
        raise UsageError(f"derivative_order must be a nonnegative integer, got {s}")
    const = float(sec.get("penalty_const", 540.0))
    if not const > 0:
        raise UsageError(f"penalty_const must be positive, got {const}")
    return int(s), const


# -- small helpers --------------------------------------------------------


def _floats(arr) -> list[float]:
    return [float(v) for v in np.asarray(arr).ravel()]


def _emit_json(obj: dict, out: str | None) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _parse_n_grid(text: str) -> list[int]:
    try:
        grid = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad sample-size grid {text!r}") from None
    if not grid:
        raise UsageError("sample-size grid is empty")
    if any(n < 1 for n in grid):
        raise UsageError("sample sizes must be >= 1")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise UsageError("sample-size grid must be strictly increasing")
    return grid


def _weights_arg(text: str) -> WeightSequence:
    try:
        return parse_weights(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _operator_echo(op: OperatorSpec) -> dict:
    return {
        "decay": op.decay,
        "a": op.a,
        "truncation": int(op.truncation),
        "scale": float(op.scale),
        "diag": _floats(op.diag),
        "density_floor": float(op.density_floor),
        "link_constant": float(op.link_constant),
    }


def _structural_echo(phi: StructuralSpec) -> dict:
    return {
        "smoothness": float(phi.smoothness),
        "radius": float(phi.radius),
        "truncation": int(phi.truncation),
        "coeffs": _floats(phi.coeffs),
    }


# -- simulate -------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    phi = structural_from_config(cfg)
    op = operator_from_config(cfg)
    sigma = sigma_from_config(cfg, phi)
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    if args.seed < 0:
        raise UsageError(f"--seed must be nonnegative, got {args.seed}")
    sample = generate_sample(phi, op, sigma, args.n, args.seed)
    write_csv(sample, args.out)
    echo = {
        "structural": _structural_echo(phi),
        "operator": _operator_echo(op),
        "sigma": float(sigma),
        "n": int(args.n),
        "seed": int(args.seed),
        "out": str(args.out),
    }
    print(json.dumps(echo), file=sys.stderr)
    return 0


# -- estimate -------------------------------------------------------------


def _truth_from_file(path) -> StructuralSpec:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise UsageError(f"{path}: truth spec must be a JSON object")
    if "structural" not in obj:
        obj = {"structural": obj}
    return structural_from_config(obj)


def cmd_estimate(args) -> int:
    sample = load_csv(args.sample)
    if args.k < 1:
        raise UsageError(f"--k must be >= 1, got {args.k}")
    weights = _weights_arg(args.risk_weights)
    fit = diagonal_estimate(sample, args.k) if args.mode == "diagonal" else galerkin_estimate(sample, args.k)
    if args.derivative_order < 0:
        raise UsageError("--derivative-order must be nonnegative")
    report = {
        "schema": SCHEMA,
        "command": "estimate",
        "n": int(sample.n),
        "k": int(fit.k),
        "mode": fit.mode,
        "thresholded": bool(fit.thresholded),
        "coeffs": _floats(fit.coeffs),
        "derivative_order": int(args.derivative_order),
    }
    if args.derivative_order >= 1:
        report["derivative_coeffs"] = _floats(derivative_coeffs(fit, args.derivative_order))
    if args.truth is not None:
        truth = _truth_from_file(args.truth)
        j_max = args.j_max if args.j_max is not None else max(fit.k, truth.truncation)
        try:
            risk = risk_weighted(fit, truth, weights, j_max)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        report["risk"] = float(risk)
        report["risk_weights"] = args.risk_weights
    _emit_json(report, args.out)
    return 0


# -- select ---------------------------------------------------------------

# Scale on 1/sqrt(n) above which off-diagonal mass draws a warning; pure
# noise keeps the largest entry of a 10 x 10 block well below this.
_OFFDIAG_WARN = 6.0


def cmd_select(args) -> int:
    sample = load_csv(args.sample)
    weights = _weights_arg(args.risk_weights)
    if not args.penalty_const > 0:
        raise UsageError(f"--penalty-const must be positive, got {args.penalty_const}")
    trace = penalized_select(sample, weights, args.penalty_const)
    probe = min(trace.cutoff, 10)
    if probe >= 2:
        mat = empirical_operator_matrix(sample, probe)
        off = mat - np.diag(np.diag(mat))
        worst = float(np.abs(off).max())
        if worst > _OFFDIAG_WARN / math.sqrt(sample.n):
            print(
                f"warning: empirical operator matrix is far from diagonal "
                f"(max off-diagonal entry {worst:.3g} at n={sample.n}); the "
                f"diagonal selection rule may be unreliable here",
                file=sys.stderr,
            )
    report = {
        "schema": SCHEMA,
        "command": "select",
        "n": int(trace.n),
        "cutoff": int(trace.cutoff),
        "penalty_const": float(trace.penalty_const),
        "y_second_moment": float(trace.y_second_moment),
        "contrast": _floats(trace.contrast),
        "penalty": _floats(trace.penalty),
        "effective_dim": _floats(trace.effective_dim),
        "criterion": _floats(trace.criterion),
        "k_selected": int(trace.k_selected),
        "thresholded": bool(trace.estimate.thresholded),
        "coeffs": _floats(trace.estimate.coeffs),
        "risk_weights": args.risk_weights,
    }
    _emit_json(report, args.out)
    return 0


# -- oracle ---------------------------------------------------------------


def cmd_oracle(args) -> int:
    risk_w = _weights_arg(args.risk_weights)
    smooth_w = _weights_arg(args.smoothness_weights)
    op_w = _weights_arg(args.operator_weights)
    if not args.link_constant > 0:
        raise UsageError(f"--link-constant must be positive, got {args.link_constant}")
    grid = _parse_n_grid(args.n_grid)
    rows = []
    for n in grid:
        k_max = min(n, args.k_max)
        k_best, rate = oracle_dimension(risk_w, smooth_w, op_w, n, k_max)
        eff = penalty_sequences(risk_w, op_w, k_best).effective_dim[k_best - 1]
        rows.append(
            {
                "n": int(n),
                "k_best": int(k_best),
                "rate": float(rate),
                "cutoff": int(dimension_cutoff(risk_w, op_w, args.link_constant, n)),
                "cutoff_lower": int(dimension_cutoff_lower(risk_w, op_w, args.link_constant, n)),
                "effective_dim_at_k": float(eff),
            }
        )
    if args.format == "json":
        _emit_json({"schema": SCHEMA, "command": "oracle", "rows": rows}, args.out)
    else:
        header = ["n", "k_best", "rate", "cutoff", "cutoff_lower", "effective_dim_at_k"]
        lines = [",".join(header)]
        for row in rows:
            lines.append(
                ",".join(
                    str(row[h]) if h in ("n", "k_best", "cutoff", "cutoff_lower") else repr(row[h])
                    for h in header
                )
            )
        text = "\n".join(lines) + "\n"
        if args.out is None:
            sys.stdout.write(text)
        else:
            with open(args.out, "w") as fh:
                fh.write(text)
    return 0


# -- rate study -----------------------------------------------------------


def _study_worker(task: tuple) -> tuple:
    phi, op, sigma, order, penalty_const, oracle_k, n, rep, master = task
    seed = task_seed(master, n, rep)
    weights = WeightSequence.derivative(order)
    sample = generate_sample(phi, op, sigma, n, seed)
    trace = penalized_select(sample, weights, penalty_const)
    j_max = max(phi.truncation, trace.estimate.k)
    risk = risk_weighted(trace.estimate, phi, weights, j_max)
    fixed = diagonal_estimate(sample, oracle_k)
    fixed_risk = risk_weighted(fixed, phi, weights, max(phi.truncation, oracle_k))
    return (
        n,
        rep,
        seed,
        trace.k_selected,
        trace.cutoff,
        bool(trace.estimate.thresholded),
        float(risk),
        float(fixed_risk),
    )


def _fit_slope(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(x, y, 1)[0])


def run_rate_study(
    phi: StructuralSpec,
    op: OperatorSpec,
    sigma: float,
    order: int,
    penalty_const: float,
    grid: list[int],
    reps: int,
    master: int,
    k_max: int = 200,
    jobs: int = 1,
) -> tuple[dict, list[tuple]]:
    """Run the Monte Carlo study; returns (report dict, replication rows).

    Rows are keyed by (n, replication) with per-task seeds derived from the
    master seed, so the output is identical for any worker count.
    """
    weights = WeightSequence.derivative(order)
    smooth_w = WeightSequence.sobolev(phi.smoothness)
    op_w = op.weights
    if op_w is None:
        raise UsageError("rate studies need a polynomial or exponential operator")

    oracle_per_n = {}
    for n in grid:
        k_best, rate = oracle_dimension(weights, smooth_w, op_w, n, min(n, k_max))
        oracle_per_n[n] = (k_best, rate)

    tasks = [
        (phi, op, sigma, order, penalty_const, oracle_per_n[n][0], n, rep, master)
        for n in grid
        for rep in range(reps)
    ]
    if jobs == 1:
        results = [_study_worker(t) for t in tasks]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(
                pool.map(_study_worker, tasks, chunksize=max(1, len(tasks) // (4 * jobs)))
            )
    by_cell = {(r[0], r[1]): r for r in results}
    if len(by_cell) != len(tasks):
        raise InternalError("study produced duplicate (n, replication) cells")

    regime = "fs" if op.decay == "polynomial" else "is"
    p, s, a = phi.smoothness, order, op.a
    if regime == "fs":
        theoretical = -2.0 * (p - s) / (2.0 * p + 2.0 * a + 1.0)
        slope_axis = "log_n"
    else:
        theoretical = -(p - s) / a
        slope_axis = "log_log_n"

    per_n = []
    medians = []
    for n in grid:
        rows = [by_cell[(n, rep)] for rep in range(reps)]
        risks = np.array([r[6] for r in rows])
        if not np.all(np.isfinite(risks)) or risks.min() < 0:
            raise InternalError("non-finite or negative risk in study results")
        fixed_risks = np.array([r[7] for r in rows])
        ks = np.array([r[3] for r in rows])
        k_best, rate = oracle_per_n[n]
        q25, q50, q75 = (float(np.quantile(risks, q)) for q in (0.25, 0.5, 0.75))
        medians.append(q50)
        per_n.append(
            {
                "n": int(n),
                "risk_median": q50,
                "risk_mean": float(risks.mean()),
                "risk_iqr": q75 - q25,
                "k_median": float(np.median(ks)),
                "oracle_k": int(k_best),
                "oracle_rate": float(rate),
                "oracle_risk_median": float(np.median(fixed_risks)),
                "cutoff_known": int(dimension_cutoff(weights, op_w, op.link_constant, n)),
                "cutoff_lower": int(
                    dimension_cutoff_lower(weights, op_w, op.link_constant, n)
                ),
            }
        )
    xs = np.log(np.array(grid, dtype=float))
    if slope_axis == "log_log_n":
        xs = np.log(xs)
    fitted = _fit_slope(xs, np.log(np.array(medians))) if len(grid) >= 2 else None

    report = {
        "schema": SCHEMA,
        "command": "rate_study",
        "config": {
            "structural": _structural_echo(phi),
            "operator": _operator_echo(op),
            "sigma": float(sigma),
            "derivative_order": int(order),
            "penalty_const": float(penalty_const),
        },
        "n_grid": [int(n) for n in grid],
        "replications": int(reps),
        "seed": int(master),
        "regime": regime,
        "per_n": per_n,
        "fitted_slope": fitted,
        "theoretical_slope": float(theoretical),
        "slope_axis": slope_axis,
    }
    ordered_rows = [by_cell[(n, rep)] for n in grid for rep in range(reps)]
    return report, ordered_rows


def cmd_rate_study(args) -> int:
    cfg = load_config(args.config)
    phi = structural_from_config(cfg)
    op = operator_from_config(cfg)
    sigma = sigma_from_config(cfg, phi)
    order, penalty_const = selection_from_config(cfg)
    study = cfg.get("study", {})
    _check_keys("study", study)

    grid = _parse_n_grid(args.n_grid) if args.n_grid else study.get("n_grid")
    if not grid:
        raise UsageError("no sample-size grid: set study.n_grid or pass --n-grid")
    grid = _parse_n_grid(",".join(str(n) for n in grid))
    reps = args.replications if args.replications is not None else study.get("replications", 50)
    if reps < 1:
        raise UsageError(f"replications must be >= 1, got {reps}")
    master = args.seed if args.seed is not None else study.get("seed", 0)
    if master < 0:
        raise UsageError(f"seed must be nonnegative, got {master}")
    jobs = args.jobs
    if jobs is None:
        jobs = int(os.environ.get(JOBS_ENV, "1"))
    if jobs < 1:
        raise UsageError(f"jobs must be >= 1, got {jobs}")

    report, rows = run_rate_study(
        phi,
        op,
        sigma,
        order,
        penalty_const,
        grid,
        reps,
        master,
        k_max=study.get("k_max", 200),
        jobs=jobs,
    )

    base = args.out[: -len(".json")] if args.out.endswith(".json") else args.out
    _emit_json(report, base + ".json")
    oracle_k = {row["n"]: row["oracle_k"] for row in report["per_n"]}
    with open(base + ".csv", "w") as fh:
        fh.write("n,replication,seed,k_selected,cutoff,thresholded,risk,oracle_k,oracle_risk\n")
        for row in rows:
            fh.write(
                f"{row[0]},{row[1]},{row[2]},{row[3]},{row[4]},"
                f"{int(row[5])},{row[6]!r},{oracle_k[row[0]]},{row[7]!r}\n"
            )
    if args.emit_gnuplot:
        medians = [row["risk_median"] for row in report["per_n"]]
        _write_gnuplot(base, grid, medians, report["fitted_slope"], report["slope_axis"])
    return 0


def _write_gnuplot(base: str, grid, medians, fitted, slope_axis: str) -> None:
    lines = [
        "# generated by npiv rate-study",
        "set logscale xy",
        "set xlabel 'sample size n'",
        "set ylabel 'median weighted risk'",
        "set key left bottom",
    ]
    if fitted is not None and slope_axis == "log_n":
        x0, y0 = float(grid[0]), float(medians[0])
        lines.append(f"fit_slope = {fitted!r}")
        lines.append(f"f(x) = {y0!r} * (x / {x0!r}) ** fit_slope")
        plot = "plot '-' using 1:2 with linespoints title 'median risk', f(x) title sprintf('slope %.3f', fit_slope)"
    else:
        plot = "plot '-' using 1:2 with linespoints title 'median risk'"
    lines.append(plot)
    for n, r in zip(grid, medians):
        lines.append(f"{n} {r!r}")
    lines.append("e")
    with open(base + ".gp", "w") as fh:
        fh.write("\n".join(lines) + "\n")


# -- entry points ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="npiv",
        description="Series estimation for instrumental regression with data-driven dimension selection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic sample to CSV")
    p.add_argument("config", help="JSON config with structural/operator/noise sections")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--n", type=int, required=True, help="sample size")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit the series estimator at a fixed dimension")
    p.add_argument("sample", help="sample CSV with header y,z,w")
    p.add_argument("--k", type=int, required=True, help="number of basis functions")
    p.add_argument("--mode", choices=("diagonal", "general"), default="general")
    p.add_argument("--derivative-order", type=int, default=0)
    p.add_argument("--risk-weights", default="const", help="weight spec, e.g. const or derivative:1")
    p.add_argument("--truth", help="JSON file with the structural truth for risk reporting")
    p.add_argument("--j-max", type=int, help="index bound for the risk tail sum")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("select", help="data-driven dimension selection")
    p.add_argument("sample", help="sample CSV with header y,z,w")
    p.add_argument("--risk-weights", default="const")
    p.add_argument("--penalty-const", type=float, default=540.0)
    p.add_argument("--out", help="write the JSON trace here instead of stdout")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("oracle", help="best dimensions and rate values for known weights")
    p.add_argument("--risk-weights", default="const")
    p.add_argument("--smoothness-weights", required=True)
    p.add_argument("--operator-weights", required=True)
    p.add_argument("--link-constant", type=float, default=1.0)
    p.add_argument("--n-grid", required=True, help="comma-separated sample sizes")
    p.add_argument("--k-max", type=int, default=200)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("rate-study", help="Monte Carlo risk study over a sample-size grid")
    p.add_argument("config", help="JSON config; study section supplies defaults")
    p.add_argument("--n-grid", help="comma-separated sample sizes (overrides config)")
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help=f"worker processes (default ${JOBS_ENV} or 1)")
    p.add_argument("--out", required=True, help="output path; .json and .csv are written")
    p.add_argument("--emit-gnuplot", action="store_true", help="also write a gnuplot script")
    p.set_defaults(func=cmd_rate_study)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"npiv: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"npiv: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"npiv: i/o error: {exc}", file=sys.stderr)
        return 3
    except InternalError as exc:
        print(f"npiv: internal error: {exc}", file=sys.stderr)
        return 4


def console_main() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
