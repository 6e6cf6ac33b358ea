"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 numerical failure or divergence.
Progress goes to stderr (silenced by ``--quiet``); data goes to stdout or files.
The default output directory comes from ``SBL_AML_OUTPUT_DIR`` (else ``.``).
"""
import argparse
import csv
import io
import json
import logging
import math
import os
import sys

import numpy as np

from . import denoise1d as d1
from .algorithms import ALGORITHMS, AlgorithmConfig, Status, run
from .core import ProblemInstance
from .exceptions import SBLInputError, SBLNumericalError, WindowTooShortError
from .harness import PRESETS, load_spec, preset, run_matrix, write_results
from .io import (format_float, read_matrix, read_summary, read_vector, run_summary,
                 write_summary, write_trace_csv)

logger = logging.getLogger("sbl_aml")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2
OUTPUT_ENV = "SBL_AML_OUTPUT_DIR"
RATES_HEADER = ("alg", "r", "p_theory", "zeta_theory", "p_est", "zeta_est", "regime")

_DEFAULTS = AlgorithmConfig()


def _default_out():
    return os.environ.get(OUTPUT_ENV, ".")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _emit(text):
    sys.stdout.write(text)
    sys.stdout.flush()


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(v):
    if v is None:
        return ""
    return "nan" if isinstance(v, float) and math.isnan(v) else format_float(v)


def _jsonable(v):
    return repr(v) if isinstance(v, float) and not math.isfinite(v) else v


# -- solve -----------------------------------------------------------------

def _load_gamma0(text, n):
    if text is None:
        return np.ones(n)
    try:
        value = float(text)
    except ValueError:
        g = read_vector(text)
        if g.shape[0] != n:
            raise SBLInputError(f"{text}: gamma0 has length {g.shape[0]}, dictionary has {n} columns")
        return g
    return np.full(n, value)


def cmd_solve(args):
    F = read_matrix(args.dictionary)
    y = read_vector(args.observation)
    if F.shape[0] != y.shape[0]:
        raise SBLInputError(
            f"{args.observation}: observation has length {y.shape[0]}, {args.dictionary} has {F.shape[0]} rows")
    problem = ProblemInstance(F, y, args.beta)
    gamma0 = _load_gamma0(args.gamma0, F.shape[1])
    if not np.all(gamma0 > 0):
        raise SBLInputError("gamma0 must be strictly positive")
    config = AlgorithmConfig(args.alg, args.tau, args.eps, args.eta0, args.max_iters, args.tol,
                             args.prune_tol)

    def progress(k, gamma):
        if k and k % 100 == 0:
            logger.info("iteration %d, %d active", k, int(np.sum(gamma > 0)))

    gamma, _, trace = run(problem, gamma0, config, progress)
    os.makedirs(args.out, exist_ok=True)
    write_trace_csv(trace, os.path.join(args.out, "trace.csv"), timing=args.timing)
    summary = run_summary(gamma, trace, config, beta=float(args.beta), seed=args.seed)
    write_summary(os.path.join(args.out, "summary.json"), summary)

    L = summary["objective"]
    if args.format == "json":
        _emit(json.dumps({"objective": _jsonable(L), "iterations": trace.n_iter,
                          "active_count": summary["active_count"], "status": summary["status"]},
                         sort_keys=True) + "\n")
    else:
        _emit(_csv_text(("objective", "iterations", "active_count", "status"),
                        [(_num(L), trace.n_iter, summary["active_count"], summary["status"])]))
    if trace.status in (Status.DIVERGED, Status.NUMERICAL_ERROR):
        logger.error("run ended with status %s after %d iterations", summary["status"], trace.n_iter)
        return EXIT_NUMERICAL
    return EXIT_OK


# -- denoise1d -------------------------------------------------------------

def cmd_denoise1d(args):
    problem = d1.DenoiseScalarProblem(args.y_sq, args.b)
    traj = d1.trajectory(args.alg, problem, args.gamma0, args.iters)
    target = d1.closed_form_gamma(problem)
    rows = [(k, _num(float(g)), _num(abs(float(g) - target))) for k, g in enumerate(traj)]
    if args.format == "json":
        _emit(json.dumps({"alg": args.alg, "gamma_star": target,
                          "gamma": [float(g) for g in traj]}) + "\n")
    else:
        _emit(_csv_text(("iter", "gamma", "error"), rows))
    return EXIT_OK


# -- rates -----------------------------------------------------------------

def rate_rows(r_list, b=1.0, gamma0=1.0, iters=10000, algorithms=d1.SCALAR_ALGORITHMS):
    """Theoretical and empirical ``(p, zeta)`` per algorithm and ratio.

    Rows whose trajectory is too short to estimate report ``nan`` estimates
    and a ``regime`` suffixed with ``|window_too_short``.
    """
    rows = []
    for r in r_list:
        if not r > 0:
            raise SBLInputError(f"r must be positive, got {r}")
        problem = d1.DenoiseScalarProblem.from_ratio(r, b)
        for alg in algorithms:
            info = d1.theoretical_rate(alg, problem)
            regime = info.regime + ("|sublinear" if info.sublinear else "")
            try:
                p_est, z_est = d1.empirical_rate(alg, problem, gamma0, iters)
            except WindowTooShortError as exc:
                logger.warning("%s", exc)
                p_est = z_est = float("nan")
                regime += "|window_too_short"
            rows.append({"alg": alg, "r": float(r), "p_theory": info.order, "zeta_theory": info.rate,
                         "p_est": p_est, "zeta_est": z_est, "regime": regime})
    return rows


def cmd_rates(args):
    rows = rate_rows(args.r_list, args.b, args.gamma0, args.iters)
    if args.format == "json":
        _emit(json.dumps([{k: _jsonable(v) for k, v in row.items()} for row in rows], indent=2) + "\n")
    else:
        _emit(_csv_text(RATES_HEADER, [
            [row["alg"], _num(row["r"]), _num(row["p_theory"]), _num(row["zeta_theory"]),
             _num(row["p_est"]), _num(row["zeta_est"]), row["regime"]] for row in rows]))
    return EXIT_OK


# -- experiment ------------------------------------------------------------

def cmd_experiment(args):
    if (args.spec is None) == (args.preset is None):
        raise SBLInputError("give exactly one of a spec file or --preset")
    spec = load_spec(args.spec) if args.spec else preset(args.preset)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.repetitions is not None:
        overrides["repetitions"] = args.repetitions
    if args.timing:
        overrides["record_timing"] = True
    if overrides:
        spec = spec.from_dict({**spec.to_dict(), **overrides})
    results = run_matrix(spec, jobs=args.jobs)
    manifest = write_results(spec, results, args.out)
    failed = [c["name"] for c in manifest["cells"]
              if c["status"] in (Status.DIVERGED.value, Status.NUMERICAL_ERROR.value)]
    for name in failed:
        logger.warning("cell %s did not terminate normally", name)
    _emit(f"{len(results)} cells written to {args.out}\n")
    return EXIT_OK


# -- emit-plot-data --------------------------------------------------------

def _series_name(cell, multi_tau):
    if cell["algorithm"] == "amq" and multi_tau:
        return f"amq_tau{_num(cell['tau'])}"
    return cell["algorithm"]


def _read_column(path, column):
    with open(path, newline="") as fh:
        return [row[column] for row in csv.DictReader(fh)]


def panel_tables(result_dir, panel=None):
    """``{panel_id: (header, rows)}`` built from a result directory's manifest."""
    path = os.path.join(result_dir, "manifest.json")
    if not os.path.isfile(path):
        raise SBLInputError(f"{result_dir}: no manifest.json found")
    try:
        manifest = read_summary(path)
        cells = manifest["cells"]
    except (ValueError, KeyError) as exc:
        raise SBLInputError(f"{path}: invalid manifest ({exc})") from exc
    panels = {}
    for cell in cells:
        panels.setdefault(cell["panel"], []).append(cell)
    if panel is not None:
        if panel not in panels:
            raise SBLInputError(f"{result_dir}: no panel {panel!r}; available: {sorted(panels)}")
        panels = {panel: panels[panel]}

    tables = {}
    for pid, members in panels.items():
        multi_tau = sum(c["algorithm"] == "amq" for c in members) > 1
        names, columns = [], []
        for cell in members:
            names.append(_series_name(cell, multi_tau))
            if cell.get("error_file"):
                fname, col = cell["error_file"], "log_error"
            else:
                fname, col = cell["trace_file"], "objective"
            fpath = os.path.join(result_dir, fname)
            if not os.path.isfile(fpath):
                logger.warning("panel %s: missing %s, series %s left empty", pid, fname, names[-1])
                columns.append([])
                continue
            columns.append(_read_column(fpath, col))
        length = max((len(c) for c in columns), default=0)
        rows = [[k] + [c[k] if k < len(c) else "" for c in columns] for k in range(length)]
        tables[pid] = (["iter"] + names, rows)
    return tables


def cmd_emit_plot_data(args):
    tables = panel_tables(args.result_dir, args.panel)
    out = args.out or os.path.join(args.result_dir, "plots")
    os.makedirs(out, exist_ok=True)
    for pid, (header, rows) in sorted(tables.items()):
        with open(os.path.join(out, f"panel_{pid}.csv"), "w", newline="") as fh:
            fh.write(_csv_text(header, rows))
    _emit(f"{len(tables)} panels written to {out}\n")
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (recorded; overrides spec seeds)")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="suppress progress on stderr")

    parser = argparse.ArgumentParser(prog="sbl-aml", description=__doc__.splitlines()[0],
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="run one algorithm on a dictionary/observation pair")
    p.add_argument("dictionary", help="dictionary matrix (.csv or .bin)")
    p.add_argument("observation", help="observation vector (.csv or .bin)")
    p.add_argument("--beta", type=float, default=1.0, help="noise precision")
    p.add_argument("--alg", choices=ALGORITHMS, default=_DEFAULTS.algorithm)
    p.add_argument("--tau", type=float, default=_DEFAULTS.tau)
    p.add_argument("--eps", type=float, default=_DEFAULTS.epsilon)
    p.add_argument("--eta0", type=float, default=_DEFAULTS.eta0)
    p.add_argument("--tol", type=float, default=_DEFAULTS.rel_tol)
    p.add_argument("--max-iters", type=int, default=_DEFAULTS.max_iters)
    p.add_argument("--prune-tol", type=float, default=_DEFAULTS.prune_tol)
    p.add_argument("--gamma0", default=None, help="scalar start value or vector file (default 1)")
    p.add_argument("--out", default=None, help="output directory for trace.csv and summary.json")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--timing", action="store_true", help="record wall-clock elapsed_ms in the trace")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("denoise1d", parents=[common], help="scalar denoising trajectory")
    p.add_argument("--alg", choices=d1.SCALAR_ALGORITHMS, default="em")
    p.add_argument("--y-sq", type=float, required=True)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--gamma0", type=float, default=1.0)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_denoise1d)

    p = sub.add_parser("rates", parents=[common], help="theoretical vs empirical convergence rates")
    p.add_argument("--r-list", type=_float_list, default=[0.25, 0.5, 2.0, 4.0, 20.0])
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--gamma0", type=float, default=1.0)
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("experiment", parents=[common], help="run an experiment matrix")
    p.add_argument("spec", nargs="?", default=None, help="JSON experiment spec")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--timing", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("emit-plot-data", parents=[common], help="reshape results into per-panel CSVs")
    p.add_argument("result_dir")
    p.add_argument("--panel", default=None)
    p.add_argument("--out", default=None, help="default: RESULT_DIR/plots")
    p.set_defaults(func=cmd_emit_plot_data)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    # shared flags may appear before or after the subcommand
    args.seed = getattr(args, "seed", None)
    args.quiet = getattr(args, "quiet", False)
    if getattr(args, "out", "unset") is None and args.command != "emit-plot-data":
        args.out = _default_out()
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    if args.quiet:
        logging.getLogger().setLevel(logging.ERROR)
    try:
        return args.func(args)
    except SBLInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SBLNumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
