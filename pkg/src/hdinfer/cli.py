"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time

import numpy as np

from . import __version__
from .lf import LFOptions, lf
from .model import ConvergenceError, Dataset, InputError
from .projection import ProjectionError
from .qf import QFOptions, qf
from .sim import load_config, parse_index_set, run_mc, with_overrides, write_records, write_reports
from .two_sample import SampleError, TwoSampleData, cate, distance, inner_product

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3

RESULT_FIELDS = ["target", "index", "tau", "est_plugin", "est_debias", "std_err", "ci_lower",
                 "ci_upper", "z_value", "p_value"]


class CSVError(InputError):
    pass


def read_matrix(path: str, header: bool = False) -> np.ndarray:
    """Numeric CSV to a 2-d array; errors name the 1-based row and column."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CSVError(f"{path}: cannot read ({exc.strerror})") from None
    except UnicodeDecodeError:
        raise CSVError(f"{path}: not valid UTF-8") from None
    start = 1 if header else 0
    data = []
    width = None
    for i, row in enumerate(rows[start:], start=start + 1):
        if not row or all(not c.strip() for c in row):
            continue
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise CSVError(f"{path}: row {i} has {len(row)} fields, expected {width}")
        vals = []
        for j, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise CSVError(f"{path}: row {i}, column {j}: {cell.strip()!r} is not a number") from None
            if not math.isfinite(v):
                raise CSVError(f"{path}: row {i}, column {j}: non-finite value")
            vals.append(v)
        data.append(vals)
    if not data:
        raise CSVError(f"{path}: no data rows")
    return np.asarray(data, dtype=float)


def read_vector(path: str, header: bool = False, name: str = "vector") -> np.ndarray:
    M = read_matrix(path, header)
    if M.shape[1] == 1:
        return M[:, 0]
    if M.shape[0] == 1:
        return M[0]
    raise CSVError(f"{path}: {name} must be a single column, got {M.shape[1]} columns")


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


# ---------------------------------------------------------------- argument parsing

def _add_common(sp, two_sample: bool):
    sp.add_argument("--x", required=True, help="design matrix CSV (n rows, p columns)")
    sp.add_argument("--y", required=True, help="outcome CSV (one column)")
    if two_sample:
        sp.add_argument("--x2", required=True, help="second-sample design CSV")
        sp.add_argument("--y2", required=True, help="second-sample outcome CSV")
    sp.add_argument("--header", action="store_true", help="every CSV has a header row")
    sp.add_argument("--model", default="linear", choices=["linear", "logistic", "logistic_alter"])
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--rescale", type=float, default=1.1)
    sp.add_argument("--prob-filter", type=float, default=0.05)
    sp.add_argument("--no-intercept", action="store_true", help="fit without an intercept")
    sp.add_argument("--intercept-loading", action="store_true",
                    help="include the intercept in the loading")
    sp.add_argument("--beta-init", help="initial coefficients CSV (intercept first if fitted)")
    if two_sample:
        sp.add_argument("--beta-init2", help="initial coefficients for the second sample")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="results CSV path (manifest goes to <out>.manifest)")


def _add_group(sp):
    sp.add_argument("--g", required=True, help="1-based index set, e.g. 40:60 or 1,3,5")
    sp.add_argument("--a", help="|G| x |G| weight matrix CSV (default: Sigma_GG)")
    sp.add_argument("--tau", default="0.25,0.5,1", help="comma-separated tau values")
    sp.add_argument("--no-split", action="store_true", help="fit and correct on all rows")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hdinfer",
                                 description="Debiased inference for high-dimensional GLMs")
    ap.add_argument("--version", action="version", version=f"hdinfer {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("lf", help="linear functionals x' beta")
    _add_common(sp, False)
    sp.add_argument("--loading", required=True, help="CSV with p rows, one column per loading")
    sp = sub.add_parser("qf", help="quadratic functional beta_G' A beta_G")
    _add_common(sp, False)
    _add_group(sp)
    sp = sub.add_parser("cate", help="conditional average treatment effect")
    _add_common(sp, True)
    sp.add_argument("--loading", required=True, help="CSV with p rows, one column per loading")
    sp.add_argument("--probability", action="store_true",
                    help="report the probability-scale difference (binary models)")
    for name, text in (("innprod", "inner product beta1_G' A beta2_G"),
                       ("dist", "distance gamma_G' A gamma_G")):
        sp = sub.add_parser(name, help=text)
        _add_common(sp, True)
        _add_group(sp)
    sp = sub.add_parser("simulate", help="Monte Carlo coverage study from a JSON config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--reps", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="report CSV path (manifest goes to <out>.manifest)")
    sp.add_argument("--records", help="optional per-replication CSV")
    sp = sub.add_parser("plotdata", help="CI-per-coefficient plot data from a results file")
    sp.add_argument("--results", required=True)
    sp.add_argument("--out", help="plot-data CSV path (counts go to <out>.counts)")
    return ap


# ---------------------------------------------------------------- commands

def _load_sample(xpath, ypath, header):
    X = read_matrix(xpath, header)
    y = read_vector(ypath, header, "y")
    if X.shape[0] != y.shape[0]:
        raise InputError(f"{xpath} has {X.shape[0]} rows but {ypath} has {y.shape[0]}")
    return Dataset(X, y)


def _lf_options(args) -> LFOptions:
    return LFOptions(alpha=args.alpha, rescale=args.rescale, prob_filter=args.prob_filter,
                     fit_intercept=not args.no_intercept,
                     include_intercept_in_loading=args.intercept_loading, seed=args.seed)


def _qf_options(args, p) -> QFOptions:
    base = _lf_options(args)
    G = parse_index_set(args.g, p)
    A = read_matrix(args.a, args.header) if args.a else None
    try:
        tau = tuple(float(t) for t in args.tau.split(",") if t.strip())
    except ValueError:
        raise InputError(f"--tau: cannot parse {args.tau!r}") from None
    return QFOptions(alpha=base.alpha, rescale=base.rescale, prob_filter=base.prob_filter,
                     fit_intercept=base.fit_intercept,
                     include_intercept_in_loading=base.include_intercept_in_loading,
                     seed=base.seed, G=G, A=A, tau=tau, split=not args.no_split)


def _beta(path, header):
    return None if path is None else read_vector(path, header, "beta-init")


def _loadings(args, p):
    L = read_matrix(args.loading, args.header)
    if L.shape[0] != p and L.shape[1] == p and L.shape[0] == 1:
        L = L.T
    if L.shape[0] != p:
        raise InputError(f"{args.loading}: loadings need {p} rows (one per covariate), "
                         f"got {L.shape[0]}")
    return L


def _rows_from_inference(target, results):
    out = []
    for j, r in enumerate(results, start=1):
        out.append([target, j, "", r.est_plugin, r.est_debias, r.std_err, r.ci_lower,
                    r.ci_upper, r.z_value, r.p_value])
    return out


def _rows_from_quadratic(target, res):
    return [[target, j, r.tau, r.est_plugin, r.est_debias, r.std_err, r.ci_lower, r.ci_upper,
             r.z_value, r.p_value] for j, r in enumerate(res.rows, start=1)]


def run_inference(args):
    if args.command in ("lf", "qf"):
        data = _load_sample(args.x, args.y, args.header)
        inputs = {"x": args.x, "y": args.y}
    else:
        data = TwoSampleData(_load_sample(args.x, args.y, args.header),
                             _load_sample(args.x2, args.y2, args.header))
        inputs = {"x": args.x, "y": args.y, "x2": args.x2, "y2": args.y2}
    p = data.p
    if args.command == "lf":
        inputs["loading"] = args.loading
        res = lf(data, _loadings(args, p), args.model, _lf_options(args),
                 _beta(args.beta_init, args.header))
        rows = _rows_from_inference("lf", res)
    elif args.command == "cate":
        inputs["loading"] = args.loading
        res = cate(data, _loadings(args, p), args.model, _lf_options(args),
                   _beta(args.beta_init, args.header), _beta(args.beta_init2, args.header))
        rows = _rows_from_inference("cate", [r.report(args.probability) for r in res])
    elif args.command == "qf":
        res = qf(data, _qf_options(args, p), args.model, _beta(args.beta_init, args.header))
        rows = _rows_from_quadratic("qf", res)
    else:
        fn = inner_product if args.command == "innprod" else distance
        res = fn(data, _qf_options(args, p), args.model, _beta(args.beta_init, args.header),
                 _beta(args.beta_init2, args.header))
        rows = _rows_from_quadratic(args.command, res)
    for key in ("a", "beta_init", "beta_init2"):
        if getattr(args, key, None):
            inputs[key] = getattr(args, key)
    return rows, inputs


def _options_echo(args) -> dict:
    keys = ["model", "alpha", "rescale", "prob_filter", "no_intercept", "intercept_loading",
            "seed", "tau", "no_split", "g", "probability", "reps", "config"]
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


def write_manifest(stream, command, inputs, options, wall):
    lines = [f"subcommand={command}"]
    lines += [f"input.{k}={v}" for k, v in inputs.items()]
    lines += [f"option.{k}={v}" for k, v in options.items()]
    lines += [f"version={__version__}", f"wall_time={wall:.6f}"]
    stream.write("\n".join(lines) + "\n")


def _emit(args, text, inputs, t0, out_stream):
    wall = time.perf_counter() - t0
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        with open(args.out + ".manifest", "w", encoding="utf-8") as fh:
            write_manifest(fh, args.command, inputs, _options_echo(args), wall)
    else:
        out_stream.write(text)
        write_manifest(sys.stderr, args.command, inputs, _options_echo(args), wall)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def cmd_inference(args, stdout) -> int:
    t0 = time.perf_counter()
    rows, inputs = run_inference(args)
    _emit(args, _csv_text(RESULT_FIELDS, rows), inputs, t0, stdout)
    return EXIT_OK


def cmd_simulate(args, stdout) -> int:
    t0 = time.perf_counter()
    cfg = with_overrides(load_config(args.config), args.reps, args.seed)
    run = run_mc(cfg)
    buf = io.StringIO()
    if args.out:
        write_reports(args.out, run.reports)
    if args.records:
        write_records(args.records, run.records)
    for r in run.reports:
        cov = "nan" if math.isnan(r.coverage) else f"{r.coverage:g}"
        buf.write(f"{r.label}: truth={r.truth:.6g} coverage={cov} "
                  f"avg_length={r.avg_ci_length:.6g} failures={r.failures}/{r.reps}\n")
    stdout.write(buf.getvalue())
    inputs = {"config": args.config}
    wall = time.perf_counter() - t0
    if args.out:
        with open(args.out + ".manifest", "w", encoding="utf-8") as fh:
            write_manifest(fh, "simulate", inputs, {"reps": cfg.reps, "seed": cfg.seed}, wall)
    if any(r.error_grade for r in run.reports):
        sys.stderr.write("error: more than 10% of replications failed\n")
        return EXIT_SOLVER
    return EXIT_OK


def classify(lo: float, hi: float) -> str:
    if lo > 0:
        return "positive"
    if hi < 0:
        return "negative"
    return "spans_zero"


def read_results(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames or not {"ci_lower", "ci_upper"} <= set(reader.fieldnames):
                raise InputError(f"{path}: no ci_lower/ci_upper columns")
            rows = list(reader)
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from None
    if not rows:
        raise InputError(f"{path}: no result rows")
    out = []
    for i, row in enumerate(rows, start=2):
        try:
            out.append((row.get("index") or str(i - 1), float(row["ci_lower"]),
                        float(row["ci_upper"])))
        except (TypeError, ValueError):
            raise InputError(f"{path}: row {i} has a malformed interval") from None
    return out


def cmd_plotdata(args, stdout) -> int:
    rows = read_results(args.results)
    counts = {"positive": 0, "negative": 0, "spans_zero": 0}
    table = []
    for idx, lo, hi in rows:
        sign = classify(lo, hi)
        counts[sign] += 1
        table.append([idx, lo, hi, sign])
    text = _csv_text(["index", "ci_lower", "ci_upper", "sign"], table)
    count_text = "".join(f"{k}={v}\n" for k, v in counts.items())
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        with open(args.out + ".counts", "w", encoding="utf-8") as fh:
            fh.write(count_text)
        stdout.write(count_text)
    else:
        stdout.write(text)
        sys.stderr.write(count_text)
    return EXIT_OK


COMMANDS = {"lf": cmd_inference, "qf": cmd_inference, "cate": cmd_inference,
            "innprod": cmd_inference, "dist": cmd_inference, "simulate": cmd_simulate,
            "plotdata": cmd_plotdata}


def main(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return COMMANDS[args.command](args, stdout)
    except InputError as exc:
        sys.stderr.write(f"input error: {exc}\n")
        return EXIT_INPUT
    except (ProjectionError, ConvergenceError, SampleError, np.linalg.LinAlgError,
            RuntimeError, FloatingPointError) as exc:
        sys.stderr.write(f"solver failure: {exc}\n")
        return EXIT_SOLVER


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
