"""Command line interface: ``lfdrmm {fit,decide,convert,simulate1,simulate2,bench}``.

Machine-readable output goes to files or stdout, the human summary to stderr.
Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 numeric domain error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from typing import List, Optional

import numpy as np

from . import __version__
from ._threads import THREADS_ENV, default_threads
from .errors import ConfigError, DataIOError, DomainError, LfdrError
from .estimators import MLBounds, bh_stepup, fit_ml, fit_mm, stats_to_pvalues
from .ingest import KINDS, POLICIES, ColumnMapping, build_report, load_stat_vector, read_report, write_report
from .mixture import DEFAULT_U, DecisionConfig, decide, lfdr, threshold_hu
from .simulation import (PAPER_PI0_SWEEP, SimConfig1, SimConfig2, metrics_csv, n_assoc_for,
                         run_sim1, run_sim2, sweep)

log = logging.getLogger("lfdrmm")

DELIMITERS = {"tab": "\t", "\\t": "\t", "comma": ",", ",": ",", "space": " ", ";": ";"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _delimiter(name: str) -> str:
    try:
        return DELIMITERS[name]
    except KeyError:
        raise ConfigError(f"unknown delimiter {name!r}; use one of {sorted(DELIMITERS)}")


def _decision(args) -> DecisionConfig:
    if args.losses is not None:
        if args.u is not None:
            raise ConfigError("--u and --losses are mutually exclusive")
        return DecisionConfig.from_losses(*args.losses)
    try:
        return DecisionConfig(DEFAULT_U if args.u is None else args.u)
    except DomainError as exc:
        raise ConfigError(f"--u: {exc}") from exc


def _threads(args) -> int:
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return args.threads or default_threads()


def _ml_bounds(args) -> MLBounds:
    if args.ml_d is None:
        raise ConfigError("--ml-d (upper bound on lambda) is required for maximum likelihood")
    return MLBounds(c=args.ml_c, d=args.ml_d, n_pi0=args.ml_grid[0], n_lambda=args.ml_grid[1],
                    tol=args.ml_tol)


def _mapping(args) -> ColumnMapping:
    return ColumnMapping(id=args.id_col, beta=args.beta_col, se=args.se_col, p=args.p_col,
                         value=args.value_col)


def _load(args):
    stats, diag = load_stat_vector(args.input, _mapping(args), args.kind, df=args.df,
                                   delimiter=_delimiter(args.delimiter), policy=args.policy)
    _say(f"read {stats.n} statistics ({diag.rows_skipped} rows skipped, "
         f"{diag.zero_floored} zeros floored, {diag.t_clamped} t tails clamped, "
         f"{diag.p_mismatches} p-value mismatches)")
    return stats


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


# -- subcommands -----------------------------------------------------------------

def cmd_fit(args) -> int:
    start = time.perf_counter()
    config = _decision(args) if args.method != "bh" else None
    if args.method != "bh" and args.output in (None, "-"):
        raise ConfigError("fit needs --output FILE for the report")
    bounds = _ml_bounds(args) if args.method == "ml" else None
    stats = _load(args)
    threads = _threads(args)
    if args.method == "bh":
        p = stats_to_pvalues(stats)
        res = bh_stepup(p, args.alpha)
        ids = stats.ids if stats.ids is not None else [str(i + 1) for i in range(stats.n)]
        out = _open_out(args.output)
        try:
            out.write(f"# method: bh\n# alpha: {args.alpha!r}\n# n: {stats.n}\n# rejections: {res.k}\n")
            w = csv.writer(out, lineterminator="\n")
            w.writerow(["id", "x", "p", "reject"])
            for i, xi, pi, r in zip(ids, stats.stats.tolist(), p.tolist(), res.rejected.tolist()):
                w.writerow([i, repr(xi), repr(pi), int(r)])
        finally:
            if out is not sys.stdout:
                out.close()
        _say(f"BH at alpha={args.alpha}: {res.k} rejections "
             f"({time.perf_counter() - start:.3f} s)")
        return 0
    if args.method == "mm":
        fit = fit_mm(stats, threads=threads)
    else:
        fit = fit_ml(stats, bounds, threads=threads)
    report = build_report(stats, fit, config)
    write_report(report, args.output)
    lam = "undefined" if fit.params.lam is None else f"{fit.params.lam:.4f}"
    _say(f"method={fit.method.value} pi0_hat={fit.params.pi0:.4f} lambda_hat={lam} "
         f"u={config.u:g} h_u={report.h_u:.6g} rejections={report.rejections} "
         f"fit_time={fit.wall_time:.3f}s total_time={time.perf_counter() - start:.3f}s")
    if fit.diagnostics.flags():
        _say("flags: " + ", ".join(fit.diagnostics.flags()))
    return 0


def cmd_decide(args) -> int:
    rep = read_report(args.report)
    config = _decision(args)
    rep.reject = decide(rep.x, rep.params, config)
    rep.lfdr_hat = np.asarray(lfdr(rep.x, rep.params)).reshape(-1)
    rep.u = config.u
    rep.h_u = threshold_hu(rep.params, config)
    write_report(rep, args.output)
    _say(f"u={config.u:g} h_u={rep.h_u:.6g} rejections={rep.rejections}")
    return 0


def cmd_convert(args) -> int:
    stats = _load(args)
    ids = stats.ids if stats.ids is not None else [str(i + 1) for i in range(stats.n)]
    out = _open_out(args.output)
    try:
        w = csv.writer(out, delimiter="\t", lineterminator="\n")
        w.writerow(["id", "x"])
        for i, xi in zip(ids, stats.stats.tolist()):
            w.writerow([i, repr(xi)])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _methods(text: str):
    methods = [m.strip().lower() for m in text.split(",") if m.strip()]
    if not methods:
        raise ConfigError("no methods given")
    return methods


def _emit_csv(reports, path, start):
    text = metrics_csv(reports)
    out = _open_out(path)
    try:
        out.write(text)
    finally:
        if out is not sys.stdout:
            out.close()
    _say(f"{len(reports)} rows in {time.perf_counter() - start:.2f} s")


def cmd_simulate1(args) -> int:
    start = time.perf_counter()
    methods = _methods(args.methods)
    bounds = _ml_bounds(args) if "ml" in methods else None
    threads = _threads(args)
    random_or = tuple(args.random_or) if args.random_or else None

    def make(pi0, i):
        return SimConfig1(n_total=args.n_total, n_assoc=n_assoc_for(pi0, args.n_total),
                          or_value=args.odds_ratio, sigma2=args.sigma2,
                          replicates=args.replicates, seed=args.seed, random_or=random_or,
                          lfdr_threshold=args.threshold, stream=i)

    def run(cfg):
        return run_sim1(cfg, methods, ml_bounds=bounds, bh_alpha=args.alpha, threads=threads)

    _emit_csv(sweep(run, make, args.pi0), args.output, start)
    return 0


def cmd_simulate2(args) -> int:
    start = time.perf_counter()
    methods = _methods(args.methods)
    bounds = _ml_bounds(args) if "ml" in methods else None
    threads = _threads(args)

    def make(pi0, i):
        return SimConfig2(r=args.cases, s=args.controls, p=args.allele_freq, v0=args.v0,
                          or2=args.or2, n_total=args.n_total,
                          n_assoc=n_assoc_for(pi0, args.n_total), replicates=args.replicates,
                          seed=args.seed, lfdr_threshold=args.threshold, stream=i)

    def run(cfg):
        return run_sim2(cfg, methods, ml_bounds=bounds, bh_alpha=args.alpha, threads=threads)

    _emit_csv(sweep(run, make, args.pi0), args.output, start)
    return 0


def cmd_bench(args) -> int:
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    rng = np.random.default_rng(args.seed)
    n_assoc = n_assoc_for(args.pi0, args.n)
    y = rng.standard_normal(args.n)
    y[:n_assoc] += np.sqrt(args.lam)
    x = np.maximum(y * y, 1e-12)
    threads = _threads(args)
    lines = []
    t0 = time.perf_counter()
    fit = fit_mm(x, threads=threads)
    dt = time.perf_counter() - t0
    lines.append(f"fit_mm\tn={args.n}\tseconds={dt:.4f}\tper_sec={args.n / dt:.4g}"
                 f"\tpi0={fit.params.pi0:.6f}\tlambda={fit.params.lam}")
    if args.ml:
        t0 = time.perf_counter()
        fit = fit_ml(x, _ml_bounds(args), threads=threads)
        dt = time.perf_counter() - t0
        lines.append(f"fit_ml\tn={args.n}\tseconds={dt:.4f}\tper_sec={args.n / dt:.4g}"
                     f"\tpi0={fit.params.pi0:.6f}\tlambda={fit.params.lam}")
    print("\n".join(lines))
    return 0


# -- parser ----------------------------------------------------------------------

def _add_common(p, threads=True):
    if threads:
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default: ${THREADS_ENV} or CPU count); "
                            "output does not depend on it")


def _add_input(p):
    p.add_argument("--input", "-i", required=True, help="delimited text file with a header row")
    p.add_argument("--kind", choices=KINDS, default="beta-se",
                   help="how to turn columns into chi-square(1) statistics")
    p.add_argument("--delimiter", default="tab", help="tab, comma, space or ';'")
    p.add_argument("--id-col")
    p.add_argument("--beta-col")
    p.add_argument("--se-col")
    p.add_argument("--p-col", help="optional p-value column, cross-checked only")
    p.add_argument("--value-col", help="statistic column for --kind chisq/z/t")
    p.add_argument("--df", type=float, default=100.0, help="t degrees of freedom (--kind t)")
    p.add_argument("--policy", choices=POLICIES, default="abort",
                   help="what to do with malformed rows")


def _add_decision(p):
    p.add_argument("--u", type=float, default=None,
                   help=f"LFDR cut-off in (0,1), default {DEFAULT_U}")
    p.add_argument("--losses", type=float, nargs=2, metavar=("L_I", "L_II"),
                   help="type I / type II losses; u = L_II / (L_I + L_II)")


def _add_ml(p):
    p.add_argument("--ml-c", type=float, default=0.0, help="lower lambda bound")
    p.add_argument("--ml-d", type=float, default=None, help="upper lambda bound (required for ml)")
    p.add_argument("--ml-grid", type=int, nargs=2, default=(101, 301), metavar=("NPI0", "NLAM"))
    p.add_argument("--ml-tol", type=float, default=1e-6)


def _add_sim(p):
    p.add_argument("--n-total", type=int, required=True)
    p.add_argument("--replicates", "-b", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pi0", type=_float_list, default=list(PAPER_PI0_SWEEP),
                   help="comma separated null proportions (default: 13-level sweep)")
    p.add_argument("--methods", default="mm,bh", help="comma separated subset of mm,ml,bh")
    p.add_argument("--threshold", type=float, default=0.05, help="LFDR threshold for precision")
    p.add_argument("--alpha", type=float, default=0.05, help="BH FDR level")
    p.add_argument("--output", "-o", default="-")
    _add_ml(p)
    _add_common(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lfdrmm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="key = value file supplying defaults for flags")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("fit", help="fit the mixture and write an LFDR report")
    _add_input(p)
    p.add_argument("--output", "-o")
    p.add_argument("--method", choices=("mm", "ml", "bh"), default="mm")
    p.add_argument("--alpha", type=float, default=0.05, help="FDR level for --method bh")
    _add_decision(p)
    _add_ml(p)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("decide", help="re-apply a cut-off to an existing report")
    p.add_argument("--report", required=True)
    p.add_argument("--output", "-o", required=True)
    _add_decision(p)
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("convert", help="write chi-square(1) statistics from t, z or beta/se")
    _add_input(p)
    p.add_argument("--output", "-o", default="-")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("simulate1", help="normal log-OR simulation over a pi0 sweep")
    _add_sim(p)
    p.add_argument("--odds-ratio", type=float, default=1.5)
    p.add_argument("--sigma2", type=float, default=0.01)
    p.add_argument("--random-or", type=float, nargs=2, metavar=("MEAN", "SD"),
                   help="draw one OR per associated item from N(MEAN, SD^2)")
    p.set_defaults(func=cmd_simulate1)

    p = sub.add_parser("simulate2", help="case-control genotype simulation over a pi0 sweep")
    _add_sim(p)
    p.add_argument("--cases", type=int, default=60000)
    p.add_argument("--controls", type=int, default=120000)
    p.add_argument("--allele-freq", type=float, default=0.2)
    p.add_argument("--v0", type=float, default=0.01)
    p.add_argument("--or2", type=float, default=1.5)
    p.set_defaults(func=cmd_simulate2)

    p = sub.add_parser("bench", help="time fits on synthetic in-memory statistics")
    p.add_argument("--n", type=int, default=10_000_000)
    p.add_argument("--pi0", type=float, default=0.9)
    p.add_argument("--lam", type=float, default=16.44)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ml", action="store_true", help="also time maximum likelihood")
    _add_ml(p)
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def _read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment, keys use flag names."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected key = value")
        out[key.strip().lstrip("-").replace("-", "_")] = val.strip()
    return out


def _with_config(parser, argv):
    """Insert ``--config`` values as flags right after the subcommand.

    Flags given on the command line come later and therefore win.  The
    config file may also supply flags the subcommand marks as required.
    """
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return argv
    cfg = _read_config(known.config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    idx = next((i for i, tok in enumerate(argv) if tok in sub.choices), None)
    if idx is None:
        return argv
    cmd = argv[idx]
    known_actions = {a.dest: a for a in sub.choices[cmd]._actions}
    extra = []
    for key, val in cfg.items():
        if key not in known_actions:
            raise ConfigError(f"unknown config key {key!r} for {cmd}")
        action = known_actions[key]
        flag = next((o for o in action.option_strings if o.startswith("--")),
                    action.option_strings[0])
        if isinstance(action, argparse._StoreTrueAction):
            if val.lower() in ("1", "true", "yes"):
                extra.append(flag)
        elif action.nargs in (2, "+", "*"):
            extra.extend([flag, *val.split()])
        else:
            extra.extend([flag, val])
    return argv[: idx + 1] + extra + argv[idx + 1:]


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_with_config(parser, argv))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        return args.func(args)
    except LfdrError as exc:
        _say(f"error: {exc}")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
