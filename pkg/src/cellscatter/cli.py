"""Command line: ``cellscatter estimate | filter | simulate``.

Exit codes: 0 success, 2 input or parse error, 3 numerical failure,
4 configuration error.
"""

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import _kernels
from .data import Dataset, PatternIndex
from .errors import ConfigError, InputError, NumericalError
from .filters import FilterConfig, FlagSource, external_filter_adapter, uf, ubf
from .io import dumps_json, format_number, load_config, read_csv, write_text
from .lab import PRESETS, ScenarioConfig, campaign_csv, preset, run_campaign
from .pipeline import PipelineSpec, run_pipeline

log = logging.getLogger("cellscatter")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_CONFIG = 4

THREADS_ENV = "CELLSCATTER_THREADS"


def _default_threads():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None


def _filter_args(p):
    p.add_argument("--alpha-uni", type=float, default=0.95, help="univariate filter quantile level")
    p.add_argument("--alpha-biv", type=float, default=0.85, help="bivariate filter quantile level")
    p.add_argument("--delta", type=float, default=0.10, help="binomial flag-count probability")
    p.add_argument("--na-token", default="NA", help="token marking a missing cell (default NA)")
    p.add_argument("--output-dir", default=".", help="directory for output files")


def build_parser():
    parser = argparse.ArgumentParser(prog="cellscatter", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="robust location and scatter of a CSV matrix")
    est.add_argument("input", help="CSV file, optional header row")
    est.add_argument("--filter", choices=("none", "uf", "ubf"), default="ubf")
    est.add_argument("--external-mask", help="0/1 matrix (1 = keep); intersected with the filter")
    est.add_argument("--estimator", choices=("gse", "gre"), default="gre")
    est.add_argument("--init", choices=("emve", "emve-c"), default="emve-c")
    est.add_argument("--rocke-alpha", type=float, default=0.05)
    est.add_argument("--subsamples", type=int, default=0, help="number of subsamples (0 = default)")
    est.add_argument("--subsample-size", type=int, default=0, help="subsample size (0 = default)")
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--threads", type=int, default=None, help=f"worker threads (env {THREADS_ENV})")
    _filter_args(est)

    flt = sub.add_parser("filter", help="flag outlying cells only")
    flt.add_argument("input")
    flt.add_argument("--filter", choices=("uf", "ubf"), default="ubf")
    _filter_args(flt)

    sim = sub.add_parser("simulate", help="run a simulation campaign")
    src = sim.add_mutually_exclusive_group(required=True)
    src.add_argument("config", nargs="?", help="YAML/JSON campaign file")
    src.add_argument("--preset", choices=sorted(PRESETS))
    sim.add_argument("--replicates", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--threads", type=int, default=None)
    sim.add_argument("--output-dir", default=".")
    return parser


def _filter_cfg(args):
    try:
        return FilterConfig(alpha_uni=args.alpha_uni, alpha_biv=args.alpha_biv, delta=args.delta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _load(args):
    x, header = read_csv(args.input, args.na_token)
    data = Dataset.from_array(x)
    names = header or [f"V{j + 1}" for j in range(data.p)]
    return data, names


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _flags_csv(report, names):
    lines = ["row,column,name,source,m,c"]
    for i, j in report.flagged_cells():
        src = FlagSource(int(report.flagged_by[i, j])).name.lower()
        lines.append(f"{i + 1},{j + 1},{names[j]},{src},{report.m_counts[i, j]},{report.c_counts[i, j]}")
    return "\n".join(lines) + "\n"


def _timing(path, seconds, threads):
    # kept apart so the result files stay byte-stable
    write_text(os.path.join(path, "timing.json"),
               dumps_json({"seconds": seconds, "threads": threads, "backend": _backend()}))


def _backend():
    from ._accel import backend_name

    return backend_name()


def cmd_estimate(args):
    t0 = time.perf_counter()
    data, names = _load(args)
    n, p = data.n, data.p
    if n <= 2 * p:
        raise InputError(f"estimator requires n > 2p (n = {n}, p = {p})")
    if n < 5 * p:
        log.warning("n = %d is below 5p = %d; the estimate may be unstable", n, 5 * p)
    threads = args.threads or _default_threads()
    ext = external_filter_adapter(data, args.external_mask) if args.external_mask else None
    try:
        spec = PipelineSpec(
            filter=args.filter, estimator=args.estimator, init=args.init,
            filter_cfg=_filter_cfg(args), rocke_alpha=args.rocke_alpha,
            n_subsamples=args.subsamples, subsample_size=args.subsample_size, seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    res = run_pipeline(data, spec, external_mask=ext, threads=threads)
    est = res.estimate
    sigma = 0.5 * (est.sigma + est.sigma.T)

    # distances on every originally observed cell
    index = PatternIndex.from_mask(data.u)
    dist, _ = _kernels.partial_mahalanobis(
        data.x, index.patterns, index.order, index.starts, est.mu, sigma,
    )
    out = _outdir(args.output_dir)
    flagged = int(np.count_nonzero(data.u & ~res.mask))
    doc = {
        "pipeline": spec.name,
        "n": n,
        "p": p,
        "columns": names,
        "mu": est.mu,
        "sigma": sigma,
        "scale": est.scale,
        "iterations": est.iterations,
        "converged": bool(est.converged),
        "flagged_cells": flagged,
        "dropped_cases": [int(i) + 1 for i in est.dropped],
        "seed": args.seed,
    }
    write_text(os.path.join(out, "estimate.json"), dumps_json(doc))
    lines = ["row,distance,weight,observed"]
    for i in range(n):
        lines.append(f"{i + 1},{format_number(dist[i])},{format_number(est.weights[i])},{int(data.u[i].sum())}")
    write_text(os.path.join(out, "cases.csv"), "\n".join(lines) + "\n")
    if res.report is not None:
        write_text(os.path.join(out, "flags.csv"), _flags_csv(res.report, names))
    _timing(out, time.perf_counter() - t0, threads)
    print(f"{spec.name}: converged={est.converged} iterations={est.iterations} "
          f"flagged={flagged} -> {out}")
    return EXIT_OK


def cmd_filter(args):
    t0 = time.perf_counter()
    data, names = _load(args)
    cfg = _filter_cfg(args)
    report = ubf(data, cfg) if args.filter == "ubf" else uf(data, cfg)
    out = _outdir(args.output_dir)
    write_text(os.path.join(out, "flags.csv"), _flags_csv(report, names))
    _timing(out, time.perf_counter() - t0, 1)
    print(f"{args.filter}: flagged {report.n_flagged} of {int(data.u.sum())} observed cells -> {out}")
    return EXIT_OK


def cmd_simulate(args):
    threads = args.threads or _default_threads()
    if args.preset:
        cfg = preset(args.preset, replicates=args.replicates, seed=args.seed, threads=threads)
    else:
        raw = load_config(args.config)
        if args.replicates is not None:
            raw["replicates"] = args.replicates
        if args.seed is not None:
            raw["seed"] = args.seed
        raw["threads"] = threads
        try:
            cfg = ScenarioConfig.from_dict(raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    result = run_campaign(cfg)
    out = _outdir(args.output_dir)
    write_text(os.path.join(out, "campaign.csv"), campaign_csv(result))
    write_text(os.path.join(out, "summary.json"), dumps_json(result.summary()))
    _timing(out, result.seconds, threads)
    print(f"{len(cfg.estimators)} estimators x {cfg.replicates} replicates -> {out}")
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "filter": cmd_filter, "simulate": cmd_simulate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="cellscatter: %(levelname)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"cellscatter: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"cellscatter: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"cellscatter: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining ValueErrors come from argument values
        print(f"cellscatter: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
