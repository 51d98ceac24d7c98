"""Command line entry point: ``transfqi <command> [--config PATH] [--out DIR] ...``.

Exit codes: 0 success, 1 validation error (bad flags, missing or malformed
input), 2 solver failure or a failed verification check.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from ..errors import SolverError, TransFQIError, ValidationError

log = logging.getLogger("transfqi")

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; route it to the validation code instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError("%s: %s" % (self.prog, message))


def _add_common(p, config=True):
    if config:
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--profile", help="built-in config profile (used when --config is absent)")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default: 1)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def build_parser():
    parser = _Parser(prog="transfqi", description="Transfer fitted Q-iteration experiments.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="write target/source transition CSVs per grid cell")
    _add_common(p)
    p.add_argument("--replication", type=int, default=0)

    p = sub.add_parser("run", help="run an experiment grid and write results.csv")
    _add_common(p)

    p = sub.add_parser("oracle", help="build and cache the Q* references of a config")
    _add_common(p)

    p = sub.add_parser("report", help="summaries and SVG boxplots of a results CSV")
    _add_common(p, config=False)
    p.add_argument("--results", help="results CSV (default: OUT/results.csv)")

    p = sub.add_parser("check", help="run the built-in verification suites")
    _add_common(p, config=False)

    p = sub.add_parser("fit", help="fit a Q function to a transition CSV")
    _add_common(p, config=False)
    p.add_argument("--data", required=True, help="transition CSV (task 0 is the target)")
    p.add_argument("--method", default="two_step",
                   choices=["two_step", "one_step", "no_transfer"])
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--engine", help="engine options as a JSON object")
    return parser


def _load(args):
    from .config import ExperimentConfig, load_config, profile
    if args.config:
        cfg = load_config(args.config)
    elif args.profile:
        cfg = profile(args.profile)
    else:
        cfg = profile("default")
    if args.seed is not None:
        if args.seed < 0:
            raise ValidationError("--seed must be nonnegative")
        doc = cfg.to_dict()
        doc["master_seed"] = args.seed
        cfg = ExperimentConfig.from_dict(doc)
    return cfg


def _threads(args):
    if args.threads < 1:
        raise ValidationError("--threads must be >= 1")
    return args.threads


def cmd_simulate(args):
    from ..simenv import write_transitions_csv
    from .experiment import cell_data
    cfg = _load(args)
    env = cfg.env
    if not 0 <= args.replication < cfg.replications:
        raise ValidationError("--replication must lie in [0, %d)" % cfg.replications)
    os.makedirs(args.out, exist_ok=True)
    for si, s in enumerate(env["sigma_c"]):
        for ii, n in enumerate(env["i_source"]):
            target, sources = cell_data(cfg, si, ii, args.replication)
            path = os.path.join(args.out, "transitions_sigma%g_i%d_rep%d.csv"
                                % (s, n, args.replication))
            write_transitions_csv([target, *sources], path)
            print(path)
    return EXIT_OK


def cmd_run(args):
    from .experiment import run_experiment, write_results_csv
    cfg = _load(args)
    threads = _threads(args)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.json"), "w") as fh:
        fh.write(cfg.to_json() + "\n")
    total = len(cfg.env["sigma_c"]) * len(cfg.env["i_source"]) * cfg.replications
    done = [0]

    def progress(cell):
        done[0] += 1
        log.info("cell %d/%d done (sigma %d, source %d, rep %d)", done[0], total, *cell)

    rows = run_experiment(cfg, threads, os.path.join(args.out, "refs"), progress)
    path = os.path.join(args.out, "results.csv")
    write_results_csv(rows, path)
    failed = sum(1 for r in rows if r.note)
    print("%s: %d rows, %d failed fits" % (path, len(rows), failed))
    return EXIT_OK


def cmd_oracle(args):
    from .experiment import get_reference
    cfg = _load(args)
    cache = os.path.join(args.out, "refs")
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(_threads(args)) as pool:
        refs = list(pool.map(lambda r: get_reference(cfg, r, cache), range(cfg.replications)))
    for rep, ref in enumerate(refs):
        print("rep %d: %s, %d points, vmax %.4g, mean stderr %.3g"
              % (rep, ref.method, len(ref), ref.vmax, float(ref.stderr.mean())))
    return EXIT_OK


def cmd_report(args):
    from .report import report
    results = args.results or os.path.join(args.out, "results.csv")
    summary, svgs = report(results, args.out)
    print(summary)
    for p in svgs:
        print(p)
    return EXIT_OK


def cmd_check(args):
    from ..checks import run_all
    results = run_all(args.seed or 0)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_SOLVER


def cmd_fit(args):
    import numpy as np
    from ..fqi import EngineConfig, run_method, write_history_csv
    from ..sieve import BSplineBasis, FeatureMap
    from ..simenv import read_transitions_csv
    tasks = read_transitions_csv(args.data)
    if not tasks or tasks[0].task_id != 0:
        raise ValidationError("%s has no target task (task_id 0)" % args.data)
    try:
        opts = json.loads(args.engine) if args.engine else {}
    except json.JSONDecodeError as exc:
        raise ValidationError("--engine is not valid JSON: %s" % exc) from None
    if not isinstance(opts, dict):
        raise ValidationError("--engine must be a JSON object")
    cfg = EngineConfig.from_dict({**opts, "gamma": args.gamma, "seed": args.seed or 0})
    fmap = FeatureMap(BSplineBasis(tasks[0].dim), tasks[0].n_actions)
    fit = run_method(args.method, tasks[0], tasks[1:], fmap, cfg)
    os.makedirs(args.out, exist_ok=True)
    write_history_csv(fit.history, os.path.join(args.out, "history.csv"))
    with open(os.path.join(args.out, "coefficients.json"), "w") as fh:
        json.dump({"method": args.method, "basis": fmap.basis.to_dict(), "dim": fmap.basis.dim,
                   "n_actions": fmap.n_actions, "engine": cfg.to_dict(),
                   **fit.coeffs.to_dict()}, fh, indent=2)
    print("fitted %d coefficients, |beta|_inf = %.4g"
          % (fmap.dim, float(np.max(np.abs(fit.coeffs.beta)))))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "oracle": cmd_oracle,
            "report": cmd_report, "check": cmd_check, "fit": cmd_fit}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as exc:       # --help
        return EXIT_OK if not exc.code else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, TransFQIError) as exc:
        print("solver failure: %s" % exc, file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
