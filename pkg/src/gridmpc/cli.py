"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 validation failure.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .io import (BUNDLED, ScenarioError, load_scenario, parse_network, read_document,
                 summary_text, write_plotdata, write_run_csv)
from .simulator import run
from .zone import NetworkError, compute_ptdf

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2
OUTPUT_ENV = "GRIDMPC_OUTPUT_DIR"

logger = logging.getLogger("gridmpc")


def _default_out(name):
    return Path(os.environ.get(OUTPUT_ENV, "gridmpc-out")) / name


def _report(exc):
    print(str(exc), file=sys.stderr)


def cmd_validate(args):
    try:
        scenario = load_scenario(args.scenario)
    except FileNotFoundError as exc:
        _report(exc)
        return EXIT_RUNTIME
    except ScenarioError as exc:
        _report(exc)
        return EXIT_INVALID
    print(f"{args.scenario}: ok ({scenario.zone.n_nodes} nodes, {scenario.zone.n_lines} lines, "
          f"{scenario.zone.n_batteries} batteries, {scenario.zone.n_curtailable} curtailable, "
          f"{scenario.duration} steps)")
    return EXIT_OK


def execute(scenario, out_dir, dump_dir=None):
    """Run ``scenario`` (plus its uncontrolled reference) and write all outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if dump_dir is not None:
        scenario.controller.set_params(dump_dir=str(dump_dir))
    log = run(scenario)
    reference = None
    if scenario.controller_enabled:
        reference = run(replace(scenario, controller_enabled=False))
    write_run_csv(log, out_dir / "run.csv")
    (out_dir / "summary.txt").write_text(summary_text(log, scenario.name, reference),
                                         encoding="utf-8")
    write_plotdata(log, out_dir / "plotdata", reference)
    return log


def cmd_run(args):
    try:
        scenario = load_scenario(args.scenario, seed=args.seed,
                                 controller_enabled=not args.no_controller)
    except FileNotFoundError as exc:
        _report(exc)
        return EXIT_RUNTIME
    except ScenarioError as exc:
        _report(exc)
        return EXIT_INVALID
    out = Path(args.out) if args.out else _default_out(scenario.name)
    try:
        log = execute(scenario, out, args.dump_failures)
    except (OSError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        _report(f"run failed: {exc}")
        return EXIT_RUNTIME
    s = log.summary()
    print(f"{scenario.name}: {log.duration} steps, max violation {s.max_violation_mw:.6f} MW, "
          f"curtailed {s.curtailed_energy_mwh:.6f} MWh, solver failures {s.solver_failures}; "
          f"outputs in {out}")
    return EXIT_OK


def cmd_ptdf(args):
    try:
        data, source = read_document(args.scenario)
    except FileNotFoundError as exc:
        _report(exc)
        return EXIT_RUNTIME
    except ScenarioError as exc:
        _report(exc)
        return EXIT_INVALID
    try:
        nodes, line_objs, slack = parse_network(data, source)
    except ScenarioError as exc:
        _report(exc)
        return EXIT_INVALID
    slack = args.slack if args.slack is not None else slack
    missing = [line.name for line in line_objs if line.reactance is None]
    if missing:
        _report(f"{source}: lines without reactance ({', '.join(missing)}); the PTDF cannot be "
                "computed here, give the rows in an explicit network.ptdf block instead")
        return EXIT_INVALID
    try:
        ptdf = compute_ptdf(nodes, line_objs, slack)
    except NetworkError as exc:
        _report(f"{source}: {exc}")
        return EXIT_INVALID
    width = max([len("line")] + [len(line.name) for line in line_objs])
    cols = [max(len(n), 9) for n in nodes]
    print(" ".join(["line".ljust(width)] + [n.rjust(c) for n, c in zip(nodes, cols)]))
    for line, row in zip(line_objs, ptdf):
        cells = [format(v + 0.0, ".6f").rjust(c) for v, c in zip(row, cols)]
        print(" ".join([line.name.ljust(width)] + cells))
    return EXIT_OK


def cmd_batch(args):
    base = Path(args.out) if args.out else Path(os.environ.get(OUTPUT_ENV, "gridmpc-out"))
    jobs = []
    for item in args.scenarios:
        try:
            scenario = load_scenario(item, seed=args.seed,
                                     controller_enabled=not args.no_controller)
        except FileNotFoundError as exc:
            _report(exc)
            return EXIT_RUNTIME
        except ScenarioError as exc:
            _report(exc)
            return EXIT_INVALID
        jobs.append((item, scenario, base / Path(item).stem))

    def work(job):
        item, scenario, out = job
        try:
            log = execute(scenario, out)
        except (OSError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            return item, None, str(exc)
        return item, log.summary(), str(out)

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        results = list(pool.map(work, jobs))
    code = EXIT_OK
    for item, summary, info in results:
        if summary is None:
            print(f"{item}: failed: {info}", file=sys.stderr)
            code = EXIT_RUNTIME
        else:
            print(f"{item}: max violation {summary.max_violation_mw:.6f} MW, "
                  f"violation steps {summary.violation_steps}, outputs in {info}")
    return code


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gridmpc",
        description="Battery and curtailment congestion control on a PTDF zone model.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    scen_help = f"scenario file, or a bundled name ({', '.join(BUNDLED)})"

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("scenario", help=scen_help)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate a scenario and write CSV outputs")
    p.add_argument("scenario", help=scen_help)
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV}/<name> "
                                 "or gridmpc-out/<name>)")
    p.add_argument("--no-controller", action="store_true",
                   help="reference run with all orders at zero")
    p.add_argument("--seed", type=int, help="override the random-walk seed")
    p.add_argument("--dump-failures", metavar="DIR",
                   help="write failing QP instances here as Matrix Market files")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ptdf", help="print the PTDF table computed from line reactances")
    p.add_argument("scenario", help=scen_help)
    p.add_argument("--slack", help="slack node (default: the network's slack)")
    p.set_defaults(func=cmd_ptdf)

    p = sub.add_parser("batch", help="run several scenarios concurrently")
    p.add_argument("scenarios", nargs="+", help=scen_help)
    p.add_argument("--out", help="parent output directory, one subdirectory per scenario")
    p.add_argument("--workers", type=int, default=2, help="worker threads (default 2)")
    p.add_argument("--no-controller", action="store_true")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_batch)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
