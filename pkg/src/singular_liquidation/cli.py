"""Command line: ``liquidation {validate,solve,verify,report} CONFIG``.

Exit codes: 0 ok, 1 usage or parse error, 2 assumption failure,
3 numerical failure, 4 acceptance failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import AcceptanceError, AssumptionError, ConfigError, InputError, NumericalError
from .pipeline import Experiment, run_report, run_solve, run_validate, run_verify, write_verdicts

EXIT_OK, EXIT_USAGE, EXIT_ASSUMPTION, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3, 4


def _experiment(config, output, workers) -> Experiment:
    cfg = load_config(config)
    return Experiment(cfg, workers=workers, out=None if output is None else Path(output))


def cmd_validate(config, output=None, workers: int = 1) -> int:
    exp = _experiment(config, output, workers)
    report = run_validate(exp)
    print(report.to_text())
    return EXIT_OK if report.passed else EXIT_ASSUMPTION


def cmd_solve(config, output=None, workers: int = 1) -> int:
    exp = _experiment(config, output, workers)
    summary = run_solve(exp)
    cache = summary["cache"]
    print(f"wrote {len(summary['files'])} surface file(s) to {exp.out / 'surfaces'} "
          f"(cache hits {cache['hits']}, misses {cache['misses']})")
    if "convergence" in summary:
        print(f"convergence gap {summary['convergence']['gap']:.3e}")
    return EXIT_OK


def cmd_verify(config, output=None, workers: int = 1) -> int:
    exp = _experiment(config, output, workers)
    reports = run_verify(exp)
    write_verdicts(exp, reports)
    width = max((len(r.name) for r in reports), default=5)
    print(f"{'check':<{width}}  status  observed      tolerance")
    for r in reports:
        tol = "" if r.tolerance is None else f"{r.tolerance:.6g}"
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.observed:<12.6g}  {tol}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_ACCEPTANCE


def cmd_report(config, output=None, workers: int = 1) -> int:
    exp = _experiment(config, output, workers)
    written, missing = run_report(exp)
    if missing:
        print("missing artifacts (run solve and verify first):", file=sys.stderr)
        for m in missing:
            print(f"  {m}", file=sys.stderr)
        return EXIT_USAGE
    for w in written:
        print(exp.out / "report" / w)
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "solve": cmd_solve, "verify": cmd_verify, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liquidation", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="experiment YAML file")
        s.add_argument("--output", help="output directory (overrides output.directory)")
        s.add_argument("--workers", type=int, default=1, help="parallel workers (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args.config, args.output, args.workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AssumptionError as exc:
        print(f"assumption failure: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (AcceptanceError, InputError) as exc:
        print(f"acceptance failure: {exc}", file=sys.stderr)
        return EXIT_ACCEPTANCE


if __name__ == "__main__":
    sys.exit(main())
