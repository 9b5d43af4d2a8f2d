"""Command line entry point.

Exit codes: 0 success, 1 failed assertion, 2 configuration error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import CheckFailure, ConfigError, PicardError, RunFailure
from .linalg import SolverError

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

VERBS = {
    "run": (None, "run the experiment described by the config (default kind: single)"),
    "sweep-h": ("h-sweep", "spatial convergence sweep over mesh divisions"),
    "sweep-k": ("k-sweep", "temporal convergence sweep over time steps"),
    "energy": ("energy", "source-free energy-law check"),
    "gauss": ("gauss", "magnetic Gauss-law preservation check"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mhdfem", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0, help="log progress (-vv for debug)")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, (_, help_) in VERBS.items():
        sp = sub.add_parser(verb, help=help_)
        sp.add_argument("config", help="path to a key = value config file")
        sp.add_argument("-o", "--output", help="CSV path (overrides [experiment] output)")
    sub.add_parser("selftest", help="oracle equivalence, curl inclusion and quadrature checks")
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, RunFailure):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (CheckFailure, AssertionError)):
        return EXIT_ASSERT
    if isinstance(exc, (SolverError, PicardError)):
        return EXIT_SOLVER
    return EXIT_SOLVER


def _selftest() -> int:
    from .oracle import selftest

    results = selftest(print)
    return EXIT_OK if all(r.passed for r in results) else EXIT_ASSERT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.verb == "selftest":
        return _selftest()

    from dataclasses import replace

    from .experiments import format_rows, run_experiment

    try:
        cfg = load_config(args.config, VERBS[args.verb][0])
        if args.output:
            cfg = replace(cfg, output=args.output)
        res = run_experiment(cfg, raise_on_failure=False)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        code = _exit_code(exc)
        kind = "assertion failed" if code == EXIT_ASSERT else "solver failure"
        print(f"{kind}: {exc}", file=sys.stderr)
        return code
    for scheme, rows in res.rows.items():
        print(f"[{cfg.kind} / {scheme}]")
        print(format_rows(rows))
    for f in res.files:
        print(f"wrote {f}")
    print(f"elapsed {res.seconds:.1f} s")
    if res.failures:
        for msg in res.failures:
            print(f"FAIL {msg}", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
