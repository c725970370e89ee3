"""``riemann-avg`` command line: run, report, selftest."""

from __future__ import annotations

import argparse
import logging
import sys

from .experiments import EXIT_INVALID, cmd_report, cmd_run


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riemann-avg",
                                description="Averaged Riemannian SGD experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", help="JSON experiment config")
    run.add_argument("--workers", type=_positive, default=None,
                     help="worker processes (default: available cores)")
    rep = sub.add_parser("report", help="aggregate a run directory")
    rep.add_argument("dir")
    st = sub.add_parser("selftest", help="run the randomized property suites")
    st.add_argument("--seed", type=int, default=0)
    return p


def selftest(seed: int = 0) -> int:
    from .checks import run_all

    results = run_all(seed)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="riemann-avg: %(message)s", stream=sys.stderr)
    if args.command == "run":
        return cmd_run(args.config, args.workers)
    if args.command == "report":
        return cmd_report(args.dir)
    return selftest(args.seed)


if __name__ == "__main__":
    sys.exit(main())
