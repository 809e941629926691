"""Command line entry point: ``twotime run|verify|version``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time

from . import __version__
from .config import ConfigError, load

THREADS_ENV = "TWOTIME_THREADS"

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_CONFIG = 2
EXIT_BUDGET = 3


def _threads(flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return n
    return 1


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twotime", description="Two-time position correlations: "
                                "standard predictions, unmeasured trajectories and pointer measurements.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("run", "execute a scenario and write CSV, JSON and a plot script"),
                       ("verify", "run the invariant suite and print a pass/fail table")):
        s = sub.add_parser(name, help=text)
        s.add_argument("config", help="scenario TOML file")
        s.add_argument("--seed", type=int, help="override monte_carlo.seed")
        s.add_argument("--threads", type=_positive, help=f"worker threads (default: ${THREADS_ENV} or 1)")
        s.add_argument("--out-dir", help="override output.dir")
    sub.add_parser("version", help="print the package version")
    return p


def _load(args):
    cfg = load(args.config)
    return cfg.with_overrides(seed=args.seed, out_dir=args.out_dir)


def cmd_run(args) -> int:
    from .runner import run, write_outputs

    cfg = _load(args)
    threads = _threads(args.threads)
    start = time.perf_counter()
    report = run(cfg, threads)
    paths = write_outputs(report, cfg)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    if report.failed:
        print(f"error: {report.failure}; outputs marked partial", file=sys.stderr)
        return EXIT_BUDGET
    print(f"done in {time.perf_counter() - start:.1f} s")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_checks

    cfg = _load(args)
    _threads(args.threads)
    results, _ = run_checks(cfg)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "version":
        print(f"twotime {__version__}")
        return EXIT_OK
    try:
        return cmd_run(args) if args.command == "run" else cmd_verify(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
