# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, Optional, Sequence

import numpy as np

from pydsnc.__about__ import __version__
from pydsnc.configuration import PRESETS, Arrangement, ConfigError, load_configuration
from pydsnc.coupon import CouponDomainError, comparison_table
from pydsnc.experiment import EmitError, run_experiment, summary_table
from pydsnc.protocols import ProtocolKind
from pydsnc.selftest import run_selftest

log = logging.getLogger("pydsnc")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _configure_logging(args: argparse.Namespace) -> None:
    if args.verbose:
        level: Any = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    else:
        level = os.getenv("PYDSNC_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pydsnc",
        description="Network-coded P2P distribution simulator and coupon-collector analysis.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    noise = parser.add_mutually_exclusive_group()
    noise.add_argument("-v", "--verbose", action="store_true", help="log debug detail")
    noise.add_argument("-q", "--quiet", action="store_true", help="log warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="run a simulation sweep and write CSV/JSON results")
    source = simulate.add_mutually_exclusive_group()
    source.add_argument("--preset", choices=sorted(PRESETS), help="scenario preset")
    source.add_argument("--config", help="JSON config file")
    simulate.add_argument("--seed", type=int, nargs="+", help="one or more seeds")
    simulate.add_argument("--out", dest="output_dir", help="output directory")
    simulate.add_argument("--jobs", type=int, help="parallel simulations")
    simulate.add_argument("--peers", type=int, nargs="+", help="peer counts to sweep")
    simulate.add_argument(
        "--protocol",
        dest="protocols",
        nargs="+",
        choices=[p.value for p in ProtocolKind],
        help="protocols to run",
    )
    simulate.add_argument("--arrangement", choices=[a.value for a in Arrangement])
    simulate.add_argument("--trace", action="store_true", default=None, help="write per-run trace logs")
    simulate.add_argument(
        "--topology-dump", action="store_true", default=None, help="write per-run overlay edge lists"
    )
    simulate.add_argument("--list-presets", action="store_true", help="describe the presets and exit")

    coupon = commands.add_parser("coupon", help="compare coupon-collector closed forms with Monte Carlo")
    coupon.add_argument("--s", type=int, default=50, help="coupon universe size")
    coupon.add_argument("--q", type=int, default=256, help="field order for the coded collector")
    coupon.add_argument("--trials", type=int, default=1000, help="Monte Carlo trials per checkpoint")
    coupon.add_argument("--seed", type=int, default=0)
    coupon.add_argument("--json", action="store_true", help="print one JSON document per row")

    commands.add_parser("selftest", help="run the built-in invariant checks")
    return parser


def _simulate(args: argparse.Namespace) -> int:
    if args.list_presets:
        for name in sorted(PRESETS):
            preset = PRESETS[name]
            print(f"{name:<6} {preset.summary}")
            print(f"       {json.dumps(dict(preset.values), sort_keys=True)}")
        return EXIT_OK

    overrides: Dict[str, Any] = {
        "seeds": args.seed,
        "output_dir": args.output_dir,
        "jobs": args.jobs,
        "peers": args.peers,
        "protocols": args.protocols,
        "arrangement": args.arrangement,
        "trace": args.trace,
        "topology_dump": args.topology_dump,
    }
    try:
        config = load_configuration(args.config, preset=args.preset, overrides=overrides)
    except ConfigError as e:
        where = f" (key {e.key})" if e.key else f" (line {e.line})" if e.line else ""
        print(f"pydsnc: configuration error{where}: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        result = run_experiment(config)
    except EmitError as e:
        print(f"pydsnc: cannot write {e.path}: {e}", file=sys.stderr)
        return EXIT_FAILURE

    print(summary_table(result.reports))
    for path in result.files:
        log.info("wrote %s", path)
    return EXIT_OK


def _coupon(args: argparse.Namespace) -> int:
    try:
        rows = comparison_table(args.s, args.q, args.trials, np.random.default_rng(args.seed))
    except CouponDomainError as e:
        print(f"pydsnc: {e}", file=sys.stderr)
        return EXIT_USAGE

    if args.json:
        for row in rows:
            print(json.dumps(row.as_dict(), sort_keys=True))
        return EXIT_OK

    print(f"coupon collection, s={args.s}, q={args.q}, {args.trials} trials per row")
    print(f"{'i':>6} {'classic':>12} {'simulated':>12} {'coded':>12} {'simulated':>12}")
    for row in rows:
        print(
            f"{row.i:>6} {row.classic_expected:>12.3f} {row.classic_simulated:>12.3f} "
            f"{row.coded_expected:>12.3f} {row.coded_simulated:>12.3f}"
        )
    return EXIT_OK


def _selftest(args: argparse.Namespace) -> int:
    results = run_selftest()
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status} {result.name}" + (f": {result.detail}" if result.detail else ""))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


COMMANDS = {"simulate": _simulate, "coupon": _coupon, "selftest": _selftest}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    return COMMANDS[args.command](args)
