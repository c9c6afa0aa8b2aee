"""Command line entry point.

    iotaccess run --config scenario.json --seed 7 --out trace.jsonl
    iotaccess matrix --protocols S,1,2 --adversaries all
    iotaccess diff a.jsonl b.jsonl
    iotaccess costs

Every command exits 0 only when all declared expectations hold.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

from .scenario import (
    ADVERSARY_KINDS,
    REFERENCE_GAS,
    AdversarySpec,
    ConfigError,
    ScenarioConfig,
    SchemaMismatch,
    coffee_config,
    compare_traces,
    load_expected_matrix,
    matrix_config,
    run,
    run_matrix,
)
from .thing import PROTOCOLS


def _fmt_triple(t) -> str:
    return "".join("Y" if x else "-" for x in t) if t is not None else "???"


def cmd_run(args) -> int:
    config = ScenarioConfig.load(args.config) if args.config else coffee_config()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.protocol is not None:
        overrides["protocol"] = args.protocol
    if overrides:
        config = replace(config, **overrides)
    report = run(config)
    if args.out:
        report.write(args.out)
    for s in report.sessions:
        print(f"session {s['index']} {s['acting']:<12} protocol={s['protocol']} "
              f"state={s['state']:<9} reason={s['reason'] or '-':<20} "
              f"paid={s['provider_delta']} refund={s['refund']}")
    for name, bal in report.balances.items():
        print(f"balance {name:<16} {bal}")
    print(f"conservation {'ok' if report.conservation else 'VIOLATED'}")
    for e in report.expectations:
        print(f"expect {e['name']:<10} {'ok' if e['ok'] else 'FAIL'} "
              f"expected={e['expected']} actual={e['actual']}")
    return 0 if report.ok else 1


def cmd_matrix(args) -> int:
    protocols = [p.strip() for p in args.protocols.split(",")]
    for p in protocols:
        if p not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {p!r}")
    if args.adversaries == "all":
        kinds = list(ADVERSARY_KINDS)
    else:
        kinds = [k.strip().upper() for k in args.adversaries.split(",")]
    expected = load_expected_matrix(args.fixture)
    rows = run_matrix(protocols, kinds, args.positions, args.seed, expected)
    failures = [r for r in rows if not r.ok]
    seen = set()
    for r in rows:
        key = (r.protocol, r.label)
        if key in seen and r.ok:
            continue
        seen.add(key)
        pos = "" if r.position is None else f"@{r.position}"
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.protocol} {r.label + pos:<32} "
              f"got={_fmt_triple(r.triple)} want={_fmt_triple(r.expected)} "
              f"{r.state}/{r.reason or '-'}")
    print(f"{len(rows) - len(failures)}/{len(rows)} cases match (columns: KEY, paid, completed)")
    return 0 if not failures else 1


def cmd_diff(args) -> int:
    diffs = compare_traces(args.a, args.b)
    for d in diffs[: args.limit]:
        print(f"{d.path}: {d.a!r} != {d.b!r}")
    if len(diffs) > args.limit:
        print(f"... {len(diffs) - args.limit} more")
    return 0 if not diffs else 1


def cmd_costs(args) -> int:
    simulated = {}
    for p in PROTOCOLS:
        report = run(matrix_config(p, AdversarySpec(), args.seed))
        for row in report.costs:
            simulated.setdefault(row["function"], row["simulated"])
    print(f"{'function':<18} {'simulated':>10} {'reference gas':>14}")
    for fn in ("requestS", "request1", "request2", "authorize1", "authorize2"):
        print(f"{fn:<18} {simulated.get(fn, 0):>10} {REFERENCE_GAS[fn]:>14}")
    ordered = (simulated["requestS"] < simulated["request1"] < simulated["request2"]
               and simulated["authorize1"] < simulated["authorize2"])
    print(f"ordering requestS<request1<request2, authorize1<authorize2: "
          f"{'holds' if ordered else 'VIOLATED'}")
    return 0 if ordered else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iotaccess", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("--config", help="scenario JSON (default: built-in coffee scenario)")
    p.add_argument("--seed", type=int)
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--out", help="write the JSON-lines trace here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("matrix", help="run the protocol x adversary failure matrix")
    p.add_argument("--protocols", default="S,1,2")
    p.add_argument("--adversaries", default="all")
    p.add_argument("--positions", choices=("all", "edges"), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fixture", help="expected-matrix JSON (default: bundled)")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("diff", help="field-level diff of two traces")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--limit", type=int, default=50)
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("costs", help="simulated cost per contract function")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_costs)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, SchemaMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
