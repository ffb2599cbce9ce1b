"""Command line entry point: ``run``, ``sweep`` and ``check``.

Exit codes: 0 on success, 1 on usage or configuration errors, 2 when an
instrumented run detects an invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .geometry import GeometryError, build_partition, validate_partition
from .harness import (InvariantViolation, SweepSpec, emit_csv, parse_config,
                      result_row, run, sweep)
from .protocol import ConfigError, config_violations


def _load(path):
    with open(path) as fh:
        return parse_config(fh.read())


def _values(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        out.append(int(tok) if tok.lstrip("-").isdigit() else float(tok))
    if not out:
        raise ConfigError("--values is empty")
    return out


def cmd_run(args) -> int:
    cfg = _load(args.config)
    res = run(cfg, args.seed, check=args.check, trace=args.trace)
    text = emit_csv([result_row(res, "run", "")])
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(text)
    summary = {"seed": res.seed, "rounds": res.rounds, "consumed": res.consumed,
               "throughput": res.throughput, "summed_throughput": res.summed_throughput,
               "failures": res.failures, "recoveries": res.recoveries}
    if args.check:
        summary["checked_rounds"] = res.checked_rounds
    print(json.dumps(summary))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args.config)
    spec = SweepSpec(cfg, args.param, _values(args.values), args.reps)
    rows = sweep(spec, workers=args.workers)
    with open(args.csv, "w") as fh:
        fh.write(emit_csv(rows))
    print(f"wrote {len(rows)} runs to {args.csv}")
    return 0


def cmd_check(args) -> int:
    cfg = _load(args.config)
    p = build_partition(cfg.grid)
    rep = validate_partition(p, cfg.params)
    print(rep.summary())
    errs = config_violations(cfg, p)
    for e in errs:
        print(f"config: {e}")
    return 0 if rep.ok and not errs else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="celltraffic", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--trace", help="JSON-lines trace output path")
    r.add_argument("--csv", help="CSV output path")
    r.add_argument("--check", action="store_true", help="verify safety every round")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="sweep one parameter")
    s.add_argument("--config", required=True)
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma separated list")
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--csv", required=True)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check", help="validate geometry and config only")
    c.add_argument("--config", required=True)
    c.set_defaults(func=cmd_check)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, GeometryError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
