"""Command line entry point: ``run``, ``sweep`` and ``analyze``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .audit import audit_events, read_events
from .churn import ConfigError
from .engine import RunConfig, parse_seeds, run, sweep, write_outputs
from .overlay import InvariantViolation

EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def _cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    overrides = {"out_dir": None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = cfg.with_overrides(overrides)
    out = Path(args.out)
    try:
        result = run(cfg)
    except InvariantViolation as exc:
        out.mkdir(parents=True, exist_ok=True)
        (out / "violation.json").write_text(
            json.dumps({"message": str(exc), **exc.dump}, indent=2, sort_keys=True)
        )
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    paths = write_outputs(result, out)
    warm = result.warm_reports()
    print(f"{len(result.reports)} phases ({len(warm)} after warm-up) in "
          f"{result.wall_clock['seconds']:.1f}s; outputs in {out}")
    for k in ("reports", "events"):
        print(f"  {k}: {paths[k]}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = RunConfig.load(args.config).with_overrides({"out_dir": None})
    grid = json.loads(Path(args.grid).read_text())
    seeds = parse_seeds(args.seeds)
    res = sweep(cfg, grid, seeds, args.out, workers=args.workers)
    print(f"{len(res.rows)} phase rows, {len(res.summary)} summary rows, "
          f"{len(res.failures)} failed runs; outputs in {args.out}")
    return EXIT_INVARIANT if any("InvariantViolation" in f["error"] for f in res.failures) else 0


def _cmd_analyze(args) -> int:
    rep = audit_events(read_events(args.events))
    print(json.dumps(rep.summary(), indent=2, sort_keys=True))
    for v in rep.violations:
        print(v, file=sys.stderr)
    return 0 if rep.ok else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="p2pexpander")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("sweep", help="grid x seeds, aggregated per phase")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True, help="JSON object of dotted key -> list of values")
    p.add_argument("--seeds", required=True, help="inclusive range a..b or comma list")
    p.add_argument("--out", default="sweep_out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("analyze", help="audit an event log")
    p.add_argument("--events", required=True)
    p.set_defaults(fn=_cmd_analyze)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
