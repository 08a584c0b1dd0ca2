"""Command-line entry point (``mgmc``).

Exit codes: 0 success (``solve``: converged), 2 ``solve`` hit the iteration
cap, 3 ``solve`` saw two consecutive subproblem failures, 4 ``check`` found
violated invariants, 1 bad input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import harness
from .ccp import CONVERGED, MAX_ITERS, SUBPROBLEM_FAILURE
from .system import ConfigError, generate_channels

EXIT_OK, EXIT_INPUT, EXIT_MAXITERS, EXIT_FAILURE, EXIT_CHECK = 0, 1, 2, 3, 4
STATUS_EXIT = {CONVERGED: EXIT_OK, MAX_ITERS: EXIT_MAXITERS, SUBPROBLEM_FAILURE: EXIT_FAILURE}


def _out_dir(args, default: str) -> Path:
    return Path(os.environ.get("MGMC_OUT") or args.out or default)


def _with_seed(d: dict, args, key: str = "seed") -> dict:
    if args.seed is not None:
        d = {**d, key: args.seed}
    return d


def cmd_solve(args) -> int:
    d = _with_seed(harness.load_json(args.config), args)
    rc = harness.parse_run_config(d)
    out = _out_dir(args, "mgmc-out")
    dump = out / "programs" if args.dump_programs else None
    rep = harness.solve_config(rc, dump_dir=dump)
    rp, tp = harness.write_solve_outputs(rc, rep, out)
    print(f"{rep.criterion}: {rep.status} after {rep.iterations} iterations, "
          f"{rep.metrics.scheduled_users} users, MEE {rep.metrics.mee:.6g} bits/J -> {rp}")
    return STATUS_EXIT[rep.status]


def cmd_sweep(args) -> int:
    d = _with_seed(harness.load_json(args.config), args, "base_seed")
    spec = harness.parse_experiment(d)
    out = _out_dir(args, "mgmc-sweep")
    out.mkdir(parents=True, exist_ok=True)
    raw, agg = harness.run_sweep(spec, workers=args.workers)
    (out / "raw.csv").write_text(harness.rows_to_csv(raw, harness.RAW_COLUMNS))
    (out / "aggregate.csv").write_text(harness.rows_to_csv(agg, harness.AGGREGATE_COLUMNS))
    failed = sum(1 for r in raw if r["error"])
    print(f"{len(raw)} runs ({failed} failed), {len(agg)} aggregate rows -> {out}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    d = _with_seed(harness.load_json(args.config), args)
    rc = harness.parse_run_config(d)
    rep = harness.oracle_report(rc, restarts=args.restarts)
    out = _out_dir(args, "mgmc-oracle")
    out.mkdir(parents=True, exist_ok=True)
    (out / "oracle.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    for c, r in rep["criteria"].items():
        print(f"{c}: heuristic {r['heuristic']:.6g}  oracle {r['oracle']:.6g}  gap {r['gap']:.3g}")
    return EXIT_OK


def cmd_gen_channels(args) -> int:
    d = harness.load_json(args.config)
    system = harness.parse_system(d["system"] if "system" in d else d)
    seed = args.seed if args.seed is not None else int(os.environ.get("MGMC_SEED", d.get("seed", 0)))
    ch = generate_channels(system, seed)
    text = json.dumps(ch.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out or os.environ.get("MGMC_OUT"):
        out = _out_dir(args, "")
        if out.suffix != ".json":
            out.mkdir(parents=True, exist_ok=True)
            out = out / "channels.json"
        out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_check(args) -> int:
    path = args.report or args.config
    if path is None:
        raise ConfigError("check needs a report path")
    bad = harness.check_report(harness.load_json(path))
    for b in bad:
        print(f"FAIL {b}")
    if not bad:
        print("all invariants hold")
    return EXIT_CHECK if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgmc", description="Multigroup multicast grouping, scheduling and precoding.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON config file")
        sp.add_argument("--out", help="output directory (env MGMC_OUT overrides)")
        sp.add_argument("--seed", type=int, help="seed override")

    sp = sub.add_parser("solve", help="run one CCP solve")
    common(sp)
    sp.add_argument("--dump-programs", action="store_true", help="write every cone program as JSON")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("sweep", help="Monte-Carlo sweep over one axis")
    common(sp)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("oracle", help="heuristic vs exhaustive search on a tiny instance")
    common(sp)
    sp.add_argument("--restarts", type=int, default=8)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("gen-channels", help="draw a channel matrix")
    common(sp)
    sp.set_defaults(func=cmd_gen_channels)

    sp = sub.add_parser("check", help="verify the invariants of a saved report.json")
    common(sp, config_required=False)
    sp.add_argument("report", nargs="?", help="report.json (same as --config)")
    sp.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
