"""Command-line entry point: run, validate, env."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import SchemaError, load_scenario_file, to_document
from .engine import run
from .server import EnvServer


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmgsim",
        description="Beacon-interval MAC scheduling simulator for 60 GHz WLANs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario and write metrics")
    p_run.add_argument("--scenario", required=True, help="scenario JSON file")
    p_run.add_argument("--seed", type=int, default=None, help="override sim.seed")
    p_run.add_argument(
        "--duration", type=int, default=None, help="override sim.durationUs (microseconds)"
    )
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument(
        "--trace", action="store_true", help="also write the event trace (ndjson)"
    )
    p_run.add_argument(
        "--trace-sample",
        type=int,
        default=1,
        metavar="N",
        help="write every Nth packet-level trace record (control records always)",
    )

    p_val = sub.add_parser("validate", help="check a scenario file against the schema")
    p_val.add_argument("--scenario", required=True)

    p_env = sub.add_parser("env", help="serve the RL environment over a local socket")
    p_env.add_argument("--scenario", required=True)
    p_env.add_argument(
        "--listen", required=True, help="host:port or unix:/path/to.sock"
    )
    return parser


def _cmd_run(args) -> int:
    scenario = load_scenario_file(args.scenario)
    scenario = scenario.with_overrides(seed=args.seed, duration_us=args.duration)
    report, trace = run(scenario)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "metrics.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(to_document(scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.trace:
        sample = max(1, args.trace_sample)
        packet_types = {"arrival", "drop", "tx"}
        with open(os.path.join(args.out, "trace.ndjson"), "w", encoding="utf-8") as fh:
            kept = 0
            for rec in trace:
                if rec["type"] in packet_types:
                    kept += 1
                    if (kept - 1) % sample:
                        continue
                fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
                fh.write("\n")
    print(f"simulated {scenario.n_bis} beacon intervals; wrote {args.out}/metrics.json")
    return 0


def _cmd_validate(args) -> int:
    scenario = load_scenario_file(args.scenario)
    print(f"OK: {len(scenario.stations)} stations, {len(scenario.flows)} flows, "
          f"{scenario.n_bis} beacon intervals")
    return 0


def _cmd_env(args) -> int:
    scenario = load_scenario_file(args.scenario)
    server = EnvServer(scenario, args.listen)
    server.start()
    print(f"environment server listening on {args.listen}", flush=True)
    try:
        server._stopping.wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "env":
            return _cmd_env(args)
    except SchemaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
