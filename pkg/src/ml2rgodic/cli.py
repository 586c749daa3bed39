"""Command line entry point: ml2rgodic plan|run|compare|tables."""

from __future__ import annotations

import argparse
import json
import sys

from .harness import ConfigError, cmd_compare, cmd_plan, cmd_run, cmd_tables, load_config
from .simulate import BlowUpError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ml2rgodic",
                                     description="multilevel Richardson-Romberg ergodic estimation")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("plan", "run", "compare"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="output CSV prefix")
    p = sub.add_parser("tables")
    p.add_argument("--out", default=None, help="output CSV prefix")
    p.add_argument("--self-test", action="store_true", help="diff against the published values")
    args = parser.parse_args(argv)

    try:
        if args.command == "tables":
            out = cmd_tables(out_prefix=args.out, self_test=args.self_test)
            if args.self_test:
                bad = [c for c in out["self_test"] if not c["pass"]]
                for c in out["self_test"]:
                    status = "ok " if c["pass"] else "FAIL"
                    print(f"[{status}] table {c['table']} {c['cell']}: "
                          f"computed {c['computed']:.6g} vs published {c['published']:.6g}")
                print(f"{len(out['self_test']) - len(bad)}/{len(out['self_test'])} table cells match")
            else:
                print(json.dumps({k: v for k, v in out.items()}, indent=2, default=str))
            return EXIT_OK

        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.command == "plan":
            print(json.dumps(cmd_plan(cfg), indent=2, default=str))
        elif args.command == "run":
            res = cmd_run(cfg, out_prefix=args.out or cfg.get("output"))
            print(json.dumps({"aggregates": res.aggregates, "plan": res.plan}, indent=2, default=str))
        elif args.command == "compare":
            rows = cmd_compare(cfg, out_prefix=args.out or cfg.get("output"))
            print(f"wrote {len(rows)} comparison rows")
        return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as e:
        print(f"simulation blow-up: {e}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
