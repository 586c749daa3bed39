#!/usr/bin/env python3
"""Recompute the three parameter tables and diff them against the published values."""

import argparse

from ml2rgodic.harness import cmd_tables


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="tables", help="CSV output prefix")
    args = ap.parse_args()
    out = cmd_tables(out_prefix=args.out, self_test=True)
    bad = 0
    for c in out["self_test"]:
        status = "ok " if c["pass"] else "FAIL"
        bad += not c["pass"]
        print(f"[{status}] table {c['table']} {c['cell']}: "
              f"computed {c['computed']:.6g} vs published {c['published']:.6g}")
    total = len(out["self_test"])
    print(f"\n{total - bad}/{total} cells match; CSVs written to {args.out}_table*.csv")


if __name__ == "__main__":
    main()
