#!/usr/bin/env python3
"""Crude vs weighted-multilevel convergence traces for the Ornstein-Uhlenbeck model.

Writes one CSV per sigma with columns (replication, complexity,
crude_estimate, ml2r_estimate); plot estimate-vs-complexity from it with any
tool to get the figure-style comparison.
"""

import argparse

from ml2rgodic.harness import cmd_compare, parse_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigma", type=float, nargs="+", default=[1.0, 4.0])
    ap.add_argument("--budget", type=float, default=2e7, help="total Euler-step budget")
    ap.add_argument("--replications", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="ou_compare")
    args = ap.parse_args()
    for sigma in args.sigma:
        cfg = parse_config({
            "model": {"type": "ou", "params": {"sigma": sigma}},
            "function": "x^2", "epsilon": 3e-2, "M": 3, "mode": "compare",
            "seed": args.seed, "replications": args.replications,
            "budget": args.budget,
        })
        prefix = f"{args.out}_sigma{sigma:g}"
        rows = cmd_compare(cfg, out_prefix=prefix)
        last = max(r["complexity"] for r in rows)
        finals = [r for r in rows if r["complexity"] == last]
        import numpy as np
        nu = sigma * sigma
        ml = np.sqrt(np.mean([(r["ml2r_estimate"] - nu) ** 2 for r in finals]))
        cr = np.sqrt(np.mean([(r["crude_estimate"] - nu) ** 2 for r in finals]))
        print(f"sigma={sigma:g}: at complexity {last:.3g}, RMSE ml2r={ml:.5f} crude={cr:.5f} "
              f"-> {prefix}_compare.csv")


if __name__ == "__main__":
    main()
