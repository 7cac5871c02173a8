"""Sweep the throttle parameter and chart how much of the planning optimum
the online policy captures.

Writes one CSV row per (gamma, replication) plus per-gamma aggregate rows,
meant for any external plotter.

    python3 scripts/competitive_floor.py market.json --out floor.csv \
        --gammas 0.5,0.6,0.7,0.8,0.9,1.0 --horizon 1e5 --replications 20
"""

import argparse
import csv
import math
import sys
from pathlib import Path

from dynmatch import (
    PolicyConfig,
    PolicyKind,
    derive_seed,
    parse_instance,
    run_simulation,
    solve_upper_bound,
    validate_instance,
)


def parse_args(argv):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("instance", help="market description file (JSON)")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--gammas", default="0.5,0.75,1.0",
                   help="comma-separated throttle values")
    p.add_argument("--horizon", type=float, default=1e5)
    p.add_argument("--burn-in", type=float, default=1e3)
    p.add_argument("--replications", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    return p.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    inst = parse_instance(Path(args.instance).read_text())
    violations = validate_instance(inst)
    if violations:
        for v in violations:
            print(f"invalid instance: {v}", file=sys.stderr)
        return 1
    sol = solve_upper_bound(inst)
    gammas = [float(g) for g in args.gammas.split(",") if g.strip()]

    rows = []
    for gamma in gammas:
        policy = PolicyConfig(kind=PolicyKind.ONLINE_MATCH, gamma=gamma)
        values = []
        for r in range(args.replications):
            _, report = run_simulation(
                inst, policy, sol,
                horizon=args.horizon, burn_in=args.burn_in,
                seed=derive_seed(args.seed, "floor", f"{gamma!r}", r),
                record_trace=False,
            )
            values.append(report.avg_value_per_time)
            rows.append({
                "gamma": gamma, "replication": r, "kind": "rep",
                "value_rate": report.avg_value_per_time,
                "lp_value": sol.value,
                "ratio": report.avg_value_per_time / sol.value if sol.value else "",
                "se": "",
            })
        mean = sum(values) / len(values)
        var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
        rows.append({
            "gamma": gamma, "replication": "", "kind": "mean",
            "value_rate": mean, "lp_value": sol.value,
            "ratio": mean / sol.value if sol.value else "",
            "se": math.sqrt(var / len(values)),
        })
        print(f"gamma {gamma:g}: value rate {mean:.5f} "
              f"({mean / sol.value:.3f} of optimum {sol.value:.5f})"
              if sol.value else f"gamma {gamma:g}: value rate {mean:.5f}")

    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["gamma", "replication", "kind",
                            "value_rate", "lp_value", "ratio", "se"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
