"""Instrument one long online run and print the marker-event rate table.

Same machinery as `dynmatch diagnose`, kept here as a script so the table
can be regenerated for a single instance without writing a config file.

    python3 scripts/marker_rates.py market.json --horizon 1e5 --gamma 0.5
"""

import argparse
import sys
from pathlib import Path

from dynmatch import (
    check_rate_bounds,
    derive_seed,
    instrument_z_events,
    parse_instance,
    solve_upper_bound,
    validate_instance,
)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("instance")
    p.add_argument("--horizon", type=float, default=1e5)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    inst = parse_instance(Path(args.instance).read_text())
    violations = validate_instance(inst)
    if violations:
        for v in violations:
            print(f"invalid instance: {v}", file=sys.stderr)
        return 1
    sol = solve_upper_bound(inst)
    counters, _ = instrument_z_events(
        inst, sol, args.gamma,
        horizon=args.horizon, seed=derive_seed(args.seed, "markers"),
    )
    report = check_rate_bounds(counters, inst, sol, args.gamma)

    header = f"{'bound':<28}{'subject':<16}{'empirical':>12}{'target':>12}  verdict"
    print(header)
    print("-" * len(header))
    for row in report.rows:
        print(f"{row.bound:<28}{row.subject:<16}"
              f"{row.empirical:>12.5f}{row.theoretical:>12.5f}  {row.verdict}"
              + (f"  ({row.note})" if row.note else ""))
    print(f"\n{len(report.rows)} rows, {len(report.failures)} failures, "
          f"{len(report.inconclusive)} inconclusive")
    return 0 if report.ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
