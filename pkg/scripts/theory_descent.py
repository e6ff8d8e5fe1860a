"""Run the theory checks, then export one density-descent trajectory as CSV.

    python scripts/theory_descent.py --bins 16 --out runs/descent.csv
"""
import argparse
import sys
from pathlib import Path

from gankit.io import atomic_write_text
from gankit.numkit import Rng
from gankit.theory import density_descent, random_density, run_theory_suite, unit_grid


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bins", type=int, default=16)
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--lr", type=float, default=10.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/descent.csv")
    args = ap.parse_args(argv)

    results = run_theory_suite(seed=args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")

    rng = Rng(args.seed)
    grid = unit_grid(args.bins)
    res = density_descent(random_density(rng, grid), random_density(rng, grid), args.steps, args.lr)
    atomic_write_text(Path(args.out), res.to_csv())
    print(f"descent: {len(res.records) - 1} steps, final JSD {res.final.jsd:.2e} -> {args.out}")
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
