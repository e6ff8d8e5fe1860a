"""Run the 1-D experiment for several seeds and tabulate the final snapshot.

    python scripts/run_fig1.py --seeds 0 1 2 --out-dir runs/fig1_sweep
"""
import argparse
import json
import sys
from pathlib import Path

from gankit.cli import main as gankit_main

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "fig1.ini"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out-dir", default="runs/fig1_sweep")
    args = ap.parse_args(argv)

    rows, failures = [], 0
    for seed in args.seeds:
        out = Path(args.out_dir) / f"seed{seed}"
        code = gankit_main(["fig1", "--config", args.config, "--seed", str(seed), "--out-dir", str(out)])
        failures += code != 0
        summary_path = out / "fig1_summary.json"
        if summary_path.is_file():
            final = json.loads(summary_path.read_text())["snapshots"][-1]
            rows.append((seed, final["hist_jsd"], final["mean_abs_d_dev"], code))
    print(f"\n{'seed':>4}  {'hist JSD':>9}  {'mean|D-1/2|':>11}  exit")
    for seed, j, d, code in rows:
        print(f"{seed:>4}  {j:9.4f}  {d:11.4f}  {code}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
