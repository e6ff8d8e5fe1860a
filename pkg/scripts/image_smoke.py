"""Small image GAN: train, compare Parzen scores before/after, dump samples.

Uses MNIST IDX files from --mnist-dir (or $GANKIT_MNIST_DIR) when given;
otherwise scikit-learn's 8x8 digits, routed through the IDX reader.

    python scripts/image_smoke.py --iterations 2000 --out-dir runs/image_smoke
"""
import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from gankit.adversarial import sample_generator, save_model
from gankit.data import load_idx, write_idx
from gankit.experiments import image_smoke_run
from gankit.io import atomic_write_text, write_points_csv
from gankit.numkit import Rng


def load_points(mnist_dir, limit):
    if mnist_dir:
        return load_idx(Path(mnist_dir) / "train-images-idx3-ubyte").points[:limit], "mnist"
    from sklearn.datasets import load_digits

    images = np.rint(load_digits().images * 255.0 / 16.0).astype(np.uint8)
    with tempfile.TemporaryDirectory() as tmp:
        write_idx(Path(tmp) / "digits-idx3-ubyte", images)
        return load_idx(Path(tmp) / "digits-idx3-ubyte").points[:limit], "digits8x8"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mnist-dir", default=os.environ.get("GANKIT_MNIST_DIR"))
    ap.add_argument("--limit", type=int, default=3000)
    ap.add_argument("--iterations", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="runs/image_smoke")
    args = ap.parse_args(argv)

    points, source = load_points(args.mnist_dir, args.limit)
    res = image_smoke_run(points, seed=args.seed, iterations=args.iterations)
    model = res.pop("model")
    res["source"] = source
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "summary.json", json.dumps(res, indent=2, sort_keys=True) + "\n")
    save_model(out / "model.ckpt", model, {"source": source, "seed": args.seed})
    write_points_csv(out / "samples.csv", sample_generator(model, 64, Rng(args.seed + 1)))
    print(json.dumps(res, indent=2, sort_keys=True))
    ok = (not res["any_nan"] and 0.5 < res["mean_d_real_tail"] < 1.0
          and res["parzen_trained"]["mean_ll"] > res["parzen_untrained"]["mean_ll"])
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
