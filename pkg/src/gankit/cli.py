"""Command-line entry point.

Exit codes: 0 success, 1 check/acceptance failure or divergence, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .adversarial import TrainingDiverged, interpolate_latent, load_model, sample_generator, save_model, train
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import build_model, load_training_data, run_fig1
from .io import atomic_write_text, dumps_jsonl, format_csv, read_points_csv, write_points_csv
from .numkit import Rng
from .parzen import default_sigma_grid, dumps_record, evaluate, parse_sigma_grid
from .theory import run_theory_suite

OUT_DIR_ENV = "GANKIT_OUT_DIR"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"gankit: error: {msg}", file=sys.stderr)


def _load_cfg(args) -> ExperimentConfig:
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = args.out_dir or os.environ.get(OUT_DIR_ENV) or cfg.out_dir
    return replace(cfg, out_dir=str(out))


def _manifest(cfg: ExperimentConfig, command: str, started: float, extra=None) -> str:
    info = {
        "command": command,
        "config_sha256": cfg.digest(),
        "config": cfg.to_ini(),
        "seed": cfg.seed,
        "data_seed": cfg.data_seed,
        "init_seed": cfg.init_seed,
        "wall_time_s": round(time.time() - started, 3),
        "gankit_version": __version__,
        "numpy_version": np.__version__,
        "python": platform.python_version(),
        **(extra or {}),
    }
    return json.dumps(info, indent=2, sort_keys=True) + "\n"


def cmd_train(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    out = Path(cfg.out_dir)
    try:
        dataset = load_training_data(cfg)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load data: {exc}") from None
    model = build_model(cfg, dataset.points.shape[1])
    out.mkdir(parents=True, exist_ok=True)
    dataset.write_provenance(out / "data")
    meta = {"config_sha256": cfg.digest(), "seed": cfg.seed}
    try:
        metrics = train(model, dataset.points, cfg.train)
    except TrainingDiverged as exc:
        atomic_write_text(out / "metrics.jsonl", dumps_jsonl(exc.metrics.records))
        save_model(out / "last_good.ckpt", exc.model, {**meta, "iteration": exc.iteration})
        atomic_write_text(out / "manifest.json", _manifest(cfg, "train", started, {"diverged": str(exc)}))
        _err(f"training diverged: {exc}; last good model saved to {out / 'last_good.ckpt'}")
        return EXIT_FAIL
    atomic_write_text(out / "metrics.jsonl", dumps_jsonl(metrics.records))
    save_model(out / "model.ckpt", model, {**meta, "iteration": cfg.train.iterations})
    atomic_write_text(out / "manifest.json", _manifest(
        cfg, "train", started, {"iterations": len(metrics), "collapse_ratio": metrics.collapse_ratio}))
    print(f"trained {len(metrics)} iterations -> {out}")
    return EXIT_OK


def cmd_fig1(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    if cfg.is_file_source:
        raise UsageError("fig1 needs an analytic 1-D distribution in [data]")
    out = Path(cfg.out_dir)

    def write_snapshot(iteration, curves, summary):
        atomic_write_text(out / f"fig1_iter{iteration:06d}.csv", format_csv(curves))

    try:
        model, metrics, snapshots = run_fig1(cfg, write_snapshot)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    except TrainingDiverged as exc:
        save_model(out / "last_good.ckpt", exc.model, {"iteration": exc.iteration})
        _err(f"training diverged: {exc}")
        return EXIT_FAIL
    final = snapshots[-1][1]
    passed = final["hist_jsd"] < args.max_jsd and final["mean_abs_d_dev"] < args.max_d_dev
    summary = {"snapshots": [s for _, s in snapshots], "passed": passed,
               "thresholds": {"hist_jsd": args.max_jsd, "mean_abs_d_dev": args.max_d_dev}}
    atomic_write_text(out / "fig1_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    atomic_write_text(out / "metrics.jsonl", dumps_jsonl(metrics.records))
    save_model(out / "model.ckpt", model, {"config_sha256": cfg.digest(), "seed": cfg.seed})
    atomic_write_text(out / "manifest.json", _manifest(cfg, "fig1", started))
    for it, s in snapshots:
        print(f"iter {it:6d}  hist JSD {s['hist_jsd']:.4f}  mean|D-1/2| {s['mean_abs_d_dev']:.4f}")
    print("PASS" if passed else "FAIL", f"(JSD < {args.max_jsd}, mean|D-1/2| < {args.max_d_dev})")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_theory_check(args) -> int:
    if args.bins < 2 or args.trials < 1:
        raise UsageError("need --bins >= 2 and --trials >= 1")
    scale = -1.0 if args.corrupt_tolerance else 1.0
    results = run_theory_suite(args.bins, args.trials, args.seed, tolerance_scale=scale)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def _read_points(path, label):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{label} file not found: {p}")
    try:
        return read_points_csv(p)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_eval_parzen(args) -> int:
    samples = _read_points(args.samples, "samples")
    test = _read_points(args.test, "test")
    valid = _read_points(args.valid, "validation")
    dims = {"samples": samples.shape[1], "test": test.shape[1], "valid": valid.shape[1]}
    if len(set(dims.values())) != 1:
        raise UsageError("dimension mismatch: " + ", ".join(f"{k} has dim {v}" for k, v in dims.items()))
    if args.sigma_grid == "auto":
        grid = default_sigma_grid(valid)
    else:
        try:
            grid = parse_sigma_grid(args.sigma_grid)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if len(grid) == 0 or np.any(grid <= 0):
        raise UsageError("sigma grid must be non-empty and positive")
    record = evaluate(samples, test, valid, grid)
    text = dumps_record(record)
    if args.out:
        atomic_write_text(Path(args.out), text + "\n")
    print(text)
    return EXIT_OK


def _load_ckpt(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"checkpoint not found: {p}")
    try:
        return load_model(p)[0]
    except ValueError as exc:
        raise UsageError(f"{p}: {exc}") from None


def cmd_sample(args) -> int:
    model = _load_ckpt(args.checkpoint)
    if args.z_csv:
        z = _read_points(args.z_csv, "latent")
        if z.shape[1] != model.prior.dim:
            raise UsageError(f"latent file has dim {z.shape[1]}, prior has dim {model.prior.dim}")
        x = model.generator(z)
    else:
        if args.n < 1:
            raise UsageError("--n must be >= 1")
        x = sample_generator(model, args.n, Rng(args.seed))
    write_points_csv(args.out, x)
    return EXIT_OK


def _parse_vec(text):
    return np.array([float(v) for v in text.split(",")])


def cmd_interpolate(args) -> int:
    model = _load_ckpt(args.checkpoint)
    if args.steps < 2:
        raise UsageError("--steps must be >= 2")
    if args.z_csv:
        z = _read_points(args.z_csv, "latent")
        if len(z) < 2:
            raise UsageError("latent file needs two rows (z_a, z_b)")
        z_a, z_b = z[0], z[1]
    else:
        z_a, z_b = model.prior.sample(Rng(args.seed), 2)
    try:
        path = interpolate_latent(model, z_a, z_b, args.steps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_points_csv(args.out, path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gankit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gankit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def cfg_cmd(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", required=True, help="experiment INI file")
        p.add_argument("--seed", type=int, default=None, help="override the training seed")
        p.add_argument("--out-dir", default=None, help=f"output directory (also ${OUT_DIR_ENV})")
        p.set_defaults(func=func)
        return p

    cfg_cmd("train", cmd_train, "train a GAN from a config file")
    p = cfg_cmd("fig1", cmd_fig1, "1-D experiment with exported D / p_g curves")
    p.add_argument("--max-jsd", type=float, default=0.05)
    p.add_argument("--max-d-dev", type=float, default=0.15)

    p = sub.add_parser("theory-check", help="randomized checks of the closed-form theory")
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-tolerance", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_theory_check)

    p = sub.add_parser("eval-parzen", help="Parzen-window log-likelihood of samples on a test set")
    p.add_argument("--samples", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--sigma-grid", default="auto",
                   help="'auto', a value, a comma list, or log:LO:HI:N")
    p.add_argument("--out", default=None, help="also write the JSON record here")
    p.set_defaults(func=cmd_eval_parzen)

    p = sub.add_parser("sample", help="draw generator samples from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--z-csv", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("interpolate", help="generator outputs along a line in latent space")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--z-csv", default=None, help="two latent rows to use as endpoints")
    p.set_defaults(func=cmd_interpolate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
