"""Experiment drivers shared by the CLI, the scripts and the acceptance tests."""
from __future__ import annotations

import math

import numpy as np

from . import data as data_mod
from .adversarial import GanModel, NoisePrior, TrainConfig, sample_generator, train
from .config import ExperimentConfig, Fig1Config
from .neural import LayerSpec, init_mlp
from .numkit import Rng
from .parzen import ParzenModel, cross_validate_sigma, default_sigma_grid, log_densities, mean_ll_with_stderr
from .theory import jsd


def load_training_data(cfg: ExperimentConfig) -> data_mod.Dataset:
    d = cfg.data
    if d["kind"] == "idx":
        ds = data_mod.load_idx(d["images"])
        limit = int(d.get("limit", 0))
        return ds.subset(slice(0, limit), f"first {limit}") if limit else ds
    if d["kind"] == "csv":
        return data_mod.load_csv(d["path"])
    return data_mod.synthetic_dataset(data_mod.distribution_from_dict(d), cfg.n_data, cfg.data_seed)


def build_model(cfg: ExperimentConfig, data_dim: int) -> GanModel:
    gen_specs, disc_specs = cfg.layer_specs(data_dim)
    rng = Rng(cfg.init_seed)
    return GanModel(init_mlp(gen_specs, rng), init_mlp(disc_specs, rng), cfg.prior)


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=np.float64).ravel()
    spread = x.std(ddof=1) if len(x) > 1 else 0.0
    return max(1.06 * spread * len(x) ** (-0.2), 1e-6)


def fig1_checkpoints(iterations: int) -> list[int]:
    """Iterations at which 1-D curves are exported: 0, 1%, 10% and 100% of the run."""
    marks = {0, iterations}
    for frac in (0.01, 0.1):
        marks.add(max(1, int(round(frac * iterations))) if iterations else 0)
    return sorted(marks)


def fig1_snapshot(model: GanModel, dist, fig: Fig1Config, rng: Rng) -> tuple[dict, dict]:
    """Curves (x, p_data, p_g_est, d_of_x, d_star) and summary numbers for one model state."""
    x = np.linspace(fig.x_min, fig.x_max, fig.sweep_points)
    p_data = data_mod.pdf(dist, x)
    fake = sample_generator(model, fig.eval_samples, rng)
    kde = ParzenModel(fake, silverman_bandwidth(fake))
    p_g = np.exp(log_densities(kde, x[:, None]))
    d_of_x = model.discriminator(x[:, None])[:, 0]
    total = p_data + p_g
    d_star = np.divide(p_data, total, out=np.full_like(total, np.nan), where=total > 0)
    support = p_data >= fig.support_fraction * p_data.max()
    centres = np.linspace(fig.x_min, fig.x_max, fig.hist_bins)
    hist_jsd = jsd(data_mod.discretize(dist, centres), data_mod.histogram_density(fake, centres))
    curves = {"x": x, "p_data": p_data, "p_g_est": p_g, "d_of_x": d_of_x, "d_star": d_star}
    summary = {
        "hist_jsd": hist_jsd,
        "mean_abs_d_dev": float(np.mean(np.abs(d_of_x[support] - 0.5))),
        "sample_mean": float(fake.mean()),
        "sample_std": float(fake.std()),
    }
    return curves, summary


def run_fig1(cfg: ExperimentConfig, snapshot_cb=None):
    """Train a 1-D GAN, snapshotting curves at :func:`fig1_checkpoints`.

    ``snapshot_cb(iteration, curves, summary)`` is called for every snapshot.
    Returns ``(model, metrics, snapshots)`` with ``snapshots`` a list of
    ``(iteration, summary)``.
    """
    if cfg.is_file_source:
        raise ValueError("fig1 needs an analytic 1-D data distribution")
    dist = data_mod.distribution_from_dict(cfg.data)
    if dist.dim != 1:
        raise ValueError(f"fig1 needs a 1-D distribution, got dim {dist.dim}")
    dataset = load_training_data(cfg)
    model = build_model(cfg, 1)
    marks = set(fig1_checkpoints(cfg.train.iterations))
    snapshots = []

    def snap(iteration):
        eval_rng = Rng(cfg.seed).spawn(3)[2]
        curves, summary = fig1_snapshot(model, dist, cfg.fig1, eval_rng)
        summary["iteration"] = iteration
        snapshots.append((iteration, summary))
        if snapshot_cb is not None:
            snapshot_cb(iteration, curves, summary)

    snap(0)

    def on_iter(it, _model, _record):
        if it + 1 in marks and it + 1 > 0:
            snap(it + 1)

    metrics = train(model, dataset.points, cfg.train, callback=on_iter)
    return model, metrics, snapshots


def parzen_score(model: GanModel, valid, test, n_samples: int, rng: Rng, sigma_grid=None) -> dict:
    """Fit a Parzen window to generator samples, cross-validate sigma, score ``test``."""
    fake = sample_generator(model, n_samples, rng)
    grid = default_sigma_grid(valid) if sigma_grid is None else sigma_grid
    sigma = cross_validate_sigma(fake, valid, grid)
    mean, err = mean_ll_with_stderr(ParzenModel(fake, sigma), test)
    return {"sigma": sigma, "mean_ll": mean, "stderr": err}


def image_gan(data_dim: int, seed: int, noise_dim: int = 20, hidden: int = 128,
              disc_hidden: int = 64, pieces: int = 2) -> GanModel:
    """Small relu/sigmoid generator and maxout discriminator with dropout, for pixel data in [0, 1]."""
    rng = Rng(seed)
    gen = init_mlp([LayerSpec(noise_dim, hidden, "relu"),
                    LayerSpec(hidden, hidden, "relu"),
                    LayerSpec(hidden, data_dim, "sigmoid")], rng)
    disc = init_mlp([LayerSpec(data_dim, disc_hidden, "maxout", pieces, 0.2),
                     LayerSpec(disc_hidden, disc_hidden, "maxout", pieces, 0.5),
                     LayerSpec(disc_hidden, 1, "sigmoid", 1, 0.5)], rng)
    return GanModel(gen, disc, NoisePrior("uniform", noise_dim, -1.0, 1.0))


def image_smoke_run(points, seed: int = 0, iterations: int = 2000, test_size: int = 200,
                    valid_size: int = 200, parzen_samples: int = 2000, cfg: TrainConfig | None = None) -> dict:
    """Train a small image GAN and compare Parzen log-likelihood against its untrained start."""
    ds = data_mod.Dataset(points, provenance={"source": "smoke"})
    n = len(ds)
    test_frac = test_size / n
    valid_frac = valid_size / n
    train_ds, valid_ds, test_ds = data_mod.split(ds, (1 - test_frac - valid_frac, valid_frac, test_frac), seed)
    model = image_gan(ds.points.shape[1], seed)
    untrained = model.copy()
    cfg = cfg or TrainConfig(k=1, batch_size=100, lr_d=0.05, lr_g=0.05, momentum=0.5,
                             iterations=iterations, generator_loss="non_saturating", seed=seed)
    metrics = train(model, train_ds.points, cfg)
    tail = max(1, len(metrics) // 10)
    before = parzen_score(untrained, valid_ds.points, test_ds.points, parzen_samples, Rng(seed + 7))
    after = parzen_score(model, valid_ds.points, test_ds.points, parzen_samples, Rng(seed + 7))
    return {
        "n_train": len(train_ds),
        "iterations": cfg.iterations,
        "any_nan": not all(math.isfinite(v) for r in metrics.records for v in r.values()),
        "mean_d_real_tail": float(metrics.column("mean_d_real")[-tail:].mean()),
        "mean_d_fake_tail": float(metrics.column("mean_d_fake")[-tail:].mean()),
        "parzen_untrained": before,
        "parzen_trained": after,
        "model": model,
    }
