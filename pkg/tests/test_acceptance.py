"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line (collected in the terminal summary) and
then asserts.  Run just these with ``pytest tests/test_acceptance.py -v``.
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from gankit.adversarial import GanModel, NoisePrior, generator_objective
from gankit.cli import main
from gankit.config import load_config
from gankit.data import load_idx, write_idx
from gankit.experiments import image_smoke_run, run_fig1
from gankit.neural import LayerSpec, backward, forward, init_mlp
from gankit.numkit import Rng
from gankit.parzen import ParzenModel, cross_validate_sigma, default_sigma_grid, mean_ll_with_stderr
from gankit.theory import (
    LOG4, density_descent, optimal_discriminator, random_density, unit_grid, virtual_criterion, y_star,
)

from conftest import central_diff, max_rel_error, record_acceptance

ROOT = Path(__file__).resolve().parent.parent


def verdict(number, title, passed, detail):
    record_acceptance(number, title, passed, detail)
    print(f"{'PASS' if passed else 'FAIL'}  criterion {number}: {title}  [{detail}]")
    assert passed, detail


# -- 1 -----------------------------------------------------------------------

def test_criterion_1_lower_bound_property():
    start = time.perf_counter()
    r = Rng(2024)
    grid = unit_grid(32)
    gaps, eq = [], []
    for i in range(60):
        p = random_density(r, grid, 0.25 if i % 2 else 0.0)
        q = random_density(r, grid, 0.25 if i % 3 == 0 else 0.0)
        gaps.append(virtual_criterion(p, q) + LOG4)
        eq.append(abs(virtual_criterion(p, p) + LOG4))
    elapsed = time.perf_counter() - start
    ok = min(gaps) >= 0.0 and max(eq) <= 1e-9 and elapsed < 1.0
    verdict(1, "C(G) >= -log 4, equality at p_g = p_data", ok,
            f"60 pairs, min C+log4 {min(gaps):.3e}, max |C+log4| at equality {max(eq):.1e}, {elapsed:.3f}s")


# -- 2 -----------------------------------------------------------------------

def grid_argmax(a, b, points=2001, levels=3):
    """Zooming grid search for argmax_y a log y + b log(1 - y), one row per (a, b)."""
    a, b = a[:, None], b[:, None]
    lo, hi = np.zeros_like(a), np.ones_like(a)
    t = np.linspace(0, 1, points)[None, :]
    for _ in range(levels):
        y = np.clip(lo + (hi - lo) * t, 1e-300, 1 - 1e-16)
        f = a * np.log(y) + b * np.log1p(-y)
        best = np.take_along_axis(y, np.argmax(f, axis=1)[:, None], axis=1)
        cell = (hi - lo) / (points - 1)
        lo, hi = np.maximum(best - cell, 0.0), np.minimum(best + cell, 1.0)
    return best[:, 0]


def test_criterion_2_optimal_discriminator_oracle():
    r = Rng(7)
    a, b = r.random(1000), r.random(1000)
    closed = np.array([y_star(x, y) for x, y in zip(a, b)])
    err = float(np.max(np.abs(grid_argmax(a, b) - closed)))
    p, q = random_density(r, unit_grid(32)), random_density(r, unit_grid(32))
    err_bins = float(np.max(np.abs(optimal_discriminator(p, q).values - grid_argmax(p.probs, q.probs))))
    ok = err <= 1e-6 and err_bins <= 1e-6
    verdict(2, "optimal discriminator = grid-search argmax", ok,
            f"1000 (a,b) pairs max err {err:.1e}; 32 bins max err {err_bins:.1e}")


# -- 3 -----------------------------------------------------------------------

def kink_margin(net, acts):
    margin = math.inf
    for spec, z in zip(net.layers, acts.pre):
        if spec.activation == "relu":
            margin = min(margin, float(np.min(np.abs(z))))
        elif spec.activation == "maxout":
            top = np.sort(z, axis=2)[..., -2:]
            margin = min(margin, float(np.min(top[..., 1] - top[..., 0])))
    return margin


def mlp_case(specs, seed):
    for attempt in range(50):
        rng = Rng(seed + 7919 * attempt)
        net = init_mlp(specs, rng)
        for i in range(1, len(net.params), 2):
            net.params[i] = rng.uniform(-0.5, 0.5, net.params[i].shape)
        x = rng.gaussian(0, 1, (4, specs[0].in_dim))
        acts = forward(net, x)
        if kink_margin(net, acts) > 1e-3:
            break
    weights = rng.gaussian(0, 1, acts.output.shape)
    analytic = backward(net, acts, weights).flat()

    def loss(flat):
        probe = net.copy()
        probe.set_flat(flat)
        return float(np.sum(forward(probe, x).output * weights))

    return net.n_params, max_rel_error(analytic, central_diff(loss, net.get_flat()), 1e-6)


def composite_case(loss_mode, gen_specs, disc_specs, seed):
    for attempt in range(50):
        rng = Rng(seed + 7919 * attempt)
        model = GanModel(init_mlp(gen_specs, rng), init_mlp(disc_specs, rng), NoisePrior("uniform", 2))
        for net in (model.generator, model.discriminator):
            for i in range(1, len(net.params), 2):
                net.params[i] = rng.uniform(-0.5, 0.5, net.params[i].shape)
        z = model.prior.sample(rng, 6)
        g_acts = forward(model.generator, z)
        d_acts = forward(model.discriminator, g_acts.output)
        if min(kink_margin(model.generator, g_acts), kink_margin(model.discriminator, d_acts)) > 1e-3:
            break
    _, grads, _ = generator_objective(model, z, loss_mode)

    def objective(flat):
        probe = model.copy()
        probe.generator.set_flat(flat)
        return generator_objective(probe, z, loss_mode)[0]

    n = model.generator.n_params + model.discriminator.n_params
    return n, max_rel_error(grads.flat(), central_diff(objective, model.generator.get_flat()), 1e-6)


def test_criterion_3_gradient_correctness():
    start = time.perf_counter()
    cases = {
        "relu": [LayerSpec(3, 8, "relu"), LayerSpec(8, 8, "relu"), LayerSpec(8, 2)],
        "sigmoid": [LayerSpec(3, 8, "sigmoid"), LayerSpec(8, 2, "sigmoid")],
        "tanh": [LayerSpec(3, 8, "tanh"), LayerSpec(8, 2, "tanh")],
        "maxout2": [LayerSpec(3, 6, "maxout", 2), LayerSpec(6, 1, "sigmoid")],
        "maxout3": [LayerSpec(3, 5, "maxout", 3), LayerSpec(5, 2)],
        "mixed": [LayerSpec(2, 4, "maxout", 3), LayerSpec(4, 5, "relu"), LayerSpec(5, 4, "tanh"),
                  LayerSpec(4, 1, "sigmoid")],
    }
    results = {}
    for i, (name, specs) in enumerate(cases.items()):
        results[name] = mlp_case(specs, 100 + i)
    gen = [LayerSpec(2, 6, "relu"), LayerSpec(6, 6, "tanh"), LayerSpec(6, 2)]
    disc = [LayerSpec(2, 6, "maxout", 2), LayerSpec(6, 1, "sigmoid")]
    for loss_mode in ("saturating", "non_saturating"):
        results[f"D(G(z)) {loss_mode}"] = composite_case(loss_mode, gen, disc, 300)
    elapsed = time.perf_counter() - start
    worst = max(err for _, err in results.values())
    biggest = max(n for n, _ in results.values())
    ok = worst <= 1e-4 and biggest <= 200 and elapsed < 10.0
    verdict(3, "backprop matches central differences", ok,
            f"{len(results)} cases, worst rel err {worst:.1e}, <= {biggest} params, {elapsed:.2f}s")


# -- 4 -----------------------------------------------------------------------

def test_criterion_4_density_descent_converges():
    start = time.perf_counter()
    r = Rng(99)
    grid = unit_grid(16)
    worst, monotone = 0.0, True
    for _ in range(10):
        target, p0 = random_density(r, grid), random_density(r, grid)
        assert np.all(p0.probs > 0)
        res = density_descent(target, p0, steps=5000, lr=10.0)
        worst = max(worst, res.final.jsd)
        monotone &= bool(np.all(np.diff(res.criteria()) <= 0)) and res.aborted is None
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and monotone and elapsed < 30.0
    verdict(4, "density descent reaches p_data", ok,
            f"10 targets x 16 bins, worst JSD {worst:.1e}, monotone={monotone}, {elapsed:.1f}s")


# -- 5 -----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_one_dimensional_gan():
    start = time.perf_counter()
    cfg = load_config(ROOT / "configs" / "fig1.ini")
    _, _, snapshots = run_fig1(cfg)
    elapsed = time.perf_counter() - start
    final = snapshots[-1][1]
    ok = (final["hist_jsd"] < 0.05 and final["mean_abs_d_dev"] < 0.15 and elapsed < 120.0
          and cfg.fig1.eval_samples == 10_000 and cfg.fig1.hist_bins == 32)
    verdict(5, "1-D GAN matches p_data and D -> 1/2", ok,
            f"hist JSD {final['hist_jsd']:.4f}, mean|D-1/2| {final['mean_abs_d_dev']:.4f}, "
            f"{cfg.train.iterations} iters, {elapsed:.0f}s")


# -- 6 -----------------------------------------------------------------------

def test_criterion_6_parzen_gaussian_sanity():
    start = time.perf_counter()
    r = Rng(6)
    samples = r.gaussian(0, 1, (10_000, 1))
    valid = r.gaussian(0, 1, (2_000, 1))
    test = r.gaussian(0, 1, (10_000, 1))
    sigma = cross_validate_sigma(samples, valid, default_sigma_grid(valid))
    mean, err = mean_ll_with_stderr(ParzenModel(samples, sigma), test)
    s2 = 1.0 + sigma ** 2
    expected = -0.5 * math.log(2 * math.pi * s2) - 0.5 / s2
    elapsed = time.perf_counter() - start
    ok = abs(mean - expected) <= 3 * err and elapsed < 30.0
    verdict(6, "Parzen estimate matches the analytic cross-entropy", ok,
            f"sigma {sigma:.4f}, mean {mean:.4f} +- {err:.4f} vs {expected:.4f} "
            f"({abs(mean - expected) / err:.2f} stderr), {elapsed:.1f}s")


# -- 7 -----------------------------------------------------------------------

def image_points(tmp_path):
    """MNIST training images from $GANKIT_MNIST_DIR if present, else the 8x8 digits set via IDX."""
    mnist_dir = os.environ.get("GANKIT_MNIST_DIR")
    if mnist_dir and (Path(mnist_dir) / "train-images-idx3-ubyte").is_file():
        ds = load_idx(Path(mnist_dir) / "train-images-idx3-ubyte")
        return ds.points[:3000], "MNIST"
    from sklearn.datasets import load_digits

    images = np.rint(load_digits().images * 255.0 / 16.0).astype(np.uint8)
    write_idx(tmp_path / "digits-idx3-ubyte", images)
    return load_idx(tmp_path / "digits-idx3-ubyte").points, "8x8 digits"


@pytest.mark.slow
def test_criterion_7_image_smoke_run(tmp_path):
    start = time.perf_counter()
    points, source = image_points(tmp_path)
    res = image_smoke_run(points, seed=0, iterations=2000, test_size=200)
    elapsed = time.perf_counter() - start
    before, after = res["parzen_untrained"]["mean_ll"], res["parzen_trained"]["mean_ll"]
    ok = (len(points) >= 1000 and not res["any_nan"] and 0.5 < res["mean_d_real_tail"] < 1.0
          and math.isfinite(after) and after > before and elapsed < 300.0)
    verdict(7, "image GAN smoke run", ok,
            f"{source}, {len(points)} images, mean D(x) {res['mean_d_real_tail']:.3f}, "
            f"Parzen {before:.2f} -> {after:.2f}, {elapsed:.0f}s")


# -- 8 -----------------------------------------------------------------------

def test_criterion_8_train_is_deterministic(tmp_path):
    config = str(ROOT / "configs" / "ring2d_smoke.ini")
    codes = [main(["train", "--config", config, "--out-dir", str(tmp_path / run)]) for run in ("a", "b")]
    same = {name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
            for name in ("metrics.jsonl", "model.ckpt")}
    ok = codes == [0, 0] and all(same.values())
    verdict(8, "train runs are byte-identical", ok,
            f"exit codes {codes}, identical: " + ", ".join(f"{k}={v}" for k, v in same.items()))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
