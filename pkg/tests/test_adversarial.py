import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gankit.adversarial as adv_errors
from gankit.adversarial import (
    GanModel, ModeCollapseWarning, NoisePrior, TrainConfig, TrainingDiverged, collapse_ratio,
    discriminator_objective, discriminator_step, generator_loss_derivative, generator_loss_logit_derivative,
    generator_loss_value, generator_objective, generator_step, interpolate_latent, load_model,
    sample_generator, save_model, train, value_estimate,
)
from gankit.neural import LayerSpec, Mlp, init_mlp
from gankit.numkit import Rng, ShapeError, sigmoid

from conftest import central_diff, max_rel_error


def small_gan(seed=0, noise_dim=2, data_dim=2, dropout=0.0):
    rng = Rng(seed)
    gen = init_mlp([LayerSpec(noise_dim, 6, "relu"), LayerSpec(6, 4, "sigmoid"),
                    LayerSpec(4, data_dim, "linear")], rng)
    disc = init_mlp([LayerSpec(data_dim, 5, "maxout", 2, dropout), LayerSpec(5, 4, "tanh"),
                     LayerSpec(4, 1, "sigmoid", 1, dropout)], rng)
    for net in (gen, disc):
        for i in range(1, len(net.params), 2):
            net.params[i] = rng.uniform(-0.3, 0.3, net.params[i].shape)
    return GanModel(gen, disc, NoisePrior("uniform", noise_dim, -1.0, 1.0))


def linear_net(w, b, act="linear"):
    return Mlp([LayerSpec(1, 1, act)], [np.array([[w]]), np.array([b])])


def snapshot(net):
    return [p.tobytes() for p in net.params] + [v.tobytes() for v in net.velocity]


def batches(seed, m=8, dim=2):
    rng = Rng(seed)
    return rng.gaussian(0, 1, (m, dim)), rng.uniform(-1, 1, (m, dim))


def test_model_validation():
    gen = linear_net(1.0, 0.0)
    with pytest.raises(ValueError):
        GanModel(gen, linear_net(1.0, 0.0, "linear"), NoisePrior())
    with pytest.raises(ShapeError):
        GanModel(gen, init_mlp([LayerSpec(2, 1, "sigmoid")], Rng(0)), NoisePrior())


def test_value_at_half_is_minus_log4():
    model = GanModel(linear_net(1.0, 0.0), linear_net(0.0, 0.0, "sigmoid"), NoisePrior())
    x, z = np.ones((5, 1)), np.zeros((7, 1))
    assert value_estimate(model, x, z) == pytest.approx(-math.log(4), abs=1e-15)


def test_value_perfect_discriminator_is_zero():
    gen = linear_net(0.0, -1.0)  # every fake lands on -1
    disc = linear_net(1000.0, 0.0, "sigmoid")
    model = GanModel(gen, disc, NoisePrior())
    assert value_estimate(model, np.ones((4, 1)), np.zeros((4, 1))) == 0.0


def test_value_matches_scalar_loop():
    model = small_gan(1)
    x, z = batches(2)
    total_real = total_fake = 0.0
    for i in range(8):
        total_real += math.log(float(model.discriminator(x[i:i + 1])[0, 0]))
        fake = model.generator(z[i:i + 1])
        total_fake += math.log(1.0 - float(model.discriminator(fake)[0, 0]))
    assert value_estimate(model, x, z) == pytest.approx(total_real / 8 + total_fake / 8, abs=1e-12)


def test_value_rejects_empty():
    model = small_gan()
    with pytest.raises(ValueError):
        value_estimate(model, np.zeros((0, 2)), np.zeros((3, 2)))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 1000))
def test_value_concatenation_is_weighted_mean(n1, n2, seed):
    model = small_gan(3)
    rng = Rng(seed)
    x1, z1 = rng.gaussian(0, 1, (n1, 2)), rng.uniform(-1, 1, (n1, 2))
    x2, z2 = rng.gaussian(0, 1, (n2, 2)), rng.uniform(-1, 1, (n2, 2))
    joint = value_estimate(model, np.vstack([x1, x2]), np.vstack([z1, z2]))
    weighted = (n1 * value_estimate(model, x1, z1) + n2 * value_estimate(model, x2, z2)) / (n1 + n2)
    assert joint == pytest.approx(weighted, abs=1e-12)


def test_discriminator_gradient_finite_differences():
    model = small_gan(4)
    assert model.discriminator.n_params <= 200
    x, z = batches(5)
    _, grads, _, _ = discriminator_objective(model, x, z)
    theta = model.discriminator.get_flat()

    def objective(flat):
        probe = model.copy()
        probe.discriminator.set_flat(flat)
        return discriminator_objective(probe, x, z)[0]

    assert max_rel_error(grads.flat(), central_diff(objective, theta), 1e-6) <= 1e-4


@pytest.mark.parametrize("loss", ["saturating", "non_saturating"])
def test_generator_gradient_through_discriminator(loss):
    model = small_gan(6)
    assert model.generator.n_params <= 200
    _, z = batches(7)
    _, grads, _ = generator_objective(model, z, loss)
    theta = model.generator.get_flat()

    def objective(flat):
        probe = model.copy()
        probe.generator.set_flat(flat)
        return generator_objective(probe, z, loss)[0]

    assert max_rel_error(grads.flat(), central_diff(objective, theta), 1e-6) <= 1e-4


def test_discriminator_step_increases_objective_and_isolates_generator():
    model = small_gan(8)
    x, z = batches(9)
    before = discriminator_objective(model, x, z)[0]
    g_bits = snapshot(model.generator)
    cfg = TrainConfig(lr_d=1e-3, lr_g=1e-3, momentum=0.0)
    discriminator_step(model, x, z, cfg)
    assert discriminator_objective(model, x, z)[0] >= before
    assert snapshot(model.generator) == g_bits


@pytest.mark.parametrize("loss", ["saturating", "non_saturating"])
def test_generator_step_isolates_discriminator_and_improves(loss):
    model = small_gan(10)
    _, z = batches(11)
    d_bits = snapshot(model.discriminator)
    cfg = TrainConfig(lr_d=1e-3, lr_g=1e-3, momentum=0.0, generator_loss=loss)
    before = generator_objective(model, z, loss)[0]
    generator_step(model, z, cfg)
    after = generator_objective(model, z, loss)[0]
    assert snapshot(model.discriminator) == d_bits
    assert (after <= before) if loss == "saturating" else (after >= before)


def test_both_losses_push_d_the_same_way():
    grid = np.linspace(0.01, 0.99, 99)
    for d in [0.1, 0.5, 0.9, *grid]:
        sat = generator_loss_derivative(d, "saturating")
        ns = generator_loss_derivative(d, "non_saturating")
        assert sat < 0 and ns < 0
    # both losses are strictly decreasing in d
    for loss in ("saturating", "non_saturating"):
        assert np.all(np.diff(generator_loss_value(grid, loss)) < 0)


def test_saturation_regimes():
    def mags(d):
        a = math.log(d / (1 - d))
        # direct evaluation of both formulas vs finite differences in the logit
        out = {}
        for loss in ("saturating", "non_saturating"):
            f = lambda t: float(generator_loss_value(sigmoid(t), loss))
            fd = (f(a + 1e-6) - f(a - 1e-6)) / 2e-6
            formula = float(generator_loss_logit_derivative(d, loss))
            assert formula == pytest.approx(fd, rel=1e-5)
            out[loss] = abs(formula)
        return out

    high, low = mags(0.999), mags(0.001)
    assert high["saturating"] > high["non_saturating"]
    assert low["non_saturating"] > low["saturating"]


def test_train_zero_iterations_is_noop():
    model = small_gan(12)
    bits = snapshot(model.generator) + snapshot(model.discriminator)
    data = Rng(0).gaussian(0, 1, (100, 2))
    metrics = train(model, data, TrainConfig(iterations=0, batch_size=10))
    assert len(metrics) == 0
    assert snapshot(model.generator) + snapshot(model.discriminator) == bits


def test_train_deterministic_and_records():
    data = Rng(1).gaussian(0, 1, (200, 2))
    cfg = TrainConfig(k=2, batch_size=16, iterations=15, lr_d=0.05, lr_g=0.05, seed=3)
    runs = []
    for _ in range(2):
        model = small_gan(13, dropout=0.3)
        runs.append((train(model, data, cfg), model))
    (m1, a), (m2, b) = runs
    assert m1.records == m2.records
    assert snapshot(a.generator) == snapshot(b.generator)
    assert len(m1) == 15
    keys = {"iteration", "value_estimate", "d_loss", "g_loss", "mean_d_real", "mean_d_fake"}
    for r in m1.records:
        assert keys <= set(r)
        assert all(math.isfinite(v) for v in r.values())


def test_train_rejects_small_dataset():
    with pytest.raises(ValueError):
        train(small_gan(), np.zeros((3, 2)), TrainConfig(batch_size=4))


def test_train_divergence_keeps_last_good_model(monkeypatch):
    import gankit.adversarial as adv

    real = adv.discriminator_objective
    calls = []

    def poisoned(*args, **kwargs):
        calls.append(1)
        out = real(*args, **kwargs)
        return (math.nan, *out[1:]) if len(calls) == 3 else out

    monkeypatch.setattr(adv, "discriminator_objective", poisoned)
    model = small_gan(14)
    data = Rng(2).gaussian(0, 1, (50, 2))
    cfg = TrainConfig(batch_size=10, iterations=5, momentum=0.0)
    with pytest.raises(TrainingDiverged) as info:
        train(model, data, cfg)
    exc = info.value
    assert exc.iteration == 2
    assert len(exc.metrics) == 2
    assert all(np.all(np.isfinite(p)) for p in exc.model.discriminator.params)


def test_update_overflow_is_rolled_back():
    from gankit.neural import Gradients

    net = small_gan(14).discriminator
    bits = snapshot(net)
    huge = Gradients([np.full_like(p, 1e308) for p in net.params])
    with pytest.raises(adv_errors.NonFiniteLossError):
        adv_errors._guarded_step(net, huge, 10.0, 0.0, "ascend", "test")
    assert snapshot(net) == bits


def test_collapse_warning():
    gen = Mlp([LayerSpec(1, 1)], [np.zeros((1, 1)), np.zeros(1)])
    disc = init_mlp([LayerSpec(1, 4, "tanh"), LayerSpec(4, 1, "sigmoid")], Rng(0))
    model = GanModel(gen, disc, NoisePrior())
    data = Rng(1).gaussian(0, 1, (300, 1))
    assert collapse_ratio(model, data, Rng(2)) < 1e-6
    with pytest.warns(ModeCollapseWarning):
        train(model, data, TrainConfig(batch_size=10, iterations=1, lr_g=1e-12, lr_d=1e-12))
    healthy = GanModel(linear_net(1.0, 0.0), disc, NoisePrior())
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        train(healthy, data, TrainConfig(batch_size=10, iterations=1, lr_g=1e-12, lr_d=1e-12))


def test_sample_generator_contract():
    model = GanModel(linear_net(1.0, 0.0), linear_net(1.0, 0.0, "sigmoid"), NoisePrior("uniform", 1, -1, 1))
    s = sample_generator(model, 5000, Rng(3))
    assert s.shape == (5000, 1)
    assert s.min() > -1 and s.max() < 1
    assert np.array_equal(s, sample_generator(model, 5000, Rng(3)))
    assert abs(s.mean()) < 0.05
    assert sample_generator(small_gan(), 7, Rng(0)).shape == (7, 2)


def test_interpolation():
    model = small_gan(15)
    z_a, z_b = np.array([0.3, -0.9]), np.array([-0.5, 0.25])
    path = interpolate_latent(model, z_a, z_b, 5)
    assert np.array_equal(path[0], model.generator(z_a[None])[0])
    assert np.array_equal(path[-1], model.generator(z_b[None])[0])
    assert np.array_equal(path[2], model.generator(((z_a + z_b) / 2)[None])[0])
    two = interpolate_latent(model, z_a, z_b, 2)
    assert np.array_equal(two, model.generator(np.vstack([z_a, z_b])))
    with pytest.raises(ShapeError):
        interpolate_latent(model, [0.0], z_b, 3)
    with pytest.raises(ValueError):
        interpolate_latent(model, z_a, z_b, 1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=2), st.integers(0, 10_000))
def test_discriminator_output_in_open_unit_interval(point, seed):
    model = small_gan(seed % 50)
    d = model.discriminator(np.array([point]))[0, 0]
    assert 0.0 < d < 1.0


def test_model_checkpoint_roundtrip(tmp_path):
    model = small_gan(16)
    save_model(tmp_path / "m.ckpt", model, {"seed": 1})
    back, meta = load_model(tmp_path / "m.ckpt")
    assert meta["seed"] == 1 and back.prior == model.prior
    assert snapshot(back.generator) == snapshot(model.generator)
