"""The two-player game: value function, both generator objectives, alternating training.

Logs of discriminator outputs are floored at ``EPS`` so a saturated
discriminator yields a large-but-finite loss and a zero gradient instead of
``-inf``/``nan``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .neural import (Gradients, Mlp, backward, forward, load_checkpoint, save_checkpoint,
                     sgd_momentum_step)
from .numkit import Rng, ShapeError

EPS = 1e-12
GENERATOR_LOSSES = ("saturating", "non_saturating")


class NonFiniteLossError(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    """Raised when an update would produce non-finite values.

    ``model`` holds the last parameters that were fully finite and
    ``metrics`` the records gathered before the failure.
    """

    def __init__(self, message, model, metrics, iteration):
        super().__init__(message)
        self.model = model
        self.metrics = metrics
        self.iteration = iteration


class ModeCollapseWarning(UserWarning):
    pass


@dataclass(frozen=True)
class NoisePrior:
    kind: str = "uniform"
    dim: int = 1
    lo: float = -1.0
    hi: float = 1.0
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("prior dim must be >= 1")
        if self.kind == "uniform" and not self.hi > self.lo:
            raise ValueError(f"uniform prior needs hi > lo, got [{self.lo}, {self.hi}]")
        if self.kind == "gaussian" and not self.std > 0:
            raise ValueError(f"gaussian prior needs std > 0, got {self.std}")

    def sample(self, rng: Rng, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, (n, self.dim))
        return rng.gaussian(self.mean, self.std, (n, self.dim))


@dataclass
class GanModel:
    generator: Mlp
    discriminator: Mlp
    prior: NoisePrior

    def __post_init__(self):
        if self.generator.in_dim != self.prior.dim:
            raise ShapeError(f"generator takes {self.generator.in_dim} inputs, prior has dim {self.prior.dim}")
        if self.generator.out_dim != self.discriminator.in_dim:
            raise ShapeError("generator output width must equal discriminator input width")
        head = self.discriminator.layers[-1]
        if head.out_dim != 1 or head.activation != "sigmoid":
            raise ValueError("discriminator must end in a single sigmoid unit")

    @property
    def data_dim(self) -> int:
        return self.generator.out_dim

    def copy(self) -> "GanModel":
        return GanModel(self.generator.copy(), self.discriminator.copy(), self.prior)


@dataclass(frozen=True)
class TrainConfig:
    k: int = 1
    batch_size: int = 64
    lr_d: float = 0.05
    lr_g: float = 0.05
    momentum: float = 0.5
    iterations: int = 1000
    generator_loss: str = "non_saturating"
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.lr_d > 0 and self.lr_g > 0):
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.generator_loss not in GENERATOR_LOSSES:
            raise ValueError(f"generator_loss must be one of {GENERATOR_LOSSES}")


@dataclass
class TrainMetrics:
    records: list = field(default_factory=list)
    collapse_ratio: float | None = None

    def __len__(self):
        return len(self.records)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.records])


def _log(p):
    return np.log(np.maximum(p, EPS))


def _dlog(p):
    # derivative of the clamped log: zero on the floor
    return np.where(p > EPS, 1.0 / np.maximum(p, EPS), 0.0)


def _check_batch(batch, name):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty 2-D batch, got shape {batch.shape}")
    return batch


def value_estimate(model: GanModel, data_batch, noise_batch) -> float:
    """Monte-Carlo V(D, G) = mean log D(x) + mean log(1 - D(G(z))), inference mode."""
    x = _check_batch(data_batch, "data_batch")
    z = _check_batch(noise_batch, "noise_batch")
    d_real = model.discriminator(x)
    d_fake = model.discriminator(model.generator(z))
    return float(np.mean(_log(d_real)) + np.mean(_log(1.0 - d_fake)))


def discriminator_objective(model: GanModel, data_batch, noise_batch, mode="infer", rng=None):
    """Return ``(objective, grads wrt theta_d, mean D(x), mean D(G(z)))``."""
    x = _check_batch(data_batch, "data_batch")
    z = _check_batch(noise_batch, "noise_batch")
    D = model.discriminator
    fake = forward(model.generator, z, mode, rng).output
    real_acts = forward(D, x, mode, rng)
    fake_acts = forward(D, fake, mode, rng)
    d_real, d_fake = real_acts.output, fake_acts.output
    objective = float(np.mean(_log(d_real)) + np.mean(_log(1.0 - d_fake)))
    g_real = backward(D, real_acts, _dlog(d_real) / len(x))
    g_fake = backward(D, fake_acts, -_dlog(1.0 - d_fake) / len(z))
    grads = Gradients([a + b for a, b in zip(g_real.blocks, g_fake.blocks)])
    return objective, grads, float(d_real.mean()), float(d_fake.mean())


def generator_objective(model: GanModel, noise_batch, loss="non_saturating", mode="infer", rng=None):
    """Return ``(objective, grads wrt theta_g, mean D(G(z)))``.

    saturating: objective mean log(1 - D(G(z))), to be descended.
    non_saturating: objective mean log D(G(z)), to be ascended.
    theta_d is read but never modified.
    """
    if loss not in GENERATOR_LOSSES:
        raise ValueError(f"unknown generator loss {loss!r}")
    z = _check_batch(noise_batch, "noise_batch")
    g_acts = forward(model.generator, z, mode, rng)
    d_acts = forward(model.discriminator, g_acts.output, mode, rng)
    d = d_acts.output
    m = len(z)
    if loss == "saturating":
        objective = float(np.mean(_log(1.0 - d)))
        upstream = -_dlog(1.0 - d) / m
    else:
        objective = float(np.mean(_log(d)))
        upstream = _dlog(d) / m
    through_d = backward(model.discriminator, d_acts, upstream)
    grads = backward(model.generator, g_acts, through_d.inputs)
    return objective, grads, float(d.mean())


def generator_loss_value(d, loss: str):
    """Per-sample generator loss to be *minimized*, as a function of d = D(G(z))."""
    d = np.asarray(d, dtype=np.float64)
    return np.log(1.0 - d) if loss == "saturating" else -np.log(d)


def generator_loss_derivative(d, loss: str):
    """d/dd of :func:`generator_loss_value`: -1/(1-d) or -1/d."""
    d = np.asarray(d, dtype=np.float64)
    return -1.0 / (1.0 - d) if loss == "saturating" else -1.0 / d


def generator_loss_logit_derivative(d, loss: str):
    """Derivative of the minimized loss w.r.t. the discriminator's pre-sigmoid input a.

    With d = sigmoid(a): saturating gives -d, non-saturating gives -(1 - d).
    """
    d = np.asarray(d, dtype=np.float64)
    return -d if loss == "saturating" else -(1.0 - d)


def _all_finite(arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def _guarded_step(net: Mlp, grads: Gradients, lr, momentum, direction, what: str):
    if not _all_finite(grads.blocks):
        raise NonFiniteLossError(f"{what}: non-finite gradient")
    saved = (list(net.params), list(net.velocity), net.version)
    with np.errstate(over="ignore", invalid="ignore"):
        sgd_momentum_step(net, grads, lr, momentum, direction)
    if not (_all_finite(net.params) and _all_finite(net.velocity)):
        net.params, net.velocity, net.version = saved
        raise NonFiniteLossError(f"{what}: update produced non-finite parameters")


def discriminator_step(model: GanModel, data_batch, noise_batch, cfg: TrainConfig, rng: Rng | None = None):
    """One momentum-ascent step on theta_d. Returns ``(grads, objective, mean D(x), mean D(G(z)))``."""
    mode = "train" if rng is not None else "infer"
    objective, grads, d_real, d_fake = discriminator_objective(model, data_batch, noise_batch, mode, rng)
    if not math.isfinite(objective):
        raise NonFiniteLossError(f"discriminator objective is {objective}")
    _guarded_step(model.discriminator, grads, cfg.lr_d, cfg.momentum, "ascend", "discriminator step")
    return grads, objective, d_real, d_fake


def generator_step(model: GanModel, noise_batch, cfg: TrainConfig, rng: Rng | None = None):
    """One momentum step on theta_g. Returns ``(grads, objective, mean D(G(z)))``."""
    mode = "train" if rng is not None else "infer"
    objective, grads, d_fake = generator_objective(model, noise_batch, cfg.generator_loss, mode, rng)
    if not math.isfinite(objective):
        raise NonFiniteLossError(f"generator objective is {objective}")
    direction = "descend" if cfg.generator_loss == "saturating" else "ascend"
    _guarded_step(model.generator, grads, cfg.lr_g, cfg.momentum, direction, "generator step")
    return grads, objective, d_fake


def collapse_ratio(model: GanModel, data, rng: Rng, n: int = 256) -> float:
    """Mean pairwise distance of ``n`` generator samples over that of ``n`` data points."""
    data = np.asarray(data, dtype=np.float64)
    idx = rng.integers(len(data), min(n, len(data)))
    ref = pdist(data[idx]).mean()
    fake = pdist(sample_generator(model, n, rng)).mean()
    return float(fake / ref) if ref > 0 else math.inf


def train(model: GanModel, dataset, cfg: TrainConfig, callback=None,
          collapse_threshold: float = 0.01) -> TrainMetrics:
    """Alternate ``k`` discriminator ascent steps with one generator step, ``cfg.iterations`` times.

    Minibatches are drawn with replacement.  All randomness derives from
    ``cfg.seed``.  ``callback(iteration, model, record)`` runs after every
    iteration.  On divergence, :class:`TrainingDiverged` carries the last
    finite model.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.data_dim:
        raise ShapeError(f"dataset shape {data.shape} does not match data dim {model.data_dim}")
    if len(data) < cfg.batch_size:
        raise ValueError(f"dataset has {len(data)} points, fewer than batch size {cfg.batch_size}")
    train_rng, monitor_rng = Rng(cfg.seed).spawn(2)
    metrics = TrainMetrics()
    m = cfg.batch_size
    for it in range(cfg.iterations):
        try:
            for _ in range(cfg.k):
                x = data[train_rng.integers(len(data), m)]
                z = model.prior.sample(train_rng, m)
                _, d_obj, d_real, d_fake = discriminator_step(model, x, z, cfg, train_rng)
            z = model.prior.sample(train_rng, m)
            _, g_obj, _ = generator_step(model, z, cfg, train_rng)
        except NonFiniteLossError as exc:
            raise TrainingDiverged(f"iteration {it}: {exc}", model, metrics, it) from exc
        record = {
            "iteration": it,
            "value_estimate": d_obj,
            "d_loss": -d_obj,
            "g_loss": g_obj if cfg.generator_loss == "saturating" else -g_obj,
            "mean_d_real": d_real,
            "mean_d_fake": d_fake,
        }
        metrics.records.append(record)
        if callback is not None:
            callback(it, model, record)
    if cfg.iterations > 0:
        metrics.collapse_ratio = collapse_ratio(model, data, monitor_rng)
        if metrics.collapse_ratio < collapse_threshold:
            warnings.warn(
                f"generator samples are {metrics.collapse_ratio:.4f}x as spread out as the data; "
                "the generator may have collapsed", ModeCollapseWarning, stacklevel=2)
    return metrics


def sample_generator(model: GanModel, n: int, rng: Rng) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return model.generator(model.prior.sample(rng, n))


def interpolate_latent(model: GanModel, z_a, z_b, steps: int) -> np.ndarray:
    """G applied along the straight line from ``z_a`` to ``z_b`` (both endpoints included)."""
    z_a = np.asarray(z_a, dtype=np.float64).ravel()
    z_b = np.asarray(z_b, dtype=np.float64).ravel()
    if z_a.size != model.prior.dim or z_b.size != model.prior.dim:
        raise ShapeError(f"latent vectors must have dim {model.prior.dim}")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    t = np.linspace(0.0, 1.0, steps)[:, None]
    return model.generator((1.0 - t) * z_a + t * z_b)


def save_model(path, model: GanModel, meta: dict | None = None) -> None:
    """Checkpoint both networks; the prior travels in the metadata."""
    info = dict(meta or {})
    info["prior"] = {f: getattr(model.prior, f) for f in model.prior.__dataclass_fields__}
    save_checkpoint(path, {"generator": model.generator, "discriminator": model.discriminator}, info)


def load_model(path) -> tuple[GanModel, dict]:
    nets, meta = load_checkpoint(path)
    try:
        gen, disc = nets["generator"], nets["discriminator"]
    except KeyError:
        raise ValueError(f"{path}: checkpoint lacks generator/discriminator networks") from None
    return GanModel(gen, disc, NoisePrior(**meta["prior"])), meta
