"""Non-parametric checks of the adversarial game on discretized 1-D densities.

Densities live on a fixed, uniformly spaced grid of bin centres and are
stored as probability vectors.  On such a grid the discriminator criterion
is a finite sum, so the optimal discriminator, the virtual criterion
C(G) = max_D V(G, D) and its Jensen-Shannon form can all be evaluated
exactly and compared against each other.

Conventions: natural logs (nats) everywhere; ``0 log 0 = 0``; the optimal
discriminator is undefined (NaN) only on bins where both densities vanish.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .io import format_csv
from .numkit import Rng

LOG4 = math.log(4.0)
LOG2 = math.log(2.0)


class GridMismatchError(ValueError):
    pass


class CriterionMismatchError(ArithmeticError):
    """The expectation form and the divergence form of C(G) disagree."""


@dataclass(frozen=True, eq=False)
class GridDensity:
    grid: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        probs = np.asarray(self.probs, dtype=np.float64)
        if grid.ndim != 1 or grid.shape != probs.shape:
            raise ValueError(f"grid {grid.shape} and probs {probs.shape} must be equal-length vectors")
        if len(grid) > 1:
            steps = np.diff(grid)
            if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * max(1.0, abs(steps[0])):
                raise ValueError("grid must be increasing with uniform spacing")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_weights(cls, grid, weights) -> "GridDensity":
        w = np.asarray(weights, dtype=np.float64)
        return cls(grid, w / w.sum())

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0]) if len(self.grid) > 1 else 1.0

    def __len__(self):
        return len(self.probs)


@dataclass(frozen=True)
class DiscriminatorField:
    values: np.ndarray  # NaN where undefined
    defined: np.ndarray


def _shared(p: GridDensity, q: GridDensity):
    if len(p.grid) != len(q.grid) or not np.array_equal(p.grid, q.grid):
        raise GridMismatchError("densities live on different grids")
    return p.probs, q.probs


def unit_grid(bins: int) -> np.ndarray:
    """Bin centres for ``bins`` equal bins over [0, 1]."""
    return (np.arange(bins) + 0.5) / bins


def y_star(a: float, b: float) -> float:
    """argmax over y in [0, 1] of a log y + b log(1 - y)."""
    if a < 0 or b < 0:
        raise ValueError("a and b must be non-negative")
    if a == 0 and b == 0:
        raise ValueError("y_star(0, 0) is undefined")
    return a / (a + b)


def y_star_grid_search(a, b, points: int = 1001, levels: int = 4) -> np.ndarray:
    """Brute-force argmax of a log y + b log(1 - y) by repeated zooming grid search.

    Vectorized over arrays ``a`` and ``b``.  Each level evaluates ``points``
    equally spaced candidates and narrows the window to two cells around the
    best one, so the final resolution is about ``(2 / (points - 1)) ** levels``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))[:, None]
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))[:, None]
    # the argmax is scale-free; rescaling keeps subnormal inputs from losing precision
    scale = np.maximum(a, b)
    a, b = a / scale, b / scale
    lo = np.zeros_like(a)
    hi = np.ones_like(a)
    t = np.linspace(0.0, 1.0, points)[None, :]
    for _ in range(levels):
        y = lo + (hi - lo) * t
        with np.errstate(divide="ignore", invalid="ignore"):
            f = xlogy(a, y) + xlogy(b, 1.0 - y)
        f = np.where(np.isnan(f), -np.inf, f)
        best = np.take_along_axis(y, np.argmax(f, axis=1)[:, None], axis=1)
        cell = (hi - lo) / (points - 1)
        lo = np.maximum(best - cell, 0.0)
        hi = np.minimum(best + cell, 1.0)
    return best[:, 0]


def optimal_discriminator(p_data: GridDensity, p_g: GridDensity) -> DiscriminatorField:
    pd, pg = _shared(p_data, p_g)
    total = pd + pg
    defined = total > 0
    values = np.full_like(pd, np.nan)
    values[defined] = pd[defined] / total[defined]
    return DiscriminatorField(values, defined)


def kl(p: GridDensity, q: GridDensity) -> float:
    """KL(p || q) in nats; ``math.inf`` when p has mass where q has none."""
    pp, qq = _shared(p, q)
    if np.any((pp > 0) & (qq == 0)):
        return math.inf
    support = pp > 0
    return float(np.sum(pp[support] * np.log(pp[support] / qq[support])))


def _kl_to_mixture(pp, mm):
    support = pp > 0
    return float(np.sum(pp[support] * np.log(pp[support] / mm[support])))


def jsd(p: GridDensity, q: GridDensity) -> float:
    pp, qq = _shared(p, q)
    m = 0.5 * (pp + qq)
    value = 0.5 * _kl_to_mixture(pp, m) + 0.5 * _kl_to_mixture(qq, m)
    # rounding can leave tiny excursions outside [0, log 2]
    return min(max(value, 0.0), LOG2)


def criterion_expectation_form(p_data: GridDensity, p_g: GridDensity) -> float:
    """E_data[log D*] + E_g[log(1 - D*)] with D* the optimal discriminator."""
    pd, pg = _shared(p_data, p_g)
    total = pd + pg
    on_data = pd > 0
    on_model = pg > 0
    # log D* and log(1 - D*) as log ratios: 1 - D* would round to 0 when pg << pd
    return float(np.sum(pd[on_data] * np.log(pd[on_data] / total[on_data]))
                 + np.sum(pg[on_model] * np.log(pg[on_model] / total[on_model])))


def criterion_divergence_form(p_data: GridDensity, p_g: GridDensity) -> float:
    return -LOG4 + 2.0 * jsd(p_data, p_g)


def virtual_criterion(p_data: GridDensity, p_g: GridDensity, tol: float = 1e-10) -> float:
    """C(G), computed in expectation form and in -log 4 + 2 JSD form; they must agree."""
    direct = criterion_expectation_form(p_data, p_g)
    via_jsd = criterion_divergence_form(p_data, p_g)
    if not abs(direct - via_jsd) <= tol:
        raise CriterionMismatchError(
            f"C(G) forms disagree: expectation {direct!r} vs JSD {via_jsd!r}")
    return direct


# -- density-space descent ---------------------------------------------------

@dataclass(frozen=True)
class DescentRecord:
    step: int
    probs: np.ndarray
    criterion: float
    jsd: float
    lr: float  # step size actually accepted (0.0 for the initial record)


@dataclass
class DescentResult:
    records: list = field(default_factory=list)
    aborted: str | None = None
    stalled_at: int | None = None  # step at which no decrease was possible

    @property
    def final(self) -> DescentRecord:
        return self.records[-1]

    def criteria(self) -> np.ndarray:
        return np.array([r.criterion for r in self.records])

    def to_csv(self) -> str:
        return format_csv({
            "step": [r.step for r in self.records],
            "criterion": self.criteria(),
            "jsd": [r.jsd for r in self.records],
        })


def _softmax(logits):
    e = np.exp(logits - logits.max())
    return e / e.sum()


def _criterion_probs(pd, p):
    # expectation form on strictly positive p; cheap inner-loop version
    total = pd + p
    on = pd > 0
    return float(np.sum(pd[on] * np.log(pd[on] / total[on])) + np.sum(p * np.log(p / total)))


def criterion_logit_gradient(pd, p) -> np.ndarray:
    """Gradient of C w.r.t. softmax logits.

    At the optimal discriminator dC/dp_i = log(1 - D*_i) = log(p_i / (pd_i + p_i)).
    Softmax pulls back a gradient g as p * (g - <p, g>); g is shifted by its
    max first, which the pullback ignores, so a constant g maps to exactly 0.
    """
    g = np.log(p / (pd + p))
    g = g - g.max()
    return p * (g - np.dot(p, g))


def _jsd_probs(pd, p):
    m = 0.5 * (pd + p)
    value = 0.5 * _kl_to_mixture(pd, m) + 0.5 * _kl_to_mixture(p, m)
    return min(max(value, 0.0), LOG2)


def density_descent(p_data: GridDensity, p_g0: GridDensity, steps: int, lr: float,
                    backtrack: bool = True, max_halvings: int = 60) -> DescentResult:
    """Gradient descent on C(G) over the simplex via softmax logits.

    Each step evaluates dC/dp_g at the optimal discriminator for the current
    p_g, pulls it back through the softmax and descends.  With ``backtrack``
    the step size is halved (starting from ``lr`` every step) until C does not
    increase.  If no halving helps, p_g is stationary to machine precision
    and the run stops early, so recorded C values are non-increasing.
    """
    if not lr > 0:
        raise ValueError("lr must be positive")
    pd, p0 = _shared(p_data, p_g0)
    if np.any(p0 <= 0):
        raise ValueError("starting density must be strictly positive")
    theta = np.log(p0)
    p = p0.copy()
    c = _criterion_probs(pd, p)
    result = DescentResult()
    result.records.append(DescentRecord(0, p, c, _jsd_probs(pd, p), 0.0))
    for step in range(1, steps + 1):
        grad = criterion_logit_gradient(pd, p)
        if not np.all(np.isfinite(grad)):
            result.aborted = f"non-finite gradient at step {step}"
            break
        if not np.any(grad):
            result.stalled_at = step  # exactly stationary
            break
        eta = lr
        new_theta = theta - eta * grad
        new_p = _softmax(new_theta)
        new_c = _criterion_probs(pd, new_p)
        if backtrack:
            halvings = 0
            while not new_c <= c and halvings < max_halvings:
                eta *= 0.5
                halvings += 1
                new_theta = theta - eta * grad
                new_p = _softmax(new_theta)
                new_c = _criterion_probs(pd, new_p)
            if not new_c <= c:
                result.stalled_at = step
                break
        if not math.isfinite(new_c):
            result.aborted = f"non-finite criterion at step {step}"
            break
        theta, p, c = new_theta, new_p, new_c
        result.records.append(DescentRecord(step, p, c, _jsd_probs(pd, p), eta))
    return result


# -- property suite ----------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def random_density(rng: Rng, grid, sparsity: float = 0.0) -> GridDensity:
    """Dirichlet(1)-style random density; ``sparsity`` zeroes that fraction of bins."""
    w = -np.log1p(-rng.random(len(grid)))
    if sparsity > 0:
        w = w * (rng.random(len(grid)) >= sparsity)
        if w.sum() == 0:
            w[rng.integers(len(grid), 1)[0]] = 1.0
    return GridDensity.from_weights(grid, w)


def run_theory_suite(bins: int = 32, trials: int = 50, seed: int = 0,
                     tolerance_scale: float = 1.0, descent_bins: int = 16,
                     descent_steps: int = 5000, descent_lr: float = 10.0) -> list[CheckResult]:
    """Randomized checks of the optimal discriminator, the -log 4 lower bound and density descent.

    ``tolerance_scale`` multiplies every tolerance.  A negative value flips
    their signs so the tight checks fail, which is how callers exercise the
    failure path.
    """
    if bins < 2 or trials < 1:
        raise ValueError("need bins >= 2 and trials >= 1")
    rng = Rng(seed)
    grid = unit_grid(bins)
    s = tolerance_scale
    out = []

    # lower bound -log 4 and equality at p_g = p_data
    worst_gap = math.inf
    worst_eq = 0.0
    for i in range(trials):
        p = random_density(rng, grid, sparsity=0.25 if i % 2 else 0.0)
        q = random_density(rng, grid, sparsity=0.25 if i % 3 == 0 else 0.0)
        worst_gap = min(worst_gap, virtual_criterion(p, q) + LOG4)
        worst_eq = max(worst_eq, abs(virtual_criterion(p, p) + LOG4))
    out.append(CheckResult("criterion >= -log 4", worst_gap >= -1e-12 * s,
                           f"min C+log4 = {worst_gap:.3e} over {trials} pairs"))
    out.append(CheckResult("criterion == -log 4 at p_g = p_data", worst_eq <= 1e-9 * s,
                           f"max |C+log4| = {worst_eq:.3e}"))

    # optimal discriminator vs brute force, bin by bin
    err = 0.0
    for _ in range(trials):
        p = random_density(rng, grid)
        q = random_density(rng, grid)
        d = optimal_discriminator(p, q).values
        err = max(err, float(np.max(np.abs(d - y_star_grid_search(p.probs, q.probs)))))
    out.append(CheckResult("optimal discriminator matches grid search", err <= 1e-6 * s,
                           f"max abs error {err:.3e}"))

    # JSD bounds and symmetry
    lo, hi, asym = math.inf, -math.inf, 0.0
    for _ in range(trials):
        p = random_density(rng, grid, sparsity=0.3)
        q = random_density(rng, grid, sparsity=0.3)
        a, b = jsd(p, q), jsd(q, p)
        lo, hi, asym = min(lo, a), max(hi, a), max(asym, abs(a - b))
    out.append(CheckResult("0 <= JSD <= log 2, symmetric",
                           lo >= 0 and hi <= LOG2 and asym <= 1e-15 * s,
                           f"range [{lo:.3e}, {hi:.4f}], asymmetry {asym:.1e}"))

    # density-space descent converges to p_data
    dgrid = unit_grid(descent_bins)
    worst_jsd, monotone = 0.0, True
    for _ in range(max(1, min(trials, 10))):
        target = random_density(rng, dgrid)
        start = random_density(rng, dgrid)
        res = density_descent(target, start, descent_steps, lr=descent_lr)
        worst_jsd = max(worst_jsd, res.final.jsd)
        monotone &= bool(np.all(np.diff(res.criteria()) <= 0))
    out.append(CheckResult("density descent reaches p_data", worst_jsd < 1e-4 * s and monotone,
                           f"worst final JSD {worst_jsd:.2e}, monotone={monotone}"))
    return out
