"""Gaussian Parzen-window log-likelihood for scoring generator samples.

An isotropic Gaussian kernel of width ``sigma`` is centred on every
generator sample; test points are scored by the log of the resulting
mixture density (nats).  ``sigma`` is picked from a grid by maximizing the
mean log-likelihood of a validation set.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .numkit import ShapeError, log_sum_exp


@dataclass(frozen=True, eq=False)
class ParzenModel:
    samples: np.ndarray
    sigma: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s.reshape(-1, 1)
        if s.ndim != 2 or len(s) < 1:
            raise ValueError("need at least one sample")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "samples", s)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def _as_points(points, dim):
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1) if x.size == dim else x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"points of shape {x.shape} do not match sample dim {dim}")
    return x


def log_densities(model: ParzenModel, points, chunk: int = 256) -> np.ndarray:
    """Per-point log density, scoring ``chunk`` points at a time to bound memory."""
    x = _as_points(points, model.dim)
    centre = model.samples.mean(axis=0)
    s = model.samples - centre
    x = x - centre
    n, d = s.shape
    sigma2 = model.sigma ** 2
    const = -math.log(n) - 0.5 * d * math.log(2.0 * math.pi * sigma2)
    s_sq = np.einsum("ij,ij->i", s, s)
    out = np.empty(len(x))
    for start in range(0, len(x), chunk):
        xb = x[start:start + chunk]
        # squared distances via the expansion; clipped since rounding can go negative
        d2 = np.einsum("ij,ij->i", xb, xb)[:, None] - 2.0 * xb @ s.T + s_sq[None, :]
        np.maximum(d2, 0.0, out=d2)
        out[start:start + chunk] = log_sum_exp(-d2 / (2.0 * sigma2), axis=1) + const
    return out


def log_density(model: ParzenModel, x) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != model.dim:
        raise ShapeError(f"point has dim {x.size}, samples have dim {model.dim}")
    diff = model.samples - x
    d2 = np.einsum("ij,ij->i", diff, diff)
    n, d = model.samples.shape
    sigma2 = model.sigma ** 2
    return log_sum_exp(-d2 / (2.0 * sigma2)) - math.log(n) - 0.5 * d * math.log(2.0 * math.pi * sigma2)


def mean_ll_with_stderr(model: ParzenModel, test_points) -> tuple[float, float]:
    """Mean log-likelihood and its standard error (sample std / sqrt(N))."""
    x = _as_points(test_points, model.dim)
    if len(x) < 2:
        raise ValueError("need at least 2 test points for a standard error")
    ll = log_densities(model, x)
    return float(ll.mean()), float(ll.std(ddof=1) / math.sqrt(len(ll)))


def cross_validate_sigma(samples, validation_points, sigma_grid) -> float:
    """Grid value of sigma with the highest mean validation log-likelihood.

    Ties go to the smaller sigma.  A single-element grid is returned as is.
    """
    grid = sorted(float(s) for s in np.atleast_1d(sigma_grid))
    if not grid:
        raise ValueError("sigma grid is empty")
    if any(not s > 0 for s in grid):
        raise ValueError("sigma grid values must be positive")
    if len(grid) == 1:
        return grid[0]
    best_sigma, best_ll = grid[0], -math.inf
    for sigma in grid:
        ll = float(log_densities(ParzenModel(samples, sigma), validation_points).mean())
        if ll > best_ll:
            best_sigma, best_ll = sigma, ll
    return best_sigma


def default_sigma_grid(data, points: int = 20) -> np.ndarray:
    """``points`` log-spaced values over [0.01, 1] times the data's standard deviation."""
    scale = float(np.std(np.asarray(data, dtype=np.float64)))
    if not scale > 0:
        scale = 1.0
    return np.logspace(-2, 0, points) * scale


def parse_sigma_grid(spec: str) -> np.ndarray:
    """``"0.1"`` -> one value; ``"0.01,0.1,1"`` -> list; ``"log:0.01:1:20"`` -> log-spaced."""
    spec = spec.strip()
    if spec.startswith("log:"):
        try:
            _, lo, hi, n = spec.split(":")
            return np.logspace(math.log10(float(lo)), math.log10(float(hi)), int(n))
        except ValueError:
            raise ValueError(f"bad log grid {spec!r}; expected log:LO:HI:N") from None
    return np.array([float(v) for v in spec.split(",") if v.strip()])


def evaluation_record(sigma, mean_ll, stderr, n_samples, n_test) -> dict:
    return {"sigma": float(sigma), "mean_ll": float(mean_ll), "stderr": float(stderr),
            "n_samples": int(n_samples), "n_test": int(n_test)}


def evaluate(samples, test_points, validation_points, sigma_grid) -> dict:
    """Cross-validate sigma, then score the test set; returns the JSON-ready record."""
    sigma = cross_validate_sigma(samples, validation_points, sigma_grid)
    model = ParzenModel(samples, sigma)
    test = _as_points(test_points, model.dim)
    mean, err = mean_ll_with_stderr(model, test)
    return evaluation_record(sigma, mean, err, len(model.samples), len(test))


def dumps_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True)
