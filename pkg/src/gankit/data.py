"""Ground-truth distributions, IDX/CSV ingestion and dataset splitting."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import i0e

from .io import atomic_write_bytes, atomic_write_text, read_points_csv
from .numkit import Rng, ShapeError
from .theory import GridDensity

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_SQRT_2PI = math.sqrt(2.0 * math.pi)


# -- distributions -----------------------------------------------------------

@dataclass(frozen=True)
class Gaussian:
    mu: float = 0.0
    sigma: float = 1.0
    dim = 1

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def sample(self, rng: Rng, n: int) -> np.ndarray:
        return rng.gaussian(self.mu, self.sigma, (n, 1))

    def pdf(self, x: np.ndarray) -> np.ndarray:
        u = (x[:, 0] - self.mu) / self.sigma
        return np.exp(-0.5 * u * u) / (self.sigma * _SQRT_2PI)


@dataclass(frozen=True)
class GaussianMixture:
    weights: tuple
    components: tuple
    dim = 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if len(w) != len(self.components) or len(w) == 0:
            raise ValueError("need one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        object.__setattr__(self, "weights", tuple(float(v) for v in w))
        object.__setattr__(self, "components", tuple(
            c if isinstance(c, Gaussian) else Gaussian(*c) for c in self.components))

    def sample(self, rng: Rng, n: int) -> np.ndarray:
        cdf = np.cumsum(self.weights)
        which = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(cdf) - 1)
        mu = np.array([c.mu for c in self.components])[which]
        sigma = np.array([c.sigma for c in self.components])[which]
        return (mu + sigma * rng.gaussian(0.0, 1.0, n)).reshape(n, 1)

    def pdf(self, x: np.ndarray) -> np.ndarray:
        return sum(w * c.pdf(x) for w, c in zip(self.weights, self.components))


@dataclass(frozen=True)
class Uniform:
    lo: float = 0.0
    hi: float = 1.0
    dim = 1

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("uniform needs hi > lo")

    def sample(self, rng: Rng, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, (n, 1))

    def pdf(self, x: np.ndarray) -> np.ndarray:
        inside = (x[:, 0] >= self.lo) & (x[:, 0] <= self.hi)
        return inside / (self.hi - self.lo)


@dataclass(frozen=True)
class Ring2D:
    """Angle uniform on the circle of ``radius``, plus isotropic Gaussian noise."""

    radius: float = 1.0
    noise_std: float = 0.1
    dim = 2

    def __post_init__(self):
        if not self.noise_std > 0 or self.radius < 0:
            raise ValueError("ring needs radius >= 0 and noise_std > 0")

    def sample(self, rng: Rng, n: int) -> np.ndarray:
        angle = rng.uniform(0.0, 2.0 * math.pi, n)
        noise = rng.gaussian(0.0, self.noise_std, (n, 2))
        return self.radius * np.column_stack([np.cos(angle), np.sin(angle)]) + noise

    def pdf(self, x: np.ndarray) -> np.ndarray:
        # average of N(x; r u(a), s^2 I) over the angle a: closed form via Bessel I0
        s2 = self.noise_std ** 2
        rho = np.hypot(x[:, 0], x[:, 1])
        arg = rho * self.radius / s2
        return np.exp(-((rho - self.radius) ** 2) / (2 * s2)) * i0e(arg) / (2 * math.pi * s2)


Distribution = Gaussian | GaussianMixture | Uniform | Ring2D
_KINDS = {"gaussian": Gaussian, "gaussian_mixture": GaussianMixture, "uniform": Uniform, "ring2d": Ring2D}


def distribution_to_dict(dist) -> dict:
    kind = {v: k for k, v in _KINDS.items()}[type(dist)]
    body = asdict(dist)
    if kind == "gaussian_mixture":
        body["components"] = [[c.mu, c.sigma] for c in dist.components]
        body["weights"] = list(dist.weights)
    return {"kind": kind, **body}


def distribution_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind not in _KINDS:
        raise ValueError(f"unknown distribution kind {kind!r}")
    if kind == "gaussian_mixture":
        return GaussianMixture(tuple(d["weights"]), tuple(tuple(c) for c in d["components"]))
    return _KINDS[kind](**d)


def sample(dist, n: int, rng: Rng) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return dist.sample(rng, n)


def pdf(dist, x):
    """Density at one point (returns float) or at each row of a batch (returns array)."""
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0 or (arr.ndim == 1 and arr.size == dist.dim and dist.dim > 1)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if scalar else arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != dist.dim:
        raise ShapeError(f"points of shape {np.shape(x)} do not match distribution dim {dist.dim}")
    out = dist.pdf(arr)
    return float(out[0]) if scalar else out


def discretize(dist, grid) -> GridDensity:
    """Bin probabilities proportional to pdf(bin centre), renormalized."""
    if dist.dim != 1:
        raise ShapeError("only 1-D distributions can be discretized")
    grid = np.asarray(grid, dtype=np.float64)
    spacing = grid[1] - grid[0] if len(grid) > 1 else 1.0
    return GridDensity.from_weights(grid, pdf(dist, grid) * spacing)


def histogram_density(samples, grid) -> GridDensity:
    """Empirical GridDensity of 1-D samples; points beyond the grid count in the end bins."""
    grid = np.asarray(grid, dtype=np.float64)
    x = np.asarray(samples, dtype=np.float64).ravel()
    spacing = grid[1] - grid[0]
    idx = np.clip(np.floor((x - grid[0]) / spacing + 0.5).astype(np.int64), 0, len(grid) - 1)
    return GridDensity.from_weights(grid, np.bincount(idx, minlength=len(grid)).astype(np.float64))


# -- datasets ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Dataset:
    points: np.ndarray
    labels: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise ShapeError(f"dataset points must be 2-D, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("dataset contains non-finite entries")
        if self.labels is not None and len(self.labels) != len(pts):
            raise ShapeError("labels and points differ in length")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def subset(self, idx, note: str) -> "Dataset":
        labels = None if self.labels is None else np.asarray(self.labels)[idx]
        return Dataset(self.points[idx], labels, {**self.provenance, "subset": note})

    def write_provenance(self, path) -> Path:
        """Sidecar JSON next to ``path``: ``<path>.json``."""
        side = Path(str(path) + ".json")
        info = {**self.provenance, "n_points": len(self), "dim": int(self.points.shape[1])}
        atomic_write_text(side, json.dumps(info, indent=2, sort_keys=True) + "\n")
        return side


def synthetic_dataset(dist, n: int, seed: int) -> Dataset:
    return Dataset(sample(dist, n, Rng(seed)),
                   provenance={"source": "synthetic", "distribution": distribution_to_dict(dist),
                               "n": n, "seed": seed})


def load_csv(path) -> Dataset:
    return Dataset(read_points_csv(path), provenance={"source": str(path)})


class IdxFormatError(ValueError):
    pass


def _read_idx(path):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: file is {len(raw)} bytes, too short for a magic number (offset 0)")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x} at offset 0")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IdxFormatError(f"{path}: header truncated at offset {len(raw)}, need {header_end} bytes")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    need = header_end + int(np.prod(dims))
    if len(raw) < need:
        raise IdxFormatError(
            f"{path}: payload truncated: file ends at offset {len(raw)}, expected {need} bytes for dims {dims}")
    if len(raw) > need:
        raise IdxFormatError(f"{path}: {len(raw) - need} unexpected trailing bytes after offset {need}")
    return magic, np.frombuffer(raw, dtype=np.uint8, offset=header_end).reshape(dims)


def load_idx(path) -> Dataset:
    """Read an unsigned-byte IDX file.

    Image files (magic 0x803) become rows of pixel/255; label files (0x801)
    become a one-column dataset of raw label values with ``labels`` set.
    """
    magic, arr = _read_idx(path)
    prov = {"source": str(path), "format": "idx"}
    if magic == IDX_IMAGES_MAGIC:
        return Dataset(arr.reshape(len(arr), -1) / 255.0, provenance={**prov, "image_shape": list(arr.shape[1:])})
    return Dataset(arr.reshape(-1, 1).astype(np.float64), labels=arr.copy(), provenance=prov)


def load_mnist(images_path, labels_path=None) -> Dataset:
    images = load_idx(images_path)
    if labels_path is None:
        return images
    labels = load_idx(labels_path).labels
    return Dataset(images.points, labels, {**images.provenance, "labels": str(labels_path)})


def write_idx(path, array) -> None:
    """Write a uint8 array: 3-D as an image file, 1-D as a label file."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise TypeError("IDX writer only handles uint8 arrays")
    if arr.ndim == 3:
        magic = IDX_IMAGES_MAGIC
    elif arr.ndim == 1:
        magic = IDX_LABELS_MAGIC
    else:
        raise ShapeError("IDX writer expects (n, rows, cols) images or (n,) labels")
    header = struct.pack(f">I{arr.ndim}I", magic, *arr.shape)
    atomic_write_bytes(Path(path), header + np.ascontiguousarray(arr).tobytes())


def split(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Shuffle once with ``seed`` and cut into (train, valid, test)."""
    f = tuple(float(v) for v in fractions)
    if len(f) != 3 or any(not v > 0 for v in f) or abs(sum(f) - 1.0) > 1e-6:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n = len(dataset)
    n_train = int(round(f[0] * n))
    n_valid = int(round(f[1] * n))
    if n_train + n_valid > n:
        n_valid = n - n_train
    perm = Rng(seed).permutation(n)
    parts = (perm[:n_train], perm[n_train:n_train + n_valid], perm[n_train + n_valid:])
    names = ("train", "valid", "test")
    return tuple(dataset.subset(idx, f"{name} split seed={seed}") for idx, name in zip(parts, names))
