"""Hand-rolled multilayer perceptrons: forward, exact backprop, dropout, momentum SGD.

Parameter layout
----------------
``Mlp.params`` is a flat list of blocks, two per layer: ``W`` then ``b``.

* dense layers (linear/relu/sigmoid/tanh): ``W`` is ``(in_dim, out_dim)``, ``b`` is ``(out_dim,)``
* maxout layers with ``k`` pieces: ``W`` is ``(in_dim, out_dim, k)``, ``b`` is ``(out_dim, k)``

Dropout is inverted dropout on a layer's *input*: in train mode the input is
multiplied by a mask of ``{0, 1/(1-rate)}``; infer mode never masks.

Infer mode contracts with ``numpy.einsum`` instead of BLAS so that a row's
output never depends on which other rows share its batch (BLAS picks
different kernels by batch size).  Train mode uses BLAS for speed.

Update rule (fixed order): ``v <- momentum * v + lr * g`` then
``theta <- theta + v`` when ascending or ``theta <- theta - v`` when descending.

Checkpoint format (version 1)
-----------------------------
::

    b"GANKIT-CKPT\\n"
    one line of UTF-8 JSON (sorted keys) terminated by b"\\n":
        {"format_version": 1, "meta": {...},
         "networks": {name: {"layers": [LayerSpec dicts], "shapes": [[...], ...]}}}
    raw little-endian float64 payload: for each network in header order,
        every params block then every velocity block, C order.

Blocks are written bit-for-bit, so save/load round-trips exactly.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numkit import Rng, ShapeError, sigmoid

ACTIVATIONS = ("linear", "relu", "sigmoid", "tanh", "maxout")
CHECKPOINT_MAGIC = b"GANKIT-CKPT\n"
CHECKPOINT_VERSION = 1


class StaleActivationsError(RuntimeError):
    """Backward was handed activations that do not belong to the current parameters."""


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "linear"
    pieces: int = 1
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be positive: {self.in_dim}->{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "maxout" and self.pieces < 2:
            raise ValueError("maxout needs at least 2 pieces")
        if self.activation != "maxout" and self.pieces != 1:
            raise ValueError(f"pieces={self.pieces} only makes sense for maxout")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def n_params(self) -> int:
        return self.pieces * (self.in_dim + 1) * self.out_dim

    def block_shapes(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        if self.activation == "maxout":
            return (self.in_dim, self.out_dim, self.pieces), (self.out_dim, self.pieces)
        return (self.in_dim, self.out_dim), (self.out_dim,)


class Mlp:
    """Layer specs plus parameter and velocity blocks.

    ``version`` increments on every parameter update so backward can refuse
    activations recorded against older weights.
    """

    def __init__(self, layers, params, velocity=None):
        self.layers = tuple(layers)
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(f"layer chain broken: {prev.out_dim} feeds {nxt.in_dim}")
        expected = [s for spec in self.layers for s in spec.block_shapes()]
        params = [np.asarray(p, dtype=np.float64) for p in params]
        if [p.shape for p in params] != expected:
            raise ShapeError(f"param shapes {[p.shape for p in params]} != {expected}")
        if velocity is None:
            velocity = [np.zeros_like(p) for p in params]
        velocity = [np.asarray(v, dtype=np.float64) for v in velocity]
        if [v.shape for v in velocity] != expected:
            raise ShapeError("velocity shapes do not match params")
        self.params = params
        self.velocity = velocity
        self.version = 0

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_params(self) -> int:
        return sum(spec.n_params for spec in self.layers)

    def copy(self) -> "Mlp":
        out = Mlp(self.layers, [p.copy() for p in self.params], [v.copy() for v in self.velocity])
        out.version = self.version
        return out

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ShapeError(f"expected {self.n_params} values, got {flat.size}")
        pos = 0
        for i, p in enumerate(self.params):
            self.params[i] = flat[pos:pos + p.size].reshape(p.shape).copy()
            pos += p.size
        self.version += 1

    def __call__(self, batch) -> np.ndarray:
        return forward(self, batch, "infer").output

    def __repr__(self):
        arch = " -> ".join(
            f"{s.out_dim} {s.activation}" + (f"({s.pieces})" if s.activation == "maxout" else "")
            for s in self.layers
        )
        return f"Mlp({self.in_dim} -> {arch}; {self.n_params} params)"


@dataclass
class Gradients:
    """Per-block gradients (same layout as ``Mlp.params``) and the input gradient."""

    blocks: list
    inputs: np.ndarray | None = None

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.blocks])


@dataclass
class Activations:
    """Everything backward needs from one forward pass."""

    inputs: list = field(default_factory=list)  # layer inputs after dropout
    pre: list = field(default_factory=list)  # pre-activations (maxout: (n, out, k))
    outputs: list = field(default_factory=list)
    masks: list = field(default_factory=list)  # None where no dropout was applied
    argmax: list = field(default_factory=list)  # maxout winning piece, else None
    mlp_id: int = 0
    version: int = 0
    mask_digest: str = ""

    @property
    def output(self) -> np.ndarray:
        return self.outputs[-1]


def _digest_masks(masks) -> str:
    h = hashlib.sha256()
    for m in masks:
        h.update(b"-" if m is None else np.ascontiguousarray(m).tobytes())
    return h.hexdigest()


def init_mlp(specs, rng: Rng) -> Mlp:
    """Weights uniform in [-s, s] with s = sqrt(6 / (in + out)); biases and velocity zero."""
    specs = list(specs)
    if not specs:
        raise ValueError("an Mlp needs at least one layer")
    for prev, nxt in zip(specs, specs[1:]):
        if prev.out_dim != nxt.in_dim:
            raise ShapeError(f"layer chain broken: {prev.out_dim} feeds {nxt.in_dim}")
    params = []
    for spec in specs:
        w_shape, b_shape = spec.block_shapes()
        s = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        params.append(rng.uniform(-s, s, w_shape))
        params.append(np.zeros(b_shape))
    return Mlp(specs, params)


def dropout_mask(shape, rate: float, rng: Rng) -> np.ndarray:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def _activate(kind: str, z: np.ndarray):
    if kind == "linear":
        return z, None
    if kind == "relu":
        return np.maximum(z, 0.0), None
    if kind == "sigmoid":
        return sigmoid(z), None
    if kind == "tanh":
        return np.tanh(z), None
    idx = np.argmax(z, axis=2)  # first maximal piece wins ties
    return np.take_along_axis(z, idx[..., None], axis=2)[..., 0], idx


def forward(mlp: Mlp, batch, mode: str = "infer", rng: Rng | None = None) -> Activations:
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    h = np.asarray(batch, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != mlp.in_dim:
        raise ShapeError(f"batch shape {h.shape} does not match input width {mlp.in_dim}")
    acts = Activations(mlp_id=id(mlp), version=mlp.version)
    for i, spec in enumerate(mlp.layers):
        mask = None
        if mode == "train" and spec.dropout_rate > 0.0:
            if rng is None:
                raise ValueError("train-mode dropout needs an rng")
            mask = dropout_mask(h.shape, spec.dropout_rate, rng)
            h = h * mask
        W, b = mlp.params[2 * i], mlp.params[2 * i + 1]
        if spec.activation == "maxout":
            z = np.einsum("ni,iok->nok", h, W) + b
        elif mode == "infer":
            z = np.einsum("ni,io->no", h, W) + b
        else:
            z = h @ W + b
        out, idx = _activate(spec.activation, z)
        acts.inputs.append(h)
        acts.pre.append(z)
        acts.outputs.append(out)
        acts.masks.append(mask)
        acts.argmax.append(idx)
        h = out
    acts.mask_digest = _digest_masks(acts.masks)
    return acts


def backward(mlp: Mlp, acts: Activations, upstream_grad) -> Gradients:
    """Gradient of a scalar loss whose derivative w.r.t. the network output is ``upstream_grad``."""
    if acts.mlp_id != id(mlp) or acts.version != mlp.version:
        raise StaleActivationsError("activations were recorded for different parameters")
    if len(acts.outputs) != len(mlp.layers):
        raise StaleActivationsError("activations do not match the layer count")
    if _digest_masks(acts.masks) != acts.mask_digest:
        raise StaleActivationsError("dropout masks changed since the forward pass")
    delta = np.asarray(upstream_grad, dtype=np.float64)
    if delta.shape != acts.output.shape:
        raise ShapeError(f"upstream grad {delta.shape} != output {acts.output.shape}")

    blocks: list = [None] * len(mlp.params)
    for i in reversed(range(len(mlp.layers))):
        spec = mlp.layers[i]
        W = mlp.params[2 * i]
        x, z, out = acts.inputs[i], acts.pre[i], acts.outputs[i]
        if spec.activation == "maxout":
            dz = np.zeros_like(z)
            np.put_along_axis(dz, acts.argmax[i][..., None], delta[..., None], axis=2)
            blocks[2 * i] = np.einsum("ni,nok->iok", x, dz)
            blocks[2 * i + 1] = dz.sum(axis=0)
            dx = np.einsum("nok,iok->ni", dz, W)
        else:
            if spec.activation == "relu":
                dz = delta * (z > 0)
            elif spec.activation == "sigmoid":
                dz = delta * out * (1.0 - out)
            elif spec.activation == "tanh":
                dz = delta * (1.0 - out * out)
            else:
                dz = delta
            blocks[2 * i] = x.T @ dz
            blocks[2 * i + 1] = dz.sum(axis=0)
            dx = dz @ W.T
        if acts.masks[i] is not None:
            dx = dx * acts.masks[i]
        delta = dx
    return Gradients(blocks=blocks, inputs=delta)


def sgd_momentum_step(mlp: Mlp, grads: Gradients, lr: float, momentum: float,
                      direction: str = "descend") -> None:
    if not lr > 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
    if direction not in ("ascend", "descend"):
        raise ValueError(f"direction must be 'ascend' or 'descend', got {direction!r}")
    if [g.shape for g in grads.blocks] != [p.shape for p in mlp.params]:
        raise ShapeError("gradient blocks do not match parameter shapes")
    sign = 1.0 if direction == "ascend" else -1.0
    for i, g in enumerate(grads.blocks):
        v = momentum * mlp.velocity[i] + lr * g
        mlp.velocity[i] = v
        mlp.params[i] = mlp.params[i] + sign * v
    mlp.version += 1


# -- checkpoints -------------------------------------------------------------

def _encode(networks: dict, meta: dict) -> bytes:
    header = {"format_version": CHECKPOINT_VERSION, "meta": meta, "networks": {}}
    payload = []
    for name in sorted(networks):
        mlp = networks[name]
        header["networks"][name] = {
            "layers": [asdict(s) for s in mlp.layers],
            "shapes": [list(p.shape) for p in mlp.params],
        }
        payload.extend(mlp.params)
        payload.extend(mlp.velocity)
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in payload)
    return CHECKPOINT_MAGIC + head + b"\n" + body


def _decode(raw: bytes) -> tuple[dict, dict]:
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not a gankit checkpoint (bad magic)")
    rest = raw[len(CHECKPOINT_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise ValueError("checkpoint header is truncated")
    header = json.loads(rest[:nl].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
    body = memoryview(rest[nl + 1:])
    pos = 0
    networks = {}
    for name in sorted(header["networks"]):
        net = header["networks"][name]
        layers = [LayerSpec(**d) for d in net["layers"]]
        blocks = []
        for shape in net["shapes"] * 2:
            n = int(np.prod(shape)) * 8
            if pos + n > len(body):
                raise ValueError(f"checkpoint payload truncated at byte {pos}")
            blocks.append(np.frombuffer(body[pos:pos + n], dtype="<f8").reshape(shape).astype(np.float64))
            pos += n
        half = len(net["shapes"])
        networks[name] = Mlp(layers, blocks[:half], blocks[half:])
    if pos != len(body):
        raise ValueError(f"checkpoint has {len(body) - pos} trailing bytes")
    return networks, header["meta"]


def save_checkpoint(path, networks: dict, meta: dict | None = None) -> None:
    from .io import atomic_write_bytes

    atomic_write_bytes(Path(path), _encode(networks, meta or {}))


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``({name: Mlp}, meta)``."""
    return _decode(Path(path).read_bytes())
