"""Experiment configuration: a versioned INI file <-> :class:`ExperimentConfig`.

Layer lists are comma-separated ``ACT:WIDTH`` tokens with an optional
``@RATE`` input-dropout suffix; maxout is written ``maxoutK`` (K pieces)::

    [generator]
    hidden = relu:32, sigmoid:32
    output = linear

    [discriminator]
    hidden = maxout2:32, maxout2:32@0.2
    output_dropout = 0.2

The generator's output width is the data dimension and the discriminator
always ends in one sigmoid unit.
"""
from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .adversarial import NoisePrior, TrainConfig
from .data import distribution_from_dict
from .neural import LayerSpec

CONFIG_VERSION = 1
_LAYER_RE = re.compile(r"^(linear|relu|sigmoid|tanh|maxout(\d+))\s*:\s*(\d+)\s*(?:@\s*([0-9.eE+-]+))?$")
FILE_SOURCES = ("idx", "csv")


class ConfigError(ValueError):
    """Invalid config; the message names the line and field when known."""


@dataclass(frozen=True)
class Fig1Config:
    x_min: float = 0.0
    x_max: float = 4.0
    sweep_points: int = 201
    hist_bins: int = 32
    eval_samples: int = 10000
    support_fraction: float = 0.1  # bins with p_data >= this * max count as data support


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    data_seed: int = 1
    init_seed: int = 2
    out_dir: str = "runs/experiment"
    n_data: int = 10000
    data: dict = field(default_factory=lambda: {"kind": "gaussian", "mu": 2.0, "sigma": 0.5})
    prior: NoisePrior = field(default_factory=NoisePrior)
    generator_hidden: tuple = ("relu:32", "sigmoid:32")
    generator_output: str = "linear"
    discriminator_hidden: tuple = ("maxout2:32", "maxout2:32@0.2")
    discriminator_output_dropout: float = 0.2
    train: TrainConfig = field(default_factory=TrainConfig)
    fig1: Fig1Config = field(default_factory=Fig1Config)

    @property
    def is_file_source(self) -> bool:
        return self.data.get("kind") in FILE_SOURCES

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, train=replace(self.train, seed=seed))

    def layer_specs(self, data_dim: int) -> tuple[list, list]:
        gen = _chain(self.prior.dim, [parse_layer(t) for t in self.generator_hidden],
                     (self.generator_output, 1, data_dim, 0.0))
        disc = _chain(data_dim, [parse_layer(t) for t in self.discriminator_hidden],
                      ("sigmoid", 1, 1, self.discriminator_output_dropout))
        return gen, disc

    def to_ini(self) -> str:
        lines = ["[gankit]", f"version = {CONFIG_VERSION}", "", "[experiment]"]
        for key in ("name", "seed", "data_seed", "init_seed", "out_dir", "n_data"):
            lines.append(f"{key} = {getattr(self, key)}")
        lines += ["", "[data]"] + [f"{k} = {_fmt(v)}" for k, v in self.data.items()]
        lines += ["", "[prior]"] + [f"{f.name} = {_fmt(getattr(self.prior, f.name))}" for f in fields(NoisePrior)]
        lines += ["", "[generator]", f"hidden = {', '.join(self.generator_hidden)}",
                  f"output = {self.generator_output}"]
        lines += ["", "[discriminator]", f"hidden = {', '.join(self.discriminator_hidden)}",
                  f"output_dropout = {_fmt(self.discriminator_output_dropout)}"]
        lines += ["", "[train]"] + [f"{f.name} = {_fmt(getattr(self.train, f.name))}"
                                    for f in fields(TrainConfig) if f.name != "seed"]
        lines += ["", "[fig1]"] + [f"{f.name} = {_fmt(getattr(self.fig1, f.name))}" for f in fields(Fig1Config)]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """sha256 of the config with ``out_dir`` blanked: where results go never changes them."""
        text = replace(self, out_dir="").to_ini()
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _fmt(v) -> str:
    """Scalars as is (floats via repr); lists as ``a; b`` with nested lists space-separated."""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        parts = [" ".join(map(_fmt, x)) if isinstance(x, (list, tuple)) else _fmt(x) for x in v]
        # a trailing ';' keeps one-element lists from reading back as scalars
        return "; ".join(parts) + (";" if len(parts) == 1 else "")
    return str(v)


def parse_layer(token: str) -> tuple:
    """``"maxout2:32@0.2"`` -> ("maxout", 2, 32, 0.2)."""
    m = _LAYER_RE.match(token.strip())
    if not m:
        raise ConfigError(f"bad layer token {token!r}; expected ACT:WIDTH[@DROPOUT]")
    act, pieces = ("maxout", int(m.group(2))) if m.group(2) else (m.group(1), 1)
    return act, pieces, int(m.group(3)), float(m.group(4) or 0.0)


def _chain(in_dim, hidden, output) -> list:
    specs, width = [], in_dim
    for act, pieces, out, drop in list(hidden) + [output]:
        specs.append(LayerSpec(width, out, act, pieces, drop))
        width = out
    return specs


# -- reading -----------------------------------------------------------------

def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return i
        elif current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return i
    return None


class _Reader:
    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source
        self.cp = configparser.ConfigParser(interpolation=None)
        try:
            self.cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
        self.used: set = set()

    def fail(self, section, key, message):
        line = _line_of(self.text, section, key)
        where = f"line {line}" if line else "missing"
        label = f"[{section}] {key}" if key else f"[{section}]"
        raise ConfigError(f"{self.source}: {where} ({label}): {message}")

    def get(self, section, key, conv=str, default=None, required=False):
        if not self.cp.has_section(section) or not self.cp.has_option(section, key):
            if required:
                self.fail(section, key, "required field is missing")
            return default
        self.used.add((section, key))
        raw = self.cp.get(section, key).strip()
        try:
            return conv(raw)
        except (ValueError, ConfigError) as exc:
            self.fail(section, key, f"cannot parse {raw!r}: {exc}")

    def items(self, section):
        if not self.cp.has_section(section):
            return {}
        for key in self.cp.options(section):
            self.used.add((section, key))
        return {k: v.strip() for k, v in self.cp.items(section)}

    def check_unknown(self):
        for section in self.cp.sections():
            for key in self.cp.options(section):
                if (section, key) not in self.used:
                    self.fail(section, key, "unknown field")


def _num(raw: str):
    try:
        return int(raw)
    except ValueError:
        return float(raw)


def _data_value(raw: str):
    if ";" in raw:
        return [[_num(t) for t in part.split()] if len(part.split()) > 1 else _num(part.strip())
                for part in raw.split(";") if part.strip()]
    try:
        return _num(raw)
    except ValueError:
        return raw


def _tokens(raw: str) -> tuple:
    toks = tuple(t.strip() for t in raw.split(",") if t.strip())
    for t in toks:
        parse_layer(t)
    return toks


def loads_config(text: str, source: str = "<config>") -> ExperimentConfig:
    r = _Reader(text, source)
    version = r.get("gankit", "version", int, required=True)
    if version != CONFIG_VERSION:
        r.fail("gankit", "version", f"unsupported config version {version}")
    base = ExperimentConfig()

    kw = {}
    for key in ("name", "out_dir"):
        kw[key] = r.get("experiment", key, str, getattr(base, key))
    for key in ("seed", "data_seed", "init_seed", "n_data"):
        kw[key] = r.get("experiment", key, int, getattr(base, key))

    data = {k: _data_value(v) for k, v in r.items("data").items()} or dict(base.data)
    if "kind" not in data:
        r.fail("data", "kind", "required field is missing")
    if data["kind"] not in FILE_SOURCES:
        try:
            distribution_from_dict(data)
        except (TypeError, ValueError, KeyError) as exc:
            r.fail("data", None, f"invalid distribution: {exc}")
    kw["data"] = data

    prior_kw = {}
    for f in fields(NoisePrior):
        conv = str if f.name == "kind" else (int if f.name == "dim" else float)
        prior_kw[f.name] = r.get("prior", f.name, conv, getattr(base.prior, f.name))
    try:
        kw["prior"] = NoisePrior(**prior_kw)
    except ValueError as exc:
        r.fail("prior", None, str(exc))

    kw["generator_hidden"] = r.get("generator", "hidden", _tokens, base.generator_hidden)
    kw["generator_output"] = r.get("generator", "output", str, base.generator_output)
    kw["discriminator_hidden"] = r.get("discriminator", "hidden", _tokens, base.discriminator_hidden)
    kw["discriminator_output_dropout"] = r.get("discriminator", "output_dropout", float,
                                               base.discriminator_output_dropout)

    train_kw = {"seed": kw["seed"]}
    for f in fields(TrainConfig):
        if f.name == "seed":
            continue
        default = getattr(base.train, f.name)
        conv = type(default) if not isinstance(default, bool) else bool
        train_kw[f.name] = r.get("train", f.name, conv, default)
    try:
        kw["train"] = TrainConfig(**train_kw)
    except ValueError as exc:
        bad = next((k for k in train_kw if k in str(exc)), None)
        r.fail("train", bad, str(exc))

    fig_kw = {f.name: r.get("fig1", f.name, type(getattr(base.fig1, f.name)), getattr(base.fig1, f.name))
              for f in fields(Fig1Config)}
    kw["fig1"] = Fig1Config(**fig_kw)
    r.check_unknown()

    cfg = ExperimentConfig(**kw)
    try:
        cfg.layer_specs(data_dim=1 if not cfg.is_file_source else 2)
    except ValueError as exc:
        r.fail("generator", None, f"invalid architecture: {exc}")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return loads_config(path.read_text(), str(path))
