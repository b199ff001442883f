"""INI run configuration: sections train, arch, fista, rate, data.

Unknown sections or keys are errors. Every key has a default, so an empty file
is a valid configuration.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .csc import FistaConfig
from .networks import ARCHITECTURES
from .rate import RateConfig
from .trainer import TrainConfig

# train-section keys (arch, fista and rate live in their own sections)
_TRAIN_KEYS = [f.name for f in dataclasses.fields(TrainConfig) if f.name not in ("arch", "fista", "rate")]


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    """Where training images come from.

    ``source = synthetic`` draws ``n_train`` images from a random ground-truth
    dictionary (seeded by ``model_seed``); ``source = cifar10`` reads ``path``.
    """

    source: str = "synthetic"
    path: str = ""
    n_train: int = 2048
    n_test: int = 256
    model_seed: int = 1000
    sample_seed: int = 2000
    density: float = 0.02
    noise_std: float = 0.01
    mag_low: float = 1.0
    mag_high: float = 2.0
    downscale: bool = False

    def __post_init__(self):
        if self.source not in ("synthetic", "cifar10"):
            raise ConfigError(f"data.source must be synthetic or cifar10, got {self.source!r}")
        if self.source == "cifar10" and not self.path:
            raise ConfigError("data.path is required for source = cifar10")
        if self.n_train < 2 or self.n_test < 1:
            raise ConfigError("data.n_train must be >= 2 and data.n_test >= 1")


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


def _convert(text: str, like):
    if isinstance(like, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text.strip()


def _apply(obj, section: str, items: dict, allowed):
    changes = {}
    for key, text in items.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {section}.{key}")
        default = getattr(obj, key)
        if key == "step_size" and text.strip() != "auto":
            default = 0.0
        try:
            changes[key] = _convert(text, default)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from None
    try:
        return dataclasses.replace(obj, **changes)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_config(text: str = "") -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",),
                                   interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None
    unknown = set(cp.sections()) - {"train", "arch", "fista", "rate", "data"}
    if unknown:
        raise ConfigError(f"unknown section [{sorted(unknown)[0]}]")
    sec = {s: dict(cp[s]) if cp.has_section(s) else {} for s in ("train", "arch", "fista", "rate", "data")}

    fista = _apply(FistaConfig(), "fista", sec["fista"], [f.name for f in dataclasses.fields(FistaConfig)])
    rate = _apply(RateConfig(), "rate", sec["rate"], [f.name for f in dataclasses.fields(RateConfig)])
    arch = TrainConfig.arch
    for key, text in sec["arch"].items():
        if key != "name":
            raise ConfigError(f"unknown key arch.{key}")
        arch = text.strip()
    if arch not in ARCHITECTURES:
        raise ConfigError(f"arch.name must be one of {sorted(ARCHITECTURES)}, got {arch!r}")
    train = _apply(TrainConfig(arch=arch, fista=fista, rate=rate), "train", sec["train"], _TRAIN_KEYS)
    data = _apply(DataConfig(), "data", sec["data"], [f.name for f in dataclasses.fields(DataConfig)])
    return RunConfig(train, data)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(p.read_text())


def dump_config(cfg: RunConfig) -> str:
    """Fully resolved configuration in the same INI layout (round-trips through parse_config)."""
    t = cfg.train
    lines = ["[train]"]
    lines += [f"{k} = {getattr(t, k)}" for k in _TRAIN_KEYS]
    lines += ["", "[arch]", f"name = {t.arch}", "", "[fista]"]
    lines += [f"{f.name} = {getattr(t.fista, f.name)}" for f in dataclasses.fields(FistaConfig)]
    lines += ["", "[rate]"]
    lines += [f"{f.name} = {getattr(t.rate, f.name)}" for f in dataclasses.fields(RateConfig)]
    lines += ["", "[data]"]
    lines += [f"{f.name} = {getattr(cfg.data, f.name)}" for f in dataclasses.fields(DataConfig)]
    return "\n".join(lines) + "\n"
