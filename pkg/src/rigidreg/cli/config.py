"""INI config files for the command line.

Sections map onto dataclasses: ``[gen]`` -> GenConfig, ``[network]`` and the
optional ``[refine]`` -> RegNetConfig (a ``[refine]`` section makes a cascade),
``[loss]`` -> LossConfig, ``[train]`` -> TrainConfig, ``[eval]`` -> EvalOptions
plus ``methods``, ``[cdf]`` -> ``grid``. Missing keys keep their defaults.

Example::

    [network]
    blocks = 8
    rotation = lie

    [refine]
    blocks = 4

    [train]
    epochs = 20
    curriculum = yes
"""

from __future__ import annotations

import configparser
import dataclasses
from typing import Any, Optional

import numpy as np

from ..data import GenConfig
from ..regnet import LossConfig, RegNetConfig
from .evaluate import METHODS, EvalOptions
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _parse_value(raw: str, default: Any, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return {"1": True, "yes": True, "true": True, "on": True,
                    "0": False, "no": False, "false": False, "off": False}[raw.lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(","))
        if default is None:
            if raw.lower() in ("", "none"):
                return None
            try:
                return int(raw)
            except ValueError:
                return raw
        return raw
    except (KeyError, ValueError) as e:
        raise ConfigError(f"bad value {raw!r} for {key}") from e


def _build(cls, section: Optional[configparser.SectionProxy], skip=(), **overrides):
    defaults = {f.name: f.default for f in dataclasses.fields(cls)
                if f.default is not dataclasses.MISSING and f.name not in skip}
    kw = {}
    if section is not None:
        for key, raw in section.items():
            if key in skip:
                continue
            if key not in defaults:
                raise ConfigError(f"unknown key {key!r} in [{section.name}]")
            kw[key] = _parse_value(raw, defaults[key], f"[{section.name}] {key}")
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section.name if section is not None else cls.__name__}]: {e}") from e


@dataclasses.dataclass
class CliConfig:
    gen: GenConfig
    train: TrainConfig
    eval: EvalOptions
    methods: tuple[str, ...]
    grid: Optional[np.ndarray]


def load_config(path: Optional[str] = None, seed: Optional[int] = None) -> CliConfig:
    cp = configparser.ConfigParser()
    if path is not None:
        with open(path, encoding="utf-8") as f:
            cp.read_file(f)
    known = {"gen", "network", "refine", "loss", "train", "eval", "cdf"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    sec = {name: (cp[name] if cp.has_section(name) else None) for name in known}

    gen = _build(GenConfig, sec["gen"], seed=seed)
    if sec["network"] is None and sec["refine"] is None:
        networks = TrainConfig().networks
    else:
        networks = (_build(RegNetConfig, sec["network"]),)
        if sec["refine"] is not None:
            networks += (_build(RegNetConfig, sec["refine"], blocks=None),)
            if "blocks" not in sec["refine"]:
                networks = networks[:1] + (dataclasses.replace(networks[1], blocks=4),)
    loss = _build(LossConfig, sec["loss"])
    train = _build(TrainConfig, sec["train"], skip=("networks", "loss"), seed=seed)
    train = dataclasses.replace(train, networks=networks, loss=loss)
    opts = _build(EvalOptions, sec["eval"], skip=("methods",), seed=seed)

    methods: tuple[str, ...] = METHODS
    if sec["eval"] is not None and "methods" in sec["eval"]:
        methods = tuple(m.strip() for m in sec["eval"]["methods"].split(",") if m.strip())
    grid = None
    if sec["cdf"] is not None and "grid" in sec["cdf"]:
        grid = parse_grid(sec["cdf"]["grid"])
    return CliConfig(gen, train, opts, methods, grid)


def parse_grid(text: str) -> np.ndarray:
    """``"0,1,2.5"`` lists thresholds; ``"start:stop:step"`` is an inclusive range."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError("step must be positive")
            return start + step * np.arange(int(np.floor((stop - start) / step + 1e-9)) + 1)
        return np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError as e:
        raise ConfigError(f"bad grid {text!r}: {e}") from e
