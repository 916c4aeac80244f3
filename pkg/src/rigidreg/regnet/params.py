"""Parameter layout and initialisation for one network."""

from __future__ import annotations

import numpy as np

from .config import RegNetConfig


def param_shapes(config: RegNetConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every learnable tensor, derived from the config alone."""
    F = config.width
    shapes: dict[str, tuple[int, ...]] = {"in.W": (6, F), "in.b": (F,)}
    for c in range(config.blocks):
        for u in range(2):
            shapes[f"block{c}.{u}.W"] = (F, F)
            shapes[f"block{c}.{u}.b"] = (F,)
    shapes["out.W"] = (F, 1)
    shapes["out.b"] = (1,)
    if config.head == "dnn":
        kh, kw = config.kernel
        ho, wo = config.conv_out
        flat = config.conv_channels * ho * wo
        shapes["conv.W"] = (config.conv_channels, kh, kw)
        shapes["conv.b"] = (config.conv_channels,)
        shapes["fc1.W"] = (flat, config.hidden)
        shapes["fc1.b"] = (config.hidden,)
        shapes["fc2.W"] = (config.hidden, config.rot_size + 3)
        shapes["fc2.b"] = (config.rot_size + 3,)
    return shapes


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: RegNetConfig, seed: int = 0, dtype=np.float64) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        elif name == "conv.W":
            c, kh, kw = shape
            params[name] = _glorot(rng, kh * kw, c * kh * kw, shape).astype(dtype)
        else:
            params[name] = _glorot(rng, shape[0], shape[1], shape).astype(dtype)
    return params


def check_params(config: RegNetConfig, params: dict[str, np.ndarray]) -> None:
    expected = param_shapes(config)
    missing = set(expected) - set(params)
    if missing:
        raise ValueError(f"missing parameters: {sorted(missing)}")
    for name, shape in expected.items():
        if tuple(np.shape(params[name])) != shape:
            raise ValueError(f"parameter {name} has shape {np.shape(params[name])}, expected {shape}")
        if not np.all(np.isfinite(params[name])):
            raise ValueError(f"parameter {name} is not finite")
