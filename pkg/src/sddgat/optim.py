"""Xavier initialization and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def xavier_bound(shape) -> float:
    shape = tuple(shape)
    if len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    elif len(shape) == 2:
        fan_in, fan_out = shape
    else:
        raise ValueError(f"xavier init supports 1-d or 2-d shapes, got {shape}")
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_init(shape, seed=None) -> np.ndarray:
    """Glorot-uniform draw. A 1-d shape ``(n,)`` is treated as an ``(n, 1)`` column."""
    bound = xavier_bound(shape)
    return _rng(seed).uniform(-bound, bound, size=tuple(shape))


@dataclass
class AdamConfig:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, cfg: AdamConfig) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update. ``params`` and ``grads`` map names to arrays.

    Returns new parameter arrays; ``state`` is updated in place and returned.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    out = {}
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - cfg.beta1) * g if m is None else cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = (1.0 - cfg.beta2) * g * g if v is None else cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = p - cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return out, state
