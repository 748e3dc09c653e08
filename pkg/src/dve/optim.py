"""RMSProp."""

from __future__ import annotations

import numpy as np


class NonFiniteGradientError(ArithmeticError):
    pass


class RMSProp:
    """cache <- decay * cache + (1 - decay) * g^2;  theta <- theta - lr * g / (sqrt(cache) + eps)."""

    def __init__(self, lr: float = 0.01, decay: float = 0.9, eps: float = 1e-8):
        if lr <= 0 or not 0.0 <= decay < 1.0 or eps <= 0:
            raise ValueError("invalid RMSProp hyperparameters")
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.state: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        new_params, self.state = rmsprop_step(params, grads, self.state, self.lr, self.decay, self.eps)
        return new_params


def rmsprop_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: dict[str, np.ndarray],
                 lr: float, decay: float = 0.9, eps: float = 1e-8):
    """Return updated copies of (params, state); parameters without a gradient are left as they are."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise NonFiniteGradientError(f"{name}: {bad} non-finite gradient entries")
    new_params = dict(params)
    new_state = dict(state)
    for name, g in grads.items():
        cache = state.get(name)
        cache = (1.0 - decay) * g * g if cache is None else decay * cache + (1.0 - decay) * g * g
        new_state[name] = cache
        new_params[name] = params[name] - lr * g / (np.sqrt(cache) + eps)
    return new_params, new_state
