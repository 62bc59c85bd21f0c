"""Adaptive-moment stochastic optimizer (bias-corrected first and second
moment estimates)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError
from .network import NetworkState


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    loss: str = "npcc"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DimensionError("learning rate must be positive")
        for beta in (self.beta1, self.beta2):
            if not 0 <= beta < 1:
                raise DimensionError("moment decay rates must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise DimensionError("batch_size >= 1 and epochs >= 0 required")


def optimizer_step(state: NetworkState, grads: dict,
                   config: TrainConfig) -> NetworkState:
    """One in-place update; parameters are visited in sorted-key order so the
    update sequence is reproducible."""
    if set(grads) != set(state.params):
        raise DimensionError("gradient keys do not match the network state")
    state.step += 1
    t = state.step
    c1 = 1.0 - config.beta1 ** t
    c2 = 1.0 - config.beta2 ** t
    for key in state.param_keys():
        g = grads[key]
        if g.shape != state.params[key].shape:
            raise DimensionError(f"gradient shape mismatch for {key}")
        m = state.m[key]
        v = state.v[key]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        state.params[key] -= config.learning_rate * (m / c1) / (
            np.sqrt(v / c2) + config.epsilon)
    return state
