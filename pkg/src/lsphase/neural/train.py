"""Mini-batch training loop.

Batches are drawn by a seeded shuffle each epoch, so a (seed, data) pair
reproduces the loss history bit for bit. When a validation set is supplied,
the parameters snapshot with the best validation loss is restored into the
returned state after the last epoch.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np

from ..errors import DimensionError
from .loss import LOSSES
from .network import NetworkSpec, NetworkState, backward, forward
from .optim import TrainConfig, optimizer_step


def _stack(arrays) -> np.ndarray:
    out = np.asarray(arrays, dtype=np.float64)
    if out.ndim == 3:
        out = out[:, None]
    if out.ndim != 4:
        raise DimensionError(f"expected (N, H, W) or (N, 1, H, W), got {out.shape}")
    return out


def _epoch_eval(spec, state, inputs, targets, aux, loss_fn, batch_size):
    n = inputs.shape[0]
    total = 0.0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        y, _ = forward(spec, state, inputs[start:stop],
                       aux[start:stop] if aux is not None else None)
        loss, _ = loss_fn(y, targets[start:stop])
        total += loss * (stop - start)
    return total / n


def train(spec: NetworkSpec, state: NetworkState, inputs, targets,
          config: TrainConfig, aux=None, val_inputs=None, val_targets=None,
          val_aux=None):
    """Train in place; returns (state, history) where history rows are
    (epoch, mean training loss, validation loss or nan)."""
    inputs = _stack(inputs)
    targets = _stack(targets)
    aux = _stack(aux) if aux is not None else None
    if targets.shape[0] != inputs.shape[0]:
        raise DimensionError("inputs and targets must align")
    if inputs.shape[0] == 0:
        raise DimensionError("empty training set")

    if config.loss == "npcc":
        flat = targets.reshape(targets.shape[0], -1)
        keep = np.ptp(flat, axis=1) > 0
        if not np.all(keep):
            warnings.warn(f"skipping {int((~keep).sum())} constant-target "
                          "items (no correlation defined)", stacklevel=2)
            inputs = inputs[keep]
            targets = targets[keep]
            if aux is not None:
                aux = aux[keep]
            if inputs.shape[0] == 0:
                raise DimensionError("all targets were degenerate")

    loss_fn = LOSSES[config.loss]
    has_val = val_inputs is not None
    if has_val:
        val_inputs = _stack(val_inputs)
        val_targets = _stack(val_targets)
        val_aux = _stack(val_aux) if val_aux is not None else None

    rng = np.random.default_rng(config.seed)
    n = inputs.shape[0]
    history = []
    best_val = np.inf
    best_params = None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x = inputs[idx]
            a = aux[idx] if aux is not None else None
            y, cache = forward(spec, state, x, a)
            loss, gy = loss_fn(y, targets[idx])
            grads = backward(spec, state, cache, gy)
            optimizer_step(state, grads, config)
            running += loss * idx.size
        train_loss = running / n
        if has_val:
            val_loss = _epoch_eval(spec, state, val_inputs, val_targets,
                                   val_aux, loss_fn, config.batch_size)
            if val_loss < best_val:
                best_val = val_loss
                best_params = state.copy_params()
        else:
            val_loss = float("nan")
        history.append((epoch, train_loss, val_loss))
    if best_params is not None:
        state.params = best_params
    return state, history


def write_history_csv(history, path) -> None:
    lines = ["epoch,train_loss,val_loss\n"]
    for epoch, train_loss, val_loss in history:
        lines.append(f"{epoch},{train_loss:.17g},{val_loss:.17g}\n")
    Path(path).write_text("".join(lines))
