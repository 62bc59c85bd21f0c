"""Training losses with analytic gradients.

The default is the negative Pearson correlation coefficient per batch item,
averaged over the batch: -1 at perfect (positive-affine) agreement, 0 in
expectation for unrelated fields, +1 at perfect anticorrelation. It is
invariant to affine transformations of either argument, which is why
reported reconstructions go through an affine-resolution step before any
absolute-scale metric.
"""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateInputError, DimensionError


def _flatten_pair(prediction, target):
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise DimensionError(
            f"prediction {prediction.shape} vs target {target.shape}")
    b = prediction.shape[0]
    return prediction, target, prediction.reshape(b, -1), target.reshape(b, -1)


def npcc_loss(prediction: np.ndarray, target: np.ndarray):
    """Mean negative Pearson correlation over the batch and its exact
    gradient with respect to the prediction. Constant (zero-variance)
    prediction or target rasters make the denominator vanish and are
    rejected."""
    prediction, target, a, b = _flatten_pair(prediction, target)
    if np.any(np.ptp(a, axis=1) == 0):
        raise DegenerateInputError("constant prediction has no correlation")
    if np.any(np.ptp(b, axis=1) == 0):
        raise DegenerateInputError("constant target has no correlation")
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    sa = np.sqrt((ac ** 2).sum(axis=1, keepdims=True))
    sb = np.sqrt((bc ** 2).sum(axis=1, keepdims=True))
    rho = (ac * bc).sum(axis=1, keepdims=True) / (sa * sb)
    loss = float(-rho.mean())
    # d(-rho)/da, with the mean-centering projections dropping out because
    # the centered vectors sum to zero.
    grad = -(bc / (sa * sb) - rho * ac / sa ** 2) / a.shape[0]
    return loss, grad.reshape(prediction.shape)


def mse_loss(prediction: np.ndarray, target: np.ndarray):
    prediction, target, a, b = _flatten_pair(prediction, target)
    diff = a - b
    loss = float((diff ** 2).mean())
    grad = (2.0 / diff.size) * diff
    return loss, grad.reshape(prediction.shape)


def mae_loss(prediction: np.ndarray, target: np.ndarray):
    prediction, target, a, b = _flatten_pair(prediction, target)
    diff = a - b
    loss = float(np.abs(diff).mean())
    grad = np.sign(diff) / diff.size
    return loss, grad.reshape(prediction.shape)


LOSSES = {"npcc": npcc_loss, "mse": mse_loss, "mae": mae_loss}
