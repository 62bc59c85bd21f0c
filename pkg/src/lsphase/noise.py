"""Photon-limited measurement synthesis.

A measurement is ``g = Poisson{p * g0 / <g0>} + Normal(0, sigma^2)`` per
pixel, where ``g0`` is the noiseless intensity and ``p`` the mean photon
count per pixel per frame. The Poisson argument is normalized so its spatial
mean equals ``p`` exactly. Counts are left unrounded and unclipped after the
Gaussian term is added; downstream square roots clamp negatives to zero.

Sampling is deterministic: every image gets its own counter-based stream
keyed by (seed, image index), so dataset-level parallelism cannot reorder
draws. The sampler itself consumes uniforms in a fixed batched protocol
(one uniform per pixel up front, then rejection rounds for the large-mean
pixels in index order), so a given stream always yields the same counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DimensionError
from .fieldcore import RealField
from .optics import OpticalConfig, forward_intensity

# Mean above which sequential-search inversion is abandoned for the
# transformed-rejection sampler.
_INVERSION_LIMIT = 30.0


@dataclass(frozen=True)
class NoiseModel:
    """Photon flux p (> 0, or math.inf for the noiseless sentinel),
    Gaussian read-noise sigma in photon units, and the base RNG seed."""

    photons: float = 1.0
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.photons > 0:
            raise DimensionError("photon flux must be positive")
        if self.sigma < 0:
            raise DimensionError("read noise sigma must be >= 0")

    @property
    def noiseless(self) -> bool:
        return math.isinf(self.photons)


class RngStream:
    """Counter-based random stream for one image: (seed, index) -> Philox key.

    Identical (seed, index) always reproduces the same sample sequence; each
    stream is single-consumer.
    """

    def __init__(self, seed: int, index: int = 0):
        self.seed = seed
        self.index = index
        key = np.array([seed & 0xFFFFFFFFFFFFFFFF, index & 0xFFFFFFFFFFFFFFFF],
                       dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def random(self, n: int) -> np.ndarray:
        return self._gen.random(n)

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)


def _poisson_inversion(means: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Sequential-search inversion, vectorized: one uniform per sample.
    Exact for small means; callers guarantee means < _INVERSION_LIMIT."""
    k = np.zeros(means.shape, dtype=np.int64)
    term = np.exp(-means)
    cdf = term.copy()
    pending = np.nonzero(u > cdf)[0]
    while pending.size:
        k[pending] += 1
        term[pending] *= means[pending] / k[pending]
        cdf[pending] += term[pending]
        pending = pending[u[pending] > cdf[pending]]
    return k


def _poisson_ptrs(means: np.ndarray, rng: RngStream) -> np.ndarray:
    """Transformed-rejection sampler for means >= _INVERSION_LIMIT.

    Pending samples draw uniform pairs in synchronized rounds (index order
    within each round), which keeps consumption deterministic while staying
    vectorized. Acceptance probability is high, so a handful of rounds
    suffices.
    """
    lam = means
    out = np.full(lam.shape, -1, dtype=np.int64)
    b = 0.931 + 2.53 * np.sqrt(lam)
    a = -0.059 + 0.02483 * b
    alpha = 1.1239 + 1.1328 / (b - 3.4)
    v_r = 0.9277 - 3.6224 / (b - 2.0)
    log_lam = np.log(lam)

    pending = np.arange(lam.size)
    while pending.size:
        u = rng.random(pending.size) - 0.5
        v = rng.random(pending.size)
        idx = pending
        us = 0.5 - np.abs(u)
        k = np.floor((2.0 * a[idx] / us + b[idx]) * u + lam[idx] + 0.43)

        accept = (us >= 0.07) & (v <= v_r[idx])
        reject = (k < 0) | ((us < 0.013) & (v > us))
        rest = ~(accept | reject)
        if np.any(rest):
            kr = k[rest]
            lhs = np.log(v[rest] * alpha[idx][rest] / (a[idx][rest] / us[rest] ** 2 + b[idx][rest]))
            rhs = kr * log_lam[idx][rest] - lam[idx][rest] - gammaln(kr + 1.0)
            acc2 = np.zeros(k.shape, dtype=bool)
            acc2[rest] = lhs <= rhs
            accept = accept | acc2

        out[idx[accept]] = k[accept].astype(np.int64)
        pending = idx[~accept]
    return out


def poisson_sample_array(means: np.ndarray, rng: RngStream) -> np.ndarray:
    """Poisson draws for an array of means, consuming `rng` deterministically."""
    means = np.asarray(means, dtype=np.float64)
    if means.size and (np.any(means < 0) or not np.all(np.isfinite(means))):
        raise DimensionError("Poisson means must be finite and >= 0")
    flat = means.ravel()
    u = rng.random(flat.size)
    out = np.zeros(flat.size, dtype=np.int64)
    small = flat < _INVERSION_LIMIT
    if np.any(small):
        out[small] = _poisson_inversion(flat[small], u[small])
    big = ~small
    if np.any(big):
        out[big] = _poisson_ptrs(flat[big], rng)
    return out.reshape(means.shape)


def poisson_sample(mean: float, rng: RngStream) -> int:
    """Single Poisson draw with expectation and variance equal to `mean`."""
    return int(poisson_sample_array(np.array([mean]), rng)[0])


@dataclass(frozen=True)
class Measurement:
    """Noisy counts ``g`` together with the noiseless parent ``g0``."""

    g: RealField
    g0: RealField


def measure(phase: RealField, config: OpticalConfig, noise: NoiseModel,
            rng: RngStream) -> Measurement:
    """Simulate one photon-limited frame of a phase object.

    With the noiseless sentinel (infinite flux) the normalized intensity is
    returned exactly; otherwise each pixel is a Poisson draw with mean
    ``p * g0 / <g0>`` plus, when sigma > 0, a Gaussian of std sigma.
    """
    g0 = forward_intensity(phase, config)
    if noise.noiseless:
        g = g0.values.astype(np.float64)
    else:
        arg = noise.photons * g0.values / g0.values.mean()
        g = poisson_sample_array(arg, rng).astype(np.float64)
    if noise.sigma > 0:
        g = g + noise.sigma * rng.standard_normal(g.shape)
    return Measurement(g=RealField(phase.grid, g), g0=g0)
