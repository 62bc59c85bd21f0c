"""Gerchberg-Saxton iteration and the one-iteration approximant.

The iterate enforces unit object modulus and the measured modulus: propagate
the current phase-only estimate to the detector plane, replace its modulus
by sqrt(g), propagate back, keep only the phase. Starting from zero phase,
the first iterate is the deterministic approximant fed to the learning
stage. Negative measurement pixels (possible when Gaussian read noise is on)
are clamped to zero before the square root. Phases are principal-valued in
(-pi, pi]; no unwrapping is attempted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .fieldcore import ComplexField, RealField
from .noise import Measurement
from .optics import OpticalConfig, propagate


@dataclass
class GsState:
    phase: RealField
    iteration: int
    residuals: list = field(default_factory=list)


def _measured_modulus(g) -> np.ndarray:
    """Accepts a Measurement or a bare RealField of counts."""
    values = g.g.values if isinstance(g, Measurement) else g.values
    if not np.all(np.isfinite(values)):
        raise DimensionError("measurement contains non-finite entries")
    return np.sqrt(np.maximum(values, 0.0))


def _detector_field(phase: np.ndarray, config: OpticalConfig) -> np.ndarray:
    obj = ComplexField(config.grid, np.exp(1j * phase))
    return propagate(obj, config).values


def _residual(phase: np.ndarray, root_g: np.ndarray, config: OpticalConfig) -> float:
    return float(np.linalg.norm(np.abs(_detector_field(phase, config)) - root_g))


def _back_config(config: OpticalConfig) -> OpticalConfig:
    return OpticalConfig(config.wavelength, -config.defocus, config.grid)


def initial_state(g: Measurement, config: OpticalConfig) -> GsState:
    """Zero-phase start; the residual history begins with its residual."""
    zero = np.zeros(config.grid.shape)
    root_g = _measured_modulus(g)
    return GsState(phase=RealField(config.grid, zero), iteration=0,
                   residuals=[_residual(zero, root_g, config)])


def gs_iterate(state: GsState, g: Measurement, config: OpticalConfig) -> GsState:
    """One Gerchberg-Saxton update of the phase estimate.

    Appends the measurement-plane residual ``|| |F_z(exp(i f_new))| -
    sqrt(g) ||_2`` of the updated phase to the history.
    """
    root_g = _measured_modulus(g)
    det = _detector_field(state.phase.values, config)
    constrained = root_g * np.exp(1j * np.angle(det))
    back = propagate(ComplexField(config.grid, constrained), _back_config(config))
    new_phase = np.angle(back.values)
    return GsState(
        phase=RealField(config.grid, new_phase),
        iteration=state.iteration + 1,
        residuals=state.residuals + [_residual(new_phase, root_g, config)],
    )


def approximant(g: Measurement, config: OpticalConfig) -> RealField:
    """Physics-based approximate inverse: a single GS iterate from the
    uniform unit field, ``arg{F_z^-1(sqrt(g) exp(i arg F_z(1)))}``."""
    return gs_solve(g, config, iterations=1).phase


def gs_solve(g: Measurement, config: OpticalConfig, iterations: int) -> GsState:
    """Run GS from zero phase; the returned state carries the full residual
    history (length ``iterations + 1``, including the start)."""
    if iterations < 1:
        raise DimensionError("iterations must be >= 1")
    state = initial_state(g, config)
    for _ in range(iterations):
        state = gs_iterate(state, g, config)
    return state
