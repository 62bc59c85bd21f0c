"""Sampled 2D fields and the centered discrete Fourier machinery.

Conventions used throughout the package:

* rasters are row-major ``(ny, nx)`` arrays;
* spectra are DC-centered: the zero-frequency bin sits at index
  ``(ny//2, nx//2)`` and the frequency axes run from ``-1/(2*pitch)``
  (inclusive) to ``+1/(2*pitch)`` (exclusive);
* the forward transform uses the negative-exponent convention and is
  unscaled, the inverse carries the ``1/(nx*ny)`` factor, so Parseval reads
  ``sum|x|^2 == sum|X|^2 / (nx*ny)``.

Grid sizes must be even: the centered layout would otherwise have no
well-defined DC bin, and every grid of interest here is even anyway.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class Grid2D:
    """Pixel counts and pitch (meters) of a sampled plane."""

    nx: int
    ny: int
    dx: float
    dy: float

    def __post_init__(self):
        for n, name in ((self.nx, "nx"), (self.ny, "ny")):
            if n < 2 or n % 2 != 0:
                raise DimensionError(f"{name}={n}: grid sizes must be even and >= 2")
        if not (self.dx > 0 and self.dy > 0):
            raise DimensionError("pixel pitch must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @classmethod
    def square(cls, n: int, pitch: float) -> "Grid2D":
        return cls(nx=n, ny=n, dx=pitch, dy=pitch)


def _check_values(grid: Grid2D, values: np.ndarray, dtype) -> np.ndarray:
    values = np.asarray(values, dtype=dtype)
    if values.shape != grid.shape:
        raise DimensionError(
            f"value array shape {values.shape} does not match grid {grid.shape}"
        )
    if not np.all(np.isfinite(values)):
        raise DimensionError("field contains non-finite entries")
    values = values.copy()
    values.flags.writeable = False  # fields are shareable, treat as immutable
    return values


@dataclass(frozen=True)
class ComplexField:
    """Complex field amplitude (or its spectrum) on a grid."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, np.complex128))


@dataclass(frozen=True)
class RealField:
    """Real raster on a grid: phase in radians or intensity in photon units."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, np.float64))


def _require_even(field) -> None:
    ny, nx = field.values.shape
    if ny % 2 or nx % 2:
        raise DimensionError("transform requires even dimensions")


def dft2(field: ComplexField) -> ComplexField:
    """Forward 2D DFT, returned DC-centered.

    Unscaled, negative-exponent convention: the output bin at centered index
    ``(k, l)`` (i.e. array index ``(k + ny//2, l + nx//2)``) equals
    ``sum_{m,n} x[m, n] * exp(-2j*pi*(k*m/ny + l*n/nx))``.
    """
    _require_even(field)
    spectrum = np.fft.fftshift(np.fft.fft2(field.values))
    return ComplexField(field.grid, spectrum)


def idft2(spectrum: ComplexField) -> ComplexField:
    """Inverse of :func:`dft2` (carries the ``1/(nx*ny)`` factor)."""
    _require_even(spectrum)
    values = np.fft.ifft2(np.fft.ifftshift(spectrum.values))
    return ComplexField(spectrum.grid, values)


def frequency_axes(grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    """Spatial-frequency sample points in cycles/meter, matching the
    DC-centered spectrum layout: ``nu_x[k] = (k - nx/2) / (nx*dx)``."""
    nu_x = (np.arange(grid.nx) - grid.nx // 2) / (grid.nx * grid.dx)
    nu_y = (np.arange(grid.ny) - grid.ny // 2) / (grid.ny * grid.dy)
    return nu_x, nu_y


def frequency_radius_sq(grid: Grid2D) -> np.ndarray:
    """``nu_x^2 + nu_y^2`` on the full (ny, nx) spectral raster."""
    nu_x, nu_y = frequency_axes(grid)
    return nu_y[:, None] ** 2 + nu_x[None, :] ** 2
