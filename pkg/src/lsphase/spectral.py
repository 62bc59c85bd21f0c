"""Power-law spectral filtering and PSD diagnostics.

The high-band training targets are made by multiplying a phase raster's
spectrum with ``C(nu) = (nu_x^2 + nu_y^2)^q``. The raw power law carries
units and a grid-dependent magnitude, so the transfer is normalized to a
maximum of 1 over the grid; the correlation training loss is scale
invariant, so this only fixes stored-file magnitudes. The DC bin is 0 for
q > 0 and 1 for q = 0, which makes the q -> 0 limit the exact identity
filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .fieldcore import (
    ComplexField,
    Grid2D,
    RealField,
    dft2,
    frequency_radius_sq,
    idft2,
)


@dataclass(frozen=True)
class PowerLawFilter:
    q: float
    grid: Grid2D

    def __post_init__(self):
        if self.q < 0:
            raise DimensionError("filter exponent q must be >= 0")


def filter_transfer(filt: PowerLawFilter) -> RealField:
    """Normalized transfer ``C = (nu_x^2 + nu_y^2)^q / max``, DC-centered."""
    if filt.q == 0:
        return RealField(filt.grid, np.ones(filt.grid.shape))
    r2 = frequency_radius_sq(filt.grid)
    c = r2 ** filt.q
    return RealField(filt.grid, c / c.max())


def apply_filter(f: RealField, filt: PowerLawFilter) -> RealField:
    """Filtered raster ``idft2(dft2(f) * C)``; the transfer is symmetric on
    the even grid so the result is real up to round-off, and the tiny
    imaginary residue is discarded."""
    if f.grid != filt.grid:
        raise DimensionError("field grid does not match filter grid")
    spectrum = dft2(ComplexField(f.grid, f.values.astype(np.complex128)))
    shaped = spectrum.values * filter_transfer(filt).values
    out = idft2(ComplexField(f.grid, shaped)).values
    return RealField(f.grid, out.real)


def psd2d(images: list[RealField]) -> RealField:
    """Average squared spectrum magnitude over an image list, DC-centered."""
    if not images:
        raise DimensionError("psd2d needs at least one image")
    grid = images[0].grid
    acc = np.zeros(grid.shape)
    for im in images:
        if im.grid != grid:
            raise DimensionError("psd2d images must share one grid")
        spec = dft2(ComplexField(grid, im.values.astype(np.complex128)))
        acc += np.abs(spec.values) ** 2
    return RealField(grid, acc / len(images))


def psd_diagonal(psd: RealField) -> np.ndarray:
    """Cross-section of a PSD along the main diagonal, from the DC bin
    toward the corner, normalized to its maximum. Length ``nx/2``."""
    ny, nx = psd.grid.shape
    if ny != nx:
        raise DimensionError("diagonal cross-section requires a square grid")
    half = nx // 2
    idx = np.arange(half)
    diag = psd.values[half + idx, half + idx]
    peak = diag.max()
    if peak <= 0:
        raise DimensionError("PSD diagonal is identically zero")
    return diag / peak


def radial_average(psd: RealField) -> tuple[np.ndarray, np.ndarray]:
    """Mean PSD over one-pixel-wide annuli of bin radius; returns
    (radii in bins, means), radius 0 excluded."""
    ny, nx = psd.grid.shape
    ky = np.arange(ny) - ny // 2
    kx = np.arange(nx) - nx // 2
    r = np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)
    bins = np.rint(r).astype(int)
    nmax = min(nx, ny) // 2
    radii = np.arange(1, nmax)
    means = np.array([psd.values[bins == k].mean() for k in radii])
    return radii.astype(float), means


def psd_slope(psd: RealField) -> float:
    """Log-log slope of the radially averaged PSD, least-squares fitted over
    bin radii in [N/16, N/4] to stay clear of DC leakage and the
    anisotropic Nyquist corner."""
    radii, means = radial_average(psd)
    n = min(psd.grid.nx, psd.grid.ny)
    keep = (radii >= n / 16) & (radii <= n / 4) & (means > 0)
    if keep.sum() < 2:
        raise DimensionError("too few radial bins for a slope fit")
    slope, _ = np.polyfit(np.log(radii[keep]), np.log(means[keep]), 1)
    return float(slope)
