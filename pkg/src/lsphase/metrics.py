"""Reconstruction quality measures and the affine-ambiguity resolution.

The correlation training loss leaves reconstructions determined only up to
gain and offset, so every absolute metric here is computed after fitting a
least-squares affine map from the reconstruction to its reference. The fit
preserves the correlation coefficient exactly (for positive fitted gain) and
is idempotent. A histogram-matching variant is available for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateInputError, DimensionError
from .fieldcore import RealField

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def _values(a) -> np.ndarray:
    return a.values if isinstance(a, RealField) else np.asarray(a, dtype=np.float64)


def _pair(a, b):
    av, bv = _values(a), _values(b)
    if av.shape != bv.shape:
        raise DimensionError(f"shape mismatch {av.shape} vs {bv.shape}")
    return av, bv


def pcc(a, b) -> float:
    """Pearson correlation coefficient over all pixels, in [-1, 1]."""
    av, bv = _pair(a, b)
    if np.ptp(av) == 0 or np.ptp(bv) == 0:
        raise DegenerateInputError("correlation of a constant field is undefined")
    ac = av - av.mean()
    bc = bv - bv.mean()
    return float((ac * bc).sum() / (np.linalg.norm(ac) * np.linalg.norm(bc)))


def mse(a, b) -> float:
    av, bv = _pair(a, b)
    return float(((av - bv) ** 2).mean())


def mae(a, b) -> float:
    av, bv = _pair(a, b)
    return float(np.abs(av - bv).mean())


def psnr(a, b, peak: float) -> float:
    """10*log10(peak^2 / MSE); +inf for identical inputs."""
    if peak <= 0:
        raise DimensionError("peak must be positive")
    err = mse(a, b)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def _gaussian_window(n: int, sigma: float) -> np.ndarray:
    r = np.arange(n) - (n - 1) / 2.0
    w = np.exp(-(r ** 2) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with a 1D window along both axes."""
    n = window.size
    rows = sliding_window_view(img, n, axis=1) @ window
    return np.tensordot(sliding_window_view(rows, n, axis=0), window, axes=(2, 0))


def ssim(a, b) -> float:
    """Mean local structural similarity: 11x11 Gaussian window (sigma 1.5),
    stability constants from the dynamic range of the reference `b`."""
    av, bv = _pair(a, b)
    if min(av.shape) < _SSIM_WINDOW:
        raise DimensionError(f"fields must be at least "
                             f"{_SSIM_WINDOW}x{_SSIM_WINDOW} for SSIM")
    dynamic_range = np.ptp(bv)
    if dynamic_range == 0:
        raise DegenerateInputError("reference field is constant")
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    window = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_a = _filter_valid(av, window)
    mu_b = _filter_valid(bv, window)
    var_a = _filter_valid(av * av, window) - mu_a ** 2
    var_b = _filter_valid(bv * bv, window) - mu_b ** 2
    cov = _filter_valid(av * bv, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def resolve_affine(reconstruction, reference, method: str = "affine"):
    """Map a reconstruction onto the reference scale.

    "affine" (default): least-squares gain and offset; deterministic,
    parameter-free, correlation-preserving (up to sign when the fitted gain
    is negative). "histogram": CDF transfer onto the reference values.
    """
    rv, fv = _pair(reconstruction, reference)
    if np.ptp(rv) == 0:
        raise DegenerateInputError("cannot rescale a constant reconstruction")
    if method == "affine":
        rc = rv - rv.mean()
        gain = (rc * (fv - fv.mean())).sum() / (rc * rc).sum()
        out = gain * rv + (fv.mean() - gain * rv.mean())
    elif method == "histogram":
        order = np.argsort(rv, axis=None, kind="stable")
        out = np.empty(rv.size)
        out[order] = np.sort(fv, axis=None)
        out = out.reshape(rv.shape)
    else:
        raise DimensionError(f"unknown method {method!r}")
    if isinstance(reconstruction, RealField):
        return RealField(reconstruction.grid, out)
    return out


@dataclass
class MetricReport:
    """Per-image quality rows plus mean and population standard deviation."""

    rows: list  # (id, pcc, psnr_db, ssim, mse, mae)
    peak: float
    method: str = "affine"

    COLUMNS = ("pcc", "psnr_db", "ssim", "mse", "mae")

    def aggregate(self) -> dict:
        table = np.array([row[1:] for row in self.rows], dtype=np.float64)
        return {
            name: (float(table[:, i].mean()), float(table[:, i].std()))
            for i, name in enumerate(self.COLUMNS)
        }

    def mean(self, column: str) -> float:
        return self.aggregate()[column][0]

    def to_csv(self, path) -> None:
        lines = [f"# peak={self.peak!r} affine={self.method}\n",
                 "id," + ",".join(self.COLUMNS) + "\n"]
        for row in self.rows:
            lines.append(row[0] + "," + ",".join(f"{v:.17g}" for v in row[1:]) + "\n")
        agg = self.aggregate()
        lines.append("mean," + ",".join(f"{agg[c][0]:.17g}" for c in self.COLUMNS) + "\n")
        lines.append("std," + ",".join(f"{agg[c][1]:.17g}" for c in self.COLUMNS) + "\n")
        Path(path).write_text("".join(lines))


def report(reconstructions, references, peak: float, ids=None,
           method: str = "affine") -> MetricReport:
    """Affine-resolve every reconstruction against its reference and tabulate
    PCC / PSNR / SSIM / MSE / MAE."""
    if len(reconstructions) != len(references):
        raise DimensionError("reconstruction and reference lists must align")
    if ids is None:
        ids = [f"{i:05d}" for i in range(len(references))]
    rows = []
    for item_id, recon, ref in zip(ids, reconstructions, references):
        fixed = resolve_affine(recon, ref, method=method)
        rows.append((item_id, pcc(fixed, ref), psnr(fixed, ref, peak),
                     ssim(fixed, ref), mse(fixed, ref), mae(fixed, ref)))
    return MetricReport(rows=rows, peak=peak, method=method)
