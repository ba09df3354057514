"""Full-reference quality indices for fused cubes: ERGAS, SAM, UIQI and RMSE profiles."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DimensionError, ValidationError
from .imaging import SpectralImage

__all__ = [
    "QualityReport",
    "ergas",
    "sam",
    "uiqi",
    "band_rmse",
    "pixel_rmse_sorted",
    "quality_report",
]


def _check_pair(Z: SpectralImage, Zref: SpectralImage):
    if Z.data.shape != Zref.data.shape or Z.grid != Zref.grid:
        raise DimensionError(f"images differ in shape: {Z.data.shape} on {Z.grid.shape} vs "
                             f"{Zref.data.shape} on {Zref.grid.shape}")


def ergas(Z: SpectralImage, Zref: SpectralImage, S: float) -> float:
    """ERGAS with resolution ratio ``S = sqrt(n_m / n_h)``."""
    _check_pair(Z, Zref)
    if not S > 0:
        raise ValidationError(f"resolution ratio must be positive, got {S}")
    mean = Zref.data.mean(axis=1)
    zero = np.flatnonzero(mean == 0)
    if zero.size:
        raise DegenerateError(f"reference bands {zero.tolist()} have zero mean")
    mse = np.mean((Z.data - Zref.data) ** 2, axis=1)
    return float(100.0 / S * math.sqrt(np.mean(mse / mean**2)))


def sam(Z: SpectralImage, Zref: SpectralImage, skip_zero: bool = False) -> float:
    """Mean spectral angle in degrees.

    Zero-norm spectra raise :class:`DegenerateError` unless ``skip_zero``, in
    which case those pixels are left out of the mean.
    """
    _check_pair(Z, Zref)
    nz = np.linalg.norm(Z.data, axis=0)
    nr = np.linalg.norm(Zref.data, axis=0)
    ok = (nz > 0) & (nr > 0)
    if not ok.all():
        if not skip_zero:
            raise DegenerateError(f"{int((~ok).sum())} pixels have a zero spectrum")
        if not ok.any():
            raise DegenerateError("every pixel has a zero spectrum")
    # half-angle form; arccos of the cosine loses ~sqrt(eps) near zero angle
    u = Z.data[:, ok] / nz[ok]
    v = Zref.data[:, ok] / nr[ok]
    angle = 2.0 * np.arctan2(np.linalg.norm(u - v, axis=0), np.linalg.norm(u + v, axis=0))
    return float(np.degrees(np.mean(angle)))


def _window_sums(a: np.ndarray, w: int, stride: int) -> np.ndarray:
    # integral image; sums over every w x w window whose top-left lies on the stride lattice
    ii = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    ii[1:, 1:] = a.cumsum(0).cumsum(1)
    s = ii[w:, w:] - ii[:-w, w:] - ii[w:, :-w] + ii[:-w, :-w]
    return s[::stride, ::stride]


def _band_q(z: np.ndarray, r: np.ndarray, w: int, stride: int) -> float:
    # center on the reference mean to limit cancellation in the variance sums
    shift = r.mean()
    z = z - shift
    r = r - shift
    n = w * w
    mz = _window_sums(z, w, stride) / n
    mr = _window_sums(r, w, stride) / n
    vz = np.maximum(_window_sums(z * z, w, stride) / n - mz**2, 0.0)
    vr = np.maximum(_window_sums(r * r, w, stride) / n - mr**2, 0.0)
    czr = _window_sums(z * r, w, stride) / n - mz * mr
    mz += shift
    mr += shift
    # variances below rounding level of the band's energy count as zero
    floor = 1e-12 * max(float(np.mean(r * r)), float(np.mean(z * z)), 1e-300)
    sz, sr = np.sqrt(vz), np.sqrt(vr)
    lum_den = mz**2 + mr**2
    con_den = vz + vr
    ok = (vz > floor) & (vr > floor) & (lum_den > 0)
    if not ok.any():
        return math.nan
    q = (czr[ok] / (sz[ok] * sr[ok])) * (2 * mz[ok] * mr[ok] / lum_den[ok]) * (2 * sz[ok] * sr[ok] / con_den[ok])
    return float(np.mean(q))


def uiqi(Z: SpectralImage, Zref: SpectralImage, window: int = 32, stride: int = 1) -> float:
    """Band-averaged universal image quality index over sliding windows.

    Windows where either image has (numerically) zero variance are left out
    of the average.  ``stride=window`` gives non-overlapping blocks.
    Bands in which every window is degenerate are left out as well.
    """
    _check_pair(Z, Zref)
    rows, cols = Z.grid.shape
    if window < 1 or window > rows or window > cols:
        raise ValidationError(f"window {window} does not fit grid {Z.grid.shape}")
    if stride < 1:
        raise ValidationError("stride must be positive")
    zc, rc = Z.cube, Zref.cube
    qs = np.array([_band_q(zc[l], rc[l], window, stride) for l in range(Z.bands)])
    if np.all(np.isnan(qs)):
        raise DegenerateError("every window of every band has zero variance")
    return float(np.nanmean(qs))


def band_rmse(Z: SpectralImage, Zref: SpectralImage) -> np.ndarray:
    _check_pair(Z, Zref)
    return np.sqrt(np.mean((Z.data - Zref.data) ** 2, axis=1))


def pixel_rmse_sorted(Z: SpectralImage, Zref: SpectralImage, trim: float = 0.99) -> np.ndarray:
    """Per-pixel RMSE over bands, ascending, keeping the first ``floor(trim * n)`` values."""
    _check_pair(Z, Zref)
    if not 0.0 < trim <= 1.0:
        raise ValidationError(f"trim must be in (0, 1], got {trim}")
    err = np.sort(np.sqrt(np.mean((Z.data - Zref.data) ** 2, axis=0)))
    return err[: int(math.floor(trim * err.size))]


@dataclass
class QualityReport:
    ergas: float
    sam_degrees: float
    uiqi: float
    band_rmse: np.ndarray
    pixel_rmse_sorted: np.ndarray

    def summary(self) -> dict:
        return {"ergas": self.ergas, "sam_degrees": self.sam_degrees, "uiqi": self.uiqi}

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in self.summary().items())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ergas", "sam_degrees", "uiqi"])
            w.writerow([repr(self.ergas), repr(self.sam_degrees), repr(self.uiqi)])


def quality_report(
    Z: SpectralImage, Zref: SpectralImage, S: float, window: int = 32, stride: int = 1, trim: float = 0.99
) -> QualityReport:
    return QualityReport(
        ergas=ergas(Z, Zref, S),
        sam_degrees=sam(Z, Zref),
        uiqi=uiqi(Z, Zref, window, stride),
        band_rmse=band_rmse(Z, Zref),
        pixel_rmse_sorted=pixel_rmse_sorted(Z, Zref, trim),
    )
