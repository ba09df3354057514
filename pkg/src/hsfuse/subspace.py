"""Hyperspectral preprocessing and the orthonormal spectral subspace.

The fused image is represented as ``Z = E X`` with ``E`` an ``L_h x L_s``
basis.  Here ``E`` holds the leading left singular vectors of the observed
hyperspectral data, which is also what the denoising step projects onto.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateError, DimensionError, ValidationError
from .imaging import SpectralImage

__all__ = [
    "Subspace",
    "PreprocessReport",
    "remove_bands",
    "normalize_bands",
    "denormalize_bands",
    "truncated_svd_basis",
    "denoise_project",
    "coefficients",
    "reconstruct",
    "noisy_bands",
    "preprocess",
]


@dataclass(frozen=True, eq=False)
class Subspace:
    basis: np.ndarray
    energy_fraction: float
    singular_values: np.ndarray

    def __post_init__(self):
        basis = np.array(self.basis, dtype=np.float64)
        if basis.ndim != 2 or basis.shape[1] > basis.shape[0]:
            raise DimensionError(f"basis must be L_h x L_s with L_s <= L_h, got {basis.shape}")
        basis.flags.writeable = False
        sv = np.array(self.singular_values, dtype=np.float64)
        sv.flags.writeable = False
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "singular_values", sv)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def n_bands(self) -> int:
        return self.basis.shape[0]


@dataclass
class PreprocessReport:
    removed_bands: list[int] = field(default_factory=list)
    band_scales: np.ndarray | None = None
    energy_fraction: float = 1.0


def remove_bands(img: SpectralImage, keep: Sequence[int]) -> SpectralImage:
    """Keep only the bands listed in ``keep`` (strictly increasing indices)."""
    keep = [int(k) for k in keep]
    if not keep:
        raise ValidationError("band keep-list is empty")
    if keep[0] < 0 or keep[-1] >= img.bands:
        raise ValidationError(f"band indices must lie in [0, {img.bands}), got {keep}")
    if any(b <= a for a, b in zip(keep, keep[1:])):
        raise ValidationError("band keep-list must be strictly increasing")
    return SpectralImage(img.data[keep], img.grid)


def normalize_bands(img: SpectralImage, q: float = 0.999) -> tuple[SpectralImage, np.ndarray]:
    """Divide each band by its empirical ``q``-quantile.

    Returns the normalised image and the per-band scales; multiplying band
    ``l`` by ``scales[l]`` undoes the map.
    """
    if not 0.0 < q <= 1.0:
        raise ValidationError(f"quantile must be in (0, 1], got {q}")
    scales = np.quantile(img.data, q, axis=1)
    bad = np.flatnonzero(~(scales > 0))
    if bad.size:
        raise DegenerateError(f"bands {bad.tolist()} have a nonpositive {q}-quantile")
    return SpectralImage(img.data / scales[:, None], img.grid), scales


def denormalize_bands(img: SpectralImage, scales) -> SpectralImage:
    scales = np.asarray(scales, dtype=np.float64)
    if scales.shape != (img.bands,):
        raise DimensionError(f"expected {img.bands} scales, got {scales.shape}")
    return SpectralImage(img.data * scales[:, None], img.grid)


def _fix_signs(u: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive; argmax picks the lowest index on ties
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def truncated_svd_basis(img: SpectralImage, L_s: int) -> Subspace:
    """First ``L_s`` left singular vectors of the ``L x n`` data matrix."""
    L, n = img.data.shape
    if isinstance(L_s, bool) or int(L_s) != L_s or not 1 <= L_s <= min(L, n):
        raise ValidationError(f"subspace dimension must be in [1, {min(L, n)}], got {L_s}")
    u, s, _ = np.linalg.svd(img.data, full_matrices=False)
    total = float(np.sum(s**2))
    energy = float(np.sum(s[:L_s] ** 2) / total) if total > 0 else 1.0
    return Subspace(_fix_signs(u[:, :L_s]), min(max(energy, 0.0), 1.0), s)


def _check_bands(img: SpectralImage, sub: Subspace):
    if img.bands != sub.n_bands:
        raise DimensionError(f"image has {img.bands} bands, subspace expects {sub.n_bands}")


def coefficients(img: SpectralImage, sub: Subspace) -> SpectralImage:
    """Representation coefficients ``E^T img`` (``L_s`` bands)."""
    _check_bands(img, sub)
    return SpectralImage(sub.basis.T @ img.data, img.grid)


def reconstruct(X: SpectralImage, sub: Subspace) -> SpectralImage:
    if X.bands != sub.dim:
        raise DimensionError(f"coefficients have {X.bands} bands, subspace dimension is {sub.dim}")
    return SpectralImage(sub.basis @ X.data, X.grid)


def denoise_project(img: SpectralImage, sub: Subspace) -> SpectralImage:
    """Orthogonal projection ``E E^T img`` onto the subspace."""
    return reconstruct(coefficients(img, sub), sub)


def noisy_bands(img: SpectralImage, min_snr_db: float = 10.0) -> list[int]:
    """Convenience heuristic flagging bands with a low robust SNR estimate.

    Noise is estimated from the median absolute horizontal difference (which
    is dominated by noise on piecewise-smooth bands); signal power is the mean
    square of the band.  Never applied automatically.
    """
    cube = img.cube
    diffs = np.diff(cube, axis=-1).reshape(img.bands, -1)
    sigma = np.median(np.abs(diffs), axis=1) / (0.6745 * np.sqrt(2.0))
    power = np.mean(img.data**2, axis=1)
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(power / np.maximum(sigma**2, 1e-300))
    return np.flatnonzero(snr < min_snr_db).tolist()


def preprocess(
    Yh: SpectralImage,
    Ym: SpectralImage,
    L_s: int = 10,
    keep: Sequence[int] | None = None,
    quantile: float | None = 0.999,
) -> tuple[SpectralImage, SpectralImage, Subspace, dict]:
    """Band removal, per-band normalisation and subspace denoising.

    ``quantile=None`` skips normalisation.  Returns denoised ``Yh``,
    normalised ``Ym``, the subspace and a dict with ``keep``, ``scales_h``,
    ``scales_m`` and the :class:`PreprocessReport`.
    """
    n_orig = Yh.bands
    keep = list(range(n_orig)) if keep is None else [int(k) for k in keep]
    Yh = remove_bands(Yh, keep)
    if quantile is None:
        scales_h, scales_m = np.ones(Yh.bands), np.ones(Ym.bands)
    else:
        Yh, scales_h = normalize_bands(Yh, quantile)
        Ym, scales_m = normalize_bands(Ym, quantile)
    sub = truncated_svd_basis(Yh, L_s)
    Yh = denoise_project(Yh, sub)
    removed = sorted(set(range(n_orig)) - set(keep))
    report = PreprocessReport(removed, scales_h, sub.energy_fraction)
    return Yh, Ym, sub, {"keep": keep, "scales_h": scales_h, "scales_m": scales_m, "report": report}
