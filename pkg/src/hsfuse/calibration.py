"""Blind estimation of the relative spectral response and spatial blur.

Noiseless data satisfy ``R Yh = Ym B M``.  Both unknowns are recovered by
regularised least squares in closed form:

1. blur ``Ym`` with a strong box filter and ``Yh`` with a proportionally
   smaller one, so the unknown ``B`` becomes negligible;
2. estimate each row of ``R`` on the blurred pair, taking the blur between
   them to be a delta;
3. estimate the kernel ``b`` on the original pair with that ``R``;
4. normalise ``b`` to unit DC gain.

Optionally, ``refine_iters`` extra passes re-estimate ``R`` with the current
kernel and then ``b`` with the new ``R`` (block coordinate descent on the same
quadratic objective), which removes the bias left by the strong-blur
approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .degradation import SpectralResponse, make_kernel
from .errors import DimensionError, NumericalError, ValidationError
from .imaging import (
    ConvolutionKernel,
    SamplingLattice,
    SpectralImage,
    convolve_cube,
    kernel_to_frequency,
    subsample_cube,
)

__all__ = [
    "CalibConfig",
    "PatchIndexer",
    "estimate_spectral_response",
    "estimate_blur_kernel",
    "calibrate",
    "consistency_residual",
    "hs_blur_support",
    "calibration_objective",
]


@dataclass(frozen=True)
class CalibConfig:
    """Parameters of the response/blur estimation.

    ``band_ids`` gives the original index of each hyperspectral band (after
    band removal); smoothness differences are only taken between bands whose
    ids are consecutive.  ``identity_blur`` skips the blur estimate and
    returns a delta kernel, for sensor pairs sharing one grid.
    ``refine_iters`` adds that many alternating passes (``R`` given ``b``,
    then ``b`` given ``R``) after the staged estimate; 0 keeps the plain
    staged procedure.
    """

    lambda_b: float = 10.0
    lambda_R: float = 10.0
    kernel_support: int = 7
    strong_blur_support: int = 9
    hs_blur_support: int | None = None
    overlap_mask: np.ndarray | None = None
    band_ids: tuple | None = None
    identity_blur: bool = False
    refine_iters: int = 0

    def __post_init__(self):
        if self.refine_iters < 0:
            raise ValidationError("refine_iters must be nonnegative")
        if not (self.lambda_b > 0 and self.lambda_R > 0):
            raise ValidationError("lambda_b and lambda_R must be strictly positive")
        for name in ("kernel_support", "strong_blur_support", "hs_blur_support"):
            v = getattr(self, name)
            if v is not None and (v < 1 or v % 2 == 0):
                raise ValidationError(f"{name} must be a positive odd integer, got {v}")


def hs_blur_support(strong: int, factor: int) -> int:
    """Box size for the hyperspectral image: ``ceil(strong / factor)`` rounded up to odd."""
    s = math.ceil(strong / factor)
    return s if s % 2 else s + 1


class PatchIndexer:
    """Fine-grid pixel indices of the kernel-sized window around each coarse pixel.

    Row ``j`` of :meth:`indices` lists, for every kernel tap ``(a, b)`` in
    row-major order, the fine pixel multiplied by that tap when convolving,
    so that ``(Ym B)[:, c_j] == Ym[:, indices[j]] @ b.ravel()``.
    """

    def __init__(self, lattice: SamplingLattice, kernel_support: int):
        if kernel_support % 2 == 0:
            raise ValidationError(f"kernel support must be odd, got {kernel_support}")
        if kernel_support > min(lattice.fine.shape):
            raise DimensionError(f"kernel support {kernel_support} exceeds grid {lattice.fine.shape}")
        self.lattice = lattice
        self.kernel_support = kernel_support

    def indices(self) -> np.ndarray:
        lat, s = self.lattice, self.kernel_support
        h = s // 2
        rows, cols = lat.fine.shape
        ci, cj = np.meshgrid(np.arange(lat.coarse.rows), np.arange(lat.coarse.cols), indexing="ij")
        r0, c0 = lat.fine_index(ci.ravel(), cj.ravel())
        ta, tb = np.meshgrid(np.arange(s) - h, np.arange(s) - h, indexing="ij")
        r = (r0[:, None] - ta.ravel()[None, :]) % rows
        c = (c0[:, None] - tb.ravel()[None, :]) % cols
        return r * cols + c

    def patches(self, Ym: SpectralImage) -> np.ndarray:
        """``(n_h, L_m, n_b)`` stack of patch matrices."""
        if Ym.grid != self.lattice.fine:
            raise DimensionError(f"image grid {Ym.grid.shape} != fine grid {self.lattice.fine.shape}")
        return np.moveaxis(Ym.data[:, self.indices()], 0, 1)


def _difference_matrix(ids) -> np.ndarray:
    ids = np.asarray(ids)
    pairs = np.flatnonzero(np.diff(ids) == 1)
    D = np.zeros((pairs.size, ids.size))
    D[np.arange(pairs.size), pairs] = -1.0
    D[np.arange(pairs.size), pairs + 1] = 1.0
    return D


def _spd_solve(G: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        factor = sla.cho_factor(G, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        eig = np.linalg.eigvalsh(0.5 * (G + G.T))
        raise NumericalError(
            f"{what}: system matrix is not positive definite "
            f"(size {G.shape[0]}, eigenvalues in [{eig[0]:.3e}, {eig[-1]:.3e}])"
        ) from exc
    return sla.cho_solve(factor, rhs)


def estimate_spectral_response(
    Yh: SpectralImage, Ym_degraded: SpectralImage, cfg: CalibConfig
) -> SpectralResponse:
    """Row-wise regularised least squares for ``R``.

    ``Ym_degraded`` must already live on ``Yh``'s grid.  Entries outside the
    overlap mask are fixed to zero.
    """
    if Yh.grid != Ym_degraded.grid:
        raise DimensionError(f"grids differ: {Yh.grid.shape} vs {Ym_degraded.grid.shape}")
    L_m, L_h = Ym_degraded.bands, Yh.bands
    if cfg.overlap_mask is None:
        mask = np.ones((L_m, L_h), dtype=bool)
    else:
        mask = np.asarray(cfg.overlap_mask, dtype=bool)
        if mask.shape != (L_m, L_h):
            raise DimensionError(f"overlap mask shape {mask.shape} != ({L_m}, {L_h})")
    ids = np.arange(L_h) if cfg.band_ids is None else np.asarray(cfg.band_ids)
    if ids.shape != (L_h,):
        raise DimensionError(f"band_ids must have {L_h} entries")
    R = np.zeros((L_m, L_h))
    for i in range(L_m):
        sel = np.flatnonzero(mask[i])
        if sel.size == 0:
            raise ValidationError(f"overlap mask row {i} is empty")
        Yhi = Yh.data[sel]
        D = _difference_matrix(ids[sel])
        G = Yhi @ Yhi.T + cfg.lambda_R * (D.T @ D)
        R[i, sel] = _spd_solve(G, Yhi @ Ym_degraded.data[i], f"spectral response row {i}")
    return SpectralResponse(R, mask)


def _kernel_regularizer(s: int) -> np.ndarray:
    # non-periodic first differences inside the s x s window
    D1 = np.diff(np.eye(s), axis=0)
    Dh = np.kron(np.eye(s), D1)
    Dv = np.kron(D1, np.eye(s))
    return Dh.T @ Dh + Dv.T @ Dv


def blur_normal_equations(
    Yh: SpectralImage, Ym: SpectralImage, R: SpectralResponse, lat: SamplingLattice, cfg: CalibConfig
) -> tuple[np.ndarray, np.ndarray]:
    """System matrix and right-hand side of the unconstrained kernel estimate."""
    if Yh.grid != lat.coarse:
        raise DimensionError(f"hyperspectral grid {Yh.grid.shape} != coarse grid {lat.coarse.shape}")
    if R.matrix.shape != (Ym.bands, Yh.bands):
        raise DimensionError(f"response shape {R.matrix.shape} != ({Ym.bands}, {Yh.bands})")
    P = PatchIndexer(lat, cfg.kernel_support).patches(Ym)
    target = (R.matrix @ Yh.data).T
    G = np.einsum("jla,jlb->ab", P, P) + cfg.lambda_b * _kernel_regularizer(cfg.kernel_support)
    rhs = np.einsum("jla,jl->a", P, target)
    return G, rhs


def estimate_blur_kernel(
    Yh: SpectralImage, Ym: SpectralImage, R: SpectralResponse, lat: SamplingLattice, cfg: CalibConfig
) -> ConvolutionKernel:
    """Relaxed least-squares kernel estimate, then normalised to unit DC gain."""
    G, rhs = blur_normal_equations(Yh, Ym, R, lat, cfg)
    b = _spd_solve(G, rhs, "blur kernel")
    s = cfg.kernel_support
    kernel = ConvolutionKernel(b.reshape(s, s))
    if kernel.dc_gain == 0.0:
        raise NumericalError("estimated kernel has zero DC gain")
    return kernel.normalized()


def _box_blur(img: SpectralImage, support: int) -> SpectralImage:
    kf = kernel_to_frequency(make_kernel("box", support), img.grid)
    return SpectralImage(convolve_cube(img.cube, kf.half_spectrum).reshape(img.bands, -1), img.grid)


def calibrate(
    Yh: SpectralImage, Ym: SpectralImage, lat: SamplingLattice, cfg: CalibConfig
) -> tuple[SpectralResponse, ConvolutionKernel]:
    """Estimate ``(R, b)`` from an observed hyperspectral/multispectral pair."""
    if Ym.grid != lat.fine or Yh.grid != lat.coarse:
        raise DimensionError(
            f"grids {Yh.grid.shape}/{Ym.grid.shape} do not match lattice "
            f"{lat.coarse.shape}/{lat.fine.shape}"
        )
    if cfg.identity_blur:
        if lat.factor != 1:
            raise ValidationError("identity-blur mode needs both images on the same grid")
        R = estimate_spectral_response(Yh, Ym, cfg)
        return R, ConvolutionKernel.delta(cfg.kernel_support)
    hs_support = cfg.hs_blur_support or hs_blur_support(cfg.strong_blur_support, lat.factor)
    Ym_blur = _box_blur(Ym, cfg.strong_blur_support)
    Yh_blur = _box_blur(Yh, hs_support) if hs_support > 1 else Yh
    Ym_coarse = SpectralImage(subsample_cube(Ym_blur.cube, lat).reshape(Ym.bands, -1), lat.coarse)
    R = estimate_spectral_response(Yh_blur, Ym_coarse, cfg)
    kernel = estimate_blur_kernel(Yh, Ym, R, lat, cfg)
    for _ in range(cfg.refine_iters):
        kf = kernel_to_frequency(kernel, Ym.grid)
        YmBM = subsample_cube(convolve_cube(Ym.cube, kf.half_spectrum), lat)
        R = estimate_spectral_response(Yh, SpectralImage(YmBM.reshape(Ym.bands, -1), lat.coarse), cfg)
        kernel = estimate_blur_kernel(Yh, Ym, R, lat, cfg)
    return R, kernel


def consistency_residual(
    Yh: SpectralImage, Ym: SpectralImage, R: SpectralResponse, k: ConvolutionKernel, lat: SamplingLattice
) -> float:
    """``||R Yh - Ym B M||_F / ||R Yh||_F``."""
    lhs = R.matrix @ Yh.data
    kf = kernel_to_frequency(k, Ym.grid)
    rhs = subsample_cube(convolve_cube(Ym.cube, kf.half_spectrum), lat).reshape(Ym.bands, -1)
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs))


def calibration_objective(
    Yh: SpectralImage,
    Ym: SpectralImage,
    R: SpectralResponse,
    k: ConvolutionKernel,
    lat: SamplingLattice,
    cfg: CalibConfig,
) -> float:
    """Joint regularised objective minimised (approximately) by :func:`calibrate`."""
    lhs = R.matrix @ Yh.data
    kf = kernel_to_frequency(k, Ym.grid)
    rhs = subsample_cube(convolve_cube(Ym.cube, kf.half_spectrum), lat).reshape(Ym.bands, -1)
    b = k.weights.ravel()
    value = float(np.sum((lhs - rhs) ** 2)) + cfg.lambda_b * float(b @ _kernel_regularizer(k.support) @ b)
    ids = np.arange(Yh.bands) if cfg.band_ids is None else np.asarray(cfg.band_ids)
    for i in range(R.n_ms):
        sel = np.flatnonzero(R.overlap_mask[i])
        D = _difference_matrix(ids[sel])
        value += cfg.lambda_R * float(np.sum((D @ R.matrix[i, sel]) ** 2))
    return value
