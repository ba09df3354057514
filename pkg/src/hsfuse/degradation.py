"""Forward observation model and a synthetic scene generator.

Ground truth is built under the linear mixing model from seeded smooth
endmember signatures and geometric shapes.  The hyperspectral observation is
``Z B M`` (blur then decimate) plus noise, the multispectral one ``R Z`` plus
noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateError, DimensionError, ValidationError
from .imaging import (
    ConvolutionKernel,
    Grid,
    SamplingLattice,
    SpectralImage,
    convolve_cube,
    kernel_to_frequency,
    subsample_cube,
)

__all__ = [
    "SpectralResponse",
    "Shape",
    "SceneSpec",
    "NoiseSpec",
    "STARCK_MURTAGH",
    "synthesize_scene",
    "random_scene_spec",
    "make_kernel",
    "degrade_spatial",
    "degrade_spectral",
    "boxcar_response",
    "wavelength_ranges",
    "IKONOS_PAN_UM",
    "IKONOS_MS_UM",
    "add_noise_snr",
    "SyntheticDataset",
    "simulate",
]

# Separable cubic B-spline filter: outer product of [1, 4, 6, 4, 1] / 16.
_B3 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
STARCK_MURTAGH = np.outer(_B3, _B3)
STARCK_MURTAGH.flags.writeable = False

IKONOS_PAN_UM = [(0.45, 0.90)]
IKONOS_MS_UM = [(0.45, 0.52), (0.52, 0.60), (0.63, 0.69), (0.76, 0.90)]


@dataclass(frozen=True, eq=False)
class SpectralResponse:
    """``L_m x L_h`` spectral response with the band-overlap pattern."""

    matrix: np.ndarray
    overlap_mask: np.ndarray | None = None

    def __post_init__(self):
        R = np.array(self.matrix, dtype=np.float64)
        if R.ndim != 2:
            raise DimensionError(f"response must be a matrix, got shape {R.shape}")
        if not np.all(np.isfinite(R)):
            raise ValidationError("response contains non-finite values")
        if self.overlap_mask is None:
            mask = np.ones(R.shape, dtype=bool)
        else:
            mask = np.array(self.overlap_mask, dtype=bool)
            if mask.shape != R.shape:
                raise DimensionError(f"overlap mask shape {mask.shape} != response shape {R.shape}")
        empty = np.flatnonzero(~mask.any(axis=1))
        if empty.size:
            raise ValidationError(f"rows {empty.tolist()} of the overlap mask are empty")
        if np.any(R[~mask] != 0.0):
            raise ValidationError("response has nonzero entries outside the overlap mask")
        R.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "matrix", R)
        object.__setattr__(self, "overlap_mask", mask)

    @property
    def n_ms(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_hs(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class Shape:
    """A rectangle ``(top, left, height, width)`` or disk ``(row, col, radius)``."""

    kind: str
    params: tuple
    abundances: tuple

    def footprint(self, grid: Grid) -> np.ndarray:
        rr, cc = np.mgrid[: grid.rows, : grid.cols]
        if self.kind == "rect":
            top, left, h, w = self.params
            if h <= 0 or w <= 0 or top < 0 or left < 0 or top + h > grid.rows or left + w > grid.cols:
                raise ValidationError(f"rectangle {self.params} does not fit grid {grid.shape}")
            return (rr >= top) & (rr < top + h) & (cc >= left) & (cc < left + w)
        if self.kind == "disk":
            r0, c0, rad = self.params
            if rad <= 0 or r0 - rad < 0 or c0 - rad < 0 or r0 + rad > grid.rows - 1 or c0 + rad > grid.cols - 1:
                raise ValidationError(f"disk {self.params} does not fit grid {grid.shape}")
            return (rr - r0) ** 2 + (cc - c0) ** 2 <= rad**2
        raise ValidationError(f"unknown shape kind {self.kind!r}")


@dataclass(frozen=True)
class SceneSpec:
    grid: Grid
    n_endmembers: int
    shapes: tuple = ()
    seed: int = 0
    L_h: int = 100
    background: tuple | None = None


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float
    seed: int = 0

    def __post_init__(self):
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValidationError(f"invalid SNR {self.snr_db}")


def _abundance_vector(values, p: int) -> np.ndarray:
    a = np.asarray(values, dtype=np.float64)
    if a.shape != (p,):
        raise ValidationError(f"abundance vector must have {p} entries, got {a.shape}")
    if np.any(a < 0):
        raise ValidationError("abundances must be nonnegative")
    total = a.sum()
    if abs(total - 1.0) > 1e-9:
        raise ValidationError(f"abundances must sum to 1, got {total}")
    return a / total


def smooth_signatures(L_h: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """``L_h x p`` matrix of random smooth spectra with entries in ``[0, 1]``."""
    t = np.linspace(0.0, 1.0, L_h)
    out = np.empty((L_h, p))
    for k in range(p):
        n_bumps = rng.integers(3, 7)
        centers = rng.uniform(-0.1, 1.1, n_bumps)
        widths = rng.uniform(0.04, 0.25, n_bumps)
        heights = rng.uniform(0.2, 1.0, n_bumps)
        sig = 0.05 + (heights * np.exp(-0.5 * ((t[:, None] - centers) / widths) ** 2)).sum(axis=1)
        out[:, k] = sig / sig.max() * rng.uniform(0.5, 1.0)
    return out


def synthesize_scene(spec: SceneSpec) -> tuple[SpectralImage, np.ndarray, SpectralImage]:
    """Build ``Z = endmembers @ abundances`` for a shape-based scene.

    Later shapes paint over earlier ones; uncovered pixels take the
    background abundances (pure first endmember by default).
    """
    p = int(spec.n_endmembers)
    if p < 1:
        raise ValidationError("need at least one endmember")
    rng = np.random.default_rng(spec.seed)
    endmembers = smooth_signatures(spec.L_h, p, rng)
    bg = np.eye(p)[0] if spec.background is None else _abundance_vector(spec.background, p)
    ab = np.repeat(bg[:, None], spec.grid.n, axis=1)
    for shape in spec.shapes:
        a = _abundance_vector(shape.abundances, p)
        where = shape.footprint(spec.grid).ravel()
        ab[:, where] = a[:, None]
    abundances = SpectralImage(ab, spec.grid)
    Z = SpectralImage(endmembers @ ab, spec.grid)
    return Z, endmembers, abundances


def random_scene_spec(
    grid: Grid, n_endmembers: int = 5, L_h: int = 100, seed: int = 0, n_shapes: int = 14
) -> SceneSpec:
    """Seeded layout of rectangles and disks, half pure materials, half mixtures."""
    rng = np.random.default_rng([seed, 1])
    p = n_endmembers
    shapes = []
    lo = max(3, min(grid.shape) // 12)
    hi = max(lo + 1, min(grid.shape) // 3)
    for i in range(n_shapes):
        if i % 2 == 0:
            ab = np.eye(p)[rng.integers(p)]
        else:
            ab = rng.dirichlet(np.ones(p))
        if rng.random() < 0.5:
            h, w = rng.integers(lo, hi, 2)
            top = int(rng.integers(0, grid.rows - h + 1))
            left = int(rng.integers(0, grid.cols - w + 1))
            shapes.append(Shape("rect", (top, left, int(h), int(w)), tuple(ab)))
        else:
            rad = int(rng.integers(lo // 2 + 1, hi // 2 + 2))
            r0 = int(rng.integers(rad, grid.rows - rad))
            c0 = int(rng.integers(rad, grid.cols - rad))
            shapes.append(Shape("disk", (r0, c0, rad), tuple(ab)))
    background = tuple(np.full(p, 1.0 / p))
    return SceneSpec(grid, p, tuple(shapes), seed, L_h, background)


def make_kernel(kind: str, support: int = 5, sigma: float = 2.0) -> ConvolutionKernel:
    """Normalised blur kernel: ``"box"``, ``"gaussian"`` or ``"starck_murtagh"``."""
    if kind == "starck_murtagh":
        return ConvolutionKernel(STARCK_MURTAGH).normalized()
    if support < 1 or support % 2 == 0:
        raise ValidationError(f"kernel support must be odd, got {support}")
    if kind == "box":
        return ConvolutionKernel(np.full((support, support), 1.0 / support**2))
    if kind == "gaussian":
        if sigma <= 0:
            raise ValidationError(f"sigma must be positive, got {sigma}")
        x = np.arange(support) - support // 2
        g = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2.0 * sigma**2))
        return ConvolutionKernel(g).normalized()
    raise ValidationError(f"unknown kernel kind {kind!r}")


def degrade_spatial(Z: SpectralImage, k: ConvolutionKernel, lat: SamplingLattice) -> SpectralImage:
    """Noiseless hyperspectral observation ``Z B M``."""
    if Z.grid != lat.fine:
        raise DimensionError(f"image grid {Z.grid.shape} != lattice fine grid {lat.fine.shape}")
    kf = kernel_to_frequency(k, Z.grid)
    blurred = convolve_cube(Z.cube, kf.half_spectrum)
    return SpectralImage(subsample_cube(blurred, lat).reshape(Z.bands, -1), lat.coarse)


def degrade_spectral(Z: SpectralImage, R: SpectralResponse) -> SpectralImage:
    """Noiseless multispectral observation ``R Z``."""
    if Z.bands != R.n_hs:
        raise DimensionError(f"image has {Z.bands} bands, response expects {R.n_hs}")
    return SpectralImage(R.matrix @ Z.data, Z.grid)


def boxcar_response(
    L_h: int, ranges: Sequence[tuple[int, int]], weights: Sequence[float] | None = None
) -> SpectralResponse:
    """Rows uniform over half-open band intervals ``[start, stop)``, each summing to 1.

    ``weights`` optionally gives a per-hyperspectral-band sensitivity that
    multiplies the boxcar before row normalisation.
    """
    w = np.ones(L_h) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (L_h,):
        raise DimensionError(f"weights must have {L_h} entries")
    R = np.zeros((len(ranges), L_h))
    mask = np.zeros_like(R, dtype=bool)
    for i, (start, stop) in enumerate(ranges):
        start, stop = int(start), int(stop)
        if not 0 <= start < stop <= L_h:
            raise ValidationError(f"band interval [{start}, {stop}) is empty or outside [0, {L_h})")
        mask[i, start:stop] = True
        row = np.where(mask[i], w, 0.0)
        if row.sum() <= 0:
            raise ValidationError(f"interval [{start}, {stop}) has zero total weight")
        R[i] = row / row.sum()
    return SpectralResponse(R, mask)


def wavelength_ranges(
    L_h: int, intervals_um: Sequence[tuple[float, float]], span_um: tuple[float, float] = (0.4, 2.5)
) -> list[tuple[int, int]]:
    """Map wavelength intervals to band-index intervals for evenly spaced bands."""
    wl = np.linspace(span_um[0], span_um[1], L_h)
    out = []
    for lo, hi in intervals_um:
        idx = np.flatnonzero((wl >= lo) & (wl <= hi))
        if idx.size == 0:
            raise ValidationError(f"no band falls in [{lo}, {hi}] um")
        out.append((int(idx[0]), int(idx[-1]) + 1))
    return out


def add_noise_snr(img: SpectralImage, spec: NoiseSpec) -> SpectralImage:
    """Add i.i.d. Gaussian noise at the requested SNR (``inf`` means no noise)."""
    if spec.snr_db == math.inf:
        return img
    power = float(np.mean(img.data**2))
    if power == 0.0:
        raise DegenerateError("SNR is undefined for an all-zero image")
    sigma = math.sqrt(power * 10.0 ** (-spec.snr_db / 10.0))
    rng = np.random.default_rng(spec.seed)
    return img.with_data(img.data + sigma * rng.standard_normal(img.data.shape))


@dataclass
class SyntheticDataset:
    Z: SpectralImage
    Yh: SpectralImage
    Ym: SpectralImage
    response: SpectralResponse
    kernel: ConvolutionKernel
    lattice: SamplingLattice
    endmembers: np.ndarray
    abundances: SpectralImage
    params: dict = field(default_factory=dict)


def simulate(
    rows: int = 128,
    cols: int = 128,
    L_h: int = 100,
    n_endmembers: int = 5,
    factor: int = 4,
    kernel: str = "starck_murtagh",
    kernel_support: int = 5,
    sigma: float = 2.0,
    sensor: str = "pan",
    snr_h: float = 30.0,
    snr_m: float = 40.0,
    seed: int = 0,
) -> SyntheticDataset:
    """Synthetic HSI/MSI (or PAN) pair following the shape-scene protocol.

    ``sensor`` is ``"pan"`` (one band over 0.45-0.90 um) or ``"ms"`` (four
    IKONOS-like boxcars); bands are assumed evenly spaced over 0.4-2.5 um.
    """
    grid = Grid(rows, cols)
    spec = random_scene_spec(grid, n_endmembers, L_h, seed)
    Z, endmembers, abundances = synthesize_scene(spec)
    k = make_kernel(kernel, kernel_support, sigma)
    lat = SamplingLattice(grid, factor)
    if sensor == "pan":
        intervals = IKONOS_PAN_UM
    elif sensor == "ms":
        intervals = IKONOS_MS_UM
    else:
        raise ValidationError(f"sensor must be 'pan' or 'ms', got {sensor!r}")
    R = boxcar_response(L_h, wavelength_ranges(L_h, intervals))
    Yh = add_noise_snr(degrade_spatial(Z, k, lat), NoiseSpec(snr_h, seed + 1))
    Ym = add_noise_snr(degrade_spectral(Z, R), NoiseSpec(snr_m, seed + 2))
    params = dict(
        rows=rows, cols=cols, L_h=L_h, n_endmembers=n_endmembers, factor=factor, kernel=kernel,
        kernel_support=kernel_support, sigma=sigma, sensor=sensor, snr_h=snr_h, snr_m=snr_m, seed=seed,
    )
    return SyntheticDataset(Z, Yh, Ym, R, k, lat, endmembers, abundances, params)
