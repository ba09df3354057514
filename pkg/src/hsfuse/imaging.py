"""Spectral image container and the periodic linear operators built on it.

Images are stored band-major: an ``L``-band image on a ``rows x cols`` grid is
an ``L x (rows*cols)`` matrix whose rows are bands with pixels in row-major
order.  All spatial operators assume periodic boundaries, so convolution and
finite differences are diagonalised by the 2-D DFT.

Each public operator has an ``*_cube`` twin that works directly on
``(L, rows, cols)`` arrays; the solver uses those to avoid re-validating
images inside its loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import DimensionError, ValidationError

__all__ = [
    "Grid",
    "SpectralImage",
    "ConvolutionKernel",
    "FrequencyField",
    "SamplingLattice",
    "cyclic_convolve",
    "diff_h",
    "diff_v",
    "subsample",
    "upsample_zero",
    "kernel_to_frequency",
    "inner",
]


@dataclass(frozen=True)
class Grid:
    rows: int
    cols: int

    def __post_init__(self):
        for name in ("rows", "cols"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ValidationError(f"grid {name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))

    @property
    def n(self) -> int:
        return self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)


def _frozen_copy(values, ndim, what):
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionError(f"{what} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class SpectralImage:
    """An ``L``-band image held as an ``L x n`` matrix plus its grid."""

    data: np.ndarray
    grid: Grid

    def __post_init__(self):
        data = _frozen_copy(self.data, 2, "image data")
        if data.shape[0] < 1:
            raise DimensionError("image must have at least one band")
        if data.shape[1] != self.grid.n:
            raise DimensionError(
                f"image has {data.shape[1]} pixels per band, grid {self.grid.shape} needs {self.grid.n}"
            )
        object.__setattr__(self, "data", data)

    @classmethod
    def from_cube(cls, cube) -> "SpectralImage":
        cube = np.asarray(cube, dtype=np.float64)
        if cube.ndim == 2:
            cube = cube[None]
        if cube.ndim != 3:
            raise DimensionError(f"cube must be (bands, rows, cols), got shape {cube.shape}")
        bands, rows, cols = cube.shape
        return cls(cube.reshape(bands, rows * cols), Grid(rows, cols))

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def cube(self) -> np.ndarray:
        """Read-only ``(bands, rows, cols)`` view of the data."""
        return self.data.reshape(self.bands, self.grid.rows, self.grid.cols)

    def with_data(self, data) -> "SpectralImage":
        return SpectralImage(data, self.grid)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


def inner(a: SpectralImage, b: SpectralImage) -> float:
    """Frobenius inner product of two same-shaped images."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"shape mismatch {a.data.shape} vs {b.data.shape}")
    return float(np.vdot(a.data, b.data))


@dataclass(frozen=True, eq=False)
class ConvolutionKernel:
    """Square blur kernel of odd support, centred at ``((s-1)/2, (s-1)/2)``."""

    weights: np.ndarray

    def __post_init__(self):
        w = _frozen_copy(self.weights, 2, "kernel weights")
        s0, s1 = w.shape
        if s0 != s1:
            raise ValidationError(f"kernel must be square, got {w.shape}")
        if s0 % 2 == 0:
            raise ValidationError(f"kernel support must be odd, got {s0}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def delta(cls, support: int = 1) -> "ConvolutionKernel":
        if support < 1 or support % 2 == 0:
            raise ValidationError(f"kernel support must be odd, got {support}")
        w = np.zeros((support, support))
        w[support // 2, support // 2] = 1.0
        return cls(w)

    @property
    def support(self) -> int:
        return self.weights.shape[0]

    @property
    def half(self) -> int:
        return self.support // 2

    @property
    def dc_gain(self) -> float:
        return float(self.weights.sum())

    def normalized(self) -> "ConvolutionKernel":
        gain = self.dc_gain
        if gain == 0.0:
            raise ValidationError("cannot normalise a kernel with zero DC gain")
        return ConvolutionKernel(self.weights / gain)

    def padded(self, support: int) -> "ConvolutionKernel":
        """Zero-pad (centred) to a larger odd support."""
        if support < self.support or (support - self.support) % 2:
            raise ValidationError(f"cannot pad support {self.support} to {support}")
        off = (support - self.support) // 2
        w = np.zeros((support, support))
        w[off:off + self.support, off:off + self.support] = self.weights
        return ConvolutionKernel(w)


@dataclass(frozen=True, eq=False)
class FrequencyField:
    """Full 2-D DFT of a cyclically embedded kernel."""

    grid: Grid
    values: np.ndarray

    @property
    def half_spectrum(self) -> np.ndarray:
        # kernels are real, so the rfft2 half plane carries everything
        return self.values[:, : self.grid.cols // 2 + 1]


@dataclass(frozen=True)
class SamplingLattice:
    fine: Grid
    factor: int
    phase: tuple[int, int] = (0, 0)

    def __post_init__(self):
        d = self.factor
        if isinstance(d, bool) or int(d) != d or d < 1:
            raise ValidationError(f"sampling factor must be a positive integer, got {d!r}")
        d = int(d)
        object.__setattr__(self, "factor", d)
        if self.fine.rows % d or self.fine.cols % d:
            raise DimensionError(f"grid {self.fine.shape} is not divisible by factor {d}")
        pr, pc = (int(p) for p in self.phase)
        if not (0 <= pr < d and 0 <= pc < d):
            raise ValidationError(f"phase {self.phase} must lie in [0, {d})")
        object.__setattr__(self, "phase", (pr, pc))

    @property
    def coarse(self) -> Grid:
        return Grid(self.fine.rows // self.factor, self.fine.cols // self.factor)

    def mask(self) -> np.ndarray:
        """Boolean ``(rows, cols)`` array, true on lattice sites."""
        m = np.zeros(self.fine.shape, dtype=bool)
        m[self.phase[0]::self.factor, self.phase[1]::self.factor] = True
        return m

    def fine_index(self, i, j):
        """Fine-grid (row, col) of coarse pixel ``(i, j)``."""
        d = self.factor
        return i * d + self.phase[0], j * d + self.phase[1]


# -- array-level operators ---------------------------------------------------


def embed_kernel(k: ConvolutionKernel, grid: Grid) -> np.ndarray:
    """Place ``k`` on ``grid`` with its centre at index (0, 0), wrapping negative offsets."""
    s = k.support
    if s > min(grid.rows, grid.cols):
        raise DimensionError(f"kernel support {s} exceeds grid {grid.shape}")
    img = np.zeros(grid.shape)
    img[:s, :s] = k.weights
    return np.roll(img, (-k.half, -k.half), axis=(0, 1))


def kernel_to_frequency(k: ConvolutionKernel, g: Grid) -> FrequencyField:
    values = sfft.fft2(embed_kernel(k, g))
    values.flags.writeable = False
    return FrequencyField(g, values)


def convolve_cube(cube: np.ndarray, half_spectrum: np.ndarray, adjoint: bool = False) -> np.ndarray:
    shape = cube.shape[-2:]
    spec = sfft.rfft2(cube, axes=(-2, -1))
    spec *= np.conj(half_spectrum) if adjoint else half_spectrum
    return sfft.irfft2(spec, s=shape, axes=(-2, -1))


def diff_h_cube(cube: np.ndarray, adjoint: bool = False) -> np.ndarray:
    if adjoint:
        return np.roll(cube, 1, axis=-1) - cube
    return np.roll(cube, -1, axis=-1) - cube


def diff_v_cube(cube: np.ndarray, adjoint: bool = False) -> np.ndarray:
    if adjoint:
        return np.roll(cube, 1, axis=-2) - cube
    return np.roll(cube, -1, axis=-2) - cube


def subsample_cube(cube: np.ndarray, lat: SamplingLattice) -> np.ndarray:
    d = lat.factor
    pr, pc = lat.phase
    return cube[..., pr::d, pc::d]


def upsample_cube(cube: np.ndarray, lat: SamplingLattice) -> np.ndarray:
    out = np.zeros(cube.shape[:-2] + lat.fine.shape)
    d = lat.factor
    pr, pc = lat.phase
    out[..., pr::d, pc::d] = cube
    return out


def diff_symbols(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """rfft2 symbols of the horizontal and vertical forward differences."""
    fc = sfft.rfftfreq(grid.cols)
    fr = sfft.fftfreq(grid.rows)
    dh = np.exp(2j * np.pi * fc)[None, :] - 1.0
    dv = np.exp(2j * np.pi * fr)[:, None] - 1.0
    return np.broadcast_to(dh, (grid.rows, fc.size)), np.broadcast_to(dv, (grid.rows, fc.size))


# -- image-level operators ---------------------------------------------------


def cyclic_convolve(img: SpectralImage, kf: FrequencyField, adjoint: bool = False) -> SpectralImage:
    """Convolve every band with the kernel behind ``kf`` (periodic boundaries).

    With ``adjoint=True`` the conjugate filter is applied instead, i.e. the
    image is multiplied by ``B^T`` rather than ``B``.
    """
    if img.grid != kf.grid:
        raise DimensionError(f"image grid {img.grid.shape} != frequency grid {kf.grid.shape}")
    out = convolve_cube(img.cube, kf.half_spectrum, adjoint)
    return SpectralImage(out.reshape(img.bands, -1), img.grid)


def diff_h(img: SpectralImage, adjoint: bool = False) -> SpectralImage:
    """Cyclic horizontal difference ``x[r, c+1] - x[r, c]`` (or its transpose)."""
    return SpectralImage(diff_h_cube(img.cube, adjoint).reshape(img.bands, -1), img.grid)


def diff_v(img: SpectralImage, adjoint: bool = False) -> SpectralImage:
    """Cyclic vertical difference ``x[r+1, c] - x[r, c]`` (or its transpose)."""
    return SpectralImage(diff_v_cube(img.cube, adjoint).reshape(img.bands, -1), img.grid)


def subsample(img: SpectralImage, lat: SamplingLattice) -> SpectralImage:
    if img.grid != lat.fine:
        raise DimensionError(f"image grid {img.grid.shape} != lattice fine grid {lat.fine.shape}")
    out = subsample_cube(img.cube, lat)
    return SpectralImage(out.reshape(img.bands, -1), lat.coarse)


def upsample_zero(img: SpectralImage, lat: SamplingLattice) -> SpectralImage:
    if img.grid != lat.coarse:
        raise DimensionError(f"image grid {img.grid.shape} != lattice coarse grid {lat.coarse.shape}")
    out = upsample_cube(img.cube, lat)
    return SpectralImage(out.reshape(img.bands, -1), lat.fine)
