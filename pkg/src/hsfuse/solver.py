"""Subspace-constrained ADMM fusion with vector total variation.

The fused image is ``Z = E X`` where ``X`` (``L_s`` bands on the fine grid)
minimises::

    1/2 ||Yh - E X B M||^2 + lambda_m/2 ||Ym - R E X||^2 + lambda_phi * VTV(X Dh, X Dv)

The variable splitting ``V1 = X B, V2 = X, V3 = X Dh, V4 = X Dv`` gives an
``X`` step that is a single FFT-domain division, a ``V1`` step that separates
on and off the sampling lattice, a small dense solve for ``V2`` and a
pixel-wise vector soft threshold for ``(V3, V4)``.  Duals ``A1..A4`` are
scaled and updated by subtracting the constraint residuals.

Images inside the loop are plain ``(L_s, rows, cols)`` arrays.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.fft as sfft

from .degradation import SpectralResponse
from .errors import DimensionError, DivergenceError, ValidationError
from .imaging import (
    ConvolutionKernel,
    FrequencyField,
    SamplingLattice,
    SpectralImage,
    diff_h_cube,
    diff_symbols,
    diff_v_cube,
    kernel_to_frequency,
    subsample_cube,
)
from .subspace import Subspace

__all__ = [
    "FusionProblem",
    "SolverConfig",
    "SolverState",
    "PrecomputedFactors",
    "Trace",
    "FusionResult",
    "vtv",
    "objective",
    "precompute",
    "apply_H",
    "apply_H_adjoint",
    "initial_state",
    "update_X",
    "update_V1",
    "update_V2",
    "update_V3V4",
    "update_duals",
    "constraint_residuals",
    "run_admm",
    "solve",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FusionProblem:
    Yh: SpectralImage
    Ym: SpectralImage
    subspace: Subspace
    response: SpectralResponse
    kernel: ConvolutionKernel
    lattice: SamplingLattice

    def __post_init__(self):
        L_h = self.subspace.n_bands
        if self.Yh.bands != L_h or self.response.n_hs != L_h:
            raise DimensionError(
                f"band mismatch: Yh {self.Yh.bands}, subspace {L_h}, response {self.response.n_hs}"
            )
        if self.Ym.bands != self.response.n_ms:
            raise DimensionError(f"Ym has {self.Ym.bands} bands, response has {self.response.n_ms} rows")
        if self.Ym.grid != self.lattice.fine or self.Yh.grid != self.lattice.coarse:
            raise DimensionError(
                f"grids Yh {self.Yh.grid.shape} / Ym {self.Ym.grid.shape} do not match lattice "
                f"{self.lattice.coarse.shape} / {self.lattice.fine.shape}"
            )
        if self.kernel.support > min(self.lattice.fine.shape):
            raise DimensionError("kernel support exceeds the fine grid")


@dataclass(frozen=True)
class SolverConfig:
    """ADMM parameters.  ``rel_tol=0`` disables residual-based stopping."""

    lambda_m: float = 1.0
    lambda_phi: float = 1e-2
    mu: float = 5e-2
    max_iters: int = 200
    rel_tol: float = 1e-4
    abs_tol: float = 0.0
    track_objective: bool = True

    def __post_init__(self):
        if not self.mu > 0:
            raise ValidationError(f"mu must be positive, got {self.mu}")
        if self.lambda_m < 0 or self.lambda_phi < 0:
            raise ValidationError("regularisation weights must be nonnegative")
        if self.max_iters < 0 or self.rel_tol < 0 or self.abs_tol < 0:
            raise ValidationError("max_iters and tolerances must be nonnegative")

    @classmethod
    def for_sensor(cls, sensor: str, **overrides) -> "SolverConfig":
        """Defaults for fusing with a panchromatic (``"pan"``) or multispectral (``"ms"``) image."""
        lam = {"pan": 1e-2, "ms": 5e-4}
        if sensor not in lam:
            raise ValidationError(f"sensor must be 'pan' or 'ms', got {sensor!r}")
        return cls(**{"lambda_phi": lam[sensor], **overrides})


@dataclass
class SolverState:
    X: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    V3: np.ndarray
    V4: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    A3: np.ndarray
    A4: np.ndarray

    def __post_init__(self):
        shapes = {getattr(self, n).shape for n in self.names()}
        if len(shapes) != 1 or len(next(iter(shapes))) != 3:
            raise DimensionError(f"state arrays must share one (L_s, rows, cols) shape, got {shapes}")

    @staticmethod
    def names():
        return ("X", "V1", "V2", "V3", "V4", "A1", "A2", "A3", "A4")

    @property
    def V(self):
        return (self.V1, self.V2, self.V3, self.V4)

    @property
    def A(self):
        return (self.A1, self.A2, self.A3, self.A4)

    def copy(self) -> "SolverState":
        return SolverState(*(getattr(self, n).copy() for n in self.names()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, n))) for n in self.names())


@dataclass(frozen=True, eq=False)
class PrecomputedFactors:
    """Everything in the ADMM steps that does not change across iterations."""

    kernel_field: FrequencyField
    inverse_filter: np.ndarray  # rfft2 half plane of 1 / (|B|^2 + 1 + |Dh|^2 + |Dv|^2)
    dh_symbol: np.ndarray
    dv_symbol: np.ndarray
    v1_inverse: np.ndarray  # [E^T E + mu I]^-1
    EtYh: np.ndarray  # coarse grid
    v2_inverse: np.ndarray  # [lambda_m E^T R^T R E + mu I]^-1
    v2_data: np.ndarray  # lambda_m E^T R^T Ym
    lattice: SamplingLattice
    mu: float
    lambda_phi: float

    @property
    def kernel_half(self) -> np.ndarray:
        return self.kernel_field.half_spectrum

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.v1_inverse.shape[0],) + self.lattice.fine.shape


@dataclass
class Trace:
    objective: list = field(default_factory=list)
    primal_res: list = field(default_factory=list)
    dual_res: list = field(default_factory=list)
    primal_rel: list = field(default_factory=list)
    dual_rel: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.primal_res)

    @property
    def iterations(self) -> int:
        return len(self)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "objective", "primal_res", "dual_res", "seconds"])
            for i in range(len(self)):
                obj = self.objective[i] if self.objective else float("nan")
                w.writerow([i + 1, repr(obj), repr(self.primal_res[i]), repr(self.dual_res[i]), repr(self.seconds[i])])


class FusionResult(NamedTuple):
    Z_hat: SpectralImage
    X: SpectralImage
    trace: Trace


# -- regulariser and objective ---------------------------------------------


def _vtv_cube(xh: np.ndarray, xv: np.ndarray) -> float:
    return float(np.sum(np.sqrt(np.sum(xh**2 + xv**2, axis=0))))


def vtv(Xh: SpectralImage, Xv: SpectralImage) -> float:
    """Sum over pixels of the Euclidean norm of the stacked differences across bands."""
    if Xh.data.shape != Xv.data.shape:
        raise DimensionError(f"shape mismatch {Xh.data.shape} vs {Xv.data.shape}")
    return _vtv_cube(Xh.data, Xv.data)


def _objective_terms(X, XB, XDh, XDv, problem, lambda_m, lambda_phi):
    E = problem.subspace.basis
    L_s = X.shape[0]
    fit_h = problem.Yh.data - E @ subsample_cube(XB, problem.lattice).reshape(L_s, -1)
    RE = problem.response.matrix @ E
    fit_m = problem.Ym.data - RE @ X.reshape(L_s, -1)
    value = 0.5 * float(np.sum(fit_h**2)) + 0.5 * lambda_m * float(np.sum(fit_m**2))
    if lambda_phi:
        value += lambda_phi * _vtv_cube(XDh, XDv)
    return value


def objective(X: SpectralImage, p: FusionProblem, c: SolverConfig) -> float:
    """Value of the fusion objective at coefficients ``X``."""
    if X.bands != p.subspace.dim or X.grid != p.lattice.fine:
        raise DimensionError(f"X must have {p.subspace.dim} bands on grid {p.lattice.fine.shape}")
    kf = kernel_to_frequency(p.kernel, X.grid)
    cube = X.cube
    XB = sfft.irfft2(sfft.rfft2(cube) * kf.half_spectrum, s=X.grid.shape)
    return _objective_terms(cube, XB, diff_h_cube(cube), diff_v_cube(cube), p, c.lambda_m, c.lambda_phi)


# -- precomputation ----------------------------------------------------------


def precompute(p: FusionProblem, c: SolverConfig) -> PrecomputedFactors:
    grid = p.lattice.fine
    E = p.subspace.basis
    L_s = E.shape[1]
    kf = kernel_to_frequency(p.kernel, grid)
    dh, dv = diff_symbols(grid)
    symbol = np.abs(kf.half_spectrum) ** 2 + 1.0 + np.abs(dh) ** 2 + np.abs(dv) ** 2
    inverse_filter = 1.0 / symbol
    eye = np.eye(L_s)
    v1_inverse = np.linalg.inv(E.T @ E + c.mu * eye)
    EtYh = (E.T @ p.Yh.data).reshape((L_s,) + p.lattice.coarse.shape)
    RE = p.response.matrix @ E
    v2_inverse = np.linalg.inv(c.lambda_m * RE.T @ RE + c.mu * eye)
    v2_data = (c.lambda_m * RE.T @ p.Ym.data).reshape((L_s,) + grid.shape)
    return PrecomputedFactors(
        kernel_field=kf,
        inverse_filter=inverse_filter,
        dh_symbol=dh,
        dv_symbol=dv,
        v1_inverse=v1_inverse,
        EtYh=EtYh,
        v2_inverse=v2_inverse,
        v2_data=v2_data,
        lattice=p.lattice,
        mu=c.mu,
        lambda_phi=c.lambda_phi,
    )


# -- the stacked operator H = [B; I; Dh; Dv] ---------------------------------


def _fft(cube):
    return sfft.rfft2(cube, axes=(-2, -1))


def _ifft(spec, shape):
    return sfft.irfft2(spec, s=shape, axes=(-2, -1))


def apply_H(X: np.ndarray, f: PrecomputedFactors) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``(X B, X, X Dh, X Dv)``."""
    XB = _ifft(_fft(X) * f.kernel_half, X.shape[-2:])
    return XB, X, diff_h_cube(X), diff_v_cube(X)


def apply_H_adjoint(W1, W2, W3, W4, f: PrecomputedFactors) -> np.ndarray:
    """``W1 B^T + W2 + W3 Dh^T + W4 Dv^T``."""
    spec = _fft(W1) * np.conj(f.kernel_half)
    out = _ifft(spec, W1.shape[-2:])
    return out + W2 + diff_h_cube(W3, adjoint=True) + diff_v_cube(W4, adjoint=True)


# -- ADMM steps ---------------------------------------------------------------


def update_X(state: SolverState, f: PrecomputedFactors) -> np.ndarray:
    """Minimise the augmented Lagrangian over ``X`` by FFT-domain division."""
    spec = _fft(state.V1 + state.A1) * np.conj(f.kernel_half)
    spec += _fft(state.V2 + state.A2)
    spec += _fft(state.V3 + state.A3) * np.conj(f.dh_symbol)
    spec += _fft(state.V4 + state.A4) * np.conj(f.dv_symbol)
    spec *= f.inverse_filter
    return _ifft(spec, state.X.shape[-2:])


def _band_apply(M: np.ndarray, cube: np.ndarray) -> np.ndarray:
    return np.tensordot(M, cube, axes=(1, 0))


def update_V1(state: SolverState, f: PrecomputedFactors, XB: np.ndarray | None = None) -> np.ndarray:
    """Data-fit step for the blurred variable, split on/off the sampling lattice."""
    if XB is None:
        XB = apply_H(state.X, f)[0]
    W = XB - state.A1
    V1 = W.copy()
    d = f.lattice.factor
    pr, pc = f.lattice.phase
    on = W[:, pr::d, pc::d]
    V1[:, pr::d, pc::d] = _band_apply(f.v1_inverse, f.EtYh + f.mu * on)
    return V1


def update_V2(state: SolverState, f: PrecomputedFactors) -> np.ndarray:
    """Data-fit step for the multispectral term."""
    return _band_apply(f.v2_inverse, f.v2_data + f.mu * (state.X - state.A2))


def vector_soft_threshold(C3: np.ndarray, C4: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Prox of ``tau * sum_j ||[C3[:, j]; C4[:, j]]||`` (shrink each pixel's stacked vector)."""
    norm = np.sqrt(np.sum(C3**2, axis=0) + np.sum(C4**2, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norm > tau, 1.0 - tau / norm, 0.0)
    return C3 * scale, C4 * scale


def update_V3V4(
    state: SolverState, f: PrecomputedFactors, XDh: np.ndarray | None = None, XDv: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    if XDh is None:
        XDh = diff_h_cube(state.X)
    if XDv is None:
        XDv = diff_v_cube(state.X)
    return vector_soft_threshold(XDh - state.A3, XDv - state.A4, f.lambda_phi / f.mu)


def constraint_residuals(state: SolverState, f: PrecomputedFactors, HX=None) -> tuple:
    """``H X - V`` for each of the four splittings."""
    HX = apply_H(state.X, f) if HX is None else HX
    return tuple(hx - v for hx, v in zip(HX, state.V))


def update_duals(state: SolverState, f: PrecomputedFactors, HX=None) -> tuple:
    """``A_k - (H_k X - V_k)`` for k = 1..4."""
    res = constraint_residuals(state, f, HX)
    return tuple(a - r for a, r in zip(state.A, res))


def initial_state(p: FusionProblem, f: PrecomputedFactors) -> SolverState:
    """Zero-order-hold upsampled ``E^T Yh`` as ``X``, ``V = H X``, zero duals."""
    lat = p.lattice
    d = lat.factor
    coarse = f.EtYh
    X = np.repeat(np.repeat(coarse, d, axis=1), d, axis=2)
    X = np.roll(X, lat.phase, axis=(1, 2))
    V = apply_H(X, f)
    zeros = [np.zeros_like(X) for _ in range(4)]
    return SolverState(X, *(v.copy() for v in V), *zeros)


# -- main loop -----------------------------------------------------------------


def _norm(*arrays) -> float:
    return math.sqrt(sum(float(np.vdot(a, a)) for a in arrays))


def run_admm(
    problem: FusionProblem, f: PrecomputedFactors, c: SolverConfig, state: SolverState
) -> Trace:
    """Iterate ADMM in place on ``state``; returns the per-iteration trace."""
    trace = Trace()
    mu = f.mu
    t0 = time.perf_counter()
    for it in range(1, c.max_iters + 1):
        X = update_X(state, f)
        state.X = X
        HX = apply_H(X, f)
        XB, _, XDh, XDv = HX
        V_old = state.V
        state.V1 = update_V1(state, f, XB)
        state.V2 = update_V2(state, f)
        state.V3, state.V4 = update_V3V4(state, f, XDh, XDv)
        res = tuple(hx - v for hx, v in zip(HX, state.V))
        state.A1, state.A2, state.A3, state.A4 = (a - r for a, r in zip(state.A, res))

        primal = _norm(*res)
        dual = mu * _norm(apply_H_adjoint(*(v - vo for v, vo in zip(state.V, V_old)), f))
        if not (math.isfinite(primal) and math.isfinite(dual)):
            raise DivergenceError(f"non-finite iterate at iteration {it}", iteration=it)
        primal_scale = max(_norm(*HX), _norm(*state.V))
        # H^T A equals H^T (V - V_old) after every dual step, so the textbook
        # dual scale mu ||H^T A|| is degenerate here; mu ||H^T V|| is used instead
        dual_scale = mu * _norm(apply_H_adjoint(*state.V, f))
        trace.primal_res.append(primal)
        trace.dual_res.append(dual)
        trace.primal_rel.append(primal / primal_scale if primal_scale > 0 else 0.0)
        trace.dual_rel.append(dual / dual_scale if dual_scale > 0 else 0.0)
        if c.track_objective:
            trace.objective.append(_objective_terms(X, XB, XDh, XDv, problem, c.lambda_m, c.lambda_phi))
        trace.seconds.append(time.perf_counter() - t0)

        if c.rel_tol > 0 or c.abs_tol > 0:
            n_x = X.size
            eps_pri = math.sqrt(4 * n_x) * c.abs_tol + c.rel_tol * primal_scale
            eps_dual = math.sqrt(n_x) * c.abs_tol + c.rel_tol * dual_scale
            if primal <= eps_pri and dual <= eps_dual:
                trace.converged = True
                log.debug("converged after %d iterations", it)
                break
    if not state.is_finite():
        raise DivergenceError("non-finite solver state", iteration=len(trace))
    return trace


def solve(p: FusionProblem, c: SolverConfig | None = None, init: SolverState | None = None) -> FusionResult:
    """Run the fusion and return ``(Z_hat, X, trace)``."""
    c = c or SolverConfig()
    f = precompute(p, c)
    state = initial_state(p, f) if init is None else init.copy()
    if state.X.shape != f.shape:
        raise DimensionError(f"initial state shape {state.X.shape} != {f.shape}")
    trace = run_admm(p, f, c, state)
    L_s = state.X.shape[0]
    X = SpectralImage(state.X.reshape(L_s, -1), p.lattice.fine)
    Z = SpectralImage(p.subspace.basis @ X.data, p.lattice.fine)
    return FusionResult(Z, X, trace)
