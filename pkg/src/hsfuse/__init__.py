"""Hyperspectral and multispectral image fusion in a spectral subspace.

Modules
-------
imaging      grids, images, kernels and the periodic operators
subspace     band removal, normalisation and the SVD subspace
degradation  observation model and synthetic scenes
calibration  blind estimation of the spectral response and blur kernel
solver       ADMM with vector total variation
metrics      ERGAS, SAM, UIQI and RMSE profiles
cubeio       HSCUBE1 container
commands     file-level commands behind the ``hsfuse`` CLI
"""

from .errors import (
    DegenerateError,
    DimensionError,
    DivergenceError,
    FusionError,
    NumericalError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "FusionError",
    "ValidationError",
    "DimensionError",
    "DegenerateError",
    "NumericalError",
    "DivergenceError",
    "__version__",
]
