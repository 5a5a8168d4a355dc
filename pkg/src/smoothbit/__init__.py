"""Smoothed BitNet-style networks, their projected gradient-descent particle
dynamics, and numerical checks of the associated mean-field estimates."""

from smoothbit.errors import (
    CapacityError,
    ConfigError,
    DomainError,
    NumericalError,
    PreconditionError,
    ShapeError,
)
from smoothbit.quant_core import SmoothingParams

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConfigError",
    "DomainError",
    "NumericalError",
    "PreconditionError",
    "ShapeError",
    "SmoothingParams",
    "__version__",
]
