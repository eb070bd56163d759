"""Dissipative freezing in the driven squeezed-superradiance spin model."""

__version__ = "0.1.0"

from .errors import NumericalError, ValidationError
from .spin import ModelParams, SpinOperators, build_spin_operators, check_strong_symmetry

__all__ = [
    "ModelParams",
    "SpinOperators",
    "build_spin_operators",
    "check_strong_symmetry",
    "NumericalError",
    "ValidationError",
    "__version__",
]
