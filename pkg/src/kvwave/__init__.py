"""Numerical laboratory for waves damped by an interior Kelvin-Voigt patch."""

__version__ = "0.1.0"

from .geometry import DampingField, Mesh, Region, build_interval_mesh, build_square_mesh
from .assembly import OperatorSet, State, assemble_operators

__all__ = [
    "DampingField",
    "Mesh",
    "Region",
    "build_interval_mesh",
    "build_square_mesh",
    "OperatorSet",
    "State",
    "assemble_operators",
    "__version__",
]
