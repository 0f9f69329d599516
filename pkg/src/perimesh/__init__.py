"""Rovibrational spectrum and E2 transitions of H2+ on a perimetric Lagrange-Laguerre mesh."""

from .coordinates import MassSet, PerimetricPoint
from .eigensolver import EigenRequest, lowest_eigenpairs, solve_band
from .hamiltonian import PerimetricHamiltonian, StateLabel, band_labels
from .laguerre_mesh import MeshSpec
from .transitions import PhysicalConstants, reduced_strength, transition

__all__ = [
    "EigenRequest",
    "MassSet",
    "MeshSpec",
    "PerimetricHamiltonian",
    "PerimetricPoint",
    "PhysicalConstants",
    "StateLabel",
    "band_labels",
    "lowest_eigenpairs",
    "reduced_strength",
    "solve_band",
    "transition",
]

__version__ = "0.1.0"
