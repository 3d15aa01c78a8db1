"""Numerical reduction toolkit for concentrating standing waves of a Schrodinger equation
coupled to a Bopp-Podolsky electrostatic field."""

from .fields import Field3, Grid3
from .ground_state import RadialProfile, constants, rescale, solve_ground_state
from .potentials import Bump, PotentialSpec

__version__ = "0.1.0"

__all__ = ["Field3", "Grid3", "RadialProfile", "constants", "rescale", "solve_ground_state", "Bump", "PotentialSpec"]
