"""Directed polymers in the critical 2D window: lattice simulation and continuum oracles."""

__version__ = "0.1.0"

from .disorder import DisorderSpec, calibrate
from .polymer import TestFunction, init_field, simulate_path
from .walk import load_walk

__all__ = ["DisorderSpec", "TestFunction", "calibrate", "init_field", "load_walk", "simulate_path", "__version__"]
