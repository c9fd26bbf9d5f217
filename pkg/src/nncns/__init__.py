"""Pseudo-spectral solver suite for compressible non-Newtonian flow on the torus."""

from .constitutive import PressureLaw, ViscosityModel, make_model
from .errors import SolverError
from .fields import Field, Grid, NormSpec, TimeSeries

__all__ = ["Field", "Grid", "NormSpec", "PressureLaw", "SolverError", "TimeSeries", "ViscosityModel", "make_model"]
__version__ = "0.1.0"
