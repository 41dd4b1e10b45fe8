"""Numerical laboratory for the regularized fourth-order thin-film equation."""
from ._backend import BACKEND
from .core import (Field, Grid1D, InterfaceData, ModelParams, Mobility, RiemannData,
                   SmoothBump, Trajectory, make_grid, sample_initial_data)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Field", "Grid1D", "InterfaceData", "ModelParams", "Mobility",
    "RiemannData", "SmoothBump", "Trajectory", "make_grid", "sample_initial_data",
]
