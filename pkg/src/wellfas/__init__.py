"""Fully-implicit two-phase well-driven flow with a nonlinear (FAS) multigrid solver."""

from wellfas.fluid import FluidModel
from wellfas.grid import ConnectivityGraph, Mesh, build_cartesian_mesh, build_cell_well_graph
from wellfas.wells import Well, WellSet

__all__ = [
    "ConnectivityGraph",
    "FluidModel",
    "Mesh",
    "Well",
    "WellSet",
    "build_cartesian_mesh",
    "build_cell_well_graph",
]

__version__ = "0.1.0"
