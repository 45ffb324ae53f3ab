"""Convex-integration toolkit for the periodic Euler-alpha equations.

Modules
-------
spectral     grids, spectral operators, Hamiltonian, relaxed residuals, time stepping
geometry     rational direction sets and the stress decomposition
mikado       intermittent pipe flows, pressure, stationarity and averages
inverse_div  Fourier and iterative inverse divergence
transport    flow maps, time partitions, decoupling measurements
ledger       exact-arithmetic parameter inequalities
engine       gluing, mollification, one convex-integration step, conservation checks
io           EAFS snapshots, key=value configuration, CSV reports
"""

from . import engine, geometry, inverse_div, io, ledger, mikado, spectral, transport
from .spectral import AlphaModel, Grid, SpectralField, StressField

__version__ = "0.1.0"

__all__ = [
    "engine", "geometry", "inverse_div", "io", "ledger", "mikado", "spectral", "transport",
    "AlphaModel", "Grid", "SpectralField", "StressField",
]
