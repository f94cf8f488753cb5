"""Two-point-measurement work statistics of a driven Hubbard chain.

Energies are in units of the hopping J, times in 1/J and inverse
temperatures in 1/J.
"""

from .basis import SectorBasis, enumerate_sector, half_filled_sector
from .experiment import SweepGrid, extract_heatmap, locate_extrema, run_point, run_sweep
from .hamiltonian import HubbardParams, build_drive, build_static, hamiltonian_at, sector_operators
from .propagator import PropagatedSet, PropagationConfig, PropagationError, propagate
from .spectral import SpectralDecomposition, ThermalEnsemble, decompose, free_energy_difference, gibbs_weights
from .thermo import ThermoRecord, entropy_production, trace_distance
from .workstats import WorkDistribution, build_distribution, central_moment, jarzynski_residual, transition_matrix

__version__ = "0.1.0"
