"""Viscous Moore-Greitzer simulation and reduced-order modeling toolkit."""
from ._accel import NUMBA_ENABLED, backend_name
from .errors import *  # noqa: F401,F403
from .model import ModelParams, critical_gammas, equilibrium, ode_eigenvalues, pde_eigenvalue
from .snapshots import SnapshotMatrix
from .spectral import SimConfig, integrate

__version__ = "0.1.0"
