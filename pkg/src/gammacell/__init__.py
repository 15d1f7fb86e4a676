"""Transition-layer cell energies: one-dimensional and periodic cell problems,
kernel-limit densities, surface functionals and recovery sequences."""

from .cell1d import E1Result, optimize_e1
from .cellnd import EPerResult, LatticeBasis, optimize_eper
from .fields import Box, CompositeJump, GraphInterface, Layout, PiecewiseField, trace_pair
from .functionals import AvilesGiga, ModicaMortola, PolynomialCustom, TwoGradientWell, make_density
from .kernels import BACKEND
from .mollifier import GridSpec, Kernel, limit_surface_density, mollify, profile_p
from .recovery import RecoveryConfig, epsilon_scan
from .surface import k_functional

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AvilesGiga", "Box", "CompositeJump", "E1Result", "EPerResult", "GraphInterface", "GridSpec",
    "Kernel", "LatticeBasis", "Layout", "ModicaMortola", "PiecewiseField", "PolynomialCustom",
    "RecoveryConfig", "TwoGradientWell", "epsilon_scan", "k_functional", "limit_surface_density",
    "make_density", "mollify", "optimize_e1", "optimize_eper", "profile_p", "trace_pair",
]
