"""Mollified Neumann Green's functions for parabolic systems with rough coefficients.

Submodules
----------
mesh        simplicial meshes of intervals and polygons
coeffs      coefficient families and ellipticity checks
fem         P1 spaces, assembly and quadrature
parabolic   backward-Euler forward and adjoint solvers
green       tabulated mollified kernels and their identities
estimates   numerical verifiers for kernel and solution bounds
elliptic    time-integrated (elliptic) kernels and the Poincare constant
cli         experiment runner
"""
from .errors import *  # noqa: F401,F403
from .mesh import Mesh, build_interval_mesh, build_rectangle_mesh, build_l_shape_mesh
from .coeffs import CoefficientField, make_field
from .fem import DiscreteSpace
from .green import GreenTable, build_mollified_green, build_adjoint_green
from .elliptic import EllipticNeumannTable, build_elliptic_neumann, poincare_constant
from .estimates import EstimateReport

__version__ = "0.1.0"
