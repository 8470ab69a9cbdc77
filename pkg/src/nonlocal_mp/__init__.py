"""Maximum principles for nonlocal operators with rough, degenerate kernels.

Submodules: ``kernels`` (kernel specs and integrals), ``lattice`` (confined
lattice paths), ``discrete_form`` (grid energy and operator), ``spectral``
(first eigenvalue and rearrangement bound), ``maxprinciple`` (weak maximum
principle), ``propagation`` (strong maximum principle and chain
certificates), ``cli`` (batch command line).
"""
from . import discrete_form, kernels, lattice, maxprinciple, propagation, spectral
from .discrete_form import DiscreteForm, DomainMask, Grid, build_weight_table
from .errors import *  # noqa: F401,F403
from .kernels import KernelSpec, XKernelSpec, check_levy_integrability, check_nontriviality, total_mass
from .lattice import Lattice, construct_path, lattice_point_in_ball, verify_path
from .maxprinciple import ProblemData, solve_dirichlet, verify_supersolution, weak_mp_bound_check
from .propagation import build_ssp_chain, strong_mp_check, verify_certificate
from .spectral import decreasing_rearrangement, lambda1, lambda1_lower_bound

__version__ = "0.1.0"
