"""Flux-norm homogenization toolkit on structured triangulations of the unit square."""
from .mesh import TriangleMesh, build_structured, refine
from .coeff import make_elastic, make_scalar
from .fem import DirichletOperator, DiscreteField, PwVectorField, assemble_mass, assemble_stiffness, solve_dirichlet
from .fluxnorm import flux_norm, helmholtz_pot
from .spectral import laplace_eigs_numeric, laplace_eigs_square, nwidth_constant, weyl_prediction
from .bases import build_spectral_basis, build_transfer_basis, worst_case_flux_error
from .harmonic import harmonic_coordinates, kappa_V, nonconforming_space, q_matrix
from .elasticity import VectorField2, cordes_beta_tensor, solve_elastic

__version__ = "0.1.0"

__all__ = [
    "TriangleMesh", "build_structured", "refine", "make_scalar", "make_elastic",
    "DirichletOperator", "DiscreteField", "PwVectorField", "assemble_mass", "assemble_stiffness",
    "solve_dirichlet", "flux_norm", "helmholtz_pot", "laplace_eigs_numeric", "laplace_eigs_square",
    "nwidth_constant", "weyl_prediction", "build_spectral_basis", "build_transfer_basis",
    "worst_case_flux_error", "harmonic_coordinates", "kappa_V", "nonconforming_space", "q_matrix",
    "VectorField2", "cordes_beta_tensor", "solve_elastic",
]
