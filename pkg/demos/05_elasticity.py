"""
Plane elasticity
================

Vector P1 elasticity with Voigt tensors: Korn's inequality on random
fields, the transfer basis on a rough isotropic medium and the Cordes
measure of a few tensors.
"""

import math

import numpy as np

from fluxlab.bases import build_elastic_basis, worst_case_elastic_flux_error
from fluxlab.coeff import identity_tensor, isotropic_voigt, make_elastic
from fluxlab.elasticity import (
    VectorField2,
    cordes_beta_tensor,
    displacement_gradient,
    matrix_l2_norm,
    rigid_kernel_dimension,
    strain_matrix,
)
from fluxlab.mesh import build_structured

mesh = build_structured(16)
rng = np.random.default_rng(1)

# %%
# Korn: ||grad u|| <= sqrt(2) ||eps(u)|| for fields vanishing on the boundary.
ratios = []
for _ in range(50):
    U = rng.standard_normal((mesh.n_vertices, 2))
    U[mesh.boundary_mask] = 0
    u = VectorField2(mesh, U, zero_boundary=True)
    ratios.append(matrix_l2_norm(mesh, displacement_gradient(mesh, U)) / matrix_l2_norm(mesh, strain_matrix(u)))
print(f"largest Korn ratio {max(ratios):.4f} <= {math.sqrt(2):.4f}")
print(f"rigid motions: {rigid_kernel_dimension(build_structured(4), make_elastic('isotropic', lam=1.0, mu=1.0))}")

# %%
# Transfer basis for a rough medium: the worst case is blind to contrast.
coarse = build_structured(4)
for contrast in (1.0, 1e2, 1e4):
    C = make_elastic("rough_isotropic", contrast=contrast, seed=3)
    B = build_elastic_basis(mesh, C, "transfer", coarse=coarse)
    print(f"contrast {contrast:7.0e}: worst case {worst_case_elastic_flux_error(B, C, 18):.8f}")

# %%
# Cordes measure.  The full identity gives 0; its symmetrized version, which
# acts as the identity on strains, gives 1 under the same index formula.
print(f"beta_C(identity)           = {cordes_beta_tensor(identity_tensor()):.3e}")
print(f"beta_C(symmetric identity) = {cordes_beta_tensor(identity_tensor(symmetric=True)):.3e}")
print(f"beta_C(lam=1, mu=1)        = {cordes_beta_tensor(isotropic_voigt(1.0, 1.0)):.4f}")
