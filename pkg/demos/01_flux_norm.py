"""
Flux norm on a rough coefficient
================================

Split a conductivity-weighted gradient into its potential and solenoidal
parts and watch the potential part stay put while the conductivity is
scaled over four orders of magnitude.
"""

import numpy as np

from fluxlab.coeff import make_scalar, sample_on_mesh
from fluxlab.fem import DiscreteField, gradient, norms, solve_dirichlet
from fluxlab.fluxnorm import flux_field, flux_norm, helmholtz_pot
from fluxlab.mesh import build_structured
from fluxlab.spectral import laplace_eigs_square

mesh = build_structured(32)
f = laplace_eigs_square(1)[0]

# %%
# A checkerboard with contrast 1e4.  The flux ``a grad u`` of the solution
# has a sizeable curl part; the flux norm keeps only the gradient part.
a = sample_on_mesh(make_scalar("checkerboard", kappa=1e4, cells=8), mesh)
u = solve_dirichlet(mesh, a, f)
split = helmholtz_pot(flux_field(u, a))
print(f"|a grad u|      = {split.xi.norm():.6f}")
print(f"potential part  = {split.pot_norm:.6f}")
print(f"curl part       = {split.curl_norm:.6f}")
print(f"cross term      = {split.cross:.2e}")

# %%
# For a = alpha I the energy norm of the solution blows up like
# alpha^(-1/2) but the flux norm does not move.
print("\n   alpha     energy       flux")
for alpha in (1.0, 1e-2, 1e-4):
    ua = solve_dirichlet(mesh, alpha, f)
    print(f"{alpha:8.0e} {norms(ua, a=alpha)['energy']:10.4f} {flux_norm(ua, alpha):10.6f}")

# %%
# The gradient of any field vanishing on the boundary is already a potential
# field, so the split leaves it unchanged.
rng = np.random.default_rng(0)
v = u.values + 0.1 * rng.standard_normal(mesh.n_vertices) * ~mesh.boundary_mask
gv = gradient(DiscreteField(mesh, v))
print(f"\ncurl part of a pure gradient: {helmholtz_pot(gv).curl_norm:.2e}")
