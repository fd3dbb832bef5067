"""
Harmonic coordinates on a laminate
==================================

For a two-phase laminate the coordinate map is piecewise linear in x1 and
the transported conductivity has the harmonic mean in its first entry.
"""

import numpy as np

from fluxlab.coeff import make_scalar, sample_on_mesh
from fluxlab.harmonic import (
    conforming_space,
    cordes_beta_scalar,
    dg_solve,
    harmonic_coordinates,
    kappa_V,
    nonconforming_space,
    q_matrix,
    weak_divergence_residual,
)
from fluxlab.mesh import build_structured
from fluxlab.spectral import laplace_eigs_square

kappa = 10.0
fine = build_structured(32)
a = sample_on_mesh(make_scalar("laminate", values=[1.0, kappa], breaks=[0.5]), fine)

# %%
# Prescribing F_i = x_i on the two faces normal to e_i gives the layered
# cell solution.
F = harmonic_coordinates(fine, a, boundary="faces")
mid = np.isclose(fine.vertices[:, 0], 0.5)
print(f"F1(1/2) = {F.F1.values[mid].mean():.12f}  (kappa/(1+kappa) = {kappa / (1 + kappa):.12f})")
Q = q_matrix(F)
print(f"Q11 range [{Q.Q[:, 0, 0].min():.10f}, {Q.Q[:, 0, 0].max():.10f}], harmonic mean {2 * kappa / (1 + kappa):.10f}")
print(f"weak divergence of Q on the image mesh: {weak_divergence_residual(Q.Q, Q.mesh):.2e}")
print(f"weak divergence of a itself:            {weak_divergence_residual(a, fine):.2e}")
print(f"Cordes beta of a: {cordes_beta_scalar(a):.4f}")

# %%
# Spaces built from grad F.  The interface is aligned with the coarse grid,
# so the space consists of gradients and K_V vanishes; inclusions do not
# align and leave a curl component.
f = laplace_eigs_square(1)[0]
for name, coef, mode in [
    ("laminate", a, "faces"),
    ("inclusions", sample_on_mesh(make_scalar("inclusions", kappa=100.0, count=6, radius=0.1, seed=7), fine), "full"),
]:
    Fm = harmonic_coordinates(fine, coef, boundary=mode)
    for n in (4, 8):
        V = nonconforming_space(Fm, build_structured(n))
        r = dg_solve(V, coef, f)
        print(f"{name:10s} coarse {n}: K_V = {kappa_V(V):.3e}  error = {r.error:.5f}")
    W = conforming_space(build_structured(8), fine)
    print(f"{name:10s} plain coarse gradients: error = {dg_solve(W, coef, f).error:.5f}")
