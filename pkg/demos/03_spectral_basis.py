"""
Spectral bases and Weyl's law
=============================

The span of solutions with eigenfunction loads is optimal among spaces of
its dimension.  Its worst-case constant is 1/sqrt(lambda_{N+1}), which
Weyl's law turns into an explicit rate in N.
"""

import math

from fluxlab.bases import build_spectral_basis, build_transfer_basis, worst_case_flux_error
from fluxlab.coeff import make_scalar, sample_on_mesh
from fluxlab.mesh import build_structured
from fluxlab.spectral import laplace_eigs_numeric, nwidth_constant, square_eigenvalues, weyl_prediction

fine = build_structured(32)
pairs = laplace_eigs_numeric(fine, 80)
a = sample_on_mesh(make_scalar("multiscale_trig", levels=5, seed=4, sample_n_div=32), fine)

# %%
# With discrete eigenpairs the measured worst case hits the bound to
# round-off, for the rough coefficient as well.
print("  N   worst case   1/sqrt(lam_N+1)")
for N in (4, 9, 16, 36):
    theta = build_spectral_basis(fine, a, pairs=pairs[:N])
    w = worst_case_flux_error(theta, a, pairs[: 2 * N + 1])
    print(f"{N:3d} {w:12.8f} {1 / math.sqrt(pairs[N].lam):16.8f}")

# %%
# A transfer basis of the same size does worse, as it must.
V = build_transfer_basis(fine, a, build_structured(4))
print(f"\ntransfer basis with N={V.size}: {worst_case_flux_error(V, a, pairs[:19]):.6f}")

# %%
# Exact square spectrum against the Weyl prediction and the n-width constant.
lam = square_eigenvalues(1001)
for k in (10, 100, 1000):
    print(f"k={k:5d}  lam/weyl = {lam[k - 1] / weyl_prediction(k):.4f}"
          f"  (1/sqrt lam_k+1)/c(k) = {1 / math.sqrt(lam[k]) / nwidth_constant(k):.4f}")
