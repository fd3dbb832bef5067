import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxlab.bases import build_elastic_basis, galerkin_in_span, worst_case_elastic_flux_error
from fluxlab.coeff import identity_tensor, isotropic_voigt, make_elastic, voigt_to_tensor
from fluxlab.elasticity import (
    ElasticOperator,
    VectorField2,
    assemble_elastic,
    b_matrices,
    cordes_beta_tensor,
    harmonic_displacements,
    matrix_l2_norm,
    rigid_kernel_dimension,
    solve_elastic,
    strain,
    strain_matrix,
    stress,
    vector_load,
)
from fluxlab.mesh import build_structured, single_triangle
from fluxlab.spectral import laplace_eigs_square

PSI = laplace_eigs_square(20)
ISO = make_elastic("isotropic", lam=1.0, mu=1.0)
UNIT = make_elastic("scaled_identity", c=1.0)


def body_force(p):
    s = PSI[0](p)
    return np.column_stack([s, -0.5 * s])


def _random_vec(mesh, rng, zero_boundary=True):
    U = rng.standard_normal((mesh.n_vertices, 2))
    if zero_boundary:
        U[mesh.boundary_mask] = 0.0
    return VectorField2(mesh, U, zero_boundary=zero_boundary)


# ---------------------------------------------------------------- assembly
def test_unit_tensor_quadratic_form(mesh8, rng):
    K = assemble_elastic(mesh8, UNIT)
    for _ in range(10):
        u = _random_vec(mesh8, rng, zero_boundary=False)
        eps = strain_matrix(u)
        assert u.flat @ (K @ u.flat) == pytest.approx(matrix_l2_norm(mesh8, eps) ** 2, rel=1e-10)


def test_translations_in_kernel(mesh8):
    K = assemble_elastic(mesh8, ISO)
    for t in ([1.0, 0.0], [0.0, 1.0]):
        assert np.abs(K @ np.tile(t, mesh8.n_vertices)).max() <= 1e-10
    rot = np.column_stack([-mesh8.vertices[:, 1], mesh8.vertices[:, 0]]).ravel()
    assert np.abs(K @ rot).max() <= 1e-10


def test_rigid_kernel_dimension(mesh8):
    assert rigid_kernel_dimension(mesh8, ISO) == 3


def test_single_triangle_hand_matrix():
    t = single_triangle([[0, 0], [1, 0], [0, 1]])
    # hat gradients (-1,-1), (1,0), (0,1); strain rows e11, e22, 2 e12
    B = np.array(
        [
            [-1, 0, 1, 0, 0, 0],
            [0, -1, 0, 0, 0, 1],
            [-1, -1, 0, 1, 1, 0],
        ],
        dtype=float,
    )
    D = np.array([[3.0, 1.0, 0.0], [1.0, 3.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(b_matrices(t)[0], B)
    assert np.allclose(assemble_elastic(t, ISO).toarray(), 0.5 * B.T @ D @ B, atol=1e-14)


def test_non_spd_voigt_rejected(mesh8):
    D = np.tile(isotropic_voigt(1.0, 1.0), (mesh8.n_triangles, 1, 1))
    D[5] = -D[5]
    with pytest.raises(ValueError, match=r"\b5\b"):
        assemble_elastic(mesh8, D)


# ---------------------------------------------------------------- solves
def test_zero_load(mesh8):
    assert np.all(solve_elastic(mesh8, ISO, np.zeros((mesh8.n_vertices, 2))).values == 0)


def test_scaling(mesh16):
    u1 = solve_elastic(mesh16, isotropic_voigt(1.0, 1.0), body_force).values
    u2 = solve_elastic(mesh16, 1e-3 * isotropic_voigt(1.0, 1.0), body_force).values
    assert np.allclose(u2, u1 / 1e-3, rtol=1e-9)


@pytest.mark.parametrize("C", [ISO, make_elastic("rough_isotropic", contrast=1e3, seed=2)])
def test_energy_identity(mesh16, C):
    u = solve_elastic(mesh16, C, body_force)
    D = C(mesh16.barycenters)
    e = strain(u)
    lhs = np.einsum("t,ti,tij,tj->", mesh16.areas, e, D, e)
    rhs = vector_load(mesh16, body_force) @ u.flat
    assert lhs == pytest.approx(rhs, rel=1e-8)
    assert u.zero_boundary


def test_stress_is_symmetric(mesh8, rng):
    s = stress(_random_vec(mesh8, rng), ISO)
    assert np.array_equal(s, np.swapaxes(s, 1, 2))


def test_harmonic_displacements_constant(mesh8):
    H = harmonic_displacements(mesh8, ISO)
    assert sorted(H) == ["11", "12", "22"]
    x = mesh8.vertices
    for key, (k, l) in {"11": (0, 0), "22": (1, 1), "12": (0, 1)}.items():
        g = np.zeros((mesh8.n_vertices, 2))
        g[:, l] += 0.5 * x[:, k]
        g[:, k] += 0.5 * x[:, l]
        assert np.abs(H[key].values - g).max() <= 1e-8
        E = np.zeros((2, 2))
        E[k, l] += 0.5
        E[l, k] += 0.5
        assert np.allclose(strain_matrix(H[key]), E, atol=1e-8)


def test_vector_field_shape_checks(mesh8):
    with pytest.raises(ValueError):
        VectorField2(mesh8, np.zeros(3))
    with pytest.raises(ValueError):
        VectorField2(mesh8, np.ones((mesh8.n_vertices, 2)), zero_boundary=True)


# ---------------------------------------------------------------- bases
def test_basis_counts(mesh16):
    c4 = build_structured(4)
    assert build_elastic_basis(mesh16, ISO, "spectral", N=5).size == 10
    assert build_elastic_basis(mesh16, ISO, "transfer", coarse=c4).size == 2 * len(c4.interior)
    with pytest.raises(ValueError):
        build_elastic_basis(mesh16, ISO, "transfer")
    with pytest.raises(ValueError):
        build_elastic_basis(mesh16, ISO, "harmonic")


def test_unit_tensor_spectral_basis(mesh32):
    N = 6
    b = build_elastic_basis(mesh32, UNIT, "spectral", N=N)
    worst, per = worst_case_elastic_flux_error(b, UNIT, 2 * N, return_all=True)
    assert worst == pytest.approx(1 / math.sqrt(PSI[N].lam), rel=0.02)
    assert per[: 2 * N].max() <= 1e-8


def test_elastic_worst_case_needs_vector_basis(mesh8):
    from fluxlab.bases import raw_p1_basis

    with pytest.raises(ValueError):
        worst_case_elastic_flux_error(raw_p1_basis(build_structured(2), mesh8), UNIT, 4)


def test_transfer_galerkin_rate():
    errs = []
    for n in (4, 8, 16):
        fine = build_structured(4 * n)
        b = build_elastic_basis(fine, ISO, "transfer", coarse=build_structured(n))
        ug = galerkin_in_span(b, ISO, body_force)
        ex = solve_elastic(fine, ISO, body_force)
        e = ex.flat - ug.flat
        errs.append(math.sqrt(e @ (assemble_elastic(fine, ISO) @ e)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 1) <= 0.25), rates


def test_rough_contrast_sweep(mesh16):
    c4 = build_structured(4)
    vals = []
    for contrast in (1.0, 1e2, 1e4):
        C = make_elastic("rough_isotropic", contrast=contrast, seed=3)
        vals.append(worst_case_elastic_flux_error(build_elastic_basis(mesh16, C, "transfer", coarse=c4), C, 18))
    assert (max(vals) - min(vals)) / min(vals) < 0.15


# ---------------------------------------------------------------- Cordes
def _beta_loops(C):
    """Direct index evaluation of d^2 - tr(B A^-1 B^T) for one full tensor."""
    d = 2
    B = np.zeros((d, d))
    A = np.zeros((d, d))
    for j in range(d):
        for m in range(d):
            B[j, m] = sum(C[k, m, k, j] for k in range(d))
            A[j, m] = sum(C[i, m, k, l] * C[i, j, k, l] for i in range(d) for k in range(d) for l in range(d))
    return d * d - np.trace(B @ np.linalg.inv(A) @ B.T)


def test_identity_tensor_beta():
    I = identity_tensor()
    assert abs(cordes_beta_tensor(I)) <= 1e-12
    assert abs(_beta_loops(I)) <= 1e-12


def test_symmetric_identity_beta():
    # C : eps = eps on symmetric matrices; the index formula evaluates to 1
    D = isotropic_voigt(0.0, 0.5)
    C = voigt_to_tensor(D)
    assert np.allclose(C, identity_tensor(symmetric=True))
    assert cordes_beta_tensor(D) == pytest.approx(1.0, abs=1e-12)
    assert _beta_loops(C) == pytest.approx(1.0, abs=1e-12)


@given(seed=st.integers(0, 2**20), power=st.integers(-20, 20), scale=st.floats(1e-6, 1e6))
@settings(max_examples=40, deadline=None)
def test_beta_scale_invariance(seed, power, scale):
    rng = np.random.default_rng(seed)
    lam, mu = rng.uniform(0.1, 5.0, 2)
    D = isotropic_voigt(lam, mu)
    beta = cordes_beta_tensor(D)
    # binary scalings are exact in floating point, so the result is bit-identical
    assert cordes_beta_tensor(2.0**power * D) == beta
    assert abs(cordes_beta_tensor(scale * D) - beta) <= 1e-14 * max(1.0, abs(beta))
    assert cordes_beta_tensor(D) == pytest.approx(_beta_loops(voigt_to_tensor(D)), abs=1e-12)


def test_beta_per_triangle(mesh8):
    C = make_elastic("rough_isotropic", contrast=10.0, seed=1)
    per = cordes_beta_tensor(C(mesh8.barycenters), return_all=True)
    assert per.shape == (mesh8.n_triangles,)
    assert np.all(per < 4)


def test_beta_singular_A():
    D = np.zeros((2, 3, 3))
    D[0] = isotropic_voigt(1.0, 1.0)
    with pytest.raises(ValueError, match=r"\[1\]"):
        cordes_beta_tensor(D)


def test_elastic_operator_lifted_linear(mesh8):
    g = np.column_stack([mesh8.vertices[:, 0] + 2 * mesh8.vertices[:, 1], -mesh8.vertices[:, 0]])
    u = ElasticOperator(mesh8, ISO).lifted_solve(g)
    assert np.allclose(u, g.ravel(), atol=1e-10)
