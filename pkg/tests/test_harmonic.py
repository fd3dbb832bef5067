import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_interior_field
from fluxlab.bases import coarse_hats, galerkin_in_span, raw_p1_basis
from fluxlab.coeff import make_scalar, sample_on_mesh
from fluxlab.fem import DiscreteField, PwVectorField, gradient, load_from_flux, rotated_gradient, solve_dirichlet
from fluxlab.fluxnorm import helmholtz_pot
from fluxlab.harmonic import (
    HarmonicMap,
    NonconformingSpace,
    conforming_space,
    cordes_beta_from_eigs,
    cordes_beta_scalar,
    dg_solve,
    estimate_DV,
    harmonic_coordinates,
    inequality_witness,
    kappa_V,
    lemma_chain,
    nonconforming_space,
    q_matrix,
    weak_divergence_residual,
)
from fluxlab.mesh import build_structured
from fluxlab.spectral import laplace_eigs_square

KAPPA = 10.0
PSI = laplace_eigs_square(8)


def laminate(mesh, kappa=KAPPA):
    return sample_on_mesh(make_scalar("laminate", values=[1.0, kappa], breaks=[0.5]), mesh)


def inclusions(mesh):
    return sample_on_mesh(make_scalar("inclusions", kappa=100.0, count=5, radius=0.1, seed=7), mesh)


@pytest.fixture(scope="module")
def lam_map(mesh16):
    return harmonic_coordinates(mesh16, laminate(mesh16), boundary="faces")


# ---------------------------------------------------------------- coordinates
@pytest.mark.parametrize(
    "A,mode",
    [
        (np.array([[2.0, 0.5], [0.5, 1.0]]), "full"),
        (np.diag([2.0, 0.3]), "full"),
        (np.diag([2.0, 0.3]), "faces"),
    ],
)
def test_constant_coefficient_gives_identity(mesh16, A, mode):
    F = harmonic_coordinates(mesh16, A, boundary=mode)
    assert np.abs(F.image_vertices - mesh16.vertices).max() <= 1e-8
    assert np.allclose(F.jacobian, np.eye(2), atol=1e-8)


def test_boundary_values_are_coordinates(mesh16):
    F = harmonic_coordinates(mesh16, inclusions(mesh16))
    b = mesh16.boundary_mask
    assert np.abs(F.image_vertices[b] - mesh16.vertices[b]).max() <= 1e-12


def test_unknown_boundary_mode(mesh8):
    with pytest.raises(ValueError):
        harmonic_coordinates(mesh8, None, boundary="periodic")


def test_laminate_closed_form(mesh16, lam_map):
    x, y = mesh16.vertices.T
    mid = np.isclose(x, 0.5)
    assert np.abs(lam_map.F1.values[mid] - KAPPA / (1 + KAPPA)).max() <= 1e-6
    assert np.abs(lam_map.F2.values - y).max() <= 1e-10
    C = 2 * KAPPA / (1 + KAPPA)
    expected = np.where(x <= 0.5, C * x, C * 0.5 + C / KAPPA * (x - 0.5))
    assert np.abs(lam_map.F1.values - expected).max() <= 1e-10


def test_laminate_monotone_along_lines(mesh16, lam_map):
    n = mesh16.n_div + 1
    F1 = lam_map.F1.values.reshape(n, n)
    F2 = lam_map.F2.values.reshape(n, n)
    assert np.all(np.diff(F1, axis=1) > 0)
    assert np.all(np.diff(F2, axis=0) > 0)
    assert lam_map.det.min() > 0


# ---------------------------------------------------------------- Q
def test_q_of_constant_is_constant(mesh8):
    A = np.array([[3.0, -1.0], [-1.0, 2.0]])
    q = q_matrix(harmonic_coordinates(mesh8, A))
    assert np.allclose(q.Q, A, atol=1e-10)
    assert q.min_det == pytest.approx(1.0, abs=1e-10)
    assert len(q.quarantine) == 0


def test_laminate_q_closed_form(mesh16, lam_map):
    q = q_matrix(lam_map)
    C = 2 * KAPPA / (1 + KAPPA)
    a1 = laminate(mesh16)[:, 0, 0]
    assert np.abs(q.Q[:, 0, 0] - C).max() <= 1e-6
    assert np.allclose(q.Q[:, 1, 1], a1 / C, rtol=1e-10)
    assert np.abs(q.Q[:, 0, 1]).max() <= 1e-10
    assert weak_divergence_residual(q.Q, q.mesh) <= 1e-6
    # Q lives on the image triangles F(T)
    assert np.allclose(q.mesh.vertices, lam_map.image_vertices)


def test_q_spd_for_checkerboard(mesh32):
    A = sample_on_mesh(make_scalar("checkerboard", kappa=100.0, cells=4), mesh32)
    q = q_matrix(harmonic_coordinates(mesh32, A))
    assert np.allclose(q.Q, np.swapaxes(q.Q, 1, 2), atol=1e-10)
    assert np.linalg.eigvalsh(q.Q).min() > 0
    assert weak_divergence_residual(q.Q, q.mesh) <= 1e-8


def _folded_map(mesh):
    F1 = mesh.vertices[:, 0].copy()
    v = mesh.interior[len(mesh.interior) // 2]
    F1[v] += 3.0 / mesh.n_div
    return HarmonicMap(mesh, DiscreteField(mesh, F1), DiscreteField(mesh, mesh.vertices[:, 1].copy()), np.tile(np.eye(2), (mesh.n_triangles, 1, 1)))


def test_folded_map_is_reported(mesh8):
    F = _folded_map(mesh8)
    bad = np.flatnonzero(F.det <= 0)
    assert len(bad) > 0
    with pytest.raises(ValueError, match=str(bad[0])):
        q_matrix(F)
    q = q_matrix(F, quarantine=True)
    assert np.array_equal(q.quarantine, bad)
    assert np.all(np.isnan(q.Q[bad])) and not np.any(np.isnan(q.Q[q.valid]))
    assert q.min_det <= 0


def test_weak_divergence_residual_cases(mesh16):
    T = mesh16.n_triangles
    assert weak_divergence_residual(np.tile([[2.0, 1.0], [1.0, 3.0]], (T, 1, 1)), mesh16) <= 1e-12
    A = sample_on_mesh(make_scalar("checkerboard", kappa=10.0, cells=4), mesh16)
    assert weak_divergence_residual(A, mesh16) > 0.01
    valid = np.ones(T, dtype=bool)
    valid[: T // 2] = False
    assert np.isfinite(weak_divergence_residual(A, mesh16, valid))


def test_rough_q_residual_small_on_fine_mesh():
    m = build_structured(64)
    A = sample_on_mesh(make_scalar("multiscale_trig", levels=4, seed=3, sample_n_div=64), m)
    q = q_matrix(harmonic_coordinates(m, A), quarantine=True)
    assert len(q.quarantine) <= 0.001 * m.n_triangles
    assert weak_divergence_residual(q.Q, q.mesh, q.valid) <= 1e-3


# ---------------------------------------------------------------- Cordes
def test_cordes_values():
    assert cordes_beta_scalar(np.eye(2)) == pytest.approx(0.0, abs=1e-15)
    assert cordes_beta_scalar(7.5 * np.eye(2)) == pytest.approx(0.0, abs=1e-15)
    assert cordes_beta_scalar(np.diag([1.0, 2.0])) == pytest.approx(0.2, abs=1e-12)


def test_cordes_on_mesh(mesh8):
    A = sample_on_mesh(make_scalar("checkerboard", kappa=3.0, cells=2), mesh8)
    per = cordes_beta_scalar(A, mesh8, return_all=True)
    assert per.shape == (mesh8.n_triangles,)
    assert np.allclose(per, 0.0, atol=1e-14)
    assert cordes_beta_scalar(laminate(mesh8), mesh8) == pytest.approx(1 - 2 * KAPPA / (1 + KAPPA**2), abs=1e-12)


@given(seed=st.integers(0, 2**20))
@settings(max_examples=40, deadline=None)
def test_cordes_eigen_identity(seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((20, 2, 2))
    A = B @ np.swapaxes(B, 1, 2) + 1e-3 * np.eye(2)
    beta = cordes_beta_scalar(A)
    assert abs(beta - cordes_beta_from_eigs(A)) <= 1e-12
    assert beta < 1


# ---------------------------------------------------------------- spaces
@pytest.fixture(scope="module")
def c4():
    return build_structured(4)


def test_identity_map_space_is_conforming(c4, mesh16):
    F = harmonic_coordinates(mesh16, None)
    V = nonconforming_space(F, c4)
    W = conforming_space(c4, mesh16)
    assert V.size == W.size == 9
    assert np.abs(V.zeta - W.zeta).max() <= 1e-10
    assert kappa_V(V) <= 1e-8 and kappa_V(W) <= 1e-8


def test_laminate_space_closed_form(c4, mesh16, lam_map):
    # interface aligned with coarse cells: F is affine on each coarse triangle
    V = nonconforming_space(lam_map, c4)
    W = conforming_space(c4, mesh16)
    assert np.abs(V.zeta - W.zeta).max() <= 1e-9
    assert kappa_V(V) <= 1e-8
    C = 2 * KAPPA / (1 + KAPPA)
    J = lam_map.jacobian
    left = mesh16.barycenters[:, 0] < 0.5
    assert np.allclose(J[left], np.diag([C, 1.0]), atol=1e-10)
    assert np.allclose(J[~left], np.diag([C / KAPPA, 1.0]), atol=1e-10)


def test_zeta_weakly_divergence_free_inside_coarse_cells(c4, mesh16):
    A = inclusions(mesh16)
    F = harmonic_coordinates(mesh16, A)
    V = nonconforming_space(F, c4)
    # fine interior vertices off the coarse skeleton
    x = mesh16.vertices * c4.n_div
    off = np.all(np.abs(x - np.round(x)) > 1e-9, axis=1)
    off &= ~np.isclose((x[:, 0] - np.floor(x[:, 0])), (x[:, 1] - np.floor(x[:, 1])))
    idx = np.flatnonzero(off)
    assert len(idx) > 0
    zeta = V.zeta
    for k in range(V.size):
        flux = np.einsum("tij,tj->ti", A, zeta[:, :, k])
        r = load_from_flux(mesh16, flux)[idx]
        scale = np.sqrt(np.sum(mesh16.areas * np.sum(flux**2, axis=1)))
        assert np.abs(r).max() <= 1e-6 * scale


def test_singular_coarse_jacobian(c4, mesh16):
    F = harmonic_coordinates(mesh16, None)
    F.F1.values[:] = 0.0
    with pytest.raises(ValueError, match="singular"):
        nonconforming_space(F, c4)


def test_kappa_rot_element(mesh8, rng):
    w = DiscreteField(mesh8, rng.standard_normal(mesh8.n_vertices))
    V = NonconformingSpace(mesh8, rotated_gradient(w).values[:, :, None])
    assert abs(kappa_V(V) - 1.0) <= 1e-8


def test_kappa_rank_deficient(c4, mesh16):
    W = conforming_space(c4, mesh16)
    with pytest.raises(ValueError):
        kappa_V(W.extended(W.zeta[:, :, :1]))


def _dense_kappa(V):
    mesh = V.mesh
    Z = V.zeta
    parts = [helmholtz_pot(PwVectorField(mesh, Z[:, :, k])).curl.values for k in range(V.size)]
    w = mesh.areas
    full = np.einsum("t,tdi,tdj->ij", w, Z, Z)
    curl = np.einsum("t,itd,jtd->ij", w, np.array(parts), np.array(parts))
    return math.sqrt(max(sla.eigh(curl, full, eigvals_only=True).max(), 0.0))


@pytest.mark.parametrize("coef", ["laminate", "inclusions"])
def test_kappa_against_dense_oracle(coef):
    coarse, fine = build_structured(8), build_structured(32)
    A = laminate(fine) if coef == "laminate" else inclusions(fine)
    mode = "faces" if coef == "laminate" else "full"
    V = nonconforming_space(harmonic_coordinates(fine, A, boundary=mode), coarse)
    k = kappa_V(V)
    assert 0 <= k <= 1
    assert abs(k - _dense_kappa(V)) <= 1e-10
    if coef == "inclusions":
        assert k > 0.1


# ---------------------------------------------------------------- DG
def test_dg_conforming_identity_is_coarse_galerkin(c4, mesh16):
    r = dg_solve(conforming_space(c4, mesh16), None, PSI[0])
    ug = galerkin_in_span(raw_p1_basis(c4, mesh16), None, PSI[0])
    assert np.abs(r.zeta.values - gradient(ug).values).max() <= 1e-8
    exact = solve_dirichlet(mesh16, None, PSI[0])
    assert r.error == pytest.approx((gradient(exact) - r.zeta).norm(), rel=1e-12)


@pytest.mark.slow
def test_dg_laminate_rate():
    errs = []
    for n in (8, 16, 32):
        fine = build_structured(4 * n)
        F = harmonic_coordinates(fine, laminate(fine), boundary="faces")
        errs.append(dg_solve(nonconforming_space(F, build_structured(n)), F.a, PSI[0]).error)
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates >= 0.8), rates


def test_dg_rejects_indefinite(c4, mesh16):
    W = conforming_space(c4, mesh16)
    with pytest.raises(ValueError, match="positive definite"):
        dg_solve(W, -np.ones(mesh16.n_triangles), PSI[0])


@pytest.mark.parametrize("coef", ["identity", "checkerboard"])
def test_rot_element_raises_kappa_without_lowering_error(c4, mesh16, coef):
    A = None if coef == "identity" else sample_on_mesh(make_scalar("checkerboard", kappa=100.0, cells=4), mesh16)
    W = conforming_space(c4, mesh16)
    e0 = dg_solve(W, A, PSI[0]).error
    for w in (PSI[0].nodal(mesh16), PSI[1].nodal(mesh16), coarse_hats(c4, mesh16)[:, 4]):
        Wr = W.extended(rotated_gradient(DiscreteField(mesh16, w)).values)
        assert kappa_V(Wr) == pytest.approx(1.0, abs=1e-8)
        assert dg_solve(Wr, A, PSI[0]).error >= e0 * (1 - 1e-12)


def test_rot_element_with_inclusions_changes_error_marginally(c4, mesh16):
    A = inclusions(mesh16)
    W = conforming_space(c4, mesh16)
    e0 = dg_solve(W, A, PSI[0]).error
    for w in (PSI[0].nodal(mesh16), PSI[1].nodal(mesh16)):
        e1 = dg_solve(W.extended(rotated_gradient(DiscreteField(mesh16, w)).values), A, PSI[0]).error
        assert abs(e1 / e0 - 1) < 0.01


# ---------------------------------------------------------------- D_V
def test_dv_conforming_slope():
    vals, hs = [], []
    for n in (4, 8, 16):
        fine = build_structured(4 * n)
        vals.append(estimate_DV(conforming_space(build_structured(n), fine), None, 6).value)
        hs.append(1 / n)
    slopes = np.diff(np.log(vals)) / np.diff(np.log(hs))
    assert np.all(np.abs(slopes - 1) <= 0.2), slopes


def test_dv_exact_flux_contribution(c4, mesh16):
    u = solve_dirichlet(mesh16, None, PSI[0])
    W = conforming_space(c4, mesh16).extended(gradient(u).values)
    est = estimate_DV(W, None, PSI[:3])
    assert est.per_rhs[0] <= 1e-8
    assert np.allclose(est.per_rhs, est.direct, atol=1e-12)


def test_dv_laminate_close_to_conforming():
    coarse, fine = build_structured(8), build_structured(32)
    F = harmonic_coordinates(fine, laminate(fine), boundary="faces")
    lam = estimate_DV(nonconforming_space(F, coarse), F.a, 8)
    ref = estimate_DV(conforming_space(coarse, fine), None, 8)
    assert 0.5 <= lam.value / ref.value <= 2.0
    assert np.allclose(lam.per_rhs, lam.direct, rtol=1e-8)


# ---------------------------------------------------------------- witnesses
def test_inequality_witness_stable():
    vals = []
    for n in (16, 32):
        m = build_structured(n)
        q = q_matrix(harmonic_coordinates(m, laminate(m), boundary="faces"))
        vals.append(inequality_witness(q.mesh, q.Q))
    assert all(np.isfinite(vals))
    assert abs(vals[1] / vals[0] - 1) < 0.1


def test_lemma_chain_on_samples(c4, mesh16, rng):
    A = inclusions(mesh16)
    lam_max = float(np.linalg.eigvalsh(A).max())
    V = nonconforming_space(harmonic_coordinates(mesh16, A), c4)
    for _ in range(100):
        u = DiscreteField(mesh16, random_interior_field(mesh16, rng))
        zeta = V.element(rng.standard_normal(V.size))
        lhs, rhs = lemma_chain(mesh16, A, lam_max, u, zeta)
        assert lhs <= rhs * (1 + 1e-12)
