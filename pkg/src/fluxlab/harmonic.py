"""Harmonic coordinates, divergence-free conductivities, Cordes measures and
non-conforming flux spaces built from ``grad F``.

Matrix fields use the Jacobian convention ``J[t, i, j] = d_j F_i``; with it the
transported conductivity is ``Q = J a J^T / det J`` attached to the image
triangle ``F(T)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import sparse

from . import sparsela
from .fem import (
    DirichletOperator,
    DiscreteField,
    PwVectorField,
    assemble_mass,
    assemble_stiffness,
    coefficient_array,
    gradient,
    load_from_flux,
)
from .fluxnorm import helmholtz_pot, laplacian
from .mesh import TriangleMesh, _boundary_mask, check_nested, coarse_parent
from .spectral import EigenPair

log = logging.getLogger(__name__)


@dataclass(eq=False)
class HarmonicMap:
    mesh: TriangleMesh
    F1: DiscreteField
    F2: DiscreteField
    a: np.ndarray = field(repr=False)

    @property
    def jacobian(self) -> np.ndarray:
        """``(T, 2, 2)`` with rows ``grad F1``, ``grad F2``."""
        return np.stack([gradient(self.F1).values, gradient(self.F2).values], axis=1)

    @property
    def det(self) -> np.ndarray:
        return np.linalg.det(self.jacobian)

    @property
    def image_vertices(self) -> np.ndarray:
        return np.column_stack([self.F1.values, self.F2.values])


def harmonic_coordinates(mesh: TriangleMesh, a, boundary="full") -> HarmonicMap:
    """Solve ``div(a grad F_i) = 0`` with ``F_i = x_i`` on the boundary.

    ``boundary="faces"`` prescribes ``F_i = x_i`` only on the two faces
    ``x_i in {0, 1}`` and leaves the other two faces with natural (zero
    flux) conditions; for layered media this yields the one-dimensional
    cell solution exactly.
    """
    if boundary == "full":
        op = DirichletOperator(mesh, a)
        F1 = op.lifted_solve(mesh.vertices[:, 0])
        F2 = op.lifted_solve(mesh.vertices[:, 1])
        return HarmonicMap(mesh, DiscreteField(mesh, F1), DiscreteField(mesh, F2), op.a)
    if boundary != "faces":
        raise ValueError(f"unknown boundary mode {boundary!r}")
    A = coefficient_array(mesh, a)
    K = assemble_stiffness(mesh, A)
    F = []
    for i in range(2):
        x = mesh.vertices[:, i]
        fixed = (np.abs(x) < 1e-12) | (np.abs(x - 1) < 1e-12)
        free = np.flatnonzero(~fixed)
        g = np.where(fixed, x, 0.0)
        u = g.copy()
        u[free] = sparsela.Factorized(sparsela.restrict(K, free)).solve(-(K @ g)[free])
        F.append(DiscreteField(mesh, u))
    return HarmonicMap(mesh, F[0], F[1], A)


@dataclass(eq=False)
class QField:
    """Transported conductivity on the deformed mesh ``F(mesh)``."""

    mesh: TriangleMesh
    Q: np.ndarray
    quarantine: np.ndarray
    min_det: float

    @property
    def valid(self) -> np.ndarray:
        mask = np.ones(len(self.Q), dtype=bool)
        mask[self.quarantine] = False
        return mask


def q_matrix(Fmap: HarmonicMap, a=None, quarantine=False) -> QField:
    """``Q = J a J^T / det J`` per triangle, carried to the image triangles.

    Triangles with ``det J <= 0`` raise unless ``quarantine`` is set, in
    which case they are listed and their ``Q`` is NaN.
    """
    mesh = Fmap.mesh
    A = Fmap.a if a is None else coefficient_array(mesh, a)
    J = Fmap.jacobian
    det = np.linalg.det(J)
    bad = np.flatnonzero(det <= 0)
    if len(bad) and not quarantine:
        raise ValueError(f"non-positive det(grad F) on triangle(s) {bad[:20].tolist()}")
    if len(bad):
        log.warning("quarantined %d folded triangles", len(bad))
    Q = np.einsum("tij,tjk,tlk->til", J, A, J) / det[:, None, None]
    Q[bad] = np.nan
    img = Fmap.image_vertices
    e = np.linalg.norm(img[mesh.edges[:, 1]] - img[mesh.edges[:, 0]], axis=1)
    deformed = TriangleMesh(img, mesh.triangles.copy(), _boundary_mask(img), float(e.max()))
    return QField(deformed, Q, bad, float(det.min()))


def weak_divergence_residual(M: np.ndarray, mesh: TriangleMesh, valid=None) -> float:
    """``max_{l, phi} |int grad(phi) . M e_l| / (||grad phi|| ||M e_l||)`` over interior hats."""
    M = np.asarray(M, dtype=float)
    if valid is not None:
        M = np.where(valid[:, None, None], M, 0.0)
    diagK = assemble_stiffness(mesh).diagonal()
    I = mesh.interior
    worst = 0.0
    for l in range(2):
        col = M[:, :, l]
        r = load_from_flux(mesh, col)[I]
        norm_col = np.sqrt(np.sum(mesh.areas * np.sum(col * col, axis=1)))
        if norm_col == 0:
            continue
        worst = max(worst, float(np.max(np.abs(r) / np.sqrt(diagK[I])) / norm_col))
    return worst


def cordes_beta_scalar(a, mesh: TriangleMesh | None = None, return_all=False):
    """``max_T (d - tr(a)^2 / tr(a^T a))`` with ``d = 2``."""
    A = np.asarray(a, dtype=float) if mesh is None else coefficient_array(mesh, a)
    if A.ndim == 2:
        A = A[None]
    tr = np.trace(A, axis1=1, axis2=2)
    beta = A.shape[-1] - tr**2 / np.einsum("tij,tij->t", A, A)
    return beta if return_all else float(beta.max())


def cordes_beta_from_eigs(a) -> float:
    """``1 - min_T 2 lmin lmax / (lmin^2 + lmax^2)`` (two-dimensional identity)."""
    A = np.asarray(a, dtype=float)
    if A.ndim == 2:
        A = A[None]
    lam = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, 1, 2)))
    lo, hi = lam[:, 0], lam[:, -1]
    return float(1.0 - np.min(2 * lo * hi / (lo**2 + hi**2)))


# ---------------------------------------------------------------- flux spaces
def gradient_operator(mesh: TriangleMesh) -> sparse.csr_matrix:
    """Sparse map from nodal values to stacked per-triangle gradients (row ``2 t + d``)."""
    T = mesh.n_triangles
    rows = (2 * np.arange(T)[:, None, None] + np.arange(2)[None, None, :]).repeat(3, axis=1)
    cols = np.broadcast_to(mesh.triangles[:, :, None], (T, 3, 2))
    return sparse.csr_matrix(
        (mesh.hat_gradients.ravel(), (rows.ravel(), cols.ravel())), shape=(2 * T, mesh.n_vertices)
    )


def block_coefficient(mesh: TriangleMesh, a) -> sparse.csr_matrix:
    """Per-triangle 2x2 blocks of ``a`` as a block-diagonal sparse matrix."""
    return _bdiag(coefficient_array(mesh, a))


def _bdiag(A: np.ndarray) -> sparse.csr_matrix:
    T = len(A)
    r = 2 * np.arange(T)[:, None, None] + np.arange(2)[None, :, None]
    c = 2 * np.arange(T)[:, None, None] + np.arange(2)[None, None, :]
    r, c = np.broadcast_arrays(r, c)
    return sparse.csr_matrix((np.ascontiguousarray(A).ravel(), (r.ravel(), c.ravel())), shape=(2 * T, 2 * T))


@dataclass(eq=False)
class NonconformingSpace:
    """Span of piecewise constant vector fields ``zeta_k`` on the fine mesh.

    Elements are stored as a sparse ``(2 T, N)`` matrix ``Z`` (row
    ``2 t + d``); a dense ``(T, 2, N)`` array is accepted as well.  Gram
    matrices: ``full`` (L2), ``pot`` (L2 of potential parts) and ``curl``
    (L2 of the remainders, formed explicitly to avoid cancellation).
    """

    mesh: TriangleMesh
    Z: sparse.csr_matrix
    coarse: TriangleMesh | None = None
    chunk_rows: int = 8192

    def __post_init__(self):
        if not sparse.issparse(self.Z):
            z = np.asarray(self.Z, dtype=float)
            self.Z = sparse.csr_matrix(z.reshape(2 * self.mesh.n_triangles, -1))
        self.Z = sparse.csr_matrix(self.Z)
        mesh = self.mesh
        self.weights = np.repeat(mesh.areas, 2)
        self.grad_op = gradient_operator(mesh)
        WZ = sparse.diags(self.weights) @ self.Z
        self.full = (self.Z.T @ WZ).toarray()
        self.loads = np.asarray((self.grad_op.T @ WZ).todense())
        self.potentials = laplacian(mesh).solve(self.loads)
        pot = self.potentials.T @ self.loads
        self.pot = 0.5 * (pot + pot.T)
        N = self.size
        curl = np.zeros((N, N))
        for s0 in range(0, 2 * mesh.n_triangles, self.chunk_rows):
            rows = slice(s0, s0 + self.chunk_rows)
            R = self.Z[rows].toarray() - self.grad_op[rows] @ self.potentials
            curl += R.T @ (self.weights[rows, None] * R)
        self.curl = 0.5 * (curl + curl.T)

    @property
    def size(self) -> int:
        return self.Z.shape[1]

    @property
    def zeta(self) -> np.ndarray:
        """Dense ``(T, 2, N)`` view (small spaces only)."""
        return self.Z.toarray().reshape(self.mesh.n_triangles, 2, -1)

    def weighted_gram(self, a) -> np.ndarray:
        A = block_coefficient(self.mesh, a)
        G = (self.Z.T @ (sparse.diags(self.weights) @ (A @ self.Z))).toarray()
        return 0.5 * (G + G.T)

    def element(self, c) -> PwVectorField:
        return PwVectorField(self.mesh, np.asarray(self.Z @ c).reshape(-1, 2))

    def extended(self, extra: np.ndarray) -> "NonconformingSpace":
        extra = sparse.csr_matrix(np.asarray(extra, dtype=float).reshape(2 * self.mesh.n_triangles, -1))
        return NonconformingSpace(self.mesh, sparse.hstack([self.Z, extra], format="csr"), self.coarse)


def coarse_jacobians(Fmap: HarmonicMap, coarse: TriangleMesh) -> np.ndarray:
    """Gradient of the coarse P1 interpolant of ``F`` on each coarse triangle."""
    fine = Fmap.mesh
    tri, bary = fine.locate(coarse.vertices)
    vid = fine.triangles[tri, np.argmax(bary, axis=1)]
    Fc = Fmap.image_vertices[vid]  # (n_coarse, 2)
    return np.einsum("tki,tkj->tij", Fc[coarse.triangles], coarse.hat_gradients)


def nonconforming_space(Fmap: HarmonicMap, coarse: TriangleMesh) -> NonconformingSpace:
    """Fields ``J^T J_c^{-T} grad(phi_k)`` for interior coarse hats ``phi_k``."""
    fine = Fmap.mesh
    check_nested(coarse, fine)
    Jc = coarse_jacobians(Fmap, coarse)
    detc = np.linalg.det(Jc)
    bad = np.flatnonzero(np.abs(detc) <= 1e-14)
    if len(bad):
        raise ValueError(f"singular coarse interpolant gradient on coarse triangle(s) {bad[:20].tolist()}")
    parent = coarse_parent(coarse, fine)
    col = np.full(coarse.n_vertices, -1)
    col[coarse.interior] = np.arange(len(coarse.interior))
    # transported coarse hat gradients J_c^{-T} grad(phi) per coarse triangle and local vertex
    hat_img = np.linalg.solve(np.swapaxes(Jc, 1, 2)[:, None], coarse.hat_gradients[..., None])[..., 0]
    J = Fmap.jacobian
    rows, cols, vals = [], [], []
    t_idx = np.arange(fine.n_triangles)
    for c in range(3):
        k = col[coarse.triangles[parent, c]]
        ok = k >= 0
        vec = np.einsum("tji,tj->ti", J[ok], hat_img[parent[ok], c])
        for d in range(2):
            rows.append(2 * t_idx[ok] + d)
            cols.append(k[ok])
            vals.append(vec[:, d])
    Z = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * fine.n_triangles, len(coarse.interior)),
    )
    return NonconformingSpace(fine, Z, coarse)


def conforming_space(coarse: TriangleMesh, fine: TriangleMesh) -> NonconformingSpace:
    """Gradients of interior coarse hats (a space of exact gradients)."""
    from .bases import coarse_hats

    hats = sparse.csr_matrix(coarse_hats(coarse, fine))
    return NonconformingSpace(fine, gradient_operator(fine) @ hats, coarse)


def kappa_V(space: NonconformingSpace) -> float:
    """``sup ||zeta_curl|| / ||zeta||`` via the generalized eigenproblem (curl Gram, full Gram)."""
    G = space.full
    try:
        sla.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise ValueError("full Gram matrix is rank deficient") from exc
    if np.linalg.cond(G) > 1e12:
        raise ValueError("full Gram matrix is rank deficient")
    lam = sla.eigh(0.5 * (space.curl + space.curl.T), G, eigvals_only=True)
    return float(np.sqrt(np.clip(lam.max(), 0.0, 1.0)))


@dataclass
class DGResult:
    zeta: PwVectorField
    coefficients: np.ndarray
    error: float
    u: DiscreteField


def poisson_potential(mesh: TriangleMesh, f) -> np.ndarray:
    from .bases import _nodal

    return laplacian(mesh).solve(assemble_mass(mesh) @ _nodal(mesh, f))


def dg_solve(space: NonconformingSpace, a, f) -> DGResult:
    """``zeta_V`` in the span with ``int eta^T a zeta_V = int eta^T grad w`` for all ``eta``."""
    from .bases import _nodal

    mesh = space.mesh
    A = coefficient_array(mesh, a)
    Ga = space.weighted_gram(A)
    w = poisson_potential(mesh, f)
    rhs = space.loads.T @ w
    try:
        c = sla.cho_solve(sla.cho_factor(Ga), rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError("DG system is not positive definite") from exc
    zeta = space.element(c)
    u = DirichletOperator(mesh, A).solve(assemble_mass(mesh) @ _nodal(mesh, f))
    uf = DiscreteField(mesh, u, zero_boundary=True)
    err = (gradient(uf) - zeta).norm()
    return DGResult(zeta, c, err, uf)


@dataclass
class DVEstimate:
    value: float
    per_rhs: np.ndarray
    direct: np.ndarray
    representative_gap: float


def estimate_DV(space: NonconformingSpace, a, rhs_family) -> DVEstimate:
    """Sampled ``sup_w inf_zeta ||(grad w - (a zeta)_pot)|| / ||f||`` with ``-Lap w = f``.

    Uses the representative ``a' = I``, ``V' = (a V)_pot``.  The direct
    evaluation with ``a`` itself (flux of the rough solution) is returned
    alongside; their largest relative difference is ``representative_gap``.
    """
    mesh = space.mesh
    A = coefficient_array(mesh, a)
    lap = laplacian(mesh)
    R = np.asarray((space.grad_op.T @ (sparse.diags(space.weights) @ (block_coefficient(mesh, A) @ space.Z))).todense())
    P = lap.solve(R)
    gram = P.T @ R
    gram = 0.5 * (gram + gram.T)

    if isinstance(rhs_family, (int, np.integer)):
        from .spectral import laplace_eigs_square

        rhs_family = laplace_eigs_square(int(rhs_family))
    F = np.column_stack([p.nodal(mesh) if isinstance(p, EigenPair) else np.asarray(p) for p in rhs_family])
    Mass = assemble_mass(mesh)
    B = Mass @ F
    fnorm = np.sqrt(np.einsum("ij,ij->j", F, B))

    def best(Wpot, Bload):
        c, *_ = np.linalg.lstsq(gram, P.T @ Bload, rcond=1e-13)
        res_w = Wpot - P @ c
        res_b = Bload - R @ c
        return np.sqrt(np.maximum(np.einsum("ij,ij->j", res_w, res_b), 0.0))

    W = lap.solve(B)
    rep = best(W, B) / fnorm
    # direct: pot part of a grad u for the rough solution u
    op = DirichletOperator(mesh, A)
    U = op.solve(B)
    KU = op.K @ U
    direct = best(lap.solve(KU), KU) / fnorm
    gap = float(np.max(np.abs(rep - direct) / np.maximum(rep, 1e-300)))
    return DVEstimate(float(rep.max()), rep, direct, gap)


# ---------------------------------------------------------------- witnesses
def lemma_chain(mesh: TriangleMesh, a, lam_max: float, u: DiscreteField, zeta: PwVectorField):
    """Both sides of ``||(a(grad u - zeta))_pot|| <= lam_max (||grad u - zeta_pot|| + ||zeta_curl||)``."""
    A = coefficient_array(mesh, a)
    diff = gradient(u) - zeta
    lhs = helmholtz_pot(PwVectorField(mesh, np.einsum("tij,tj->ti", A, diff.values))).pot_norm
    split = helmholtz_pot(zeta)
    rhs = lam_max * ((gradient(u) - split.pot).norm() + split.curl_norm)
    return lhs, rhs


def inequality_witness(mesh: TriangleMesh, Q, n_samples=100, n_modes=10, seed=0) -> float:
    """Largest ``||u||_{L2} / ||Lap^{-1} div(Q grad u)||_{L2}`` over random smooth ``u``.

    Samples are random combinations of the first ``n_modes`` square
    eigenfunctions interpolated on ``mesh`` (zero on the boundary).
    """
    from .spectral import laplace_eigs_square

    rng = np.random.default_rng(seed)
    pairs = laplace_eigs_square(n_modes)
    modes = np.column_stack([p(mesh.vertices) for p in pairs])
    modes[mesh.boundary_mask] = 0.0
    U = modes @ rng.standard_normal((n_modes, n_samples))
    KQ = assemble_stiffness(mesh, Q)
    V = laplacian(mesh).solve(KQ @ U)
    M = assemble_mass(mesh)
    num = np.sqrt(np.einsum("ij,ij->j", U, M @ U))
    den = np.sqrt(np.einsum("ij,ij->j", V, M @ V))
    return float(np.max(num / den))
