"""Vector P1 elasticity in two dimensions.

Displacements are stored interleaved: dof ``2 v + c`` is component ``c`` of
vertex ``v``.  Per-triangle elasticity tensors are 3x3 Voigt matrices
(``[e11, e22, 2 e12]`` strains).
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from . import sparsela
from .coeff import voigt_to_mandel, voigt_to_tensor
from .fem import _scatter, assemble_mass
from .mesh import TriangleMesh


@dataclass(eq=False)
class VectorField2:
    """Vector P1 field with two nodal values per vertex, shape ``(n_vertices, 2)``."""

    mesh: TriangleMesh
    values: np.ndarray
    zero_boundary: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 2)
        if v.shape != (self.mesh.n_vertices, 2):
            raise ValueError("expected two nodal values per vertex")
        self.values = v
        if self.zero_boundary and np.any(v[self.mesh.boundary_mask] != 0):
            raise ValueError("field flagged zero-on-boundary has non-zero boundary values")

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def __sub__(self, other):
        return VectorField2(self.mesh, self.values - other.values, self.zero_boundary and other.zero_boundary)


def interior_dofs(mesh: TriangleMesh) -> np.ndarray:
    return (2 * mesh.interior[:, None] + np.arange(2)).ravel()


def voigt_array(mesh: TriangleMesh, C) -> np.ndarray:
    if callable(C):
        C = C(mesh.barycenters)
    C = np.asarray(C, dtype=float)
    if C.shape == (3, 3):
        return np.broadcast_to(C, (mesh.n_triangles, 3, 3))
    if C.shape != (mesh.n_triangles, 3, 3):
        raise ValueError(f"tensor sampled on {C.shape[0]} triangles, mesh has {mesh.n_triangles}")
    return C


def b_matrices(mesh: TriangleMesh) -> np.ndarray:
    """Strain-displacement matrices, shape ``(T, 3, 6)``."""
    G = mesh.hat_gradients
    B = np.zeros((mesh.n_triangles, 3, 6))
    B[:, 0, 0::2] = G[:, :, 0]
    B[:, 1, 1::2] = G[:, :, 1]
    B[:, 2, 0::2] = G[:, :, 1]
    B[:, 2, 1::2] = G[:, :, 0]
    return B


def assemble_elastic(mesh: TriangleMesh, C) -> sparse.csr_matrix:
    """Vector P1 stiffness ``sum_T |T| B^T D_T B`` on all ``2 n`` dofs."""
    D = voigt_array(mesh, C)
    eig = np.linalg.eigvalsh(voigt_to_mandel(D))
    bad = np.flatnonzero(eig[:, 0] <= 0)
    if len(bad):
        raise ValueError(f"Voigt matrix not positive definite on triangle(s) {bad[:10].tolist()}")
    B = b_matrices(mesh)
    local = mesh.areas[:, None, None] * np.einsum("tai,tab,tbj->tij", B, D, B)
    return _scatter(mesh, local, size_per_node=2)


def vector_mass(mesh: TriangleMesh) -> sparse.csr_matrix:
    return sparse.kron(assemble_mass(mesh), sparse.identity(2), format="csr")


class ElasticOperator:
    """``-div(C : eps(.))`` on vector P1 fields vanishing on the boundary."""

    def __init__(self, mesh: TriangleMesh, C):
        self.mesh = mesh
        self.C = voigt_array(mesh, C)
        self.K = assemble_elastic(mesh, self.C)
        self.interior = interior_dofs(mesh)
        self.K_ii = sparsela.restrict(self.K, self.interior)

    @cached_property
    def factor(self):
        return sparsela.Factorized(self.K_ii)

    def solve(self, load) -> np.ndarray:
        load = np.asarray(load, dtype=float)
        out = np.zeros(load.shape)
        out[self.interior] = self.factor.solve(load[self.interior])
        return out

    def lifted_solve(self, boundary_values) -> np.ndarray:
        g = np.zeros(2 * self.mesh.n_vertices)
        bd = np.repeat(self.mesh.boundary_mask, 2)
        g[bd] = np.asarray(boundary_values, dtype=float).ravel()[bd]
        u = self.solve(-(self.K @ g))
        u[bd] = g[bd]
        return u


class VectorLaplacian:
    """Componentwise Dirichlet Laplacian on interleaved dofs (flux projections)."""

    _cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()

    def __init__(self, mesh: TriangleMesh):
        from .fluxnorm import laplacian

        self.mesh = mesh
        self.scalar = laplacian(mesh)
        self.K = sparse.kron(self.scalar.K, sparse.identity(2), format="csr")
        self.interior = interior_dofs(mesh)

    @classmethod
    def for_mesh(cls, mesh):
        op = cls._cache.get(mesh)
        if op is None:
            op = cls._cache[mesh] = cls(mesh)
        return op

    def solve(self, load) -> np.ndarray:
        load = np.asarray(load, dtype=float)
        nv = self.mesh.n_vertices
        tail = load.shape[1:]
        L = load.reshape((nv, 2) + tail)
        out = np.empty_like(L)
        for c in range(2):
            out[:, c] = self.scalar.solve(L[:, c])
        return out.reshape(load.shape)


def displacement_gradient(mesh: TriangleMesh, U) -> np.ndarray:
    """Per-triangle ``grad[t, i, j] = d_j U_i``; extra trailing axes are carried along."""
    U = np.asarray(U, dtype=float)
    nv = mesh.n_vertices
    V = U.reshape((nv, 2) + U.shape[1:] if U.shape[0] == 2 * nv else U.shape)
    vals = V[mesh.triangles]  # (T, 3, 2, ...)
    return np.einsum("tki...,tkj->tij...", vals, mesh.hat_gradients)


def strain(u: VectorField2) -> np.ndarray:
    """Voigt strains ``(T, 3)``."""
    g = displacement_gradient(u.mesh, u.values)
    return np.column_stack([g[:, 0, 0], g[:, 1, 1], g[:, 0, 1] + g[:, 1, 0]])


def strain_matrix(u: VectorField2) -> np.ndarray:
    g = displacement_gradient(u.mesh, u.values)
    return 0.5 * (g + np.swapaxes(g, 1, 2))


def stress(u: VectorField2, C) -> np.ndarray:
    """``C : eps(u)`` as per-triangle symmetric 2x2 matrices."""
    D = voigt_array(u.mesh, C)
    s = np.einsum("tij,tj->ti", D, strain(u))
    out = np.empty((len(s), 2, 2))
    out[:, 0, 0], out[:, 1, 1] = s[:, 0], s[:, 1]
    out[:, 0, 1] = out[:, 1, 0] = s[:, 2]
    return out


def matrix_l2_norm(mesh: TriangleMesh, F: np.ndarray) -> float:
    return float(np.sqrt(np.einsum("t,tij,tij->", mesh.areas, F, F)))


def vector_load(mesh: TriangleMesh, b, mass=None) -> np.ndarray:
    """Block mass matrix applied to the nodal interpolant of a body force."""
    if isinstance(b, VectorField2):
        vals = b.values
    elif callable(b):
        vals = np.asarray(b(mesh.vertices), dtype=float)
    else:
        vals = np.asarray(b, dtype=float).reshape(-1, 2)
    M = vector_mass(mesh) if mass is None else mass
    return M @ vals.ravel()


def solve_elastic(mesh: TriangleMesh, C, b) -> VectorField2:
    """Displacement solving ``-div(C : eps(u)) = b`` with ``u = 0`` on the boundary."""
    op = ElasticOperator(mesh, C)
    u = op.solve(vector_load(mesh, b))
    return VectorField2(mesh, u, zero_boundary=True)


HARMONIC_PAIRS = ((0, 0), (1, 1), (0, 1))


def harmonic_displacements(mesh: TriangleMesh, C) -> dict:
    """Solutions of ``div(C : grad F^kl) = 0`` with ``F^kl = (x_k e_l + x_l e_k) / 2`` on the boundary.

    Keys are ``"11"``, ``"22"`` and ``"12"``.
    """
    op = ElasticOperator(mesh, C)
    out = {}
    x = mesh.vertices
    for k, l in HARMONIC_PAIRS:
        g = np.zeros((mesh.n_vertices, 2))
        g[:, l] += 0.5 * x[:, k]
        g[:, k] += 0.5 * x[:, l]
        out[f"{k + 1}{l + 1}"] = VectorField2(mesh, op.lifted_solve(g))
    return out


def rigid_kernel_dimension(mesh: TriangleMesh, C, tol=1e-10) -> int:
    """Null-space dimension of the unconstrained elastic stiffness."""
    K = assemble_elastic(mesh, C).toarray()
    eig = np.linalg.eigvalsh(K)
    return int(np.sum(eig < tol * eig.max()))


def cordes_beta_tensor(C, return_all=False):
    """``max_T (d^2 - tr(B A^-1 B^T))`` with ``B_jm = sum_k C_kmkj`` and
    ``A_j'm = sum_ikl C_imkl C_ij'kl``.

    ``C`` may be Voigt matrices ``(..., 3, 3)`` or full tensors
    ``(..., 2, 2, 2, 2)``; the latter allows tensors without minor symmetry
    such as ``delta_ik delta_jl``.
    """
    C = np.asarray(C, dtype=float)
    if C.shape[-2:] == (3, 3) and C.ndim in (2, 3):
        C = voigt_to_tensor(C)
    if C.ndim == 4:
        C = C[None]
    d = C.shape[-1]
    B = np.einsum("tkmkj->tjm", C)
    A = np.einsum("timkl,tijkl->tjm", C, C)
    det = np.linalg.det(A)
    bad = np.flatnonzero(np.abs(det) <= 1e-14 * np.max(np.abs(A), axis=(1, 2)) ** d)
    if len(bad):
        raise ValueError(f"singular A matrix on triangle(s) {bad[:10].tolist()}")
    X = np.linalg.solve(A, np.swapaxes(B, 1, 2))  # A^-1 B^T
    beta = d * d - np.einsum("tij,tji->t", B, X)
    return beta if return_all else float(beta.max())
