"""Scalar P1 finite elements on `TriangleMesh`.

Coefficients are per-triangle arrays of shape ``(T, 2, 2)`` as produced by
`fluxlab.coeff.sample_on_mesh`; a scalar or a single 2x2 matrix is broadcast.
Homogeneous Dirichlet conditions are imposed by eliminating boundary rows and
columns, so reduced operators stay SPD.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from . import sparsela
from .mesh import TriangleMesh


@dataclass(eq=False)
class DiscreteField:
    """P1 function given by one value per vertex."""

    mesh: TriangleMesh
    values: np.ndarray
    zero_boundary: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.mesh.n_vertices:
            raise ValueError("one nodal value per vertex required")
        if self.zero_boundary and np.any(self.values[self.mesh.boundary_mask] != 0):
            raise ValueError("field flagged zero-on-boundary has non-zero boundary values")

    def __sub__(self, other):
        return DiscreteField(self.mesh, self.values - other.values, self.zero_boundary and other.zero_boundary)


@dataclass(eq=False)
class PwVectorField:
    """Piecewise constant vector field, one 2-vector per triangle."""

    mesh: TriangleMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_triangles, 2):
            raise ValueError(f"expected shape ({self.mesh.n_triangles}, 2), got {self.values.shape}")

    def __add__(self, other):
        return PwVectorField(self.mesh, self.values + other.values)

    def __sub__(self, other):
        return PwVectorField(self.mesh, self.values - other.values)

    def __rmul__(self, s):
        return PwVectorField(self.mesh, s * self.values)

    def dot(self, other) -> float:
        return float(np.sum(self.mesh.areas[:, None] * self.values * other.values))

    def norm(self) -> float:
        return float(np.sqrt(max(self.dot(self), 0.0)))


def coefficient_array(mesh: TriangleMesh, a) -> np.ndarray:
    """Normalize a coefficient to a ``(T, 2, 2)`` array on ``mesh``."""
    if a is None:
        a = 1.0
    if callable(a):
        a = a(mesh.barycenters)
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return np.broadcast_to(a * np.eye(2), (mesh.n_triangles, 2, 2))
    if a.shape == (2, 2):
        return np.broadcast_to(a, (mesh.n_triangles, 2, 2))
    if a.shape == (mesh.n_triangles,):
        return a[:, None, None] * np.eye(2)
    if a.shape != (mesh.n_triangles, 2, 2):
        raise ValueError(
            f"coefficient sampled on {a.shape[0]} triangles, mesh has {mesh.n_triangles}"
        )
    return a


def _scatter(mesh, local, size_per_node=1):
    t = mesh.triangles
    if size_per_node == 1:
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        n = mesh.n_vertices
    else:
        dofs = (size_per_node * t[:, :, None] + np.arange(size_per_node)).reshape(len(t), -1)
        k = dofs.shape[1]
        rows = np.repeat(dofs, k, axis=1).ravel()
        cols = np.tile(dofs, (1, k)).ravel()
        n = size_per_node * mesh.n_vertices
    A = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def assemble_stiffness(mesh: TriangleMesh, a=None) -> sparse.csr_matrix:
    """``K_ij = sum_T |T| grad(phi_i)^T a_T grad(phi_j)`` over all vertices."""
    a = coefficient_array(mesh, a)
    G = mesh.hat_gradients
    local = mesh.areas[:, None, None] * np.einsum("tid,tde,tje->tij", G, a, G)
    return _scatter(mesh, local)


def assemble_mass(mesh: TriangleMesh) -> sparse.csr_matrix:
    """Consistent P1 mass matrix."""
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = mesh.areas[:, None, None] * ref
    return _scatter(mesh, local)


def load_from_flux(mesh: TriangleMesh, xi) -> np.ndarray:
    """Vector ``r_i = sum_T |T| xi_T . grad(phi_i)`` (weak divergence of ``-xi``)."""
    xi = xi.values if isinstance(xi, PwVectorField) else np.asarray(xi)
    G = mesh.hat_gradients
    local = (mesh.areas[:, None, None] * G * xi[:, None, :]).sum(axis=2)
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)


def load_from_fluxes(mesh: TriangleMesh, xis: np.ndarray) -> np.ndarray:
    """Stacked version of `load_from_flux`; ``xis`` has shape ``(T, 2, m)``."""
    G = mesh.hat_gradients
    local = np.einsum("t,tkd,tdm->tkm", mesh.areas, G, xis)
    P = sparse.coo_matrix(
        (np.ones(mesh.triangles.size), (mesh.triangles.ravel(), np.arange(mesh.triangles.size))),
        shape=(mesh.n_vertices, mesh.triangles.size),
    ).tocsr()
    return P @ local.reshape(-1, xis.shape[2])


class DirichletOperator:
    """``-div(a grad .)`` on P1 functions vanishing on the boundary.

    Holds the full stiffness matrix, its interior block and a lazily built
    sparse factorization shared by all solves.
    """

    def __init__(self, mesh: TriangleMesh, a=None):
        self.mesh = mesh
        self.a = coefficient_array(mesh, a)
        self.K = assemble_stiffness(mesh, self.a)
        self.interior = mesh.interior
        self.K_ii = sparsela.restrict(self.K, self.interior)

    @cached_property
    def factor(self) -> sparsela.Factorized:
        return sparsela.Factorized(self.K_ii)

    def solve(self, load) -> np.ndarray:
        """Nodal solution(s) for full-length load vector(s); boundary values are zero."""
        load = np.asarray(load, dtype=float)
        out = np.zeros(load.shape)
        out[self.interior] = self.factor.solve(load[self.interior])
        return out

    def solve_cg(self, load, tol=1e-10) -> np.ndarray:
        load = np.asarray(load, dtype=float)
        out = np.zeros(load.shape)
        out[self.interior] = sparsela.solve_spd(self.K_ii, load[self.interior], tol=tol)
        return out

    def lifted_solve(self, boundary_values, load=None) -> np.ndarray:
        """Solution with prescribed boundary values (lifting by the nodal interpolant)."""
        g = np.zeros(self.mesh.n_vertices)
        bd = self.mesh.boundary_mask
        g[bd] = np.asarray(boundary_values, dtype=float)[bd]
        rhs = -(self.K @ g)
        if load is not None:
            rhs = rhs + load
        u = self.solve(rhs)
        u[bd] = g[bd]
        return u


def interpolate(mesh: TriangleMesh, f) -> np.ndarray:
    """Nodal interpolant of a callable, a `DiscreteField` or a nodal array."""
    if isinstance(f, DiscreteField):
        return f.values
    if callable(f):
        return np.asarray(f(mesh.vertices), dtype=float)
    f = np.asarray(f, dtype=float)
    if f.ndim == 0:
        return np.full(mesh.n_vertices, float(f))
    return f


def load_vector(mesh: TriangleMesh, f, mass=None) -> np.ndarray:
    """Mass matrix applied to the nodal interpolant of ``f``."""
    M = assemble_mass(mesh) if mass is None else mass
    return M @ interpolate(mesh, f)


def solve_dirichlet(mesh: TriangleMesh, a, f, method="direct", tol=1e-10) -> DiscreteField:
    """P1 Galerkin solution of ``-div(a grad u) = f``, ``u = 0`` on the boundary."""
    op = DirichletOperator(mesh, a)
    b = load_vector(mesh, f)
    u = op.solve(b) if method == "direct" else op.solve_cg(b, tol=tol)
    return DiscreteField(mesh, u, zero_boundary=True)


def gradient(u) -> PwVectorField:
    """Exact per-triangle gradient of a P1 function."""
    mesh = u.mesh
    vals = u.values[mesh.triangles]
    return PwVectorField(mesh, np.einsum("tk,tkd->td", vals, mesh.hat_gradients))


def gradients(mesh: TriangleMesh, U: np.ndarray) -> np.ndarray:
    """Per-triangle gradients of several nodal vectors: ``(n, m) -> (T, 2, m)``."""
    vals = U[mesh.triangles]  # (T, 3, m)
    return np.einsum("tkm,tkd->tdm", vals, mesh.hat_gradients)


def rotated_gradient(u) -> PwVectorField:
    """``(-d2 u, d1 u)``: divergence-free companion of the gradient."""
    g = gradient(u).values
    return PwVectorField(u.mesh, np.column_stack([-g[:, 1], g[:, 0]]))


def norms(u, a=None, mass=None, stiffness=None) -> dict:
    """``L2``, ``H1_semi`` and ``energy`` norms of a P1 field.

    A `PwVectorField` yields its L2 norm (and the a-weighted norm) only.
    """
    if isinstance(u, PwVectorField):
        out = {"L2": u.norm()}
        if a is not None:
            A = coefficient_array(u.mesh, a)
            out["energy"] = float(
                np.sqrt(np.einsum("t,ti,tij,tj->", u.mesh.areas, u.values, A, u.values))
            )
        return out
    mesh = u.mesh
    v = u.values
    M = assemble_mass(mesh) if mass is None else mass
    K = assemble_stiffness(mesh) if stiffness is None else stiffness
    out = {"L2": float(np.sqrt(v @ (M @ v))), "H1_semi": float(np.sqrt(max(v @ (K @ v), 0.0)))}
    if a is None:
        out["energy"] = out["H1_semi"]
    else:
        Ka = assemble_stiffness(mesh, a)
        out["energy"] = float(np.sqrt(max(v @ (Ka @ v), 0.0)))
    return out


def export_field_csv(u, path) -> None:
    """Columns ``vertex, x, y, value``."""
    mesh = u.mesh
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex", "x", "y", "value"])
        for k, ((x, y), val) in enumerate(zip(mesh.vertices, u.values)):
            w.writerow([k, f"{x:.17g}", f"{y:.17g}", f"{val:.17g}"])
