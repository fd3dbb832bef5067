"""Weyl-Helmholtz splitting and flux norms on a fine P1 mesh.

The potential part of a piecewise constant field ``xi`` is ``grad w`` where
``w`` is the P1 function vanishing on the boundary with
``(grad w, grad v) = (xi, grad v)`` for every such ``v``.  The flux norm of
``u`` is the L2 norm of the potential part of ``a grad u``; in matrix form
``|u|_flux^2 = u^T K_a L^{-1} K_a u`` with ``L`` the Dirichlet Laplacian.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .fem import DirichletOperator, DiscreteField, PwVectorField, gradient, load_from_flux
from .mesh import TriangleMesh

_LAPLACIANS: "weakref.WeakKeyDictionary[TriangleMesh, DirichletOperator]" = weakref.WeakKeyDictionary()


def laplacian(mesh: TriangleMesh) -> DirichletOperator:
    """Shared Dirichlet Laplacian (with factorization) for ``mesh``."""
    op = _LAPLACIANS.get(mesh)
    if op is None:
        op = DirichletOperator(mesh, None)
        _LAPLACIANS[mesh] = op
    return op


@dataclass(eq=False)
class HelmholtzSplit:
    xi: PwVectorField
    potential: DiscreteField
    pot: PwVectorField
    curl: PwVectorField

    @property
    def pot_norm(self) -> float:
        return self.pot.norm()

    @property
    def curl_norm(self) -> float:
        return self.curl.norm()

    @property
    def cross(self) -> float:
        """L2 inner product of the two parts (zero up to round-off)."""
        return self.pot.dot(self.curl)


def helmholtz_pot(xi: PwVectorField, lap: DirichletOperator | None = None) -> HelmholtzSplit:
    """Split ``xi`` into the gradient of an H1_0 potential and a divergence-free rest."""
    mesh = xi.mesh
    lap = lap or laplacian(mesh)
    w = lap.solve(load_from_flux(mesh, xi))
    wf = DiscreteField(mesh, w, zero_boundary=True)
    pot = gradient(wf)
    return HelmholtzSplit(xi, wf, pot, xi - pot)


def flux_field(u: DiscreteField, a) -> PwVectorField:
    from .fem import coefficient_array

    A = coefficient_array(u.mesh, a)
    g = gradient(u).values
    return PwVectorField(u.mesh, np.einsum("tij,tj->ti", A, g))


def flux_norm(u: DiscreteField, a, lap: DirichletOperator | None = None) -> float:
    """``|| (a grad u)_pot ||_{L2}``."""
    return helmholtz_pot(flux_field(u, a), lap).pot_norm


def flux_norm_from_stiffness(K_a, v, lap: DirichletOperator) -> float:
    """Flux norm of nodal vector(s) ``v`` given the assembled ``K_a``."""
    r = K_a @ v
    w = lap.solve(r)
    val = np.einsum("i...,i...->...", w, r)
    return np.sqrt(np.maximum(val, 0.0))


def flux_distance(u: DiscreteField, v: DiscreteField, a, lap=None) -> float:
    return flux_norm(u - v, a, lap)


# ---------------------------------------------------------------- elasticity
def vector_laplacian(mesh: TriangleMesh):
    """Componentwise Dirichlet Laplacian on interleaved vector P1 dofs."""
    from .elasticity import VectorLaplacian

    return VectorLaplacian.for_mesh(mesh)


def matrix_field_load(mesh: TriangleMesh, sigma: np.ndarray) -> np.ndarray:
    """``r_(2v+i) = sum_T |T| sum_j sigma_T[i, j] d_j phi_v`` for a ``(T, 2, 2)`` field."""
    G = mesh.hat_gradients
    local = np.einsum("t,tij,tkj->tki", mesh.areas, sigma, G)  # (T, 3 vertices, 2 comps)
    out = np.zeros(2 * mesh.n_vertices)
    for c in range(2):
        out[c::2] = np.bincount(mesh.triangles.ravel(), weights=local[:, :, c].ravel(), minlength=mesh.n_vertices)
    return out


def helmholtz_pot_matrix(mesh: TriangleMesh, sigma: np.ndarray, vlap=None):
    """Project a per-triangle matrix field onto gradients of vector H1_0 fields.

    Returns ``(W, pot)`` with ``W`` the interleaved nodal potential and
    ``pot`` the ``(T, 2, 2)`` gradient ``pot[t, i, j] = d_j W_i``.
    """
    vlap = vlap or vector_laplacian(mesh)
    W = vlap.solve(matrix_field_load(mesh, sigma))
    from .elasticity import displacement_gradient

    return W, displacement_gradient(mesh, W)


def flux_norm_elastic(u, C, vlap=None) -> float:
    """``|| (C : eps(u))_pot ||_{L2}`` for an interleaved displacement vector."""
    from .elasticity import VectorField2, stress

    mesh = u.mesh if isinstance(u, VectorField2) else None
    if mesh is None:
        raise TypeError("flux_norm_elastic expects a VectorField2")
    sigma = stress(u, C)
    _, pot = helmholtz_pot_matrix(mesh, sigma, vlap)
    return float(np.sqrt(np.einsum("t,tij,tij->", mesh.areas, pot, pot)))
