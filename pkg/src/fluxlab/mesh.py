"""Structured triangulations of the unit square.

Vertices of ``build_structured(n)`` are numbered row by row,
``v = j * (n + 1) + i`` for the point ``(i / n, j / n)``.  Each grid cell is
split along its lower-left to upper-right diagonal into a lower-right and an
upper-left triangle, both counterclockwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

BOUNDARY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Conforming triangulation with per-vertex boundary flags.

    ``n_div`` is the number of subdivisions per side when the mesh belongs to
    the structured family (``None`` otherwise).  ``parent`` maps each triangle
    to the triangle it was cut from when the mesh was produced by `refine`.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_mask: np.ndarray
    h: float
    n_div: int | None = None
    parent: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.boundary_mask):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def barycenters(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def hat_gradients(self) -> np.ndarray:
        """Gradients of the three barycentric functions, shape ``(T, 3, 2)``."""
        p = self.vertices[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_a = 2.0 * self.signed_areas
        g = np.empty((self.n_triangles, 3, 2))
        for k in range(3):
            i, j = (k + 1) % 3, (k + 2) % 3
            g[:, k, 0] = (y[:, i] - y[:, j]) / two_a
            g[:, k, 1] = (x[:, j] - x[:, i]) / two_a
        return g

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    def locate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Containing triangle and barycentric coordinates of each point.

        Only structured meshes are supported; points on shared edges are
        assigned to one of the neighbouring triangles.
        """
        if self.n_div is None:
            raise ValueError("point location requires a structured mesh")
        n = self.n_div
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        sx, sy = pts[:, 0] * n, pts[:, 1] * n
        i = np.clip(np.floor(sx).astype(int), 0, n - 1)
        j = np.clip(np.floor(sy).astype(int), 0, n - 1)
        s, t = sx - i, sy - j
        upper = t > s
        tri = 2 * (j * n + i) + upper
        # lower-right: (v00, v10, v11) ; upper-left: (v00, v11, v01)
        bary = np.where(
            upper[:, None],
            np.stack([1 - t, s, t - s], axis=1),
            np.stack([1 - s, s - t, t], axis=1),
        )
        return tri, bary

    def interpolate(self, values, points) -> np.ndarray:
        """Evaluate the P1 function with nodal ``values`` at ``points``."""
        tri, bary = self.locate(points)
        vals = np.asarray(values)
        nodal = vals[self.triangles[tri]]
        if nodal.ndim == 2:
            return np.einsum("pk,pk->p", nodal, bary)
        return np.einsum("pk...,pk->p...", nodal, bary)


def _boundary_mask(vertices: np.ndarray) -> np.ndarray:
    x, y = vertices[:, 0], vertices[:, 1]
    tol = BOUNDARY_TOL
    return (
        (np.abs(x) < tol) | (np.abs(x - 1) < tol) | (np.abs(y) < tol) | (np.abs(y - 1) < tol)
    )


def build_structured(n_div: int) -> TriangleMesh:
    """Uniform criss-cross-free triangulation of ``(0, 1)^2``.

    >>> m = build_structured(2)
    >>> m.n_vertices, m.n_triangles
    (9, 8)
    """
    if int(n_div) != n_div or n_div < 1:
        raise ValueError(f"n_div must be a positive integer, got {n_div!r}")
    n = int(n_div)
    xs = np.arange(n + 1) / n
    X, Y = np.meshgrid(xs, xs)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v00 = (j * (n + 1) + i).ravel()
    v10, v01 = v00 + 1, v00 + n + 1
    v11 = v01 + 1
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([v00, v10, v11])
    tris[1::2] = np.column_stack([v00, v11, v01])
    return TriangleMesh(vertices, tris, _boundary_mask(vertices), float(np.sqrt(2.0) / n), n)


def refine(mesh: TriangleMesh) -> TriangleMesh:
    """Split every triangle into four similar children through edge midpoints.

    Child ``4 * t + c`` has parent ``t``; children 0-2 hold the corners of the
    parent in order and child 3 is the middle triangle.  Structured meshes are
    returned in the canonical numbering of ``build_structured(2 n_div)``
    (quadrisection reproduces that geometry), so ``parent`` is then looked up
    by location instead.
    """
    if mesh.n_div is not None:
        fine = build_structured(2 * mesh.n_div)
        parent, _ = mesh.locate(fine.barycenters)
        return TriangleMesh(fine.vertices, fine.triangles, fine.boundary_mask, fine.h, fine.n_div, parent)
    edges = mesh.edges
    nv = mesh.n_vertices
    mid = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mid])

    key = edges[:, 0] * nv + edges[:, 1]
    order = np.argsort(key)

    def midpoint(a, b):
        k = np.minimum(a, b) * nv + np.maximum(a, b)
        return nv + order[np.searchsorted(key, k, sorter=order)]

    t = mesh.triangles
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
    children = np.stack(
        [
            np.column_stack([a, ab, ca]),
            np.column_stack([ab, b, bc]),
            np.column_stack([ca, bc, c]),
            np.column_stack([ab, bc, ca]),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.n_triangles), 4)
    return TriangleMesh(vertices, children, _boundary_mask(vertices), mesh.h / 2, None, parent)


def aspect_ratio(mesh: TriangleMesh) -> float:
    """Largest circumradius / inradius ratio over the triangles."""
    p = mesh.vertices[mesh.triangles]
    la = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    lb = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    lc = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    area = mesh.areas
    circum = la * lb * lc / (4 * area)
    inr = 2 * area / (la + lb + lc)
    return float(np.max(circum / inr))


def euler_characteristic(mesh: TriangleMesh) -> int:
    return mesh.n_vertices - len(mesh.edges) + mesh.n_triangles


def prolongation(coarse: TriangleMesh, fine: TriangleMesh):
    """Sparse matrix interpolating coarse P1 nodal values onto fine vertices."""
    from scipy import sparse

    tri, bary = coarse.locate(fine.vertices)
    rows = np.repeat(np.arange(fine.n_vertices), 3)
    cols = coarse.triangles[tri].ravel()
    vals = bary.ravel()
    keep = np.abs(vals) > 1e-14
    P = sparse.csr_matrix(
        (vals[keep], (rows[keep], cols[keep])), shape=(fine.n_vertices, coarse.n_vertices)
    )
    return P


def coarse_parent(coarse: TriangleMesh, fine: TriangleMesh) -> np.ndarray:
    """Index of the coarse triangle containing each fine triangle."""
    if fine.n_div is None or coarse.n_div is None or fine.n_div % coarse.n_div:
        raise ValueError("fine mesh must be a structured refinement of the coarse mesh")
    tri, _ = coarse.locate(fine.barycenters)
    return tri


def check_nested(coarse: TriangleMesh, fine: TriangleMesh) -> int:
    """Return the refinement factor, raising if the meshes do not nest."""
    if fine.n_div is None or coarse.n_div is None:
        raise ValueError("nesting check needs structured meshes")
    if fine.n_div % coarse.n_div:
        raise ValueError(
            f"fine n_div={fine.n_div} is not a multiple of coarse n_div={coarse.n_div}"
        )
    return fine.n_div // coarse.n_div


def export_mesh(mesh: TriangleMesh, path) -> None:
    """Write a plain-text node/element file.

    Header ``<vertices> <triangles>``, then one ``x y`` row per vertex and one
    ``i j k`` row per triangle (0-based).
    """
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def read_mesh(path) -> TriangleMesh:
    with open(path) as fh:
        nv, nt = (int(s) for s in fh.readline().split())
        data = fh.read().split()
    coords = np.array(data[: 2 * nv], dtype=float).reshape(nv, 2)
    tris = np.array(data[2 * nv : 2 * nv + 3 * nt], dtype=np.int64).reshape(nt, 3)
    lengths = np.linalg.norm(
        coords[tris[:, [1, 2, 0]]] - coords[tris], axis=2
    )
    return TriangleMesh(coords, tris, _boundary_mask(coords), float(lengths.max()))


def single_triangle(vertices) -> TriangleMesh:
    """Mesh made of one triangle; handy for element-level checks."""
    v = np.asarray(vertices, dtype=float)
    t = np.array([[0, 1, 2]])
    lengths = np.linalg.norm(v[[1, 2, 0]] - v, axis=1)
    return TriangleMesh(v, t, _boundary_mask(v), float(lengths.max()))
