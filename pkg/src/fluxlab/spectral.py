"""Laplace-Dirichlet eigenpairs of the unit square, Weyl's law and n-width constants."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import sparsela
from .fem import assemble_mass, assemble_stiffness
from .mesh import TriangleMesh


@dataclass(frozen=True, eq=False)
class EigenPair:
    """Eigenvalue ``lam`` and L2-normalized eigenfunction.

    Analytic pairs carry the mode numbers ``(m, n)`` and evaluate
    ``2 sin(m pi x) sin(n pi y)``; numeric pairs carry nodal ``values`` on
    ``mesh``.
    """

    lam: float
    k: int
    m: int | None = None
    n: int | None = None
    mesh: TriangleMesh | None = None
    values: np.ndarray | None = None

    def __call__(self, points) -> np.ndarray:
        if self.m is None:
            if self.mesh is None:
                raise ValueError("numeric eigenpair has no mesh")
            return self.mesh.interpolate(self.values, points)
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return 2.0 * np.sin(self.m * np.pi * p[:, 0]) * np.sin(self.n * np.pi * p[:, 1])

    def nodal(self, mesh: TriangleMesh) -> np.ndarray:
        if self.mesh is mesh and self.values is not None:
            return self.values
        return self(mesh.vertices)

    def gradient(self, points) -> np.ndarray:
        if self.m is None:
            raise ValueError("analytic gradient only for analytic pairs")
        p = np.atleast_2d(np.asarray(points, dtype=float))
        m, n = self.m, self.n
        sx, sy = np.sin(m * np.pi * p[:, 0]), np.sin(n * np.pi * p[:, 1])
        cx, cy = np.cos(m * np.pi * p[:, 0]), np.cos(n * np.pi * p[:, 1])
        return 2.0 * np.pi * np.column_stack([m * cx * sy, n * sx * cy])


def square_modes(N: int) -> list[tuple[int, int]]:
    """First ``N`` mode pairs ordered by ``m^2 + n^2`` then by ``m``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    r = 1
    while True:
        # every mode with m^2 + n^2 <= r^2 is enumerated; need N of them strictly inside
        modes = [(m, n) for m in range(1, r + 1) for n in range(1, r + 1) if m * m + n * n <= r * r]
        if len(modes) > N:
            modes.sort(key=lambda mn: (mn[0] ** 2 + mn[1] ** 2, mn[0]))
            cutoff = modes[N - 1][0] ** 2 + modes[N - 1][1] ** 2
            if cutoff < r * r:
                return modes[:N]
        r *= 2


def laplace_eigs_square(N: int) -> list[EigenPair]:
    """Exact eigenpairs ``pi^2 (m^2 + n^2)``, ``2 sin(m pi x) sin(n pi y)``."""
    return [
        EigenPair(math.pi**2 * (m * m + n * n), k + 1, m, n)
        for k, (m, n) in enumerate(square_modes(N))
    ]


def square_eigenvalues(N: int) -> np.ndarray:
    return np.array([p.lam for p in laplace_eigs_square(N)])


def laplace_eigs_numeric(mesh: TriangleMesh, N: int) -> list[EigenPair]:
    """P1 eigenpairs of the Dirichlet Laplacian, M-orthonormal."""
    interior = mesh.interior
    if N > len(interior):
        raise ValueError(f"N={N} exceeds the {len(interior)} interior unknowns")
    K = sparsela.restrict(assemble_stiffness(mesh), interior)
    M = sparsela.restrict(assemble_mass(mesh), interior)
    lam, X = sparsela.eig_smallest(K, M, N)
    # fix the sign so that the sum of nodal values is non-negative (reproducible output)
    signs = np.where(X.sum(axis=0) < 0, -1.0, 1.0)
    X = X * signs
    pairs = []
    for k in range(N):
        v = np.zeros(mesh.n_vertices)
        v[interior] = X[:, k]
        pairs.append(EigenPair(float(lam[k]), k + 1, mesh=mesh, values=v))
    return pairs


def weyl_prediction(k, d=2, vol=1.0) -> float:
    """Leading Weyl asymptotic ``4 pi (Gamma(1 + d/2) k / vol)^(2/d)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return 4.0 * math.pi * (math.gamma(1 + d / 2) * k / vol) ** (2.0 / d)


def nwidth_constant(N, d=2, vol=1.0) -> float:
    """Optimal asymptotic approximation constant ``(1/(2 sqrt(pi))) (vol/(Gamma(1+d/2) N))^(1/d)``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return (vol / (math.gamma(1 + d / 2) * N)) ** (1.0 / d) / (2.0 * math.sqrt(math.pi))


def counting_function(lam: float) -> int:
    """Number of square eigenvalues ``<= lam`` (lattice point count)."""
    s = lam / math.pi**2 * (1 + 1e-12)
    count = 0
    m = 1
    while m * m + 1 <= s:
        count += math.isqrt(math.floor(s - m * m))
        m += 1
    return count


def eigs_table(mesh: TriangleMesh, N: int) -> list[dict]:
    """Rows ``k, lambda_exact, lambda_numeric, weyl, ratio`` (ratio = exact / Weyl)."""
    exact = laplace_eigs_square(N)
    num = laplace_eigs_numeric(mesh, N)
    rows = []
    for e, h in zip(exact, num):
        w = weyl_prediction(e.k)
        rows.append(
            {"k": e.k, "lambda_exact": e.lam, "lambda_numeric": h.lam, "weyl": w, "ratio": e.lam / w}
        )
    return rows


def write_eigs_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["k", "lambda_exact", "lambda_numeric", "weyl", "ratio"])
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
