"""Transfer, spectral and reference bases on a fine mesh, and their flux errors.

A basis is a set of fine-mesh nodal fields stored column-wise.  For a basis
``Phi`` and a right-hand side ``f`` with discrete load ``b = M f``, the
best flux-norm approximation error of the solution ``u`` is

    min_c || L^{-1} (K_a u - K_a Phi c) ||_L

with ``L`` the Dirichlet Laplacian (vector Laplacian for elasticity).  The
minimization is a small dense least-squares problem in the L^{-1} inner
product; residuals are formed explicitly instead of subtracting squared
norms so that tiny errors stay accurate.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import elasticity as el
from .fem import DirichletOperator, DiscreteField, assemble_mass, assemble_stiffness
from .fluxnorm import laplacian
from .mesh import TriangleMesh, build_structured, check_nested, prolongation
from .spectral import EigenPair, laplace_eigs_square

GRAM_COND_LIMIT = 1e12
CHUNK = 256


class GramConditionError(ValueError):
    def __init__(self, cond):
        super().__init__(f"Gram matrix condition number {cond:.3e} exceeds {GRAM_COND_LIMIT:.0e}")
        self.cond = cond


@dataclass(eq=False)
class BasisSet:
    """Ordered fine-mesh fields spanning an approximation space.

    ``values`` has one column per basis field (``n_vertices`` rows for scalar
    fields, ``2 n_vertices`` interleaved rows for displacements).
    """

    mesh: TriangleMesh
    values: np.ndarray
    provenance: str
    generators: list
    coefficient: np.ndarray | None = field(default=None, repr=False)
    components: int = 1
    meta: dict = field(default_factory=dict)
    stiffness_gram: np.ndarray | None = field(default=None, repr=False)
    mass_gram: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.values.shape[1]

    @property
    def energy_cond(self) -> float:
        return float(np.linalg.cond(self.stiffness_gram))

    def field(self, k) -> DiscreteField:
        return DiscreteField(self.mesh, self.values[:, k], zero_boundary=True)


# ---------------------------------------------------------------- operators
def operator_for(mesh, coefficient, components=1):
    if components == 1:
        return DirichletOperator(mesh, coefficient)
    return el.ElasticOperator(mesh, coefficient)


def projector_for(mesh, components=1):
    return laplacian(mesh) if components == 1 else el.VectorLaplacian.for_mesh(mesh)


def mass_for(mesh, components=1):
    return assemble_mass(mesh) if components == 1 else el.vector_mass(mesh)


def _finish(basis: BasisSet, op) -> BasisSet:
    Phi = basis.values
    basis.stiffness_gram = Phi.T @ (op.K @ Phi)
    basis.mass_gram = Phi.T @ (mass_for(basis.mesh, basis.components) @ Phi)
    return basis


def coarse_hats(coarse: TriangleMesh, fine: TriangleMesh) -> np.ndarray:
    """Interior coarse hat functions interpolated on the fine mesh, ``(n_fine, N)``."""
    check_nested(coarse, fine)
    return prolongation(coarse, fine)[:, coarse.interior].toarray()


# ---------------------------------------------------------------- builders
def build_transfer_basis(fine: TriangleMesh, a, coarse: TriangleMesh, Q=None, op=None) -> BasisSet:
    """Fields solving ``-div(a grad Phi_k) = div(Q grad phi_k)`` for interior coarse hats.

    The right-hand side is taken weakly: its load vector is minus the
    fine stiffness matrix of ``Q`` applied to the interpolated hat.
    """
    hats = coarse_hats(coarse, fine)
    KQ = assemble_stiffness(fine, Q)
    op = op or DirichletOperator(fine, a)
    Phi = op.solve(-(KQ @ hats))
    basis = BasisSet(
        fine,
        Phi,
        "transfer" if Q is None else "transfer(Q)",
        coarse.interior.tolist(),
        op.a,
        meta={"coarse_n_div": coarse.n_div, "fine_n_div": fine.n_div},
    )
    return _finish(basis, op)


def build_spectral_basis(fine: TriangleMesh, a, N=None, pairs=None, op=None) -> BasisSet:
    """Fields solving ``-div(a grad theta_k) = lam_k Psi_k``.

    ``pairs`` defaults to the first ``N`` analytic square eigenpairs; numeric
    pairs from `laplace_eigs_numeric` on the same mesh are used verbatim.
    """
    if pairs is None:
        if N is None or N < 1:
            raise ValueError("N >= 1 required")
        pairs = laplace_eigs_square(N)
    pairs = list(pairs)
    op = op or DirichletOperator(fine, a)
    M = assemble_mass(fine)
    F = np.column_stack([p.nodal(fine) for p in pairs])
    lams = np.array([p.lam for p in pairs])
    Theta = op.solve((M @ F) * lams)
    basis = BasisSet(
        fine, Theta, "spectral", [p.k for p in pairs], op.a, meta={"fine_n_div": fine.n_div}
    )
    return _finish(basis, op)


def raw_p1_basis(coarse: TriangleMesh, fine: TriangleMesh, a=None) -> BasisSet:
    """Coarse hat functions themselves, represented on the fine mesh."""
    op = DirichletOperator(fine, a)
    basis = BasisSet(fine, coarse_hats(coarse, fine), "raw-P1", coarse.interior.tolist(), op.a,
                     meta={"coarse_n_div": coarse.n_div, "fine_n_div": fine.n_div})
    return _finish(basis, op)


def build_harmonic_basis(fine: TriangleMesh, Fmap, coarse: TriangleMesh, a=None) -> BasisSet:
    """Coarse hats composed with the harmonic coordinates, ``phi_k(F(x))``."""
    check_nested(coarse, fine)
    image = np.column_stack([Fmap.F1.values, Fmap.F2.values])
    image = np.clip(image, 0.0, 1.0)
    tri, bary = coarse.locate(image)
    nodes = coarse.triangles[tri]
    col = np.full(coarse.n_vertices, -1)
    col[coarse.interior] = np.arange(len(coarse.interior))
    values = np.zeros((fine.n_vertices, len(coarse.interior)))
    rows = np.repeat(np.arange(fine.n_vertices), 3)
    cols = col[nodes].ravel()
    keep = cols >= 0
    np.add.at(values, (rows[keep], cols[keep]), bary.ravel()[keep])
    values[fine.boundary_mask] = 0.0
    op = DirichletOperator(fine, a if a is not None else Fmap.a)
    basis = BasisSet(fine, values, "harmonic-coordinate", coarse.interior.tolist(), op.a,
                     meta={"coarse_n_div": coarse.n_div, "fine_n_div": fine.n_div})
    return _finish(basis, op)


def build_elastic_basis(fine: TriangleMesh, C, mode: str, N=None, coarse=None, op=None) -> BasisSet:
    """Vector bases: ``-div(C:eps(tau_k^j)) = e_j lam_k Psi_k`` (``mode="spectral"``)
    or ``-div(C:eps(Phi_k^j)) = e_j Lap(phi_k)`` (``mode="transfer"``).

    Column ``2 k + j`` holds the field for generator ``k`` and direction ``e_j``.
    """
    op = op or el.ElasticOperator(fine, C)
    nv = fine.n_vertices
    if mode == "spectral":
        pairs = laplace_eigs_square(N)
        scalar_loads = (assemble_mass(fine) @ np.column_stack([p.nodal(fine) for p in pairs])) * np.array(
            [p.lam for p in pairs]
        )
        gens = [p.k for p in pairs]
    elif mode == "transfer":
        if coarse is None:
            raise ValueError("transfer mode needs the coarse mesh")
        scalar_loads = -(assemble_stiffness(fine) @ coarse_hats(coarse, fine))
        gens = coarse.interior.tolist()
    else:
        raise ValueError(f"unknown mode {mode!r}")
    n = scalar_loads.shape[1]
    loads = np.zeros((2 * nv, 2 * n))
    for j in range(2):
        loads[j::2, j::2] = scalar_loads
    values = op.solve(loads)
    basis = BasisSet(fine, values, mode, gens, op.C, components=2,
                     meta={"fine_n_div": fine.n_div, "coarse_n_div": getattr(coarse, "n_div", None)})
    return _finish(basis, op)


# ---------------------------------------------------------------- families
def eigen_family(mesh: TriangleMesh, M: int, pairs=None) -> tuple[np.ndarray, list]:
    """Nodal values of the first ``M`` eigenfunctions, ``(n_vertices, M)``."""
    pairs = list(pairs) if pairs is not None else laplace_eigs_square(M)
    return np.column_stack([p.nodal(mesh) for p in pairs[:M]]), pairs[:M]


def elastic_eigen_family(mesh: TriangleMesh, M: int) -> np.ndarray:
    """Loads ``e_j Psi_k`` for ``k <= M``, column ``2 k + j``."""
    F, _ = eigen_family(mesh, M)
    out = np.zeros((2 * mesh.n_vertices, 2 * M))
    for j in range(2):
        out[j::2, j::2] = F
    return out


def _family_matrix(basis, rhs_family):
    mesh = basis.mesh
    if isinstance(rhs_family, (int, np.integer)):
        if basis.components == 1:
            return eigen_family(mesh, int(rhs_family))[0]
        return elastic_eigen_family(mesh, int(rhs_family))
    if isinstance(rhs_family, np.ndarray):
        return rhs_family if rhs_family.ndim == 2 else rhs_family[:, None]
    items = list(rhs_family)
    if items and isinstance(items[0], EigenPair):
        return np.column_stack([p.nodal(mesh) for p in items])
    return np.column_stack([getattr(f, "values", f) for f in items])


# ---------------------------------------------------------------- flux errors
class FluxLeastSquares:
    """Best flux-norm approximation from ``span(basis)``.

    Precomputes ``Y = K_a Phi``, ``Z = L^{-1} Y`` and the flux Gram ``Y^T Z``.
    """

    def __init__(self, basis: BasisSet, a=None, op=None):
        self.basis = basis
        coef = basis.coefficient if a is None else a
        self.op = op or operator_for(basis.mesh, coef, basis.components)
        self.lap = projector_for(basis.mesh, basis.components)
        self.Y = self.op.K @ basis.values
        self.Z = self.lap.solve(self.Y)
        self.gram = self.Y.T @ self.Z
        self.gram = 0.5 * (self.gram + self.gram.T)
        self._cho = sla.cho_factor(self.gram)

    def errors_from_flux_loads(self, R) -> np.ndarray:
        """Best flux errors for solutions whose flux loads ``K_a u`` are the columns of ``R``."""
        R = np.atleast_2d(np.asarray(R, dtype=float).T).T
        out = np.empty(R.shape[1])
        for s in range(0, R.shape[1], CHUNK):
            Rb = R[:, s : s + CHUNK]
            G = self.lap.solve(Rb)
            c = sla.cho_solve(self._cho, self.Z.T @ Rb)
            res_r = Rb - self.Y @ c
            res_g = G - self.Z @ c
            out[s : s + CHUNK] = np.sqrt(np.maximum(np.einsum("ij,ij->j", res_r, res_g), 0.0))
        return out

    def coefficients(self, R) -> np.ndarray:
        return sla.cho_solve(self._cho, self.Z.T @ R)


def flux_errors(basis: BasisSet, a, rhs_family, normalize=True) -> np.ndarray:
    """Per-right-hand-side best flux error ``inf_v ||u - v||_flux / ||f||``."""
    F = _family_matrix(basis, rhs_family)
    mass = mass_for(basis.mesh, basis.components)
    B = mass @ F
    ls = FluxLeastSquares(basis, a)
    err = ls.errors_from_flux_loads(B)
    if normalize:
        err = err / np.sqrt(np.einsum("ij,ij->j", F, B))
    return err


def worst_case_flux_error(basis: BasisSet, a, rhs_family, return_all=False):
    """Largest normalized best flux error over a finite family of right-hand sides.

    This is a lower bound for the supremum over all of L2, restricted to the
    sampled family.  ``rhs_family`` is a count of analytic eigenfunctions, a
    list of `EigenPair`, or nodal columns.
    """
    err = flux_errors(basis, a, rhs_family)
    return (float(err.max()), err) if return_all else float(err.max())


def worst_case_elastic_flux_error(basis: BasisSet, C, rhs_family, return_all=False):
    """Vector counterpart of `worst_case_flux_error`; loads ``e_j Psi_k`` column ``2 k + j``."""
    if basis.components != 2:
        raise ValueError("elastic worst case needs a vector basis")
    return worst_case_flux_error(basis, C, rhs_family, return_all)


def spectral_count(h: float, d=2, vol=1.0) -> int:
    """Integer part of ``vol / h^d``: the spectral basis size matched to resolution ``h``."""
    return int(np.floor(vol / h**d * (1 + 1e-12)))


def galerkin_in_span(basis: BasisSet, a, f) -> DiscreteField:
    """Energy Galerkin solution of ``-div(a grad u) = f`` in ``span(basis)``."""
    op = operator_for(basis.mesh, a, basis.components)
    Phi = basis.values
    S = Phi.T @ (op.K @ Phi)
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > GRAM_COND_LIMIT:
        raise GramConditionError(cond)
    if basis.components == 1:
        b = assemble_mass(basis.mesh) @ _nodal(basis.mesh, f)
    else:
        b = el.vector_load(basis.mesh, f)
    c = sla.solve(S, Phi.T @ b, assume_a="pos")
    if basis.components == 1:
        return DiscreteField(basis.mesh, Phi @ c, zero_boundary=True)
    return el.VectorField2(basis.mesh, Phi @ c, zero_boundary=True)


def _nodal(mesh, f):
    if isinstance(f, DiscreteField):
        return f.values
    if isinstance(f, EigenPair):
        return f.nodal(mesh)
    if callable(f):
        return np.asarray(f(mesh.vertices), dtype=float)
    return np.asarray(f, dtype=float)


# ---------------------------------------------------------------- transfer check
def _duffy_rule(order=10):
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1)
    w = 0.5 * w
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    # (s, t) in unit square -> (s, t (1 - s)) in the reference triangle
    xi, eta = X.ravel(), (Y * (1 - X)).ravel()
    wt = (W * (1 - X)).ravel()
    return np.column_stack([1 - xi - eta, xi, eta]), wt


def hat_moments(coarse: TriangleMesh, f, order=10) -> np.ndarray:
    """``int f phi_i`` for every coarse vertex, by Gauss-Duffy quadrature per triangle."""
    bary, w = _duffy_rule(order)
    p = coarse.vertices[coarse.triangles]  # (T, 3, 2)
    pts = np.einsum("qk,tkd->tqd", bary, p).reshape(-1, 2)
    fv = np.asarray(f(pts), dtype=float).reshape(coarse.n_triangles, -1)
    local = 2 * coarse.areas[:, None] * np.einsum("tq,q,qk->tk", fv, w, bary)
    return np.bincount(coarse.triangles.ravel(), weights=local.ravel(), minlength=coarse.n_vertices)


def reference_p1_flux_error(coarse: TriangleMesh, pair: EigenPair) -> float:
    """Exact ``inf_{v in P1_0(coarse)} ||grad(Psi/lam - v)||`` for an analytic eigenpair."""
    K = assemble_stiffness(coarse)
    I = coarse.interior
    l = hat_moments(coarse, pair)[I]
    Kc = K[I][:, I].toarray()
    val = 1.0 / pair.lam - l @ sla.solve(Kc, l, assume_a="pos")
    return float(np.sqrt(max(val, 0.0)))


@dataclass
class TransferCheck:
    lhs: float
    rhs: float
    gap: float


def verify_transfer(a, f, coarse: TriangleMesh, fine: TriangleMesh, basis=None, reference="auto",
                    reference_mesh=None) -> TransferCheck:
    """Compare ``inf_{V_h} ||u(a,f) - v||_{a-flux}`` with ``inf_{P1} ||u(I,f) - v||_{I-flux}``.

    The left side uses the fine-mesh transfer basis and the fine solution of
    the rough problem.  The right side depends on ``reference``:

    ``"auto"``     exact for an analytic `EigenPair`, else ``"refined"``
    ``"analytic"`` closed-form moments of an analytic `EigenPair`
    ``"refined"``  Laplacian solved on ``reference_mesh`` (default: ``fine`` refined once)
    ``"fine"``     Laplacian solved on ``fine`` itself (same discretization as the left side)
    """
    basis = basis or build_transfer_basis(fine, a, coarse)
    op = DirichletOperator(fine, a)
    b = assemble_mass(fine) @ _nodal(fine, f)
    u = op.solve(b)
    ls = FluxLeastSquares(basis, a, op=op)
    lhs = float(ls.errors_from_flux_loads(op.K @ u)[0])
    analytic = isinstance(f, EigenPair) and f.m is not None
    if reference == "auto":
        reference = "analytic" if analytic else "refined"
    if reference == "analytic":
        if not analytic:
            raise ValueError("analytic reference needs an analytic EigenPair")
        rhs = reference_p1_flux_error(coarse, f)
    elif reference in ("refined", "fine"):
        if reference == "fine":
            ref = fine
        else:
            ref = reference_mesh or build_structured(2 * fine.n_div)
        lap = DirichletOperator(ref, None)
        w = lap.solve(assemble_mass(ref) @ _nodal(ref, f))
        hats = coarse_hats(coarse, ref)
        Kc = hats.T @ (lap.K @ hats)
        c = sla.solve(Kc, hats.T @ (lap.K @ w), assume_a="pos")
        e = w - hats @ c
        rhs = float(np.sqrt(max(e @ (lap.K @ e), 0.0)))
    else:
        raise ValueError(f"unknown reference {reference!r}")
    return TransferCheck(lhs, rhs, abs(lhs - rhs) / rhs)


def flux_identity_paths(a, f, basis: BasisSet, c) -> tuple[float, float]:
    """Flux distance between ``u(a, f)`` and ``v = Phi c`` computed two ways.

    First via the Helmholtz projection of ``a grad(u - v)``; second as
    ``||grad w||`` where ``-Lap w = f + div(a grad v)``.
    """
    from .fluxnorm import flux_norm

    mesh = basis.mesh
    op = DirichletOperator(mesh, a)
    b = assemble_mass(mesh) @ _nodal(mesh, f)
    u = op.solve(b)
    v = basis.values @ c
    first = flux_norm(DiscreteField(mesh, u - v, True), op.a)
    lap = laplacian(mesh)
    w = lap.solve(b - op.K @ v)
    second = float(np.sqrt(w @ (lap.K @ w)))
    return first, second


# ---------------------------------------------------------------- disk cache
def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_basis(basis: BasisSet, directory, extra=None) -> Path:
    """Write one CSV per field plus ``manifest.json`` with provenance and hashes."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = []
    nv = basis.mesh.n_vertices
    for k in range(basis.size):
        name = f"field_{k:04d}.csv"
        col = basis.values[:, k].reshape(nv, basis.components)
        with open(d / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex"] + [f"u{c}" for c in range(basis.components)])
            for v in range(nv):
                w.writerow([v, *(f"{x:.17g}" for x in col[v])])
        files.append({"name": name, "sha256": _sha256(d / name)})
    manifest = {
        "provenance": basis.provenance,
        "generators": [int(g) for g in basis.generators],
        "components": basis.components,
        "mesh": {"n_div": basis.mesh.n_div, "n_vertices": nv, "n_triangles": basis.mesh.n_triangles},
        "meta": basis.meta,
        "coefficient_sha256": hashlib.sha256(np.ascontiguousarray(basis.coefficient).tobytes()).hexdigest()
        if basis.coefficient is not None
        else None,
        "files": files,
        **(extra or {}),
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return d


def load_basis(directory, mesh: TriangleMesh, coefficient=None) -> BasisSet:
    """Read a basis written by `save_basis`, verifying file hashes and mesh size."""
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest["mesh"]["n_vertices"] != mesh.n_vertices:
        raise ValueError("cached basis was built on a different mesh")
    comps = manifest["components"]
    cols = []
    for entry in manifest["files"]:
        p = d / entry["name"]
        if _sha256(p) != entry["sha256"]:
            raise ValueError(f"hash mismatch for {p}")
        data = np.loadtxt(p, delimiter=",", skiprows=1)[:, 1:]
        cols.append(data.reshape(-1))
    basis = BasisSet(
        mesh,
        np.column_stack(cols),
        manifest["provenance"],
        manifest["generators"],
        coefficient,
        comps,
        manifest.get("meta", {}),
    )
    if coefficient is not None:
        _finish(basis, operator_for(mesh, coefficient, comps))
    return basis
