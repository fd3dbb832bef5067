"""Sparse symmetric linear algebra used by the assembly layers.

Matrices are plain ``scipy.sparse.csr_matrix`` objects.  The conjugate
gradient solver is written out here so that its iteration order and stopping
rule are fixed; direct factorizations and the Lanczos eigensolver come from
SciPy.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

log = logging.getLogger(__name__)

DENSE_EIG_LIMIT = 3000


class ConvergenceError(RuntimeError):
    """Iterative solver stopped without reaching the requested tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def as_csr(A) -> sparse.csr_matrix:
    if sparse.issparse(A):
        return sparse.csr_matrix(A)
    return sparse.csr_matrix(np.asarray(A, dtype=float))


def is_symmetric(A, rtol=1e-12) -> bool:
    A = as_csr(A)
    diff = abs(A - A.T)
    scale = abs(A).max() if A.nnz else 1.0
    return diff.nnz == 0 or diff.max() <= rtol * scale


def restrict(A, dofs) -> sparse.csr_matrix:
    """Principal submatrix ``A[dofs][:, dofs]`` (Dirichlet elimination)."""
    A = as_csr(A)
    return A[dofs][:, dofs].tocsr()


def solve_spd(A, b, tol=1e-10, maxiter=None, callback=None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients from a zero initial guess.

    Stops as soon as ``||A x - b|| <= tol * ||b||``.  Raises
    `ConvergenceError` after ``max(10 n, 10000)`` iterations.
    """
    if not 0 < tol <= 1e-4:
        raise ValueError("tol must lie in (0, 1e-4]")
    A = as_csr(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    maxiter = maxiter or max(10 * n, 10000)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n)
    if bnorm == 0:
        return x
    d = A.diagonal()
    if np.any(d <= 0):
        raise ValueError("matrix has non-positive diagonal entries")
    inv_d = 1.0 / d
    r = b.copy()
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise ConvergenceError("matrix is not positive definite", np.linalg.norm(r) / bnorm, it)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if callback is not None:
            callback(x)
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"CG did not converge in {maxiter} iterations (relative residual {res:.3e})",
        res,
        maxiter,
    )


def solve_dense(A, b) -> np.ndarray:
    """Cholesky solve on the dense form of ``A`` (small systems / oracles)."""
    A = A.toarray() if sparse.issparse(A) else np.asarray(A, dtype=float)
    return sla.cho_solve(sla.cho_factor(A), b)


class Factorized:
    """Sparse LU factorization of an SPD matrix, reusable for many right-hand sides."""

    def __init__(self, A):
        A = sparse.csc_matrix(A)
        self.shape = A.shape
        self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.ndim == 2 and b.shape[1] == 0:
            return b.copy()
        return self._lu.solve(b)

    __call__ = solve


def eig_smallest(K, M, m, seed=0, max_restarts=3):
    """The ``m`` smallest eigenpairs of ``K x = lam M x``.

    Returns ``(lam, X)`` with ascending ``lam`` and M-orthonormal columns of
    ``X``.  Dense ``eigh`` is used up to `DENSE_EIG_LIMIT` unknowns, shift-invert
    Lanczos beyond.
    """
    n = K.shape[0]
    if m > n or m < 1:
        raise ValueError(f"requested {m} eigenpairs of a {n}x{n} problem")
    if n <= DENSE_EIG_LIMIT:
        Kd = K.toarray() if sparse.issparse(K) else np.asarray(K, dtype=float)
        Md = M.toarray() if sparse.issparse(M) else np.asarray(M, dtype=float)
        lam, X = sla.eigh(Kd, Md, subset_by_index=[0, m - 1])
        return lam, X
    K = sparse.csc_matrix(K)
    M = sparse.csc_matrix(M)
    rng = np.random.default_rng(seed)
    last = None
    for attempt in range(max_restarts + 1):
        v0 = rng.standard_normal(n)
        try:
            lam, X = spla.eigsh(K, k=m, M=M, sigma=0.0, which="LM", v0=v0, tol=1e-12)
        except spla.ArpackError as exc:
            last = exc
            log.warning("Lanczos breakdown (attempt %d): %s", attempt + 1, exc)
            continue
        order = np.argsort(lam)
        lam, X = lam[order], X[:, order]
        # re-orthonormalize against M to tighten degenerate clusters
        G = X.T @ (M @ X)
        L = np.linalg.cholesky(G)
        X = np.linalg.solve(L, X.T).T
        return lam, X
    raise ConvergenceError(f"Lanczos failed after {max_restarts} restarts: {last}")


def write_matrix_market(A, path, comment="") -> None:
    """Write the lower triangle of a symmetric matrix in Matrix Market format."""
    A = sparse.coo_matrix(sparse.tril(as_csr(A)))
    order = np.lexsort((A.row, A.col))
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real symmetric\n")
        for line in comment.splitlines():
            fh.write(f"% {line}\n")
        fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for k in order:
            fh.write(f"{A.row[k] + 1} {A.col[k] + 1} {A.data[k]:.17g}\n")


def read_matrix_market(path) -> sparse.csr_matrix:
    from scipy.io import mmread

    return sparse.csr_matrix(mmread(path))
