"""Symmetric sparse storage, Cholesky factorization and Krylov kernels.

The Cholesky factor uses a reverse Cuthill-McKee ordering followed by a
banded LAPACK factorization (``pbtrf``).  Small matrices are factorized
densely.  The Krylov solvers are written against plain callables so the
same code drives assembled matrices and matrix-free operators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import Breakdown, MaxIterations, NegativeCurvature, NotPositiveDefinite

DENSE_CUTOFF = 64

Operator = Callable[[np.ndarray], np.ndarray]


class SparseSymMatrix:
    """Symmetric matrix stored as its lower triangle (CSR).

    ``full()`` expands the symmetry on demand; products use the expanded
    matrix, cached after the first call.
    """

    def __init__(self, lower: sp.spmatrix):
        lower = sp.csr_matrix(lower)
        if lower.shape[0] != lower.shape[1]:
            raise ValueError(f"square matrix expected, got {lower.shape}")
        self.lower = sp.tril(lower, format="csr")
        self.lower.sum_duplicates()
        self.n = lower.shape[0]
        self._full = None

    @classmethod
    def from_matrix(cls, A, check: bool = True, rtol: float = 1e-12) -> "SparseSymMatrix":
        A = sp.csr_matrix(A)
        if check:
            asym = abs(A - A.T).max() if A.nnz else 0.0
            scale = abs(A).max() if A.nnz else 1.0
            if asym > rtol * max(scale, 1e-300):
                raise ValueError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
        return cls(A)

    def full(self) -> sp.csr_matrix:
        if self._full is None:
            strict = sp.tril(self.lower, k=-1)
            self._full = (self.lower + strict.T).tocsr()
        return self._full

    def toarray(self) -> np.ndarray:
        return self.full().toarray()

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def nnz_lower(self) -> int:
        return self.lower.nnz

    def __matmul__(self, x):
        return self.full() @ x

    def matvec(self, x):
        return self.full() @ x


@dataclass(frozen=True)
class CholeskyFactor:
    """``A[perm][:, perm] = L L^T``.

    ``lower_factor`` is either a dense lower triangle (``banded=False``) or
    the LAPACK lower-banded storage ``ab[k, j] = L[j + k, j]``.
    """

    permutation: np.ndarray
    lower_factor: np.ndarray
    banded: bool
    n: int

    @property
    def bandwidth(self) -> int:
        return self.lower_factor.shape[0] - 1 if self.banded else self.n - 1

    @property
    def nbytes(self) -> int:
        return int(self.lower_factor.nbytes + self.permutation.nbytes)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return np.zeros_like(b)
        p = self.permutation
        rhs = b[p]
        if self.banded:
            y = sla.cho_solve_banded((self.lower_factor, True), rhs, check_finite=False)
        else:
            y = sla.cho_solve((self.lower_factor, True), rhs, check_finite=False)
        x = np.empty_like(y)
        x[p] = y
        return x

    def lower(self) -> sp.csr_matrix:
        """The factor L as a sparse matrix in the permuted ordering."""
        if not self.banded:
            return sp.csr_matrix(np.tril(self.lower_factor))
        ab = self.lower_factor
        nb = ab.shape[0]
        diags = [ab[k, : self.n - k] for k in range(nb)]
        return sp.diags(diags, offsets=[-k for k in range(nb)], shape=(self.n, self.n), format="csr")

    def reconstruct(self) -> np.ndarray:
        """Dense ``P^T L L^T P`` (testing aid)."""
        L = self.lower().toarray()
        LLt = L @ L.T
        out = np.empty_like(LLt)
        p = self.permutation
        out[np.ix_(p, p)] = LLt
        return out


def cholesky(A, dense_cutoff: int = DENSE_CUTOFF) -> CholeskyFactor:
    """Cholesky factorization with a bandwidth-reducing ordering.

    Parameters
    ----------
    A
        Symmetric positive definite matrix: ``SparseSymMatrix``, scipy sparse
        matrix or dense array.
    dense_cutoff
        Matrices with fewer rows are factorized densely, without reordering.

    Raises
    ------
    NotPositiveDefinite
        If a non-positive pivot is met.
    """
    if isinstance(A, SparseSymMatrix):
        M = A.full()
    elif sp.issparse(A):
        M = sp.csr_matrix(A)
    else:
        M = np.asarray(A, dtype=float)
    n = M.shape[0]
    if n == 0:
        return CholeskyFactor(np.zeros(0, dtype=np.intp), np.zeros((1, 0)), True, 0)

    if n < dense_cutoff:
        dense = M.toarray() if sp.issparse(M) else M
        try:
            L = sla.cholesky(dense, lower=True, check_finite=False)
        except sla.LinAlgError as exc:
            raise NotPositiveDefinite(str(exc)) from None
        if not np.all(np.isfinite(L)) or np.any(np.diag(L) <= 0):
            raise NotPositiveDefinite("non-positive pivot")
        return CholeskyFactor(np.arange(n), L, False, n)

    S = sp.csr_matrix(M)
    perm = reverse_cuthill_mckee(S, symmetric_mode=True).astype(np.intp)
    P = S[perm][:, perm].tocoo()
    lower_mask = P.row >= P.col
    rows, cols, vals = P.row[lower_mask], P.col[lower_mask], P.data[lower_mask]
    bw = int((rows - cols).max()) if rows.size else 0
    ab = np.zeros((bw + 1, n))
    np.add.at(ab, (rows - cols, cols), vals)
    try:
        cb = sla.cholesky_banded(ab, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if np.any(cb[0] <= 0) or not np.all(np.isfinite(cb[0])):
        raise NotPositiveDefinite("non-positive pivot")
    return CholeskyFactor(perm, cb, True, n)


def as_operator(A) -> Operator:
    if A is None:
        return lambda x: x
    if callable(A) and not hasattr(A, "shape"):
        return A
    return lambda x: A @ x


@dataclass
class IterStats:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    true_residual: float = float("nan")


def pcg(apply_A, apply_M, b, tol: float = 1e-10, max_it: int = 500, x0=None,
        norm: str = "residual", check_curvature: bool = False):
    """Preconditioned conjugate gradient.

    ``norm="residual"`` stops on ``||b - A x|| <= tol ||b||``;
    ``norm="preconditioned"`` stops on ``sqrt(r.z) <= tol sqrt(r0.z0)``.
    The history stores the relative value of the chosen measure.

    Raises ``MaxIterations`` (with the last iterate attached) when the cap
    is hit and ``NegativeCurvature`` when ``check_curvature`` is set and
    ``p^T A p <= 0``.
    """
    A = as_operator(apply_A)
    M = as_operator(apply_M)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A(x) if x0 is not None else b.copy()
    z = M(r)
    rz = float(r @ z)

    if norm == "residual":
        ref = float(np.linalg.norm(b))
        measure = lambda r_, rz_: float(np.linalg.norm(r_))  # noqa: E731
    elif norm == "preconditioned":
        ref = np.sqrt(abs(rz))
        measure = lambda r_, rz_: np.sqrt(abs(rz_))  # noqa: E731
    else:
        raise ValueError(f"unknown norm {norm!r}")

    stats = IterStats()
    if ref == 0.0:
        stats.residual_history.append(0.0)
        stats.converged = True
        stats.true_residual = 0.0
        return x, stats

    rel = measure(r, rz) / ref
    stats.residual_history.append(rel)
    if rel <= tol:
        stats.converged = True
        stats.true_residual = float(np.linalg.norm(r))
        return x, stats

    p = z.copy()
    for k in range(1, max_it + 1):
        Ap = A(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            if check_curvature:
                raise NegativeCurvature(f"p^T A p = {pAp:.3e} at iteration {k}", x, stats)
            if pAp == 0.0:
                raise Breakdown("p^T A p = 0", x, stats)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = M(r)
        rz_new = float(r @ z)
        stats.iterations = k
        rel = measure(r, rz_new) / ref
        stats.residual_history.append(rel)
        if rel <= tol:
            stats.converged = True
            break
        p = z + (rz_new / rz) * p
        rz = rz_new

    stats.true_residual = float(np.linalg.norm(b - A(x)))
    if not stats.converged:
        raise MaxIterations(f"pcg did not converge in {max_it} iterations (rel={rel:.3e})", x, stats)
    return x, stats


def _givens(a, b):
    if b == 0.0:
        return 1.0, 0.0
    h = np.hypot(a, b)
    return a / h, b / h


def _arnoldi_gmres(A, M, b, tol, max_it, flexible, breakdown_tol=1e-14):
    n = b.shape[0]
    beta = float(np.linalg.norm(b))
    stats = IterStats()
    x = np.zeros(n)
    if beta == 0.0:
        stats.residual_history.append(0.0)
        stats.converged = True
        stats.true_residual = 0.0
        return x, stats

    # Krylov vectors are appended as needed; only H is preallocated
    V = [b / beta]
    Z = []
    H = np.zeros((max_it + 1, max_it))
    cs = np.zeros(max_it)
    sn = np.zeros(max_it)
    g = np.zeros(max_it + 1)
    g[0] = beta
    stats.residual_history.append(1.0)

    j = 0
    breakdown = False
    for j in range(max_it):
        zj = M(V[j])
        if flexible:
            Z.append(zj)
        w = A(zj)
        for i in range(j + 1):
            H[i, j] = w @ V[i]
            w = w - H[i, j] * V[i]
        H[j + 1, j] = np.linalg.norm(w)
        if H[j + 1, j] > breakdown_tol * beta:
            V.append(w / H[j + 1, j])
        else:
            breakdown = True
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
        H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        rel = abs(g[j + 1]) / beta
        stats.residual_history.append(rel)
        stats.iterations = j + 1
        if rel <= tol:
            stats.converged = True
            break
        if breakdown:
            break

    k = stats.iterations
    y = sla.solve_triangular(H[:k, :k], g[:k], check_finite=False)
    if flexible:
        x = np.asarray(Z[:k]).T @ y
    else:
        x = M(np.asarray(V[:k]).T @ y)
    stats.true_residual = float(np.linalg.norm(b - A(x)))
    if not stats.converged:
        if breakdown:
            raise Breakdown("Arnoldi breakdown with nonzero residual", x, stats)
        raise MaxIterations(f"gmres did not converge in {max_it} iterations (rel={rel:.3e})", x, stats)
    return x, stats


def fgmres(apply_A, apply_M, b, tol: float = 1e-5, max_it: int = 200):
    """Right-preconditioned flexible GMRES without restart.

    The preconditioner may change from one call to the next; the stored
    preconditioned directions make the residual estimate exact for the
    returned iterate.
    """
    return _arnoldi_gmres(as_operator(apply_A), as_operator(apply_M),
                          np.asarray(b, dtype=float), tol, max_it, flexible=True)


def gmres(apply_A, apply_M, b, tol: float = 1e-5, max_it: int = 200):
    """Standard right-preconditioned GMRES (fixed preconditioner)."""
    return _arnoldi_gmres(as_operator(apply_A), as_operator(apply_M),
                          np.asarray(b, dtype=float), tol, max_it, flexible=False)
