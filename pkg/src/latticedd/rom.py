"""Principal cells and reduced local operators.

The greedy selection works on the flattened polynomial coefficients of
the pulled-back material field.  Its output is expressed on the selected
(principal) cells, and each cell's local operators are approximated by
combinations of the principal operators:

* stiffness-like quantities (``K``, ``S_dd``) use the interpolation
  coefficients ``alpha``;
* primal and dual solutions use energy projections ``pi`` and ``delta``,
  obtained from small Gram systems in the cell's own ``K_rr`` inner
  product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import SingularBasisChange, SingularGram
from .fetidp import CoarseOp, OpStack, assemble_coarse, build_local_dd_ops
from .problem import DDProblem


# --------------------------------------------------------------------------
# Greedy selection
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GreedyBasis:
    Z: np.ndarray          # (N_rb, n) orthonormal rows
    sigma: np.ndarray      # principal cell indices
    beta: np.ndarray       # (N, N_rb) coordinates of A^(s)/||A^(s)|| on Z
    norms: np.ndarray      # (N,) ||A^(s)||_2
    history: np.ndarray    # max_s ||Delta^(s)||_inf before each selection and at exit

    @property
    def n_rb(self) -> int:
        return self.sigma.size

    @property
    def residual(self) -> float:
        return float(self.history[-1])

    def reconstruct(self) -> np.ndarray:
        """Orthonormal-path reconstruction ``||A|| Z^T beta`` for every cell."""
        return self.norms[:, None] * (self.beta @ self.Z)


def greedy_select(snapshots, tol_rb: float = 1e-6) -> GreedyBasis:
    """Greedy principal-cell selection on coefficient snapshots.

    Parameters
    ----------
    snapshots : array (N, n) or sequence of PolyCoeffs
        One flattened coefficient vector per cell.
    tol_rb : float
        Stop once every normalized residual has max-norm below ``tol_rb``.
    """
    if not 0 < tol_rb < 1:
        raise ValueError("tol_rb must lie in (0, 1)")
    A = _snapshot_matrix(snapshots)
    N, n = A.shape
    norms = np.linalg.norm(A, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero coefficient snapshot")
    delta = A / norms[:, None]
    Z, sigma, betas, hist = [], [], [], []
    for _ in range(min(N, n)):
        res = np.abs(delta).max(axis=1)
        worst = float(res.max())
        hist.append(worst)
        if worst < tol_rb:
            break
        i = int(np.argmax(res))          # first maximum, i.e. lowest index on ties
        zeta = delta[i] / np.linalg.norm(delta[i])
        for z in Z:                      # re-orthogonalize against round-off
            zeta -= (zeta @ z) * z
        zeta /= np.linalg.norm(zeta)
        beta = delta @ zeta
        delta = delta - np.outer(beta, zeta)
        delta[i] = 0.0
        Z.append(zeta)
        sigma.append(i)
        betas.append(beta)
    else:
        hist.append(float(np.abs(delta).max()))
    beta = np.stack(betas, axis=1) if betas else np.zeros((N, 0))
    return GreedyBasis(Z=np.array(Z), sigma=np.array(sigma, dtype=np.intp), beta=beta,
                       norms=norms, history=np.array(hist))


def _snapshot_matrix(snapshots) -> np.ndarray:
    if isinstance(snapshots, np.ndarray):
        return np.atleast_2d(snapshots).astype(float)
    return np.stack([c.flat() for c in snapshots])


def change_basis(gb: GreedyBasis, cond_max: float = 1e12) -> np.ndarray:
    """Coordinates ``alpha`` (N, N_rb) on the principal snapshots.

    ``P[:, k] = ||A^(sigma_k)|| beta^(sigma_k)`` is upper triangular
    because ``sigma_k`` has no component on later basis vectors.
    """
    P = (gb.norms[gb.sigma][None, :] * gb.beta[gb.sigma].T)
    P = np.triu(P)
    diag = np.abs(np.diag(P))
    if diag.size and (diag.min() == 0 or diag.max() / diag.min() > cond_max):
        raise SingularBasisChange("principal coordinate matrix is numerically singular")
    rhs = (gb.norms[:, None] * gb.beta).T
    return sla.solve_triangular(P, rhs, lower=False).T


# --------------------------------------------------------------------------
# Gram solves
# --------------------------------------------------------------------------

def solve_gram(G: np.ndarray, b: np.ndarray, info: dict | None = None) -> np.ndarray:
    """Solve SPD Gram systems, stacked along the first axis if 3D.

    Cholesky first; on failure retry with a diagonal shift of
    ``1e-12 trace / n``; then truncated eigendecomposition dropping
    eigenvalues below ``1e-12 lambda_max``.
    """
    if G.ndim == 3:
        try:
            L = np.linalg.cholesky(G)
            y = np.linalg.solve(L, b[..., None])
            return np.linalg.solve(np.swapaxes(L, -1, -2), y)[..., 0]
        except np.linalg.LinAlgError:
            return np.stack([solve_gram(G[k], b[k], info) for k in range(G.shape[0])])
    n = G.shape[0]
    try:
        return sla.cho_solve(sla.cho_factor(G, lower=True), b)
    except np.linalg.LinAlgError:
        pass
    if info is not None:
        info["fallbacks"] = info.get("fallbacks", 0) + 1
    shift = 1e-12 * np.trace(G) / n
    try:
        return sla.cho_solve(sla.cho_factor(G + shift * np.eye(n), lower=True), b)
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    if w.max() <= 0:
        raise SingularGram("Gram matrix has no positive eigenvalue")
    keep = w > 1e-12 * w.max()
    return V[:, keep] @ ((V[:, keep].T @ b) / w[keep])


# --------------------------------------------------------------------------
# Principal operators and projections
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PrincipalOps:
    sigma: np.ndarray
    ops: OpStack
    K_rp: np.ndarray        # (N_rb, n_r, n_p)
    K_pp: np.ndarray        # (N_rb, n_p, n_p)
    KrpT_Urp: np.ndarray    # (N_rb, N_rb, n_p, n_p): K_rp^(k)^T U_rp^(l)

    @property
    def n_rb(self) -> int:
        return self.sigma.size

    @property
    def factorizations(self) -> int:
        return len(self.ops.factors)


def build_principal_ops(sigma, prob: DDProblem) -> PrincipalOps:
    """Factorize the principal ``K_rr`` and build their local operators."""
    sigma = np.asarray(sigma, dtype=np.intp)
    if sigma.size == 0:
        raise ValueError("no principal cells")
    locals_, Krp, Kpp = [], [], []
    for s in sigma:
        a, b, c = prob.blocks(int(s))
        locals_.append(build_local_dd_ops(a, b, c, prob.dp, cell=int(s)))
        Krp.append(b)
        Kpp.append(c)
    ops = OpStack.from_locals(locals_)
    Krp = np.stack(Krp)
    cross = np.einsum("krp,lrq->klpq", Krp, ops.U_rp)
    return PrincipalOps(sigma=sigma, ops=ops, K_rp=Krp, K_pp=np.stack(Kpp), KrpT_Urp=cross)


def project_coeffs(K_rr, K_rp: np.ndarray, po: PrincipalOps, info: dict | None = None):
    """Energy projections ``(pi, delta)`` of one cell's primal and dual solutions."""
    ops = po.ops
    n_rb = po.n_rb
    KU = np.stack([K_rr @ ops.U_rp[k] for k in range(n_rb)])
    A = np.einsum("irp,jrp->ij", ops.U_rp, KU)
    b = np.einsum("irp,rp->i", ops.U_rp, K_rp)
    KD = np.stack([K_rr @ ops.U_rd[k] for k in range(n_rb)])
    M = np.einsum("ird,jrd->ij", ops.U_rd, KD)
    d = np.trace(ops.F_dd, axis1=1, axis2=2)
    A = 0.5 * (A + A.T)
    M = 0.5 * (M + M.T)
    return solve_gram(A, b, info), solve_gram(M, d, info)


def galerkin_residuals(K_rr, K_rp, po: PrincipalOps, pi, delta, dp):
    """Relative Galerkin orthogonality residuals of ``pi`` and ``delta``."""
    ops = po.ops
    Urp_hat = np.einsum("k,krp->rp", pi, ops.U_rp)
    Urd_hat = np.einsum("k,krd->rd", delta, ops.U_rd)
    E = np.zeros((dp.n_r, dp.n_d))
    E[dp.dual_in_r, np.arange(dp.n_d)] = 1.0
    rp = np.einsum("irp,rp->i", ops.U_rp, K_rr @ Urp_hat - K_rp)
    rd = np.einsum("ird,rd->i", ops.U_rd, K_rr @ Urd_hat - E)
    bp = np.abs(np.einsum("irp,rp->i", ops.U_rp, K_rp)).max()
    bd = np.abs(np.trace(ops.F_dd, axis1=1, axis2=2)).max()
    return np.abs(rp).max() / bp, np.abs(rd).max() / bd


@dataclass(frozen=True, eq=False)
class CellRomCoeffs:
    alpha: np.ndarray   # (N, N_rb)
    pi: np.ndarray      # (N, N_rb)
    delta: np.ndarray   # (N, N_rb)


def compute_rom_coeffs(prob: DDProblem, gb: GreedyBasis, po: PrincipalOps,
                       info: dict | None = None) -> CellRomCoeffs:
    alpha = change_basis(gb)
    N = prob.n_cells
    pi = np.zeros((N, po.n_rb))
    delta = np.zeros((N, po.n_rb))
    for s in range(N):
        Krr, Krp, _ = prob.blocks(s)
        pi[s], delta[s] = project_coeffs(Krr, Krp, po, info)
    return CellRomCoeffs(alpha=alpha, pi=pi, delta=delta)


@dataclass(frozen=True, eq=False)
class RomLocalOps:
    """Reduced local operators for a set of cells, stacked."""

    U_rp: np.ndarray
    S_pp: np.ndarray
    U_rd: np.ndarray
    F_dd: np.ndarray
    S_dd: np.ndarray


def rom_S_pp(coeffs: CellRomCoeffs, po: PrincipalOps) -> np.ndarray:
    """``sym(K_pp_hat - K_rp_hat^T U_rp_hat)`` for every cell, (N, n_p, n_p)."""
    Kpp = np.einsum("sk,kpq->spq", coeffs.alpha, po.K_pp)
    cross = np.einsum("sk,sl,klpq->spq", coeffs.alpha, coeffs.pi, po.KrpT_Urp)
    S = Kpp - cross
    return 0.5 * (S + np.swapaxes(S, 1, 2))


def build_rom_local_ops(coeffs: CellRomCoeffs, po: PrincipalOps, cells=None) -> RomLocalOps:
    """Explicit reduced operators (mainly for inspection and tests)."""
    sl = slice(None) if cells is None else np.asarray(cells)
    a, p, d = coeffs.alpha[sl], coeffs.pi[sl], coeffs.delta[sl]
    ops = po.ops
    sub = CellRomCoeffs(alpha=np.atleast_2d(a), pi=np.atleast_2d(p), delta=np.atleast_2d(d))
    return RomLocalOps(U_rp=np.einsum("sk,krp->srp", sub.pi, ops.U_rp),
                       S_pp=rom_S_pp(sub, po),
                       U_rd=np.einsum("sk,krd->srd", sub.delta, ops.U_rd),
                       F_dd=np.einsum("sk,kij->sij", sub.delta, ops.F_dd),
                       S_dd=np.einsum("sk,kij->sij", sub.alpha, ops.S_dd))


def assemble_rom_coarse(coeffs: CellRomCoeffs, po: PrincipalOps, prob: DDProblem) -> CoarseOp:
    return assemble_coarse(rom_S_pp(coeffs, po), prob.dp)


# --------------------------------------------------------------------------
# Reduced local solves
# --------------------------------------------------------------------------

def rom_local_solve(K_rr, v_r: np.ndarray, po: PrincipalOps, info: dict | None = None):
    """Galerkin solve of ``K_rr x = v`` in the span of principal solutions.

    The span is orthonormalized first; the Gram matrix of the raw
    principal solutions is badly conditioned when they are nearly parallel.
    """
    if not np.any(v_r):
        return np.zeros(np.shape(v_r))
    R = np.stack([f.solve(v_r) for f in po.ops.factors], axis=1)       # (n_r, N_rb)
    Q, _ = np.linalg.qr(R)
    G = Q.T @ (K_rr @ Q)
    c = solve_gram(0.5 * (G + G.T), Q.T @ v_r, info)
    return Q @ c


def rom_local_solve_all(KRR_block: sp.spmatrix, V: np.ndarray, po: PrincipalOps,
                        info: dict | None = None) -> np.ndarray:
    """Batched reduced solves for every cell; ``V`` is (N, n_r)."""
    N, n_r = V.shape
    n_rb = po.n_rb
    R = np.empty((N, n_r, n_rb))
    for k, f in enumerate(po.ops.factors):
        R[:, :, k] = f.solve(V.T).T
    nz = np.abs(V).max(axis=1) > 0
    out = np.zeros((N, n_r))
    if not np.any(nz):
        return out
    Q, _ = np.linalg.qr(R[nz])                                    # (n, n_r, N_rb)
    full = np.zeros((N, n_r, n_rb))
    full[nz] = Q
    KQ = np.stack([(KRR_block @ full[:, :, k].ravel()).reshape(N, n_r) for k in range(n_rb)],
                  axis=2)[nz]
    G = np.einsum("srk,srl->skl", Q, KQ)
    G = 0.5 * (G + np.swapaxes(G, 1, 2))
    rhs = np.einsum("srk,sr->sk", Q, V[nz])
    c = solve_gram(G, rhs, info)
    out[nz] = np.einsum("srk,sk->sr", Q, c)
    return out
