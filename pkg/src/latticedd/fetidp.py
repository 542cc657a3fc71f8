"""Exact FETI-DP: local operators, coarse problem, interface solve, recovery.

Local operators are stacked over cells so that the interface operator and
the Dirichlet preconditioner reduce to batched dense products.  Only the
dual rows of the primal solutions ``U_rp`` enter the interface operator;
the full ``U_rp`` is kept for the recovery step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .decomposition import DofPartition, JumpOperator, ScalingWeights
from .linalg import CholeskyFactor, IterStats, cholesky, pcg
from .problem import DDProblem


@dataclass(frozen=True, eq=False)
class LocalDDOps:
    """Factorization of ``K_rr`` and the dense local operators of one cell."""

    cell: int
    factor_rr: CholeskyFactor
    U_rp: np.ndarray  # K_rr^-1 K_rp                (n_r, n_p)
    S_pp: np.ndarray  # K_pp - K_rp^T U_rp           (n_p, n_p)
    U_rd: np.ndarray  # K_rr^-1 T_dr^T               (n_r, n_d)
    F_dd: np.ndarray  # T_dr U_rd                    (n_d, n_d)
    S_dd: np.ndarray  # F_dd^-1                      (n_d, n_d)


def build_local_dd_ops(K_rr, K_rp: np.ndarray, K_pp: np.ndarray, dp: DofPartition,
                       cell: int = -1) -> LocalDDOps:
    """One Cholesky factorization of ``K_rr`` gives all local operators."""
    fac = cholesky(K_rr)
    U_rp = fac.solve(K_rp)
    S_pp = K_pp - K_rp.T @ U_rp
    S_pp = 0.5 * (S_pp + S_pp.T)
    E = np.zeros((dp.n_r, dp.n_d))
    E[dp.dual_in_r, np.arange(dp.n_d)] = 1.0
    U_rd = fac.solve(E)
    F_dd = U_rd[dp.dual_in_r]
    F_dd = 0.5 * (F_dd + F_dd.T)
    S_dd = np.linalg.inv(F_dd)
    S_dd = 0.5 * (S_dd + S_dd.T)
    return LocalDDOps(cell=cell, factor_rr=fac, U_rp=U_rp, S_pp=S_pp, U_rd=U_rd, F_dd=F_dd,
                      S_dd=S_dd)


def schur_dd_dense(K_rr, dp: DofPartition) -> np.ndarray:
    """``K_dd - K_di K_ii^-1 K_id`` by dense elimination (test oracle)."""
    K = K_rr.toarray() if sp.issparse(K_rr) else np.asarray(K_rr)
    i = np.arange(dp.n_i)
    d = dp.dual_in_r
    if i.size == 0:
        return K[np.ix_(d, d)]
    return K[np.ix_(d, d)] - K[np.ix_(d, i)] @ np.linalg.solve(K[np.ix_(i, i)], K[np.ix_(i, d)])


@dataclass(frozen=True, eq=False)
class CoarseOp:
    S_PP: sp.csr_matrix
    factor: CholeskyFactor

    def solve(self, b):
        return self.factor.solve(b)


def assemble_coarse(S_pp_stack: np.ndarray, dp: DofPartition) -> CoarseOp:
    """``S_PP = sum_s A_p S_pp A_p^T`` with eliminated primal DOF dropped."""
    N, n_p = dp.n_cells, dp.n_p
    s, a, b = np.meshgrid(np.arange(N), np.arange(n_p), np.arange(n_p), indexing="ij")
    ga, gb = dp.pmap[s, a], dp.pmap[s, b]
    keep = (ga >= 0) & (gb >= 0)
    S = sp.coo_matrix((S_pp_stack[keep], (ga[keep], gb[keep])), shape=(dp.n_P, dp.n_P)).tocsr()
    S = (0.5 * (S + S.T)).tocsr()
    return CoarseOp(S_PP=S, factor=cholesky(S))


@dataclass(frozen=True, eq=False)
class OpStack:
    """Local operators of several cells stacked along the first axis."""

    U_rp: np.ndarray
    S_pp: np.ndarray
    U_rd: np.ndarray
    F_dd: np.ndarray
    S_dd: np.ndarray
    factors: tuple
    cells: tuple

    @classmethod
    def from_locals(cls, ops) -> "OpStack":
        return cls(U_rp=np.stack([o.U_rp for o in ops]), S_pp=np.stack([o.S_pp for o in ops]),
                   U_rd=np.stack([o.U_rd for o in ops]), F_dd=np.stack([o.F_dd for o in ops]),
                   S_dd=np.stack([o.S_dd for o in ops]), factors=tuple(o.factor_rr for o in ops),
                   cells=tuple(o.cell for o in ops))

    def local(self, k: int) -> LocalDDOps:
        return LocalDDOps(cell=self.cells[k], factor_rr=self.factors[k], U_rp=self.U_rp[k],
                          S_pp=self.S_pp[k], U_rd=self.U_rd[k], F_dd=self.F_dd[k],
                          S_dd=self.S_dd[k])

    @property
    def factor_bytes(self) -> int:
        return int(sum(f.nbytes for f in self.factors))


def _coarse_correction(v_d, U_dp, coarse, dp):
    """``U_dp gather(S_PP^-1 scatter(U_dp^T v_d))`` for stacked cells."""
    g = dp.scatter_p(np.einsum("sdp,sd->sp", U_dp, v_d))
    z = dp.gather_p(coarse.solve(g), with_fixed=False)
    return np.einsum("sdp,sp->sd", U_dp, z)


def apply_dual_schur(lam, ops: OpStack, coarse: CoarseOp, jo: JumpOperator, dp: DofPartition):
    """``F lam`` from the local Neumann term and one coarse solve."""
    v = (jo.B_D.T @ lam).reshape(dp.n_cells, dp.n_d)
    y = np.einsum("sij,sj->si", ops.F_dd, v)
    y += _coarse_correction(v, ops.U_rp[:, dp.dual_in_r, :], coarse, dp)
    return jo.B_D @ y.ravel()


def apply_dirichlet_preconditioner(r, ops: OpStack, sw: ScalingWeights, dp: DofPartition):
    """``sum_s D B_d S_dd B_d^T D r``."""
    v = (sw.scaled.T @ r).reshape(dp.n_cells, dp.n_d)
    return sw.scaled @ np.einsum("sij,sj->si", ops.S_dd, v).ravel()


@dataclass
class SolveReport:
    mode: str
    n_cells: int = 0
    n_dof: int = 0
    n_multipliers: int = 0
    n_primal: int = 0
    outer_iterations: int = 0
    inner_iterations_per_call: list = field(default_factory=list)
    factorizations: int = 0
    coarse_factorizations: int = 0
    n_rb: int | None = None
    principal_cells: list | None = None
    peak_local_factor_bytes: int = 0
    residual_history: list = field(default_factory=list)
    true_residual: float = float("nan")
    constraint_residual: float = float("nan")
    converged: bool = False
    negative_curvature_fallbacks: int = 0
    inner_max_iterations_hits: int = 0
    wall_times: dict = field(default_factory=dict)

    @property
    def inner_iterations_total(self) -> int:
        return int(sum(self.inner_iterations_per_call))

    def as_dict(self) -> dict:
        out = dict(self.__dict__)
        out["inner_iterations_total"] = self.inner_iterations_total
        return out


def build_all_local_ops(prob: DDProblem, cells=None) -> OpStack:
    cells = range(prob.n_cells) if cells is None else cells
    ops = []
    for s in cells:
        Krr, Krp, Kpp = prob.blocks(int(s))
        ops.append(build_local_dd_ops(Krr, Krp, Kpp, prob.dp, cell=int(s)))
    return OpStack.from_locals(ops)


def solve_fetidp(prob: DDProblem, tol_cg: float = 1e-11, max_it: int = 1000):
    """Baseline FETI-DP; returns cell displacement vectors, multipliers and report."""
    dp, jo, sw = prob.dp, prob.jo, prob.sw
    N = prob.n_cells
    rep = SolveReport(mode="fetidp", n_cells=N, n_dof=dp.n_U, n_multipliers=jo.L, n_primal=dp.n_P)
    t0 = time.perf_counter()
    ops = build_all_local_ops(prob)
    coarse = assemble_coarse(ops.S_pp, dp)
    rep.factorizations = N
    rep.coarse_factorizations = 1
    rep.peak_local_factor_bytes = ops.factor_bytes
    t1 = time.perf_counter()

    fR = prob.f_R.reshape(N, dp.n_r)
    KinvfR = np.stack([ops.factors[s].solve(fR[s]) for s in range(N)])
    g = prob.f_P - dp.scatter_p(np.einsum("srp,sr->sp", ops.U_rp, fR))   # f_P - U_RP^T f_R
    zP = dp.gather_p(coarse.solve(g), with_fixed=False)
    rhs_d = KinvfR[:, dp.dual_in_r] - np.einsum("sdp,sp->sd", ops.U_rp[:, dp.dual_in_r], zP)
    dbar = jo.B_D @ rhs_d.ravel() - jo.d

    stats = IterStats(converged=True)
    if jo.L:
        lam, stats = pcg(lambda x: apply_dual_schur(x, ops, coarse, jo, dp),
                         lambda r: apply_dirichlet_preconditioner(r, ops, sw, dp),
                         dbar, tol=tol_cg, max_it=max_it, norm="preconditioned")
    else:
        lam = np.zeros(0)
    t2 = time.perf_counter()

    # recovery
    q = (jo.B_D.T @ lam).reshape(N, dp.n_d)
    uP = coarse.solve(g + dp.scatter_p(np.einsum("sdp,sd->sp", ops.U_rp[:, dp.dual_in_r], q)))
    up = dp.gather_p(uP, with_fixed=False)
    rhs_r = fR.copy()
    rhs_r[:, dp.dual_in_r] -= q
    uR = np.stack([ops.factors[s].solve(rhs_r[s]) for s in range(N)])
    uR -= np.einsum("srp,sp->sr", ops.U_rp, up)
    uR = uR.ravel()
    t3 = time.perf_counter()

    rep.inner_iterations_per_call = [stats.iterations]
    rep.residual_history = list(stats.residual_history)
    rep.converged = stats.converged
    rep.true_residual, rep.constraint_residual = prob.saddle_residual(uR, uP, lam)
    rep.wall_times = dict(prob.timings, local_ops=t1 - t0, iterate=t2 - t1, recover=t3 - t2)
    return prob.cell_vectors(uR, uP), lam, rep, (uR, uP)
