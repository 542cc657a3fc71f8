"""Inexact FETI-DP driven by reduced local operators.

The saddle system

    [ K   B^T ] [u]   [f]
    [ B   0   ] [l] = [d]

is solved by flexible GMRES, right-preconditioned by a block
factorization in which every exact local operator is replaced by its
reduced counterpart.  Only the principal cells are factorized.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import MaxIterations, MaxOuterIterations, NegativeCurvature
from .fetidp import CoarseOp, SolveReport
from .linalg import fgmres, pcg
from .problem import DDProblem
from .rom import (CellRomCoeffs, GreedyBasis, PrincipalOps, assemble_rom_coarse,
                  build_principal_ops, compute_rom_coeffs, greedy_select, rom_local_solve_all)


class InnerMaxIterations(UserWarning):
    """The inner interface PCG hit its cap; the outer iteration continues."""


@dataclass
class SolverOptions:
    tol_gmres: float = 1e-5
    tol_cg: float = 1e-11
    tol_rb: float = 1e-6
    max_outer: int = 200
    max_inner: int = 500

    def __post_init__(self):
        for name in ("tol_gmres", "tol_cg", "tol_rb"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be >= 1")


class RomFetiDP:
    """Reduced operators and the block preconditioner for one problem."""

    def __init__(self, prob: DDProblem, opts: SolverOptions | None = None,
                 greedy: GreedyBasis | None = None):
        self.prob = prob
        self.opts = opts or SolverOptions()
        self.info: dict = {}
        self.inner_iterations: list = []
        self.inner_cap_hits = 0
        self.curvature_fallbacks = 0
        self.times = {}

        t0 = time.perf_counter()
        self.greedy = greedy if greedy is not None else greedy_select(prob.coeffs, self.opts.tol_rb)
        t1 = time.perf_counter()
        self.po: PrincipalOps = build_principal_ops(self.greedy.sigma, prob)
        t2 = time.perf_counter()
        self.coeffs: CellRomCoeffs = compute_rom_coeffs(prob, self.greedy, self.po, self.info)
        self.coarse: CoarseOp = assemble_rom_coarse(self.coeffs, self.po, prob)
        self.mats = prob.block_matrices()
        t3 = time.perf_counter()
        self.times.update(greedy=t1 - t0, principal_ops=t2 - t1, projection=t3 - t2)

        dp = prob.dp
        self.N, self.n_r, self.n_d, self.n_p = prob.n_cells, dp.n_r, dp.n_d, dp.n_p
        self.n_R, self.n_P, self.L = dp.n_R, dp.n_P, prob.jo.L
        ops = self.po.ops
        self._U_dp = ops.U_rp[:, dp.dual_in_r, :]

    # -------------------------------------------------- reduced products
    def Urp(self, X):
        """Rows: ``U_rp_hat^(s) X[s]`` for every cell, (N, n_r)."""
        return np.einsum("sk,krp,sp->sr", self.coeffs.pi, self.po.ops.U_rp, X, optimize=True)

    def UrpT(self, V):
        return np.einsum("sk,krp,sr->sp", self.coeffs.pi, self.po.ops.U_rp, V, optimize=True)

    def Udp(self, X):
        return np.einsum("sk,kdp,sp->sd", self.coeffs.pi, self._U_dp, X, optimize=True)

    def UdpT(self, Q):
        return np.einsum("sk,kdp,sd->sp", self.coeffs.pi, self._U_dp, Q, optimize=True)

    def Urd(self, Q):
        return np.einsum("sk,krd,sd->sr", self.coeffs.delta, self.po.ops.U_rd, Q, optimize=True)

    def UrdT(self, V):
        return np.einsum("sk,krd,sr->sd", self.coeffs.delta, self.po.ops.U_rd, V, optimize=True)

    def Fdd(self, Q):
        return np.einsum("sk,kij,sj->si", self.coeffs.delta, self.po.ops.F_dd, Q, optimize=True)

    def Sdd(self, Q):
        return np.einsum("sk,kij,sj->si", self.coeffs.alpha, self.po.ops.S_dd, Q, optimize=True)

    def _coarse(self, g):
        return self.coarse.solve(g)

    # ----------------------------------------------------- split helpers
    def split(self, v):
        vR = v[:self.n_R].reshape(self.N, self.n_r)
        vP = v[self.n_R:self.n_R + self.n_P]
        w = v[self.n_R + self.n_P:]
        return vR, vP, w

    def dual_view(self, w):
        return (self.prob.jo.B_D.T @ w).reshape(self.N, self.n_d)

    def from_dual(self, Q):
        return self.prob.jo.B_D @ Q.ravel()

    # -------------------------------------------------------- operators
    def apply_K_rom(self, vR, vP):
        """Reduced block inverse of ``K`` (the sub-preconditioner)."""
        dp = self.prob.dp
        vbar = vP - dp.scatter_p(self.UrpT(vR))
        xP = self._coarse(vbar)
        xR = rom_local_solve_all(self.mats[0], vR, self.po, self.info)
        xR = xR - self.Urp(dp.gather_p(xP, with_fixed=False))
        return xR, xP

    def apply_U_hat(self, vR, vP):
        """Reduced ``B K^-1 v`` using the stored reduced dual solutions."""
        dp = self.prob.dp
        zP = self._coarse(vP - dp.scatter_p(self.UrpT(vR)))
        Q = self.UrdT(vR) - self.Udp(dp.gather_p(zP, with_fixed=False))
        return self.from_dual(Q)

    def apply_U_hat_T(self, w):
        """Exact adjoint of :meth:`apply_U_hat`."""
        dp = self.prob.dp
        Q = self.dual_view(w)
        zP = -self._coarse(dp.scatter_p(self.UdpT(Q)))
        xR = self.Urd(Q) - self.Urp(dp.gather_p(zP, with_fixed=False))
        return xR, zP

    def apply_F_hat(self, mu):
        dp = self.prob.dp
        Q = self.dual_view(mu)
        z = dp.gather_p(self._coarse(dp.scatter_p(self.UdpT(Q))), with_fixed=False)
        return self.from_dual(self.Fdd(Q) + self.Udp(z))

    def apply_MD_hat(self, r):
        sc = self.prob.sw.scaled
        V = (sc.T @ r).reshape(self.N, self.n_d)
        return sc @ self.Sdd(V).ravel()

    def solve_F_hat(self, rhs):
        """Inner interface solve with the reduced Dirichlet preconditioner."""
        o = self.opts
        try:
            y, st = pcg(self.apply_F_hat, self.apply_MD_hat, rhs, tol=o.tol_cg,
                        max_it=o.max_inner, norm="preconditioned", check_curvature=True)
            self.inner_iterations.append(st.iterations)
            return y
        except NegativeCurvature:
            self.curvature_fallbacks += 1
            warnings.warn("negative curvature in the inner interface solve; "
                          "switching to flexible GMRES for this call", RuntimeWarning)
            try:
                y, st = fgmres(self.apply_F_hat, self.apply_MD_hat, rhs, tol=o.tol_cg,
                               max_it=o.max_inner)
            except MaxIterations as e:
                self.inner_cap_hits += 1
                y, st = e.x, e.stats
            self.inner_iterations.append(st.iterations)
            return y
        except MaxIterations as e:
            self.inner_cap_hits += 1
            warnings.warn(f"inner interface solve hit {o.max_inner} iterations",
                          InnerMaxIterations)
            self.inner_iterations.append(e.stats.iterations)
            return e.x

    def apply_block_preconditioner(self, v):
        """Block factorization preconditioner applied to a saddle vector."""
        vR, vP, w = self.split(v)
        wbar = w - self.apply_U_hat(vR, vP)
        y = -self.solve_F_hat(wbar) if self.L else np.zeros(0)
        xR, xP = self.apply_K_rom(vR, vP)
        tR, tP = self.apply_U_hat_T(y) if self.L else (0.0, 0.0)
        return np.concatenate([(xR - tR).ravel(), xP - tP, y])

    def apply_saddle(self, v):
        vR, vP, w = self.split(v)
        yR, yP = self.prob.apply_K(vR.ravel(), vP, self.mats)
        jo = self.prob.jo
        return np.concatenate([yR + jo.B_R.T @ w, yP, jo.B_R @ vR.ravel()])

    def rhs(self):
        return np.concatenate([self.prob.f_R, self.prob.f_P, self.prob.jo.d])


def solve_ifetidp(prob: DDProblem, opts: SolverOptions | None = None, greedy=None):
    """ROM-based inexact FETI-DP; returns cell vectors, multipliers, report."""
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    solver = RomFetiDP(prob, opts, greedy)
    t1 = time.perf_counter()
    b = solver.rhs()
    stats = None
    try:
        x, stats = fgmres(solver.apply_saddle, solver.apply_block_preconditioner, b,
                          tol=opts.tol_gmres, max_it=opts.max_outer)
    except MaxIterations as e:
        raise MaxOuterIterations(str(e), e.x, e.stats) from None
    t2 = time.perf_counter()
    vR, uP, lam = solver.split(x)
    uR = vR.ravel()
    rep = SolveReport(mode="rom-ifetidp", n_cells=prob.n_cells, n_dof=prob.dp.n_U,
                      n_multipliers=prob.jo.L, n_primal=prob.dp.n_P)
    rep.outer_iterations = stats.iterations
    rep.residual_history = list(stats.residual_history)
    rep.converged = stats.converged
    rep.inner_iterations_per_call = list(solver.inner_iterations)
    rep.factorizations = solver.po.factorizations
    rep.coarse_factorizations = 1
    rep.n_rb = solver.po.n_rb
    rep.principal_cells = [int(s) for s in solver.po.sigma]
    rep.peak_local_factor_bytes = solver.po.ops.factor_bytes
    rep.negative_curvature_fallbacks = solver.curvature_fallbacks
    rep.inner_max_iterations_hits = solver.inner_cap_hits
    rep.true_residual, rep.constraint_residual = prob.saddle_residual(uR, uP, lam, solver.mats)
    rep.wall_times = dict(prob.timings, **solver.times, setup=t1 - t0, iterate=t2 - t1)
    return prob.cell_vectors(uR, uP), lam, rep, solver
