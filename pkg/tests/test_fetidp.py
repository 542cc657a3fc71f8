import numpy as np
import pytest
import scipy.sparse as sp

from helpers import ALL_CASES, direct, fetidp, problem, rel
from latticedd.assembly import Material
from latticedd.decomposition import DirichletBC
from latticedd.fetidp import (apply_dirichlet_preconditioner, apply_dual_schur, assemble_coarse,
                              build_all_local_ops, build_local_dd_ops, schur_dd_dense,
                              solve_fetidp)
from latticedd.geometry import build_macro_model, build_reference_cell
from latticedd.problem import build_problem

SMALL = ("curved-beam", (4, 2))


def partially_assembled(prob):
    """Dense ``K~`` over (u_R, u_P) with the primal block assembled."""
    KRR, KRp, Kpp = prob.block_matrices()
    A = prob.dp.A_P()
    K = sp.bmat([[KRR, KRp @ A.T], [A @ KRp.T, A @ Kpp @ A.T]]).toarray()
    return K


# ----------------------------------------------------------- local operators

@pytest.mark.parametrize("case", ALL_CASES)
def test_local_ops_against_dense(case):
    prob = problem(case)
    K_rr, K_rp, K_pp = prob.blocks(0)
    ops = build_local_dd_ops(K_rr, K_rp, K_pp, prob.dp)
    Kd = K_rr.toarray()
    assert np.allclose(Kd @ ops.U_rp, K_rp, atol=1e-10 * np.abs(K_rp).max())
    S_pp = K_pp - K_rp.T @ np.linalg.solve(Kd, K_rp)
    assert np.linalg.norm(ops.S_pp - S_pp) <= 1e-9 * np.linalg.norm(S_pp)
    S_dd = schur_dd_dense(K_rr, prob.dp)
    assert np.linalg.norm(ops.S_dd - S_dd) <= 1e-8 * np.linalg.norm(S_dd)
    assert np.allclose(ops.S_dd, ops.S_dd.T) and np.allclose(ops.F_dd, ops.F_dd.T)


def test_coarse_operator_is_global_schur_complement():
    prob = problem(*SMALL)
    ops = build_all_local_ops(prob)
    coarse = assemble_coarse(ops.S_pp, prob.dp)
    K = partially_assembled(prob)
    n_R = prob.dp.n_R
    S = K[n_R:, n_R:] - K[n_R:, :n_R] @ np.linalg.solve(K[:n_R, :n_R], K[:n_R, n_R:])
    assert np.linalg.norm(coarse.S_PP.toarray() - S) <= 1e-9 * np.linalg.norm(S)


def test_shared_corner_sums_both_cells():
    prob = problem("rectangle", (2, 1))
    dp = prob.dp
    ops = build_all_local_ops(prob)
    S = assemble_coarse(ops.S_pp, dp).S_PP.toarray()
    shared = np.intersect1d(dp.pmap[0][dp.pmap[0] >= 0], dp.pmap[1][dp.pmap[1] >= 0])
    assert shared.size > 0
    g = shared[0]
    k0 = np.flatnonzero(dp.pmap[0] == g)[0]
    k1 = np.flatnonzero(dp.pmap[1] == g)[0]
    assert np.isclose(S[g, g], ops.S_pp[0, k0, k0] + ops.S_pp[1, k1, k1], rtol=1e-12)


# ------------------------------------------------------------ interface problem

def test_dual_schur_matches_dense_flexibility():
    prob = problem(*SMALL)
    jo, dp = prob.jo, prob.dp
    ops = build_all_local_ops(prob)
    coarse = assemble_coarse(ops.S_pp, dp)
    B = jo.full(dp.n_P).toarray()
    F = B @ np.linalg.solve(partially_assembled(prob), B.T)
    F_op = np.stack([apply_dual_schur(e, ops, coarse, jo, dp) for e in np.eye(jo.L)], axis=1)
    assert np.linalg.norm(F_op - F) <= 1e-9 * np.linalg.norm(F)
    assert np.linalg.norm(F_op - F_op.T) <= 1e-10 * np.linalg.norm(F_op)


def test_dirichlet_preconditioner_is_positive():
    prob = problem(*SMALL)
    ops = build_all_local_ops(prob)
    rng = np.random.default_rng(0)
    for _ in range(100):
        r = rng.standard_normal(prob.jo.L)
        assert r @ apply_dirichlet_preconditioner(r, ops, prob.sw, prob.dp) > 0


# -------------------------------------------------------------------- solver

def test_zero_data_gives_zero_solution():
    rc = build_reference_cell("solid2d", 1, 1)
    mm = build_macro_model({"kind": "affine-box", "lengths": [3.0, 2.0]}, (3, 2))
    prob = build_problem(rc, mm, Material(), dirichlet=(DirichletBC("xmin"),))
    u, lam, rep, _ = solve_fetidp(prob)
    assert np.all(u == 0) and np.all(lam == 0)


@pytest.mark.parametrize("case", ALL_CASES)
def test_fetidp_matches_direct_solve(case):
    prob = problem(case)
    u, lam, rep, (uR, uP) = fetidp(case)
    u_ref, g_ref = direct(case)
    assert rep.converged
    assert rel(prob.to_global(u), g_ref) <= 1e-8
    assert prob.interface_jump(u) <= 1e-8 * np.abs(u).max()
    eq, con = prob.saddle_residual(uR, uP, lam)
    assert eq <= 1e-8 and con <= 1e-8
    assert rep.factorizations == prob.n_cells and rep.coarse_factorizations == 1


def test_report_counts():
    prob = problem(*SMALL)
    _, _, rep, _ = fetidp(*SMALL)
    assert rep.n_multipliers == prob.jo.L and rep.n_primal == prob.dp.n_P
    assert len(rep.residual_history) == rep.inner_iterations_total + 1
    assert rep.residual_history[-1] <= 1e-11
