import numpy as np
import pytest
import scipy.sparse as sp

from helpers import ifetidp, problem
from latticedd.fetidp import (apply_dirichlet_preconditioner, apply_dual_schur, assemble_coarse,
                              build_all_local_ops)
from latticedd.ifetidp import RomFetiDP, SolverOptions, solve_ifetidp

AFFINE = ("rectangle", (4, 2))
CURVED = ("curved-beam", (8, 4))

_solvers = {}


def solver(key):
    if key not in _solvers:
        _solvers[key] = RomFetiDP(problem(*key), SolverOptions())
    return _solvers[key]


def saddle_matrix(prob):
    KRR, KRp, Kpp = prob.block_matrices()
    A = prob.dp.A_P()
    B = prob.jo.full(prob.dp.n_P)
    K = sp.bmat([[KRR, KRp @ A.T], [A @ KRp.T, A @ Kpp @ A.T]])
    return K.toarray(), B.toarray()


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# ------------------------------------------------------------------ operators

@pytest.mark.parametrize("key", [AFFINE, CURVED])
def test_reduced_jump_adjoint(key):
    sv = solver(key)
    rng = np.random.default_rng(0)
    for _ in range(5):
        vR = rng.standard_normal((sv.N, sv.n_r))
        vP = rng.standard_normal(sv.n_P)
        w = rng.standard_normal(sv.L)
        tR, tP = sv.apply_U_hat_T(w)
        Uv = sv.apply_U_hat(vR, vP)
        lhs = Uv @ w
        rhs = np.sum(vR * tR) + vP @ tP
        assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(Uv) * np.linalg.norm(w)


def test_reduced_dual_schur_is_symmetric():
    sv = solver(CURVED)
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((2, sv.L))
    x, y = sv.apply_F_hat(a) @ b, sv.apply_F_hat(b) @ a
    assert abs(x - y) <= 1e-10 * abs(x)


def test_reduced_dirichlet_preconditioner_is_positive():
    sv = solver(CURVED)
    rng = np.random.default_rng(2)
    for _ in range(50):
        r = rng.standard_normal(sv.L)
        assert r @ sv.apply_MD_hat(r) > 0


def test_reduced_operators_are_exact_on_affine_grid():
    prob = problem(*AFFINE)
    sv = solver(AFFINE)
    ops = build_all_local_ops(prob)
    coarse = assemble_coarse(ops.S_pp, prob.dp)
    K, B = saddle_matrix(prob)
    rng = np.random.default_rng(3)
    lam = rng.standard_normal(sv.L)
    assert rel(sv.apply_F_hat(lam), apply_dual_schur(lam, ops, coarse, prob.jo, prob.dp)) <= 1e-9
    assert rel(sv.apply_MD_hat(lam),
               apply_dirichlet_preconditioner(lam, ops, prob.sw, prob.dp)) <= 1e-9
    vR = rng.standard_normal((sv.N, sv.n_r))
    vP = rng.standard_normal(sv.n_P)
    v = np.concatenate([vR.ravel(), vP])
    x = np.linalg.solve(K, v)
    assert rel(sv.apply_U_hat(vR, vP), B @ x) <= 1e-9
    xR, xP = sv.apply_K_rom(vR, vP)
    assert rel(np.concatenate([xR.ravel(), xP]), x) <= 1e-9


def test_block_preconditioner_inverts_saddle_on_affine_grid():
    prob = problem(*AFFINE)
    sv = solver(AFFINE)
    K, B = saddle_matrix(prob)
    A = np.block([[K, B.T], [B, np.zeros((B.shape[0], B.shape[0]))]])
    v = np.random.default_rng(4).standard_normal(A.shape[0])
    assert rel(A @ sv.apply_block_preconditioner(v), v) <= 1e-8


def test_zero_inputs_give_zero():
    sv = solver(CURVED)
    assert np.all(sv.apply_F_hat(np.zeros(sv.L)) == 0)
    assert np.all(sv.apply_block_preconditioner(np.zeros(sv.n_R + sv.n_P + sv.L)) == 0)


# --------------------------------------------------------------------- solver

def test_solve_is_deterministic():
    prob = problem(*CURVED)
    _, lam1, r1, _ = solve_ifetidp(prob, SolverOptions())
    _, lam2, r2, _ = solve_ifetidp(prob, SolverOptions())
    assert r1.residual_history == r2.residual_history
    assert np.array_equal(lam1, lam2)


def test_saddle_residual_and_bookkeeping():
    _, _, rep, sv = ifetidp(*CURVED)
    assert rep.converged and rep.true_residual <= 10 * 1e-5
    assert rep.inner_iterations_per_call == sv.inner_iterations
    assert rep.inner_iterations_total == sum(sv.inner_iterations)
    # every outer step applies the preconditioner, hence one inner solve
    assert len(sv.inner_iterations) >= rep.outer_iterations
    assert rep.factorizations == rep.n_rb == len(rep.principal_cells)


@pytest.mark.parametrize("kw", [{"tol_gmres": 0.0}, {"tol_cg": 1.0}, {"tol_rb": -1e-3},
                                {"max_outer": 0}, {"max_inner": 0}])
def test_options_validation(kw):
    with pytest.raises(ValueError):
        SolverOptions(**kw)
