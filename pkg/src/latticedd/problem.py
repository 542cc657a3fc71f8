"""Partitioned lattice problem: per-cell blocks, loads, constraints.

``DDProblem`` ties together the reference cell, the macro model, the
lookup-table stiffness, the DOF partition, the jump operator and the
scaling weights.  It also provides the conforming global assembly used by
the direct solver, which is the reference solution for the DD solvers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (CellLoads, CellStiffness, LookupTable, Material, PolyCoeffs,
                       assemble_local_rhs, assemble_local_stiffness, build_lookup_table,
                       fit_poly_coeffs)
from .decomposition import (DirichletBC, DofPartition, JumpOperator, ScalingWeights,
                            build_jump_operator, build_scaling_weights, dirichlet_dofs,
                            global_node_keys, node_coordinates, partition_dofs)
from .geometry import MacroModel, ReferenceCell, face_axis_side


@dataclass(frozen=True)
class NeumannBC:
    """Constant traction on a macro face."""

    face: str
    traction: tuple


@dataclass(eq=False)
class DDProblem:
    rc: ReferenceCell
    mm: MacroModel
    mat: Material
    dp: DofPartition
    jo: JumpOperator
    sw: ScalingWeights
    table: LookupTable
    coeffs: list                 # PolyCoeffs per cell
    f_raw: np.ndarray            # (N, n_dof) loads before Dirichlet elimination
    f_loc: np.ndarray            # (N, n_dof) loads after elimination
    dirichlet: tuple = ()
    neumann: tuple = ()
    store_stiffness: bool = True
    timings: dict = field(default_factory=dict)
    _K: dict = field(default_factory=dict, repr=False)
    _blocks: dict = field(default_factory=dict, repr=False)

    # ------------------------------------------------------------------ sizes
    @property
    def n_cells(self) -> int:
        return self.mm.n_cells

    @property
    def dim(self) -> int:
        return self.rc.dim

    @property
    def f_R(self) -> np.ndarray:
        return self.f_loc[:, self.dp.idx_r].ravel()

    @property
    def f_P(self) -> np.ndarray:
        fp = np.where(self.dp.p_is_fixed, 0.0, self.f_loc[:, self.dp.idx_p])
        return self.dp.scatter_p(fp)

    # -------------------------------------------------------------- stiffness
    def stiffness(self, s: int) -> CellStiffness:
        ks = self._K.get(s)
        if ks is None:
            ks = assemble_local_stiffness(self.table, self.coeffs[s])
            if self.store_stiffness:
                self._K[s] = ks
        return ks

    def blocks(self, s: int):
        """``(K_rr sparse, K_rp dense, K_pp dense)`` of cell ``s``."""
        b = self._blocks.get(s)
        if b is not None:
            return b
        K = self.stiffness(s).K
        r, p = self.dp.idx_r, self.dp.idx_p
        Kr = K[r]
        b = (Kr[:, r].tocsr(), Kr[:, p].toarray(), K[p][:, p].toarray())
        if self.store_stiffness:
            self._blocks[s] = b
        return b

    def block_matrices(self):
        """Block-diagonal ``K_RR``, ``K_Rp`` and ``K_pp`` over all cells."""
        KRR, KRp, Kpp = [], [], []
        for s in range(self.n_cells):
            a, b, c = self.blocks(s)
            KRR.append(a)
            KRp.append(sp.csr_matrix(b))
            Kpp.append(sp.csr_matrix(c))
        return (sp.block_diag(KRR, format="csr"), sp.block_diag(KRp, format="csr"),
                sp.block_diag(Kpp, format="csr"))

    def apply_K(self, uR: np.ndarray, uP: np.ndarray, mats=None):
        """Partially assembled ``K (u_R, u_P)``; primal DOF are assembled."""
        KRR, KRp, Kpp = mats if mats is not None else self.block_matrices()
        up = self.dp.gather_p(uP, with_fixed=False).ravel()
        yR = KRR @ uR + KRp @ up
        yp = KRp.T @ uR + Kpp @ up
        return yR, self.dp.scatter_p(yp.reshape(self.n_cells, -1))

    def saddle_residual(self, uR, uP, lam, mats=None):
        """Relative residuals of the equilibrium and constraint rows."""
        yR, yP = self.apply_K(uR, uP, mats)
        BR = self.jo.B_R
        rR = self.f_R - yR - BR.T @ lam
        rP = self.f_P - yP
        f = np.concatenate([self.f_R, self.f_P])
        eq = np.linalg.norm(np.concatenate([rR, rP])) / max(np.linalg.norm(f), 1e-300)
        con = np.linalg.norm(BR @ uR - self.jo.d) / max(1.0, np.linalg.norm(self.jo.d))
        return eq, con

    # ----------------------------------------------------------- global view
    def global_dofs(self):
        """Global conforming DOF index of every (cell, local DOF), and the count."""
        keys = global_node_keys(self.rc, self.mm)
        uniq, inv = np.unique(keys, return_inverse=True)
        gnode = inv.reshape(keys.shape)
        d = self.dim
        return (gnode[:, :, None] * d + np.arange(d)).reshape(self.n_cells, -1), uniq.size * d

    def to_global(self, u_cells: np.ndarray) -> np.ndarray:
        """Average cell copies into a conforming global vector."""
        gmap, n = self.global_dofs()
        out = np.zeros(n)
        cnt = np.zeros(n)
        np.add.at(out, gmap.ravel(), u_cells.ravel())
        np.add.at(cnt, gmap.ravel(), 1.0)
        return out / cnt

    def interface_jump(self, u_cells: np.ndarray) -> float:
        gmap, n = self.global_dofs()
        hi = np.full(n, -np.inf)
        lo = np.full(n, np.inf)
        np.maximum.at(hi, gmap.ravel(), u_cells.ravel())
        np.minimum.at(lo, gmap.ravel(), u_cells.ravel())
        return float(np.max(hi - lo))

    def assemble_global(self):
        """Conforming global stiffness and load vector (no constraints)."""
        gmap, n = self.global_dofs()
        rows, cols, vals = [], [], []
        for s in range(self.n_cells):
            K = self.stiffness(s).K.tocoo()
            rows.append(gmap[s][K.row])
            cols.append(gmap[s][K.col])
            vals.append(K.data)
        K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
        f = np.zeros(n)
        np.add.at(f, gmap.ravel(), self.f_raw.ravel())
        return K, f

    def direct_solve(self):
        """Sparse direct solve of the conforming system; returns cell vectors."""
        gmap, n = self.global_dofs()
        K, f = self.assemble_global()
        fixed = dirichlet_dofs(self.rc, self.mm, self.dirichlet)
        u = np.zeros(n)
        is_fixed = np.zeros(n, dtype=bool)
        for (s, dof), v in fixed.items():
            u[gmap[s, dof]] = v
            is_fixed[gmap[s, dof]] = True
        free = ~is_fixed
        rhs = f[free] - K[free][:, is_fixed] @ u[is_fixed]
        u[free] = spla.spsolve(K[free][:, free].tocsc(), rhs)
        return u[gmap], u

    def cell_vectors(self, uR, uP):
        return self.dp.cell_vectors(uR, uP)


def build_problem(rc: ReferenceCell, mm: MacroModel, mat: Material, dirichlet=(), neumann=(),
                  body=None, fit_degree: int = 2, store_stiffness: bool = True,
                  E_scale=None) -> DDProblem:
    """Assemble everything the solvers need except local factorizations."""
    if not dirichlet:
        raise ValueError("at least one Dirichlet condition is required")
    t0 = time.perf_counter()
    N = mm.n_cells
    table = build_lookup_table(rc, fit_degree)
    t1 = time.perf_counter()
    scale = np.ones(N) if E_scale is None else np.asarray(E_scale, dtype=float)
    coeffs = [fit_poly_coeffs(mm.mappings[s], mat, fit_degree, cell=s, scale=scale[s])
              for s in range(N)]
    t2 = time.perf_counter()
    dp = partition_dofs(rc, mm, dirichlet)
    jo = build_jump_operator(dp, mm, dirichlet)
    sw = build_scaling_weights(jo)
    t3 = time.perf_counter()

    # loads
    f_raw = np.zeros((N, rc.n_dof))
    per_cell = {}
    for bc in neumann:
        axis, side = face_axis_side(bc.face)
        for s in mm.cells_on_face(axis, side):
            per_cell.setdefault(int(s), CellLoads(body=body)).tractions[(axis, side)] = bc.traction
    for s in range(N):
        loads = per_cell.get(s, CellLoads(body=body) if body is not None else None)
        if loads is not None:
            idx = mm.cell_index(s)
            exterior = {(a, 0) for a in range(rc.dim) if idx[a] == 0}
            exterior |= {(a, 1) for a in range(rc.dim) if idx[a] == mm.grid_dims[a] - 1}
            f_raw[s] = assemble_local_rhs(rc, mm.mappings[s], loads, exterior_faces=exterior)

    prob = DDProblem(rc=rc, mm=mm, mat=mat, dp=dp, jo=jo, sw=sw, table=table, coeffs=coeffs,
                     f_raw=f_raw, f_loc=f_raw.copy(), dirichlet=tuple(dirichlet),
                     neumann=tuple(neumann), store_stiffness=store_stiffness)
    # move eliminated primal values to the right-hand side
    for s in np.flatnonzero(dp.p_is_fixed.any(axis=1)):
        K = prob.stiffness(int(s)).K
        k = dp.p_is_fixed[s]
        prob.f_loc[s] -= K[:, dp.idx_p[k]] @ dp.p_fixed[s, k]
        prob.f_loc[s, dp.idx_p[k]] = 0.0
    prob.timings.update(table=t1 - t0, fit=t2 - t1, decomposition=t3 - t2,
                        loads=time.perf_counter() - t3)
    return prob
