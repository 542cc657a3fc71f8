"""DOF classification, jump operator and scaling weights.

Each cell's DOF are split into interior (i), dual (d) and primal (p)
sets.  Primal DOF sit on the cell vertices and are assembled globally;
dual DOF are the remaining boundary DOF and are glued by multipliers.
The same local partition is used on every cell.

Multiplier policy: a dual DOF shared by two cells gets one gluing row;
a DOF shared by ``m > 2`` cells gets all ``m (m - 1) / 2`` pairwise rows.
Every dual DOF copy lying on a Dirichlet face gets its own Dirichlet row
and no gluing rows.  Primal DOF on a Dirichlet face are eliminated.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import EmptyPrimalSet, RankDeficient
from .geometry import CORNER, FACE, INTERIOR, MacroModel, ReferenceCell, face_axis_side


@dataclass(frozen=True)
class DirichletBC:
    """``u_c(x) = value_c + (gradient @ x)_c`` on a macro face, for masked components."""

    face: str
    value: tuple = (0.0, 0.0)
    gradient: tuple | None = None
    components: tuple | None = None

    def axis_side(self):
        return face_axis_side(self.face)

    def mask(self, d: int) -> np.ndarray:
        if self.components is None:
            return np.ones(d, dtype=bool)
        return np.asarray(self.components, dtype=bool)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        d = x.shape[1]
        val = np.broadcast_to(np.asarray(self.value, dtype=float), (d,))
        u = np.tile(val, (x.shape[0], 1))
        if self.gradient is not None:
            u = u + x @ np.asarray(self.gradient, dtype=float).T
        return u


def node_coordinates(rc: ReferenceCell, mm: MacroModel) -> np.ndarray:
    """Physical coordinates of every cell's nodes, shape (N, n_nodes, d)."""
    xi = rc.nodes
    return np.stack([m.evaluate(xi)[0] for m in mm.mappings])


def global_node_keys(rc: ReferenceCell, mm: MacroModel) -> np.ndarray:
    """Integer key per (cell, node); coincident nodes share a key."""
    L = rc.lattice_size
    dims = tuple(n * L + 1 for n in mm.grid_dims)
    keys = np.empty((mm.n_cells, rc.n_nodes), dtype=np.int64)
    for s in range(mm.n_cells):
        g = np.array(mm.cell_index(s)) * L + rc.lattice
        keys[s] = np.ravel_multi_index(g.T, dims, order="F")
    return keys


def dirichlet_dofs(rc: ReferenceCell, mm: MacroModel, bcs, coords=None):
    """Constrained (cell, local DOF) copies and their values.

    Returns a dict ``(s, local_dof) -> value``.  Later conditions override
    earlier ones on shared DOF.
    """
    d = rc.dim
    coords = node_coordinates(rc, mm) if coords is None else coords
    out = {}
    for bc in bcs:
        axis, side = bc.axis_side()
        if axis >= d:
            raise ValueError(f"face {bc.face!r} does not exist in {d}D")
        nodes = rc.face_nodes(axis, side)
        comps = np.flatnonzero(bc.mask(d))
        for s in mm.cells_on_face(axis, side):
            vals = bc.evaluate(coords[s][nodes])
            for k, n in enumerate(nodes):
                for c in comps:
                    out[(int(s), int(n) * d + int(c))] = float(vals[k, c])
    return out


@dataclass(frozen=True, eq=False)
class DofPartition:
    """Per-cell (i, d, p) index sets and the primal assembly maps.

    ``pmap[s, k]`` is the global primal index of local primal DOF ``k`` of
    cell ``s`` or ``-1`` when the DOF is eliminated by a Dirichlet
    condition; ``p_fixed[s, k]`` is then its prescribed value.
    """

    rc: ReferenceCell
    n_cells: int
    idx_i: np.ndarray
    idx_d: np.ndarray
    idx_p: np.ndarray
    pmap: np.ndarray
    p_fixed: np.ndarray
    p_is_fixed: np.ndarray
    n_P: int

    @property
    def dim(self) -> int:
        return self.rc.dim

    @property
    def n_i(self) -> int:
        return self.idx_i.size

    @property
    def n_d(self) -> int:
        return self.idx_d.size

    @property
    def n_p(self) -> int:
        return self.idx_p.size

    @property
    def n_r(self) -> int:
        return self.n_i + self.n_d

    @property
    def n_R(self) -> int:
        return self.n_cells * self.n_r

    @property
    def n_U(self) -> int:
        return self.n_R + self.n_P

    @property
    def idx_r(self) -> np.ndarray:
        return np.concatenate([self.idx_i, self.idx_d])

    @property
    def dual_in_r(self) -> np.ndarray:
        """Positions of the dual DOF inside the r ordering (the extraction map)."""
        return self.n_i + np.arange(self.n_d)

    def T_dr(self) -> sp.csr_matrix:
        return sp.csr_matrix((np.ones(self.n_d), (np.arange(self.n_d), self.dual_in_r)),
                             shape=(self.n_d, self.n_r))

    def A_p(self, s: int) -> sp.csr_matrix:
        """Local-to-global primal map of cell ``s`` (n_P x n_p)."""
        k = np.flatnonzero(self.pmap[s] >= 0)
        return sp.csr_matrix((np.ones(k.size), (self.pmap[s, k], k)), shape=(self.n_P, self.n_p))

    def A_P(self) -> sp.csr_matrix:
        """All primal maps side by side, n_P x (N n_p)."""
        s, k = np.nonzero(self.pmap >= 0)
        cols = s * self.n_p + k
        return sp.csr_matrix((np.ones(cols.size), (self.pmap[s, k], cols)),
                             shape=(self.n_P, self.n_cells * self.n_p))

    def gather_p(self, uP: np.ndarray, with_fixed: bool = True) -> np.ndarray:
        """Local primal values (N, n_p) from the global primal vector."""
        up = np.where(self.pmap >= 0, uP[np.maximum(self.pmap, 0)], 0.0)
        if with_fixed:
            up = np.where(self.p_is_fixed, self.p_fixed, up)
        return up

    def scatter_p(self, vp: np.ndarray) -> np.ndarray:
        """Sum local primal values (N, n_p) into the global primal vector."""
        out = np.zeros(self.n_P)
        m = self.pmap >= 0
        np.add.at(out, self.pmap[m], vp[m])
        return out

    def cell_vectors(self, uR: np.ndarray, uP: np.ndarray) -> np.ndarray:
        """Full local displacement vectors (N, n_dof) including fixed values."""
        out = np.zeros((self.n_cells, self.rc.n_dof))
        out[:, self.idx_r] = uR.reshape(self.n_cells, self.n_r)
        out[:, self.idx_p] = self.gather_p(uP)
        return out


def _local_sets(rc: ReferenceCell):
    d = rc.dim
    cls = np.repeat(rc.node_class, d)
    return (np.flatnonzero(cls == INTERIOR), np.flatnonzero(cls == FACE),
            np.flatnonzero(cls == CORNER))


def partition_dofs(rc: ReferenceCell, mm: MacroModel, dirichlet=()) -> DofPartition:
    """Classify DOF and number the primal unknowns.

    Primal DOF lying on a Dirichlet face are eliminated; their values are
    stored in ``p_fixed``.
    """
    if rc.dim != mm.dim:
        raise ValueError(f"reference cell is {rc.dim}D, macro model is {mm.dim}D")
    idx_i, idx_d, idx_p = _local_sets(rc)
    if idx_p.size == 0:
        raise EmptyPrimalSet("reference cell has no corner DOF")
    N, d = mm.n_cells, rc.dim
    keys = global_node_keys(rc, mm)
    fixed = dirichlet_dofs(rc, mm, dirichlet) if dirichlet else {}

    p_is_fixed = np.zeros((N, idx_p.size), dtype=bool)
    p_fixed = np.zeros((N, idx_p.size))
    gkeys = np.empty((N, idx_p.size), dtype=np.int64)
    for s in range(N):
        gkeys[s] = keys[s][idx_p // d] * d + idx_p % d
        for k, dof in enumerate(idx_p):
            v = fixed.get((s, int(dof)))
            if v is not None:
                p_is_fixed[s, k] = True
                p_fixed[s, k] = v
    free = ~p_is_fixed
    uniq, inv = np.unique(gkeys[free], return_inverse=True)
    pmap = -np.ones((N, idx_p.size), dtype=np.intp)
    pmap[free] = inv
    # a vertex fixed in one cell is fixed in all cells sharing it
    fixed_keys = np.unique(gkeys[p_is_fixed])
    clash = np.isin(uniq, fixed_keys)
    if np.any(clash):
        raise ValueError("inconsistent Dirichlet elimination on shared vertices")
    for s in range(N):
        if np.all(p_is_fixed[s]) and idx_i.size + idx_d.size == 0:
            raise EmptyPrimalSet(f"cell {s} has no free DOF")
    return DofPartition(rc=rc, n_cells=N, idx_i=idx_i, idx_d=idx_d, idx_p=idx_p, pmap=pmap,
                        p_fixed=p_fixed, p_is_fixed=p_is_fixed, n_P=int(uniq.size))


@dataclass(frozen=True, eq=False)
class JumpOperator:
    """Signed Boolean constraint operator acting on dual DOF.

    ``B_D`` has shape (L, N n_d): column ``s * n_d + k`` is local dual DOF
    ``k`` of cell ``s``.  ``B_R`` is the same operator on the remaining
    ordering (L, N n_r).  The primal block of the full operator is zero.
    """

    B_D: sp.csr_matrix
    B_R: sp.csr_matrix
    d: np.ndarray
    kind: np.ndarray          # 0 gluing, 1 Dirichlet
    multiplicity: np.ndarray  # number of cell copies of the underlying DOF
    n_cells: int
    n_d: int

    @property
    def L(self) -> int:
        return self.B_D.shape[0]

    def cell_block(self, s: int) -> sp.csr_matrix:
        """``B_d`` of cell ``s``: (L, n_d)."""
        return self.B_D[:, s * self.n_d:(s + 1) * self.n_d]

    def full(self, n_P: int) -> sp.csr_matrix:
        """``[B_R 0]`` over the (u_R, u_P) ordering."""
        return sp.hstack([self.B_R, sp.csr_matrix((self.L, n_P))], format="csr")


def build_jump_operator(dp: DofPartition, mm: MacroModel, dirichlet=()) -> JumpOperator:
    rc, N, d = dp.rc, dp.n_cells, dp.dim
    keys = global_node_keys(rc, mm)
    fixed = dirichlet_dofs(rc, mm, dirichlet) if dirichlet else {}
    n_d = dp.n_d

    # group dual copies by physical DOF
    dual_keys = keys[:, dp.idx_d // d] * d + dp.idx_d % d            # (N, n_d)
    flat = dual_keys.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_keys = flat[order]
    starts = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]])
    ends = np.r_[starts[1:], flat.size]

    rows, cols, vals, rhs, kind, mult = [], [], [], [], [], []
    L = 0
    for a, b in zip(starts, ends):
        copies = order[a:b]                       # column indices s * n_d + k
        m = copies.size
        constrained = []
        for col in copies:
            s, k = divmod(int(col), n_d)
            v = fixed.get((s, int(dp.idx_d[k])))
            if v is not None:
                constrained.append((col, v))
        if constrained:
            for col, v in constrained:
                rows.append(L); cols.append(col); vals.append(1.0)
                rhs.append(v); kind.append(1); mult.append(m)
                L += 1
            continue
        for c1, c2 in itertools.combinations(sorted(copies), 2):
            rows += [L, L]; cols += [c1, c2]; vals += [1.0, -1.0]
            rhs.append(0.0); kind.append(0); mult.append(m)
            L += 1

    B_D = sp.csr_matrix((vals, (rows, cols)), shape=(L, N * n_d))
    rcols = np.asarray(cols, dtype=np.intp)
    s, k = np.divmod(rcols, n_d)
    B_R = sp.csr_matrix((vals, (rows, s * dp.n_r + dp.n_i + k)), shape=(L, N * dp.n_r))
    jo = JumpOperator(B_D=B_D, B_R=B_R, d=np.asarray(rhs, dtype=float),
                      kind=np.asarray(kind, dtype=np.int8), multiplicity=np.asarray(mult),
                      n_cells=N, n_d=n_d)
    _check_duplicates(jo)
    return jo


def _check_duplicates(jo: JumpOperator) -> None:
    B = jo.B_D.tocsr()
    B.sort_indices()
    seen = set()
    for r in range(B.shape[0]):
        sl = slice(B.indptr[r], B.indptr[r + 1])
        key = (tuple(B.indices[sl]), tuple(np.sign(B.data[sl])))
        neg = (tuple(B.indices[sl]), tuple(-np.sign(B.data[sl])))
        if key in seen or neg in seen:
            raise RankDeficient(f"constraint row {r} duplicates an earlier row")
        seen.add(key)


@dataclass(frozen=True, eq=False)
class ScalingWeights:
    """Diagonal weights ``D^(s)`` stored on the nonzeros of ``B_D``.

    ``weights[k]`` belongs to the k-th stored entry of ``B_D`` (row r,
    column of cell s) and is ``D^(s)[r]``.  ``scaled`` is ``B_D`` with
    every entry multiplied by its weight.
    """

    weights: np.ndarray
    scaled: sp.csr_matrix

    def cell_diagonal(self, jo: JumpOperator, s: int) -> np.ndarray:
        """``diag(D^(s))`` over all L rows (zero on rows not touching s)."""
        Bs = self.scaled[:, s * jo.n_d:(s + 1) * jo.n_d].tocoo()
        D = np.zeros(jo.L)
        D[Bs.row] = np.abs(Bs.data)
        return D


def build_scaling_weights(jo: JumpOperator) -> ScalingWeights:
    """Multiplicity scaling: ``1 / m`` on gluing rows, 1 on Dirichlet rows."""
    B = jo.B_D.tocsr()
    B.sort_indices()
    row_of = np.repeat(np.arange(jo.L), np.diff(B.indptr))
    w = np.where(jo.kind[row_of] == 1, 1.0, 1.0 / jo.multiplicity[row_of])
    scaled = sp.csr_matrix((B.data * w, B.indices.copy(), B.indptr.copy()), shape=B.shape)
    return ScalingWeights(weights=w, scaled=scaled)


def partition_identity(jo: JumpOperator, sw: ScalingWeights) -> sp.csr_matrix:
    """``sum_s B_d^(s) B_d^(s)^T D^(s)`` as an L x L sparse matrix."""
    # (B^s B^sT D^s)[r, r'] = sum_k B^s[r, k] B^s[r', k] D^s[r'], summed over s
    return (jo.B_D @ sw.scaled.T).tocsr()
