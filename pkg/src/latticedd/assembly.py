"""Pulled-back material fields, lookup tables and cell stiffness assembly.

For a cell with macro mapping ``x = G(xi)`` the elastic energy written on
the reference cell reads

    a(u, v) = int  dv_c/dxi_a  Chat[c, a, e, b](xi)  du_e/dxi_b  dxi,

    Chat[c, a, e, b] = det J  Jinv[a, j]  Jinv[b, l]  C[c, j, e, l].

``Chat`` is fitted by tensor Lagrange interpolation of degree ``q`` at
Chebyshev-Gauss-Lobatto points.  Contracting the fitted coefficients with
reference-cell integrals of ``N_q dN_i/dxi_a dN_j/dxi_b`` (the lookup
table) gives the cell stiffness without any per-cell quadrature.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateJacobian, DimensionMismatch, FaceNotOnBoundary
from .geometry import MacroMapping, ReferenceCell, lagrange_on_nodes
from .linalg import SparseSymMatrix


# --------------------------------------------------------------------------
# Material
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Material:
    """Isotropic linear elastic material; plane strain in 2D."""

    E: float = 5000.0
    nu: float = 0.4
    dim: int = 2

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")

    @property
    def lam(self) -> float:
        return self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))

    @property
    def mu(self) -> float:
        return self.E / (2 * (1 + self.nu))

    @property
    def C(self) -> np.ndarray:
        """Elasticity tensor ``C[i, j, k, l]``."""
        d = self.dim
        I = np.eye(d)
        return (self.lam * np.einsum("ij,kl->ijkl", I, I)
                + self.mu * (np.einsum("ik,jl->ijkl", I, I) + np.einsum("il,jk->ijkl", I, I)))

    def stress(self, grad_u: np.ndarray) -> np.ndarray:
        """Cauchy stress from displacement gradients ``(..., d, d)``."""
        eps = 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))
        tr = np.trace(eps, axis1=-2, axis2=-1)[..., None, None]
        return self.lam * tr * np.eye(self.dim) + 2 * self.mu * eps


def von_mises(sigma: np.ndarray, mat: Material) -> np.ndarray:
    """Von Mises stress; in 2D plane strain the out-of-plane stress is included."""
    if sigma.shape[-1] == 2:
        s33 = mat.nu * (sigma[..., 0, 0] + sigma[..., 1, 1])
        s11, s22, s12 = sigma[..., 0, 0], sigma[..., 1, 1], sigma[..., 0, 1]
        return np.sqrt(0.5 * ((s11 - s22) ** 2 + (s22 - s33) ** 2 + (s33 - s11) ** 2) + 3 * s12**2)
    dev = sigma - np.trace(sigma, axis1=-2, axis2=-1)[..., None, None] / 3 * np.eye(3)
    return np.sqrt(1.5 * np.sum(dev * dev, axis=(-2, -1)))


def pullback_field(m: MacroMapping, mat: Material, xi) -> np.ndarray:
    """``Chat`` at parameters ``xi``, shape (n, d, d, d, d) indexed [c, a, e, b]."""
    _, J = m.evaluate(xi)
    det = np.linalg.det(J)
    if np.any(det <= 0):
        raise DegenerateJacobian(f"det J = {det.min():.3e} <= 0")
    Jinv = np.linalg.inv(J)
    return np.einsum("n,naj,nbl,cjel->ncaeb", det, Jinv, Jinv, mat.C)


# --------------------------------------------------------------------------
# Polynomial fit
# --------------------------------------------------------------------------

def cgl_nodes(q: int) -> np.ndarray:
    """Chebyshev-Gauss-Lobatto points mapped to [0, 1] (midpoint for q = 0)."""
    if q == 0:
        return np.array([0.5])
    return 0.5 * (1.0 - np.cos(np.pi * np.arange(q + 1) / q))


@dataclass(frozen=True)
class PolyBasis:
    """Tensor Lagrange basis of degree ``q`` per direction at CGL points.

    Basis index ``k`` runs over multi-indices with the first direction
    varying fastest.
    """

    dim: int
    degree: int

    @property
    def n(self) -> int:
        return (self.degree + 1) ** self.dim

    @property
    def multi_index(self) -> np.ndarray:
        return np.array(list(itertools.product(range(self.degree + 1), repeat=self.dim)))[:, ::-1]

    @property
    def nodes(self) -> np.ndarray:
        return cgl_nodes(self.degree)[self.multi_index]

    def evaluate(self, xi) -> np.ndarray:
        xi = np.atleast_2d(xi)
        pts = cgl_nodes(self.degree)
        mi = self.multi_index
        out = np.ones((xi.shape[0], self.n))
        for a in range(self.dim):
            La, _ = lagrange_on_nodes(pts, xi[:, a])
            out *= La[:, mi[:, a]]
        return out


def _sym_index(d: int):
    return np.triu_indices(d * d)


@dataclass(frozen=True, eq=False)
class PolyCoeffs:
    """Interpolation coefficients of ``Chat`` for one cell.

    ``values[k]`` holds the upper triangle of the ``d^2 x d^2`` matrix
    ``Chat[(c, a), (e, b)]`` at fit node ``k``.
    """

    cell: int
    dim: int
    degree: int
    values: np.ndarray  # (n_A, n_C)

    @property
    def n_A(self) -> int:
        return self.values.shape[0]

    @property
    def n_C(self) -> int:
        return self.values.shape[1]

    @property
    def basis(self) -> PolyBasis:
        return PolyBasis(self.dim, self.degree)

    def matrices(self) -> np.ndarray:
        """Full symmetric ``(n_A, d^2, d^2)`` matrices."""
        return coeff_matrices(self.values, self.dim)

    def field(self, xi) -> np.ndarray:
        """Reconstructed ``Chat`` at ``xi``, shape (n, d, d, d, d)."""
        d = self.dim
        M = np.einsum("nk,kij->nij", self.basis.evaluate(xi), self.matrices())
        return M.reshape(-1, d, d, d, d)

    def flat(self) -> np.ndarray:
        return self.values.ravel()


def coeff_matrices(values: np.ndarray, dim: int) -> np.ndarray:
    dd = dim * dim
    iu = _sym_index(dim)
    M = np.zeros(values.shape[:-1] + (dd, dd))
    M[..., iu[0], iu[1]] = values
    M[..., iu[1], iu[0]] = values
    return M


def fit_poly_coeffs(m: MacroMapping, mat: Material, fit_degree: int = 2, cell: int = -1,
                    scale: float = 1.0) -> PolyCoeffs:
    """Interpolate the pulled-back material field of mapping ``m``."""
    d = m.dim
    if mat.dim != d:
        raise DimensionMismatch(f"material is {mat.dim}D, mapping is {d}D")
    basis = PolyBasis(d, fit_degree)
    Chat = pullback_field(m, mat, basis.nodes) * scale
    M = Chat.reshape(-1, d * d, d * d)
    M = 0.5 * (M + np.swapaxes(M, 1, 2))
    iu = _sym_index(d)
    return PolyCoeffs(cell=cell, dim=d, degree=fit_degree, values=M[:, iu[0], iu[1]].copy())


# --------------------------------------------------------------------------
# Lookup table
# --------------------------------------------------------------------------

def gauss_points(n: int, dim: int):
    """Tensor Gauss-Legendre rule on [0, 1]^dim."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    pts = np.array(list(itertools.product(x, repeat=dim)))[:, ::-1]
    wts = np.prod(np.array(list(itertools.product(w, repeat=dim))), axis=1)
    return pts, wts


@dataclass(frozen=True, eq=False)
class LookupTable:
    """Reference-cell integrals ``int N_q dN_i/dxi_a dN_j/dxi_b``.

    Only node pairs with ``i <= j`` are stored; the pair ``(j, i)`` is
    recovered by swapping ``a`` and ``b``.  ``entries`` has shape
    (n_pairs, n_A, d, d).
    """

    rc: ReferenceCell
    basis: PolyBasis
    pairs: np.ndarray      # (n_pairs, 2), i <= j
    entries: np.ndarray    # (n_pairs, n_A, d, d) indexed [pair, q, a, b]

    @property
    def n_pairs(self) -> int:
        return self.pairs.shape[0]

    def entry(self, q, i, a, j, b) -> float:
        k = self.pair_index(i, j)
        if i <= j:
            return self.entries[k, q, a, b]
        return self.entries[k, q, b, a]

    def pair_index(self, i, j) -> int:
        lo, hi = min(i, j), max(i, j)
        key = lo * self.rc.n_nodes + hi
        keys = self.pairs[:, 0] * self.rc.n_nodes + self.pairs[:, 1]
        k = np.searchsorted(keys, key)
        if k >= keys.size or keys[k] != key:
            raise KeyError((i, j))
        return int(k)


def build_lookup_table(rc: ReferenceCell, fit_degree: int = 2, chunk: int = 64) -> LookupTable:
    """Integrate the lookup table on the reference cell once."""
    d = rc.dim
    basis = PolyBasis(d, fit_degree)
    nq1 = rc.degree + math.ceil(fit_degree / 2) + 1
    t, w = gauss_points(nq1, d)
    _, dN = rc.shape_functions(t)               # (g, nen, d)
    w = w * rc.element_size**d
    nen = rc.elements.shape[1]

    gi = np.repeat(rc.elements, nen, axis=1)    # (nel, nen*nen)
    gj = np.tile(rc.elements, (1, nen))
    keys_all = np.minimum(gi, gj) * rc.n_nodes + np.maximum(gi, gj)
    keys = np.unique(keys_all)
    pairs = np.stack([keys // rc.n_nodes, keys % rc.n_nodes], axis=1)
    entries = np.zeros((keys.size, basis.n, d, d))

    # one triangle only: local pairs with gi > gj duplicate their transposes
    upper = (gi <= gj)
    pos_all = np.searchsorted(keys, keys_all)
    for start in range(0, rc.n_elements, chunk):
        sl = slice(start, min(start + chunk, rc.n_elements))
        ne = sl.stop - sl.start
        pts = (rc.element_origin[sl][:, None, :] + t[None]) / rc.n_el_side
        Nq = basis.evaluate(pts.reshape(-1, d)).reshape(ne, -1, basis.n)
        # E[e, i, j, q, a, b]
        E = np.einsum("g,egq,gia,gjb->eijqab", w, Nq, dN, dN, optimize=True)
        E = E.reshape(ne * nen * nen, basis.n, d, d)
        keep = upper[sl].ravel()
        np.add.at(entries, pos_all[sl].ravel()[keep], E[keep])
    diag = pairs[:, 0] == pairs[:, 1]
    entries[diag] = 0.5 * (entries[diag] + np.swapaxes(entries[diag], -1, -2))
    return LookupTable(rc=rc, basis=basis, pairs=pairs, entries=entries)


# --------------------------------------------------------------------------
# Cell stiffness
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CellStiffness:
    """Cell stiffness over the ``d * n_nodes`` DOF (node-major ordering)."""

    cell: int
    K: sp.csr_matrix

    @property
    def n_dof(self) -> int:
        return self.K.shape[0]

    def symmetric(self) -> SparseSymMatrix:
        return SparseSymMatrix(self.K)

    def block(self, rows, cols) -> np.ndarray:
        return self.K[rows][:, cols].toarray()


def _pair_blocks(T: LookupTable, A: PolyCoeffs, sl=slice(None)) -> np.ndarray:
    d = A.dim
    M = A.matrices().reshape(A.n_A, d, d, d, d)           # [q, c, a, e, b]
    C2 = M.transpose(0, 2, 4, 1, 3).reshape(A.n_A * d * d, d * d)
    T2 = T.entries[sl].reshape(-1, A.n_A * d * d)
    return (T2 @ C2).reshape(-1, d, d)                    # [pair, c, e]


def _check_compatible(T: LookupTable, A: PolyCoeffs):
    if T.rc.dim != A.dim or T.basis.degree != A.degree or T.basis.n != A.n_A:
        raise DimensionMismatch(
            f"lookup table (dim {T.rc.dim}, q={T.basis.degree}) does not match "
            f"coefficients (dim {A.dim}, q={A.degree})")


def assemble_local_stiffness(T: LookupTable, A: PolyCoeffs) -> CellStiffness:
    """Contract the lookup table with the cell's polynomial coefficients."""
    _check_compatible(T, A)
    d = A.dim
    blocks = _pair_blocks(T, A)
    i, j = T.pairs[:, 0], T.pairs[:, 1]
    c, e = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    rows = (i[:, None, None] * d + c).ravel()
    cols = (j[:, None, None] * d + e).ravel()
    vals = blocks.ravel()
    off = np.repeat(i != j, d * d)
    rows, cols = np.concatenate([rows, cols[off]]), np.concatenate([cols, rows[off]])
    vals = np.concatenate([vals, vals[off]])
    n = d * T.rc.n_nodes
    K = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    K.sort_indices()
    return CellStiffness(cell=A.cell, K=K)


class LookupOperator:
    """Matrix-free ``K v`` contracting the lookup table on the fly.

    Pair blocks are formed ``chunk`` pairs at a time, so the full matrix is
    never held in memory.
    """

    def __init__(self, T: LookupTable, A: PolyCoeffs, chunk: int = 4096):
        _check_compatible(T, A)
        self.T, self.A, self.chunk = T, A, chunk
        n = A.dim * T.rc.n_nodes
        self.shape = (n, n)

    def __matmul__(self, v):
        return self.matvec(v)

    def matvec(self, v):
        T, d = self.T, self.A.dim
        V = np.asarray(v).reshape(T.rc.n_nodes, d, -1)
        Y = np.zeros_like(V, dtype=float)
        for start in range(0, T.n_pairs, self.chunk):
            sl = slice(start, min(start + self.chunk, T.n_pairs))
            B = _pair_blocks(T, self.A, sl)
            i, j = T.pairs[sl, 0], T.pairs[sl, 1]
            np.add.at(Y, i, np.einsum("pce,pek->pck", B, V[j]))
            off = i != j
            np.add.at(Y, j[off], np.einsum("pce,pck->pek", B[off], V[i[off]]))
        return Y.reshape(np.shape(v))


def assemble_stiffness_quadrature(rc: ReferenceCell, m: MacroMapping, mat: Material,
                                  n_quad: int | None = None, cell: int = -1) -> CellStiffness:
    """Direct quadrature with physical gradients; independent of the lookup table."""
    d = rc.dim
    if mat.dim != d or m.dim != d:
        raise DimensionMismatch("reference cell, mapping and material dimensions differ")
    nq1 = n_quad if n_quad is not None else rc.degree + 3
    t, w = gauss_points(nq1, d)
    _, dN = rc.shape_functions(t)
    pts = (rc.element_origin[:, None, :] + t[None]) / rc.n_el_side
    ne, ng = pts.shape[:2]
    _, J = m.evaluate(pts.reshape(-1, d))
    det = np.linalg.det(J)
    if np.any(det <= 0):
        raise DegenerateJacobian(f"det J = {det.min():.3e} <= 0")
    Jinv = np.linalg.inv(J).reshape(ne, ng, d, d)
    wdet = (det.reshape(ne, ng) * w[None] * rc.element_size**d)
    G = np.einsum("gia,egaj->egij", dN, Jinv)            # physical gradients
    Ke = np.einsum("eg,egia,cafb,egjb->eicjf", wdet, G, mat.C, G, optimize=True)
    nen = rc.elements.shape[1]
    dofs = (rc.elements[:, :, None] * d + np.arange(d)).reshape(ne, nen * d)
    Ke = Ke.reshape(ne, nen * d, nen * d)
    rows = np.repeat(dofs, nen * d, axis=1).ravel()
    cols = np.tile(dofs, (1, nen * d)).ravel()
    n = d * rc.n_nodes
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K = (0.5 * (K + K.T)).tocsr()
    K.sort_indices()
    return CellStiffness(cell=cell, K=K)


# --------------------------------------------------------------------------
# Loads
# --------------------------------------------------------------------------

@dataclass
class CellLoads:
    """Loads on one cell.

    ``body`` is a constant vector or a callable ``x -> (n, d)``;
    ``tractions`` maps ``(axis, side)`` of the cell to a vector or callable.
    """

    body: object = None
    tractions: dict = field(default_factory=dict)


def _as_field(value, x):
    if callable(value):
        return np.asarray(value(x), dtype=float).reshape(x.shape)
    return np.broadcast_to(np.asarray(value, dtype=float), x.shape)


def assemble_local_rhs(rc: ReferenceCell, m: MacroMapping, loads: CellLoads | None,
                       exterior_faces=None, n_quad: int | None = None) -> np.ndarray:
    """Consistent load vector from body forces and face tractions."""
    d = rc.dim
    f = np.zeros(d * rc.n_nodes)
    if loads is None:
        return f
    nq1 = n_quad if n_quad is not None else rc.degree + 3
    if loads.body is not None:
        t, w = gauss_points(nq1, d)
        N, _ = rc.shape_functions(t)
        pts = (rc.element_origin[:, None, :] + t[None]) / rc.n_el_side
        ne, ng = pts.shape[:2]
        x, J = m.evaluate(pts.reshape(-1, d))
        det = np.linalg.det(J).reshape(ne, ng)
        b = _as_field(loads.body, x).reshape(ne, ng, d)
        fe = np.einsum("g,eg,gi,egc->eic", w * rc.element_size**d, det, N, b)
        np.add.at(f.reshape(-1, d), rc.elements, fe)
    for (axis, side), traction in loads.tractions.items():
        if exterior_faces is not None and (axis, side) not in exterior_faces:
            raise FaceNotOnBoundary(f"cell face (axis={axis}, side={side}) is not on the exterior boundary")
        elems, local = rc.boundary_facets(axis, side)
        if elems.size == 0:
            continue
        ts, ws = gauss_points(nq1, d - 1)
        t = np.zeros((ts.shape[0], d))
        others = [a for a in range(d) if a != axis]
        t[:, others] = ts
        t[:, axis] = float(side)
        N, _ = rc.shape_functions(t)
        N = N[:, local]
        pts = (rc.element_origin[elems][:, None, :] + t[None]) / rc.n_el_side
        ne, ng = pts.shape[:2]
        x, J = m.evaluate(pts.reshape(-1, d))
        det = np.linalg.det(J)
        Jinv = np.linalg.inv(J)
        # surface measure on the facet normal to reference axis
        meas = det * np.linalg.norm(Jinv[:, axis, :], axis=1)
        tv = _as_field(traction, x).reshape(ne, ng, d)
        fe = np.einsum("g,eg,gi,egc->eic", ws * rc.element_size ** (d - 1),
                       meas.reshape(ne, ng), N, tv)
        np.add.at(f.reshape(-1, d), rc.elements[elems][:, local], fe)
    return f


# --------------------------------------------------------------------------
# Rigid body modes
# --------------------------------------------------------------------------

def rigid_body_modes(x: np.ndarray) -> np.ndarray:
    """Linearized rigid-body modes at node positions ``x`` (node-major DOF)."""
    n, d = x.shape
    modes = []
    for c in range(d):
        u = np.zeros((n, d))
        u[:, c] = 1.0
        modes.append(u.ravel())
    for a, b in itertools.combinations(range(d), 2):
        u = np.zeros((n, d))
        u[:, a] = -x[:, b]
        u[:, b] = x[:, a]
        modes.append(u.ravel())
    return np.stack(modes, axis=1)
