"""Reference unit-cell meshes and per-cell Bezier macro mappings.

A lattice cell is the image of the reference cell ``[0, 1]^d`` under its
macro mapping.  The reference cell is a tensor-product Lagrange mesh
(degree 1 or 2) of a uniform background grid from which the elements of
the strut pattern are kept.  Nodes carry integer lattice coordinates, so
matching nodes of neighbouring cells are found by exact integer
arithmetic instead of geometric search.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateJacobian, UnknownPattern

INTERIOR, FACE, CORNER = 0, 1, 2

PATTERNS = {
    # name: (dim, background elements per side at refinement 0)
    "solid2d": (2, 1),
    "cross-hollow-square2d": (2, 8),
    "plus2d": (2, 8),
    "solid3d": (3, 1),
    "bcc3d": (3, 8),
}

FACE_NAMES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")


def face_axis_side(name: str) -> tuple[int, int]:
    """``"xmax"`` -> ``(0, 1)``; faces are named in the macro parameter space."""
    try:
        k = FACE_NAMES.index(name)
    except ValueError:
        raise ValueError(f"unknown face {name!r}; expected one of {FACE_NAMES}") from None
    return k // 2, k % 2


# --------------------------------------------------------------------------
# 1D polynomial bases
# --------------------------------------------------------------------------

def lagrange_1d(degree: int, t):
    """Equispaced Lagrange basis on [0, 1]: values and derivatives, shape (nt, p+1)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    nodes = np.linspace(0.0, 1.0, degree + 1)
    return lagrange_on_nodes(nodes, t)


def lagrange_on_nodes(nodes, t):
    nodes = np.asarray(nodes, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    m = nodes.size
    N = np.ones((t.size, m))
    dN = np.zeros((t.size, m))
    for i in range(m):
        others = [j for j in range(m) if j != i]
        denom = np.prod([nodes[i] - nodes[j] for j in others]) if others else 1.0
        terms = np.stack([t - nodes[j] for j in others], axis=1) if others else np.ones((t.size, 0))
        N[:, i] = np.prod(terms, axis=1) / denom
        for k in range(len(others)):
            rest = np.delete(terms, k, axis=1)
            dN[:, i] += np.prod(rest, axis=1) / denom
    return N, dN


def bernstein_1d(degree: int, t):
    """Bernstein polynomials and derivatives on [0, 1], shape (nt, p+1)."""
    from math import comb

    t = np.atleast_1d(np.asarray(t, dtype=float))
    p = degree
    B = np.stack([comb(p, i) * t**i * (1 - t) ** (p - i) for i in range(p + 1)], axis=1)
    if p == 0:
        return B, np.zeros_like(B)
    Bm, _ = bernstein_1d(p - 1, t)
    dB = np.zeros_like(B)
    for i in range(p + 1):
        left = Bm[:, i - 1] if i >= 1 else 0.0
        right = Bm[:, i] if i <= p - 1 else 0.0
        dB[:, i] = p * (left - right)
    return B, dB


# --------------------------------------------------------------------------
# Reference cell
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReferenceCell:
    dim: int
    degree: int
    pattern: str
    refinement: int
    n_el_side: int
    strut_thickness: float
    lattice: np.ndarray          # (n_nodes, dim) integer node coordinates
    elements: np.ndarray         # (n_el, (p+1)^dim) node indices
    element_origin: np.ndarray   # (n_el, dim) background-grid index
    node_class: np.ndarray       # (n_nodes,) INTERIOR / FACE / CORNER
    local_offsets: np.ndarray = field(repr=False)  # ((p+1)^dim, dim)

    @property
    def lattice_size(self) -> int:
        return self.n_el_side * self.degree

    @property
    def nodes(self) -> np.ndarray:
        return self.lattice / self.lattice_size

    @property
    def n_nodes(self) -> int:
        return self.lattice.shape[0]

    @property
    def n_dof(self) -> int:
        return self.dim * self.n_nodes

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def element_size(self) -> float:
        return 1.0 / self.n_el_side

    def face_nodes(self, axis: int, side: int) -> np.ndarray:
        target = 0 if side == 0 else self.lattice_size
        return np.flatnonzero(self.lattice[:, axis] == target)

    def corner_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.node_class == CORNER)

    def shape_functions(self, t):
        """Element shape functions at local points ``t`` in [0, 1]^d.

        Returns ``N`` of shape (nq, nen) and the gradients with respect to
        the cell parameter ``xi`` (not the element parameter), shape
        (nq, nen, dim).
        """
        t = np.atleast_2d(t)
        d, p = self.dim, self.degree
        vals, ders = zip(*(lagrange_1d(p, t[:, k]) for k in range(d)))
        off = self.local_offsets
        N = np.ones((t.shape[0], off.shape[0]))
        dN = np.ones((t.shape[0], off.shape[0], d))
        for k in range(d):
            Vk = vals[k][:, off[:, k]]
            Dk = ders[k][:, off[:, k]]
            N *= Vk
            for a in range(d):
                dN[:, :, a] *= Dk if a == k else Vk
        return N, dN * self.n_el_side

    def element_points(self, e, t):
        """Cell-parameter coordinates of element-local points ``t``."""
        return (self.element_origin[e] + np.atleast_2d(t)) / self.n_el_side

    def boundary_facets(self, axis: int, side: int):
        """Elements touching face (axis, side) and their local facet nodes."""
        target = 0 if side == 0 else self.n_el_side - 1
        elems = np.flatnonzero(self.element_origin[:, axis] == target)
        local = np.flatnonzero(self.local_offsets[:, axis] == (0 if side == 0 else self.degree))
        return elems, local


def _pattern_mask(pattern: str, centers: np.ndarray, t: float) -> np.ndarray:
    eps = 1e-9
    half = t / 2 + eps
    dist_bnd = np.minimum(centers, 1 - centers)
    if pattern in ("solid2d", "solid3d"):
        return np.ones(len(centers), dtype=bool)
    if pattern == "cross-hollow-square2d":
        frame = dist_bnd.min(axis=1) < half
        x, y = centers[:, 0], centers[:, 1]
        diag = (np.abs(x - y) <= half) | (np.abs(x + y - 1) <= half)
        return frame | diag
    if pattern == "plus2d":
        frame = dist_bnd.min(axis=1) < half
        cross = (np.abs(centers[:, 0] - 0.5) <= half) | (np.abs(centers[:, 1] - 0.5) <= half)
        return frame | cross
    if pattern == "bcc3d":
        frame = (dist_bnd < half).sum(axis=1) >= 2
        diag = np.zeros(len(centers), dtype=bool)
        for sx, sy in itertools.product((1, -1), repeat=2):
            direction = np.array([1.0, sx, sy]) / np.sqrt(3.0)
            start = np.array([0.0, 0.0 if sx > 0 else 1.0, 0.0 if sy > 0 else 1.0])
            rel = centers - start
            perp = rel - np.outer(rel @ direction, direction)
            diag |= np.linalg.norm(perp, axis=1) <= half
        return frame | diag
    raise UnknownPattern(pattern)


def build_reference_cell(pattern: str, degree: int = 1, refinement: int = 0,
                         strut_thickness: float = 0.25) -> ReferenceCell:
    """Build the reference cell mesh for a named strut pattern.

    The background grid has ``base * 2**refinement`` elements per side,
    ``base`` being 1 for solid cells and 8 for strut patterns.  Elements of
    the background grid whose centre falls inside the pattern are kept.
    """
    if pattern not in PATTERNS:
        raise UnknownPattern(f"unknown pattern {pattern!r}; known: {sorted(PATTERNS)}")
    if degree not in (1, 2):
        raise ValueError("degree must be 1 or 2")
    if refinement < 0:
        raise ValueError("refinement must be >= 0")
    dim, base = PATTERNS[pattern]
    n = base * 2**refinement
    p = degree

    origins = np.array(list(itertools.product(range(n), repeat=dim)))[:, ::-1]
    centers = (origins + 0.5) / n
    keep = _pattern_mask(pattern, centers, strut_thickness)
    origins = origins[keep]

    offsets = np.array(list(itertools.product(range(p + 1), repeat=dim)))[:, ::-1]
    # lattice coordinates of every element node
    elem_lattice = origins[:, None, :] * p + offsets[None, :, :]
    flat = elem_lattice.reshape(-1, dim)
    size = n * p + 1
    keys = np.ravel_multi_index(flat.T[::-1], (size,) * dim)
    uniq, inverse = np.unique(keys, return_inverse=True)
    lattice = np.stack(np.unravel_index(uniq, (size,) * dim)[::-1], axis=1)
    elements = inverse.reshape(origins.shape[0], offsets.shape[0])

    on_bnd = (lattice == 0) | (lattice == n * p)
    nb = on_bnd.sum(axis=1)
    node_class = np.where(nb == dim, CORNER, np.where(nb > 0, FACE, INTERIOR)).astype(np.int8)

    rc = ReferenceCell(dim=dim, degree=p, pattern=pattern, refinement=refinement, n_el_side=n,
                       strut_thickness=strut_thickness, lattice=lattice, elements=elements,
                       element_origin=origins, node_class=node_class, local_offsets=offsets)
    _check_reference_cell(rc)
    return rc


def element_adjacency(rc: ReferenceCell) -> sp.csr_matrix:
    """Elements sharing a full facet."""
    n, d = rc.n_el_side, rc.dim
    index = -np.ones((n,) * d, dtype=np.intp)
    index[tuple(rc.element_origin.T)] = np.arange(rc.n_elements)
    rows, cols = [], []
    for axis in range(d):
        shift = np.zeros(d, dtype=np.intp)
        shift[axis] = 1
        nbr = rc.element_origin + shift
        ok = nbr[:, axis] < n
        j = np.full(rc.n_elements, -1)
        j[ok] = index[tuple(nbr[ok].T)]
        m = j >= 0
        rows.append(np.flatnonzero(m))
        cols.append(j[m])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    A = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(rc.n_elements,) * 2)
    return (A + A.T).tocsr()


def _check_reference_cell(rc: ReferenceCell) -> None:
    corners = rc.corner_nodes()
    if corners.size != 2**rc.dim:
        raise ValueError(f"pattern {rc.pattern!r} does not cover all {2**rc.dim} cell vertices")
    ncomp, _ = connected_components(element_adjacency(rc), directed=False)
    if ncomp != 1:
        raise ValueError(f"pattern {rc.pattern!r} is not facet-connected ({ncomp} components)")
    for axis in range(rc.dim):
        lo, hi = face_node_match(rc, axis)
        if lo.size != hi.size or lo.size == 0:
            raise ValueError(f"opposite faces along axis {axis} do not match")


def face_node_match(rc: ReferenceCell, axis: int):
    """Nodes on the max face along ``axis`` and their translates on the min face.

    Returns ``(hi_nodes, lo_nodes)`` so that node ``hi_nodes[k]`` of one cell
    coincides with node ``lo_nodes[k]`` of its ``+axis`` neighbour.
    """
    hi = rc.face_nodes(axis, 1)
    lo = rc.face_nodes(axis, 0)
    size = rc.lattice_size + 1
    others = [a for a in range(rc.dim) if a != axis]

    def key(nodes):
        return np.ravel_multi_index(rc.lattice[nodes][:, others].T, (size,) * len(others))

    khi, klo = key(hi), key(lo)
    if not np.array_equal(np.sort(khi), np.sort(klo)):
        return np.zeros(0, dtype=np.intp), np.zeros(1, dtype=np.intp)
    order_lo = np.argsort(klo)
    pos = np.searchsorted(klo[order_lo], khi)
    return hi, lo[order_lo[pos]]


# --------------------------------------------------------------------------
# Bezier macro mappings
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MacroMapping:
    """Tensor-product (rational) Bezier map from [0, 1]^d into R^d.

    ``control_points`` has shape ``(p_0+1, ..., p_{d-1}+1, d)`` and
    ``weights`` shape ``(p_0+1, ..., p_{d-1}+1)``.
    """

    degrees: tuple
    control_points: np.ndarray
    weights: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.degrees)

    @property
    def rational(self) -> bool:
        return not np.allclose(self.weights, 1.0, rtol=0, atol=0)

    @classmethod
    def identity(cls, dim: int) -> "MacroMapping":
        return affine_mapping(np.zeros(dim), np.ones(dim))

    def evaluate(self, xi):
        """Points and Jacobians ``dx/dxi`` at parameters ``xi`` of shape (n, d)."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        d = self.dim
        n = xi.shape[0]
        B, dB = zip(*(bernstein_1d(self.degrees[k], xi[:, k]) for k in range(d)))
        Pw = self.control_points * self.weights[..., None]
        # homogeneous value and gradient: sum over tensor indices
        hom = np.concatenate([Pw, self.weights[..., None]], axis=-1)
        val = _tensor_contract(hom, B, None)
        grads = [_tensor_contract(hom, B, (a, dB[a])) for a in range(d)]
        w = val[:, d]
        x = val[:, :d] / w[:, None]
        J = np.empty((n, d, d))
        for a in range(d):
            g = grads[a]
            J[:, :, a] = (g[:, :d] - x * g[:, d:d + 1]) / w[:, None]
        return x, J

    def restrict(self, lo, hi) -> "MacroMapping":
        """Bezier map of the sub-box ``[lo, hi]`` reparameterized to [0, 1]^d."""
        d = self.dim
        hom = np.concatenate([self.control_points * self.weights[..., None],
                              self.weights[..., None]], axis=-1)
        for axis in range(d):
            S = _subdivision_matrix(self.degrees[axis], lo[axis], hi[axis])
            hom = np.moveaxis(np.tensordot(S, hom, axes=([1], [axis])), 0, axis)
        w = hom[..., d]
        return MacroMapping(tuple(self.degrees), hom[..., :d] / w[..., None], w)

    def sample_jacobians(self):
        grids = [np.linspace(0, 1, p + 2) for p in self.degrees]
        pts = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, self.dim)
        _, J = self.evaluate(pts)
        return np.linalg.det(J)


def _tensor_contract(coef, bases, replace):
    """sum_{i0..id} coef[i0,..,id,:] prod_k B_k[:, ik] for every point."""
    out = coef
    d = len(bases)
    n = bases[0].shape[0]
    # contract first axis with point axis kept: build via einsum strings
    letters = "abc"[:d]
    ops = []
    for k in range(d):
        Bk = replace[1] if (replace is not None and replace[0] == k) else bases[k]
        ops.append(Bk)
    expr = ",".join("n" + letters[k] for k in range(d)) + "," + letters + "z->nz"
    out = np.einsum(expr, *ops, coef, optimize=True)
    assert out.shape[0] == n
    return out


def _blossom(ctrl, params):
    c = np.array(ctrl, dtype=float)
    for t in params:
        c = (1 - t) * c[:-1] + t * c[1:]
    return c[0]


def _subdivision_matrix(p: int, a: float, b: float) -> np.ndarray:
    """Rows give control points on [a, b] as combinations of the originals."""
    S = np.zeros((p + 1, p + 1))
    eye = np.eye(p + 1)
    for j in range(p + 1):
        params = [a] * (p - j) + [b] * j
        for i in range(p + 1):
            S[j, i] = _blossom(eye[i], params)
    return S


def affine_mapping(origin, lengths) -> MacroMapping:
    origin = np.asarray(origin, dtype=float)
    lengths = np.asarray(lengths, dtype=float)
    d = origin.size
    cps = np.zeros((2,) * d + (d,))
    for idx in itertools.product((0, 1), repeat=d):
        cps[idx] = origin + np.array(idx) * lengths
    return MacroMapping((1,) * d, cps, np.ones((2,) * d))


def evaluate_mapping(m: MacroMapping, xi):
    """Point and Jacobian of ``m`` at a single parameter ``xi``."""
    x, J = m.evaluate(np.asarray(xi, dtype=float)[None, :])
    return x[0], J[0]


# --------------------------------------------------------------------------
# Macro patches and models
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MacroPatch:
    """Single patch made of a grid of Bezier elements (C0 across elements)."""

    kind: str
    element_grid: tuple
    elements: tuple  # MacroMapping per element, Fortran (x-fastest) order

    @property
    def dim(self) -> int:
        return len(self.element_grid)

    def element(self, idx) -> MacroMapping:
        return self.elements[int(np.ravel_multi_index(tuple(idx), self.element_grid, order="F"))]

    def evaluate(self, xi):
        """Evaluate at global patch parameters ``xi`` in [0, 1]^d."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        grid = np.array(self.element_grid)
        scaled = xi * grid
        idx = np.minimum(np.floor(scaled).astype(int), grid - 1)
        local = scaled - idx
        x = np.empty_like(xi)
        J = np.empty((xi.shape[0], self.dim, self.dim))
        for k in range(xi.shape[0]):
            xk, Jk = self.element(idx[k]).evaluate(local[k:k + 1])
            x[k] = xk[0]
            J[k] = Jk[0] * grid[None, :]
        return x, J


def make_patch(spec: dict, dim: int | None = None) -> MacroPatch:
    """Patch from a config dictionary (see README for the schema)."""
    kind = spec["kind"]
    if kind == "affine-box":
        origin = np.asarray(spec.get("origin", np.zeros(len(spec["lengths"]))), dtype=float)
        return MacroPatch(kind, (1,) * origin.size, (affine_mapping(origin, spec["lengths"]),))
    if kind == "quarter-annulus":
        r0, r1 = float(spec["inner_radius"]), float(spec["outer_radius"])
        height = spec.get("height")
        d = 3 if height is not None else 2
        if dim is not None and dim != d:
            raise ValueError(f"quarter-annulus patch is {d}D ('height' given: {height is not None})")
        dirs = np.array([[0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])  # clockwise keeps det J > 0
        warc = np.array([1.0, np.sqrt(2.0) / 2.0, 1.0])
        if d == 2:
            cps = np.zeros((3, 2, 2))
            w = np.zeros((3, 2))
            for i in range(3):
                for j, r in enumerate((r0, r1)):
                    cps[i, j] = r * dirs[i]
                    w[i, j] = warc[i]
            return MacroPatch(kind, (1, 1), (MacroMapping((2, 1), cps, w),))
        cps = np.zeros((3, 2, 2, 3))
        w = np.zeros((3, 2, 2))
        for i in range(3):
            for j, r in enumerate((r0, r1)):
                for k in range(2):
                    cps[i, j, k, :2] = r * dirs[i]
                    cps[i, j, k, 2] = k * float(height)
                    w[i, j, k] = warc[i]
        return MacroPatch(kind, (1, 1, 1), (MacroMapping((2, 1, 1), cps, w),))
    if kind == "bezier-grid":
        degrees = tuple(int(p) for p in spec["degree"])
        grid = tuple(int(n) for n in spec["elements"])
        d = len(degrees)
        cps = np.asarray(spec["control_points"], dtype=float)
        expected = grid + tuple(p + 1 for p in degrees) + (d,)
        if cps.shape != expected:
            raise ValueError(f"bezier-grid control_points shape {cps.shape}, expected {expected}")
        w = np.asarray(spec.get("weights", np.ones(expected[:-1])), dtype=float)
        if w.shape != expected[:-1]:
            raise ValueError(f"bezier-grid weights shape {w.shape}, expected {expected[:-1]}")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        elems = []
        for flat in range(int(np.prod(grid))):
            idx = np.unravel_index(flat, grid, order="F")
            elems.append(MacroMapping(degrees, cps[idx], w[idx]))
        return MacroPatch(kind, grid, tuple(elems))
    raise ValueError(f"unknown macro patch kind {kind!r}")


@dataclass(frozen=True, eq=False)
class MacroModel:
    patch: MacroPatch
    grid_dims: tuple
    mappings: tuple   # one MacroMapping per cell, Fortran (x-fastest) order
    adjacency: tuple  # (s_low, s_high, axis) for every face-sharing pair

    @property
    def dim(self) -> int:
        return len(self.grid_dims)

    @property
    def n_cells(self) -> int:
        return len(self.mappings)

    def cell_index(self, s: int) -> tuple:
        return tuple(int(i) for i in np.unravel_index(s, self.grid_dims, order="F"))

    def cell_number(self, idx) -> int:
        return int(np.ravel_multi_index(tuple(idx), self.grid_dims, order="F"))

    def cells_on_face(self, axis: int, side: int) -> np.ndarray:
        target = 0 if side == 0 else self.grid_dims[axis] - 1
        return np.array([s for s in range(self.n_cells) if self.cell_index(s)[axis] == target])

    def global_parameter(self, s: int, xi):
        """Patch parameter of the local cell parameter ``xi``."""
        idx = np.array(self.cell_index(s))
        return (idx + np.atleast_2d(xi)) / np.array(self.grid_dims)


def build_macro_model(patch, cells) -> MacroModel:
    """Split a patch into ``cells`` (grid dims) Bezier cell mappings.

    Every patch element is subdivided uniformly, so each cell mapping is
    the Bezier extraction of the patch restricted to the cell.
    """
    if isinstance(patch, dict):
        patch = make_patch(patch, dim=len(cells))
    cells = tuple(int(c) for c in cells)
    if len(cells) != patch.dim:
        raise ValueError(f"grid dims {cells} do not match patch dimension {patch.dim}")
    egrid = np.array(patch.element_grid)
    if np.any(np.array(cells) % egrid):
        raise ValueError(f"cell grid {cells} is not a multiple of the patch element grid {tuple(egrid)}")
    per = np.array(cells) // egrid

    mappings = []
    for s in range(int(np.prod(cells))):
        idx = np.array(np.unravel_index(s, cells, order="F"))
        eidx = idx // per
        sub = idx % per
        m = patch.element(eidx).restrict(sub / per, (sub + 1) / per)
        detJ = m.sample_jacobians()
        if np.any(detJ <= 0):
            raise DegenerateJacobian(f"cell {s}: det J = {detJ.min():.3e} <= 0")
        mappings.append(m)

    adjacency = []
    for s in range(len(mappings)):
        idx = np.array(np.unravel_index(s, cells, order="F"))
        for axis in range(len(cells)):
            if idx[axis] + 1 < cells[axis]:
                nb = idx.copy()
                nb[axis] += 1
                adjacency.append((s, int(np.ravel_multi_index(tuple(nb), cells, order="F")), axis))
    return MacroModel(patch, cells, tuple(mappings), tuple(adjacency))


def interface_mismatch(mm: MacroModel, rc: ReferenceCell) -> float:
    """Largest distance between matched boundary nodes of adjacent cells."""
    worst = 0.0
    matches = [face_node_match(rc, a) for a in range(rc.dim)]
    xi = rc.nodes
    for s1, s2, axis in mm.adjacency:
        hi, lo = matches[axis]
        x1, _ = mm.mappings[s1].evaluate(xi[hi])
        x2, _ = mm.mappings[s2].evaluate(xi[lo])
        worst = max(worst, float(np.abs(x1 - x2).max()))
    return worst
