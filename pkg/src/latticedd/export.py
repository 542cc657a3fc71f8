"""Legacy VTK (ASCII unstructured grid) export of displacement and von Mises stress."""

from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np

from .assembly import Material, von_mises
from .errors import IoError
from .decomposition import global_node_keys, node_coordinates

_VTK_QUAD, _VTK_HEX = 9, 12


def _sub_cells(rc):
    """Linear sub-cells of every element as local node positions (VTK ordering)."""
    d, p = rc.dim, rc.degree
    off = rc.local_offsets
    lookup = {tuple(o): k for k, o in enumerate(off)}
    if d == 2:
        corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
    else:
        corners = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                   (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
    subs = []
    for base in itertools.product(range(p), repeat=d):
        subs.append([lookup[tuple(np.add(base, c))] for c in corners])
    return np.array(subs)


def element_von_mises(rc, mm, mat: Material, u_cells: np.ndarray) -> np.ndarray:
    """Von Mises stress at every element centre, shape (N, n_el)."""
    d = rc.dim
    _, dN = rc.shape_functions(np.full((1, d), 0.5))
    dN = dN[0]                                             # (nen, d) w.r.t. xi
    out = np.zeros((mm.n_cells, rc.n_elements))
    centres = rc.element_points(np.arange(rc.n_elements)[:, None], np.full((1, d), 0.5))
    centres = centres.reshape(-1, d)
    for s in range(mm.n_cells):
        _, J = mm.mappings[s].evaluate(centres)
        Jinv = np.linalg.inv(J)
        ue = u_cells[s].reshape(-1, d)[rc.elements]        # (n_el, nen, d)
        grad = np.einsum("eic,ia,eaj->ecj", ue, dN, Jinv)
        out[s] = von_mises(mat.stress(grad), mat)
    return out


def export_field(path, rc, mm, mat: Material, u_cells: np.ndarray) -> Path:
    """Write nodal displacements and element von Mises stress.

    Shared nodes are written once; quadratic elements are split into
    linear sub-cells that inherit the element value.
    """
    path = Path(path)
    d = rc.dim
    keys = global_node_keys(rc, mm)
    uniq, first, inv = np.unique(keys.ravel(), return_index=True, return_inverse=True)
    coords = node_coordinates(rc, mm).reshape(-1, d)[first]
    disp = u_cells.reshape(-1, d)[first]
    gnode = inv.reshape(keys.shape)
    subs = _sub_cells(rc)
    vm = element_von_mises(rc, mm, mat, u_cells)

    conn, values = [], []
    for s in range(mm.n_cells):
        el = gnode[s][rc.elements]                        # (n_el, nen)
        conn.append(el[:, subs].reshape(-1, subs.shape[1]))
        values.append(np.repeat(vm[s], subs.shape[0]))
    conn = np.concatenate(conn)
    values = np.concatenate(values)
    pad = lambda a: np.hstack([a, np.zeros((a.shape[0], 3 - d))]) if d == 2 else a  # noqa: E731
    ctype = _VTK_QUAD if d == 2 else _VTK_HEX

    try:
        with path.open("w") as fh:
            fh.write("# vtk DataFile Version 3.0\nlattice displacement field\nASCII\n")
            fh.write("DATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {coords.shape[0]} double\n")
            np.savetxt(fh, pad(coords), fmt="%.12g")
            nper = conn.shape[1]
            fh.write(f"CELLS {conn.shape[0]} {conn.shape[0] * (nper + 1)}\n")
            np.savetxt(fh, np.hstack([np.full((conn.shape[0], 1), nper), conn]), fmt="%d")
            fh.write(f"CELL_TYPES {conn.shape[0]}\n")
            np.savetxt(fh, np.full(conn.shape[0], ctype), fmt="%d")
            fh.write(f"POINT_DATA {coords.shape[0]}\nVECTORS displacement double\n")
            np.savetxt(fh, pad(disp), fmt="%.12g")
            fh.write(f"CELL_DATA {conn.shape[0]}\nSCALARS von_mises double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, values, fmt="%.12g")
    except OSError as e:
        raise IoError(f"cannot write field file {path}: {e}") from e
    return path


def read_vtk_counts(path) -> dict:
    """Parse the section sizes of a legacy VTK file written by :func:`export_field`."""
    counts = {}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if parts and parts[0] in ("POINTS", "CELLS", "CELL_TYPES", "POINT_DATA", "CELL_DATA"):
                counts[parts[0]] = int(parts[1])
    return counts
