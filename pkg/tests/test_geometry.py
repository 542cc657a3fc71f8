import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.csgraph import connected_components

from latticedd.errors import DegenerateJacobian, UnknownPattern
from latticedd.geometry import (CORNER, FACE, INTERIOR, PATTERNS, MacroMapping, MacroPatch,
                                affine_mapping,
                                build_macro_model, build_reference_cell, element_adjacency,
                                evaluate_mapping, face_node_match, interface_mismatch, make_patch)

ANNULUS = {"kind": "quarter-annulus", "inner_radius": 1.0, "outer_radius": 2.0}
SWEPT = {"kind": "bezier-grid", "degree": [2, 1], "elements": [2, 1],
         "control_points": [[[[[0.0, 0.0], [0.0, 1.0]], [[1.0, 0.3], [1.0, 1.3]],
                              [[2.0, 0.0], [2.0, 1.0]]]],
                            [[[[2.0, 0.0], [2.0, 1.0]], [[3.0, -0.3], [3.0, 0.7]],
                              [[4.0, 0.0], [4.0, 1.0]]]]]}


# --------------------------------------------------------------- reference cell

def test_single_bilinear_element():
    rc = build_reference_cell("solid2d", 1, 0)
    assert rc.n_nodes == 4 and rc.n_elements == 1
    assert np.all(rc.node_class == CORNER)


def test_solid_refinement_counts():
    rc = build_reference_cell("solid2d", 1, 2)
    assert rc.n_elements == 16 and rc.n_nodes == 25
    counts = np.bincount(rc.node_class, minlength=3)
    assert counts[CORNER] == 4 and counts[FACE] == 12 and counts[INTERIOR] == 9
    assert rc.n_dof == 2 * 25


@pytest.mark.parametrize("pattern", sorted(PATTERNS))
@pytest.mark.parametrize("degree", [1, 2])
def test_reference_cell_invariants(pattern, degree):
    rc = build_reference_cell(pattern, degree, 0 if pattern.endswith("3d") else 1)
    x = rc.nodes
    assert np.all((x >= 0) & (x <= 1))
    corners = rc.corner_nodes()
    assert corners.size == 2**rc.dim
    vertices = np.array(np.meshgrid(*[[0, 1]] * rc.dim)).reshape(rc.dim, -1).T
    assert {tuple(v) for v in x[corners]} == {tuple(v) for v in vertices}
    assert connected_components(element_adjacency(rc), directed=False)[0] == 1
    for axis in range(rc.dim):
        hi, lo = face_node_match(rc, axis)
        assert hi.size == lo.size > 0
        shift = np.zeros(rc.dim)
        shift[axis] = 1.0
        assert np.allclose(x[hi], x[lo] + shift, atol=1e-15)


def test_unknown_pattern():
    with pytest.raises(UnknownPattern):
        build_reference_cell("honeycomb")


# ---------------------------------------------------------------- mappings

def test_identity_mapping():
    for xi in np.random.default_rng(0).random((7, 3)):
        x, J = evaluate_mapping(MacroMapping.identity(3), xi)
        assert np.allclose(x, xi, atol=1e-15)
        assert np.allclose(J, np.eye(3), atol=1e-15)


def test_affine_scaling_jacobian():
    m = affine_mapping((1.0, -2.0), (0.5, 0.5))
    _, J = m.evaluate(np.random.default_rng(1).random((5, 2)))
    assert np.allclose(J, 0.5 * np.eye(2), atol=1e-15)


def test_quarter_annulus_mid_radius():
    patch = make_patch(ANNULUS)
    x, J = patch.evaluate(np.array([[0.5, 0.5]]))
    assert abs(np.linalg.norm(x[0]) - 1.5) <= 1e-12
    assert np.linalg.det(J[0]) > 0


def test_rational_jacobian_matches_finite_differences():
    m = make_patch(ANNULUS).element((0, 0))
    xi = np.array([[0.3, 0.7]])
    _, J = m.evaluate(xi)
    h = 1e-6
    for a in range(2):
        e = np.zeros((1, 2))
        e[0, a] = h
        fd = (m.evaluate(xi + e)[0] - m.evaluate(xi - e)[0]) / (2 * h)
        assert np.allclose(J[0, :, a], fd[0], atol=1e-8)


def test_negative_jacobian_is_rejected():
    flipped = affine_mapping((0.0, 0.0), (1.0, 1.0))
    cps = flipped.control_points[::-1]
    with pytest.raises(DegenerateJacobian):
        build_macro_model(MacroPatch("bezier-grid", (1, 1),
                                     (MacroMapping(flipped.degrees, cps, flipped.weights),)), (2, 2))


# ------------------------------------------------------------------ models

def test_affine_box_cells_are_translates():
    mm = build_macro_model({"kind": "affine-box", "lengths": [16.0, 8.0]}, (16, 8))
    assert mm.n_cells == 128
    base = mm.mappings[0].control_points
    for s in range(mm.n_cells):
        shift = np.array(mm.cell_index(s), dtype=float)
        assert np.allclose(mm.mappings[s].control_points, base + shift, atol=1e-13)


def test_quarter_annulus_cells_on_circles():
    mm = build_macro_model(ANNULUS, (4, 2))
    assert mm.n_cells == 8
    assert all(m.rational and m.degrees == (2, 1) for m in mm.mappings)
    for s in range(mm.n_cells):
        i, j = mm.cell_index(s)
        x, _ = mm.mappings[s].evaluate(np.array([[0.5, 0.0], [0.5, 1.0]]))
        r = 1.0 + np.array([j, j + 1]) / 2
        assert np.allclose(np.linalg.norm(x, axis=1), r, atol=1e-12)


def test_bezier_grid_two_elements():
    mm = build_macro_model(SWEPT, (2, 1))
    assert len(mm.adjacency) == 1
    rc = build_reference_cell("cross-hollow-square2d")
    assert interface_mismatch(mm, rc) <= 1e-10


@pytest.mark.parametrize("spec,cells", [(ANNULUS, (4, 2)), (SWEPT, (8, 4)),
                                        ({**ANNULUS, "height": 0.5}, (2, 2, 2))])
def test_interfaces_coincide(spec, cells):
    mm = build_macro_model(spec, cells)
    rc = build_reference_cell("bcc3d" if len(cells) == 3 else "cross-hollow-square2d", 2)
    assert interface_mismatch(mm, rc) <= 1e-10


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_extraction_is_partition_consistent(seed):
    rng = np.random.default_rng(seed)
    for spec, cells in ((ANNULUS, (4, 2)), (SWEPT, (4, 2))):
        mm = build_macro_model(spec, cells)
        s = int(rng.integers(mm.n_cells))
        xi = rng.random((4, 2))
        x_cell, _ = mm.mappings[s].evaluate(xi)
        x_patch, _ = mm.patch.evaluate(mm.global_parameter(s, xi))
        assert np.allclose(x_cell, x_patch, atol=1e-12, rtol=0)


def test_cell_grid_must_refine_patch_elements():
    with pytest.raises(ValueError):
        build_macro_model(SWEPT, (3, 1))
