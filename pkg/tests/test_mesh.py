import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocpfem.errors import MeshError
from ocpfem.mesh import (
    check_mesh,
    common_refinement,
    mesh_size,
    rectangle_mesh,
    refine,
    refine_uniform,
    unit_square_mesh,
)


def _cell_set(m):
    return {tuple(sorted(map(tuple, np.round(m.vertices[c], 12)))) for c in m.cells}


def test_smallest_mesh():
    m = unit_square_mesh(1)
    assert (m.n_vertices, m.n_cells, len(m.boundary_vertices)) == (4, 2, 4)


def test_n2_has_one_interior_vertex():
    m = unit_square_mesh(2)
    assert (m.n_vertices, m.n_cells) == (9, 8)
    assert len(m.interior_vertices) == 1
    np.testing.assert_allclose(m.vertices[m.interior_vertices[0]], [0.5, 0.5])


def test_tiling_area():
    assert abs(unit_square_mesh(4).areas.sum() - 1.0) <= 1e-14


def test_rejects_nonpositive_n():
    with pytest.raises(MeshError):
        unit_square_mesh(0)


@pytest.mark.parametrize("n", [1, 2, 3, 8])
def test_invariants_hold(n):
    check_mesh(unit_square_mesh(n))
    check_mesh(rectangle_mesh(2 * n, n, (0.0, 0.0, 2.0, 1.0)))


def test_refine_counts():
    assert refine_uniform(unit_square_mesh(1)).n_cells == 8
    assert refine_uniform(unit_square_mesh(1)).n_vertices == 9
    assert refine(unit_square_mesh(2), 2).n_cells == 128


def test_refinement_is_geometrically_freudenthal():
    for n in (1, 3):
        assert _cell_set(refine_uniform(unit_square_mesh(n))) == _cell_set(unit_square_mesh(2 * n))


def test_parent_map_contains_child():
    coarse = unit_square_mesh(3)
    fine = refine_uniform(coarse)
    lam = coarse.barycentric(fine.centroids, fine.parent_map)
    assert (lam > 0).all()


def test_refinement_keeps_parent_vertices_and_area():
    m = unit_square_mesh(2)
    r = refine(m, 3)
    np.testing.assert_array_equal(r.vertices[: m.n_vertices], m.vertices)
    assert abs(r.areas.sum() - 1.0) <= 1e-12
    check_mesh(r)


def test_edge_manifold_deep_refinement():
    m = refine(unit_square_mesh(1), 8)
    _, counts = m.edges()
    assert set(np.unique(counts)) == {1, 2}
    assert counts.sum() == 3 * m.n_cells


def test_mesh_size():
    assert abs(mesh_size(unit_square_mesh(2)) - np.sqrt(2) / 2) <= 1e-14
    assert abs(mesh_size(unit_square_mesh(8)) - np.sqrt(2) / 8) <= 1e-14
    m = unit_square_mesh(4)
    assert mesh_size(refine_uniform(m)) == mesh_size(m) / 2
    m = unit_square_mesh(3)
    assert abs(mesh_size(refine_uniform(m)) - mesh_size(m) / 2) <= 1e-15


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 12),
    st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=20),
)
def test_locate_returns_containing_cell(n, pts):
    m = unit_square_mesh(n)
    p = np.array(pts)
    lam = m.barycentric(p, m.locate(p))
    assert (lam >= -1e-12).all()


def test_ancestor_map_lineage_and_geometry_agree():
    coarse = unit_square_mesh(2)
    fine = refine(coarse, 2)
    np.testing.assert_array_equal(fine.ancestor_map(coarse), coarse.locate(fine.centroids))
    independent = unit_square_mesh(8)
    assert independent.is_descendant_of(coarse)
    lam = coarse.barycentric(independent.centroids, independent.ancestor_map(coarse))
    assert (lam > 0).all()


def test_non_nested_meshes_rejected():
    with pytest.raises(MeshError):
        unit_square_mesh(3).ancestor_map(unit_square_mesh(2))
    assert not unit_square_mesh(6).is_descendant_of(unit_square_mesh(4))


def test_common_refinement():
    r = common_refinement(unit_square_mesh(4), unit_square_mesh(6))
    assert (r.nx, r.ny) == (12, 12)
    a = unit_square_mesh(4)
    assert common_refinement(a, unit_square_mesh(2)) is a


def test_to_text_roundtrip():
    m = unit_square_mesh(2)
    head, tail = m.to_text().split("\n\n")
    verts = np.array([[float(v) for v in line.split()] for line in head.splitlines()])
    cells = np.array([[int(v) for v in line.split()] for line in tail.strip().splitlines()])
    np.testing.assert_array_equal(verts, m.vertices)
    np.testing.assert_array_equal(cells, m.cells)
