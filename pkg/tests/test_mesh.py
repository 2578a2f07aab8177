import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_refinement, unit_square
from nestedhz.mesh import (
    BOUNDARY_NEW, INITIAL, INTERIOR_NEW, MINUS, PLUS, Mesh, MeshError, bisect, read_mesh, refine,
    side_of, uniform_refine, write_mesh,
)
from nestedhz.problems import problem_cook, problem_lshape


def reference_triangle():
    return Mesh.from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], [[0, 1], [1, 2], [0, 2]], [1, 1, 1])


def euler_holds(mesh):
    # V - E + F = 1 for a simply connected polygon
    return mesh.n_vertices - mesh.n_edges + mesh.n_triangles == 1


def test_bisect_reference_triangle():
    m = bisect(reference_triangle(), 0)
    assert m.n_triangles == 2 and m.n_vertices == 4
    assert np.allclose(m.points[3], [0.5, 0.5])
    assert m.kind[3] == BOUNDARY_NEW
    assert all(3 in tri for tri in m.triangles)
    assert np.isclose(m.areas.sum(), 0.5)


def test_bisect_interior_edge_is_nonconforming(square):
    m = bisect(square, 0)
    assert not m.is_conforming()


def test_bisect_invalid_index(square):
    with pytest.raises(IndexError):
        bisect(square, 2)
    with pytest.raises(IndexError):
        refine(square, [5])


def test_repeated_bisection_keeps_angles():
    m = Mesh.from_arrays([[0, 0], [1, 0], [0.3, 0.8]], [[0, 1, 2]], [[0, 1], [1, 2], [0, 2]], [1, 1, 1])
    alpha0 = m.min_angle()
    for _ in range(10):
        m = bisect(m, m.n_triangles - 1)
    assert m.min_angle() >= 0.5 * alpha0


def test_refine_nothing_returns_same_mesh(square):
    assert refine(square, []) is square


def test_refine_all_of_square(square):
    m = refine(square, [0, 1])
    assert m.n_triangles == 4 and m.is_conforming()
    new = m.interior_new_vertices()
    assert len(new) == 1 and np.allclose(m.points[new[0]], [0.5, 0.5])
    assert np.allclose(m.origin_t[new[0]], np.array([1, 1]) / np.sqrt(2))


def test_side_of_examples(square):
    m = refine(square, [0, 1])
    v = int(m.interior_new_vertices()[0])
    n = np.array([-1.0, 1.0]) / np.sqrt(2)
    for k in m.triangles_at(v)[0]:
        expected = PLUS if np.dot(m.centroids[k] - [0.5, 0.5], n) > 0 else MINUS
        assert side_of(m, v, k) == expected
    # explicit: a triangle with centroid (0.5, 0.25) lies on the minus side
    below = [k for k in m.triangles_at(v)[0] if m.centroids[k][1] < m.centroids[k][0]]
    assert below and all(side_of(m, v, k) == MINUS for k in below)


def test_side_of_rejects_initial_and_foreign_vertices(square):
    m = refine(square, [0, 1])
    with pytest.raises(MeshError):
        side_of(m, 0, 0)
    v = int(m.interior_new_vertices()[0])
    far = [k for k in range(m.n_triangles) if v not in m.triangles[k]]
    if far:
        with pytest.raises(MeshError):
            side_of(m, v, far[0])


def test_side_of_stable_under_further_refinement(square):
    m = refine(square, [0, 1])
    v = int(m.interior_new_vertices()[0])
    x_e = m.points[v]
    n = np.array([-1.0, 1.0]) / np.sqrt(2)
    for _ in range(3):
        m = refine(m, m.triangles_at(v)[0])
        for k in m.triangles_at(v)[0]:
            s = side_of(m, v, k)
            d = (m.coords(k) - x_e) @ n
            if s == PLUS:
                assert np.all(d >= -1e-14)
            else:
                assert np.all(d <= 1e-14)


def test_degenerate_initial_mesh_rejected():
    with pytest.raises(MeshError):
        Mesh.from_arrays([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]], [[0, 1], [1, 2], [0, 2]], [1, 1, 1])


def test_mismatched_boundary_table_rejected():
    with pytest.raises(MeshError):
        Mesh.from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], [[0, 1], [1, 2]], [1, 1])


def test_uniform_refinement_halves_h():
    m0 = problem_lshape().initial_mesh()
    m1 = uniform_refine(m0)
    assert m1.n_triangles == 4 * m0.n_triangles
    assert np.isclose(m1.h.max(), 0.5 * m0.h.max())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["square", "lshape", "cook"]))
def test_refinement_properties(seed, which):
    m0 = {"square": unit_square, "lshape": lambda: problem_lshape().initial_mesh(),
          "cook": lambda: problem_cook().initial_mesh()}[which]()
    m = random_refinement(m0, seed, steps=3)
    assert m.is_conforming()
    assert euler_holds(m)
    assert np.isclose(m.areas.sum(), m0.areas.sum(), rtol=1e-13)
    assert np.all(m.areas > 0)
    # nesting: every child lies inside its ancestor
    anc = m.ancestors_in(m0)
    tri, _ = m0.locate(m.centroids)
    assert np.array_equal(tri, anc)
    # determinism
    again = random_refinement(m0, seed, steps=3)
    assert np.array_equal(again.points, m.points)
    assert np.array_equal(again.triangles, m.triangles)
    # vertex classification
    assert np.all(m.kind[: m0.n_vertices] == INITIAL)
    interior = ~m.boundary_vertex
    assert np.all(m.kind[m0.n_vertices:][interior[m0.n_vertices:]] == INTERIOR_NEW)


def test_boundary_markers_inherited():
    m0 = problem_cook().initial_mesh()
    m = uniform_refine(m0, 2)
    assert set(np.unique(m.boundary_markers)) == set(np.unique(m0.boundary_markers))
    assert len(m.boundary_edges) == 4 * len(m0.boundary_edges)


def test_mesh_file_round_trip(tmp_path):
    m = random_refinement(problem_lshape().initial_mesh(), 7)
    path = tmp_path / "m.mesh"
    write_mesh(m, path)
    r = read_mesh(path)
    assert np.array_equal(r.points, m.points)
    assert np.array_equal(r.triangles, m.triangles)
    assert np.array_equal(r.boundary_edges, m.boundary_edges)
    assert np.array_equal(r.boundary_markers, m.boundary_markers)


def test_read_mesh_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.mesh"
    p.write_text("mesh v0\n0\n")
    with pytest.raises(MeshError):
        read_mesh(p)
