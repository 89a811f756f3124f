import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isocut.mesh import (
    DEFAULT_GRADING,
    Mesh,
    build_disk_mesh,
    build_square_mesh,
    element_diameter,
    refine,
    uniform_refine,
)


def edge_counts(mesh):
    return (mesh.edge_tris >= 0).sum(axis=1)


def test_hexagon_fan():
    m = build_disk_mesh(2.0, 1)
    assert (m.n_vertices, m.n_triangles, len(m.boundary_edges)) == (7, 6, 6)


def test_two_ring_disk_counts():
    m = build_disk_mesh(2.0, 2)
    assert m.n_vertices == 19
    assert m.n_triangles == 24
    assert len(m.boundary_edges) == 12
    r = np.linalg.norm(m.vertices[m.boundary_vertices], axis=1)
    assert np.abs(r - 2.0).max() <= 1e-12


def test_two_ring_disk_frozen_geometry():
    # inner ring radius 2 * (1/2) ** log2(32/9) = 0.5625
    m = build_disk_mesh(2.0, 2)
    r = np.linalg.norm(m.vertices[1:7], axis=1)
    np.testing.assert_allclose(r, 0.5625, rtol=0, atol=1e-15)
    assert DEFAULT_GRADING == pytest.approx(np.log2(32 / 9))
    assert m.h_max == pytest.approx(1.786450740994557, rel=1e-13)


@pytest.mark.parametrize("n, nv, nt", [(1, 4, 2), (2, 9, 8)])
def test_square_counts(n, nv, nt):
    m = build_square_mesh(1.0, n)
    assert (m.n_vertices, m.n_triangles) == (nv, nt)


def test_square_lattice_coordinates():
    m = build_square_mesh(2.0, 2)
    assert set(np.unique(m.vertices)) <= {-1.0, 0.0, 1.0}


def test_refine_quadruples():
    m = build_disk_mesh(2.0, 1)
    assert uniform_refine(m).n_triangles == 24


def test_diameters():
    right = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    assert element_diameter(right, 0) == pytest.approx(np.sqrt(2.0))
    eq = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]]), np.array([[0, 1, 2]]))
    assert element_diameter(eq, 0) == pytest.approx(1.0)
    with pytest.raises(IndexError):
        element_diameter(right, 3)


def test_rejects_clockwise():
    with pytest.raises(ValueError, match="counterclockwise"):
        Mesh(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), np.array([[0, 1, 2]]))


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        build_disk_mesh(-1.0, 2)
    with pytest.raises(ValueError):
        build_square_mesh(1.0, 0)


@settings(max_examples=12, deadline=None)
@given(rings=st.integers(1, 4), level=st.integers(0, 2), radius=st.floats(0.5, 5.0))
def test_disk_invariants(rings, level, radius):
    m = refine(build_disk_mesh(radius, rings), level)
    assert np.all(m.signed_areas() > 0)
    counts = edge_counts(m)
    assert set(np.unique(counts)) <= {1, 2}
    r = np.linalg.norm(m.vertices[m.boundary_vertices], axis=1)
    assert np.abs(r - radius).max() <= 1e-12 * radius
    assert m.is_connected()
    # Euler characteristic of a disk
    assert m.n_vertices - len(m.edges) + m.n_triangles == 1


@settings(max_examples=10, deadline=None)
@given(n=st.integers(1, 6), side=st.floats(0.25, 8.0))
def test_square_refinement_halves_h(n, side):
    m = build_square_mesh(side, n)
    child = uniform_refine(m)
    assert child.h_max == pytest.approx(m.h_max / 2, rel=1e-14)
    assert set(np.unique(edge_counts(child))) <= {1, 2}
    assert child.signed_areas().sum() == pytest.approx(side**2, rel=1e-13)
