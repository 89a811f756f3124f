import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isocut.fespace import MAX_DEGREE, interpolate, linearize, make_space, reference_basis
from isocut.mesh import build_disk_mesh, build_square_mesh, refine


def random_poly(rng, k):
    """Random polynomial of total degree k as a vectorized point function."""
    exps = [(i, j) for i in range(k + 1) for j in range(k + 1 - i)]
    c = rng.standard_normal(len(exps))

    def f(x):
        x = np.atleast_2d(x)
        return sum(ci * x[:, 0] ** i * x[:, 1] ** j for ci, (i, j) in zip(c, exps))

    return f


@pytest.mark.parametrize("k, ndof", [(1, 4), (2, 9), (3, 16)])
def test_dof_counts(k, ndof):
    assert make_space(build_square_mesh(1.0, 1), k).ndof == ndof


def test_dof_count_formula():
    m = build_disk_mesh(2.0, 2)
    for k in range(1, MAX_DEGREE + 1):
        s = make_space(m, k)
        expected = m.n_vertices + len(m.edges) * (k - 1) + m.n_triangles * (k - 1) * (k - 2) // 2
        assert s.ndof == expected
        # every dof appears in some cell and node coordinates are unique
        assert np.array_equal(np.unique(s.cell_dofs), np.arange(s.ndof))
        assert len(np.unique(np.round(s.node_coords, 12), axis=0)) == s.ndof


def test_k_out_of_range():
    with pytest.raises(ValueError, match="k out of range"):
        make_space(build_square_mesh(1.0, 1), 6)


@pytest.mark.parametrize("k", range(1, MAX_DEGREE + 1))
def test_kronecker(k):
    b = reference_basis(k)
    assert np.abs(b.values(b.nodes) - np.eye(b.n_local)).max() <= 1e-13


@pytest.mark.parametrize("k", range(1, MAX_DEGREE + 1))
def test_partition_of_unity(k):
    b = reference_basis(k)
    pts = np.random.default_rng(k).random((40, 2)) * 0.5
    assert np.abs(b.values(pts).sum(axis=1) - 1).max() <= 1e-12
    assert np.abs(b.grads(pts).sum(axis=1)).max() <= 1e-10


def test_interpolate_constant():
    s = make_space(build_disk_mesh(2.0, 2), 3)
    assert np.all(interpolate(s, lambda x: np.ones(len(x))).coeffs == 1.0)


def test_interpolate_circle_nodal():
    s = make_space(build_disk_mesh(2.0, 2), 2)
    f = lambda x: np.linalg.norm(x, axis=-1) - 1.0
    field = interpolate(s, f)
    assert np.abs(field.coeffs - f(s.node_coords)).max() == 0.0


def test_interpolate_nonfinite():
    s = make_space(build_square_mesh(1.0, 1), 1)
    with np.errstate(divide="ignore"), pytest.raises(ValueError, match="non-finite"):
        interpolate(s, lambda x: 1.0 / (x[:, 0] + 0.5))


@settings(max_examples=10, deadline=None)
@given(k=st.integers(1, MAX_DEGREE), seed=st.integers(0, 10**6))
def test_polynomial_reproduction(k, seed):
    rng = np.random.default_rng(seed)
    f = random_poly(rng, k)
    s = make_space(build_disk_mesh(2.0, 2), k)
    field = interpolate(s, f)
    for _ in range(50):
        e = int(rng.integers(s.mesh.n_triangles))
        y = rng.random(2)
        if y.sum() > 1:
            y = 1 - y
        x = s.to_physical(e, y[None])[0]
        exact = f(x)[0]
        assert abs(field.eval(e, y) - exact) <= 1e-12 * max(1.0, abs(exact))


def test_linearize_keeps_vertices_and_is_idempotent():
    s = make_space(build_disk_mesh(2.0, 2), 2)
    phi = interpolate(s, lambda x: np.linalg.norm(x, axis=-1) - 1.0)
    lin = linearize(phi)
    nv = s.mesh.n_vertices
    assert np.array_equal(lin.coeffs, phi.coeffs[:nv])
    assert lin.space.k == 1
    again = linearize(lin)
    assert np.array_equal(again.coeffs, lin.coeffs)
    assert linearize(linearize(phi)).coeffs.tolist() == lin.coeffs.tolist()


def test_linearize_degree_one_identity():
    s = make_space(build_square_mesh(2.0, 2), 1)
    phi = interpolate(s, lambda x: x[:, 0] ** 2 + x[:, 1])
    assert np.array_equal(linearize(phi).coeffs, phi.coeffs)


def test_linearize_quadratic_edge_midpoint_is_linear():
    s = make_space(build_square_mesh(1.0, 1), 2)
    phi = interpolate(s, lambda x: x[:, 0] ** 2)
    lin = linearize(phi)
    v = s.mesh.vertices[s.mesh.triangles[0]]
    mid = np.array([0.5, 0.0])  # midpoint of the edge v0 -> v1
    assert lin.eval(0, mid) == pytest.approx(0.5 * (v[0, 0] ** 2 + v[1, 0] ** 2))
    assert phi.eval(0, mid) == pytest.approx((0.5 * (v[0, 0] + v[1, 0])) ** 2)
    np.testing.assert_array_equal(lin.coeffs, phi.coeffs[: s.mesh.n_vertices])


def test_gradients():
    s = make_space(build_disk_mesh(2.0, 2), 3)
    f = interpolate(s, lambda x: x[:, 0])
    y = np.random.default_rng(0).random((10, 2)) * 0.5
    for e in range(s.mesh.n_triangles):
        np.testing.assert_allclose(f.eval_grad(e, y), np.tile([1.0, 0.0], (10, 1)), atol=1e-12)


def test_quadratic_point_value():
    s = make_space(build_square_mesh(2.0, 2), 2)
    f = interpolate(s, lambda x: x[:, 0] ** 2)
    x = np.array([0.3, 0.0])
    for e in range(s.mesh.n_triangles):
        y = s.to_reference(e, x)
        if y.min() >= -1e-14 and y.sum() <= 1 + 1e-14:
            assert f.eval(e, y) == pytest.approx(0.09, abs=1e-14)


def test_edge_consistency():
    s = make_space(refine(build_disk_mesh(2.0, 2), 1), 4)
    f = interpolate(s, random_poly(np.random.default_rng(3), 6))  # not reproduced, still continuous
    mesh = s.mesh
    t = np.linspace(0.1, 0.9, 7)
    worst = 0.0
    for edge in np.flatnonzero(~mesh.boundary_edge_mask):
        va, vb = mesh.vertices[mesh.edges[edge]]
        x = va + t[:, None] * (vb - va)
        vals = [f.eval(int(e), np.array([s.to_reference(int(e), p) for p in x])) for e in mesh.edge_tris[edge]]
        worst = max(worst, np.abs(vals[0] - vals[1]).max())
    assert worst <= 1e-12


def test_invalid_element():
    s = make_space(build_square_mesh(1.0, 1), 1)
    f = interpolate(s, lambda x: x[:, 0])
    with pytest.raises(IndexError):
        f.eval(5, np.array([0.1, 0.1]))
