import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isocut.cutgeom import (
    DiscreteLevelSet,
    Side,
    circle_levelset,
    classify,
    discretize_levelset,
    interface_segments,
    planar_levelset,
)
from isocut.fespace import ScalarField, make_space
from isocut.mesh import Mesh, build_disk_mesh, refine

UNIT = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def one_triangle(vals, verts=UNIT):
    """Topology of a single triangle whose linear level set has the given vertex values."""
    mesh = Mesh(np.asarray(verts, dtype=float), np.array([[0, 1, 2]]))
    space = make_space(mesh, 1)
    f = ScalarField(space, np.asarray(vals, dtype=float))
    return classify(DiscreteLevelSet(f, f, planar_levelset([1.0, 0.0], 0.0)))


def areas(cut):
    out = {Side.NEG: 0.0, Side.POS: 0.0}
    for c, s in cut.subtriangles:
        a, b = c[1] - c[0], c[2] - c[0]
        out[s] += 0.5 * abs(a[0] * b[1] - a[1] * b[0])
    return out


def test_all_negative():
    assert one_triangle([-1, -1, -1]).labels[0] == Side.NEG


def test_zero_counts_positive():
    topo = one_triangle([0, 1, 1])
    assert topo.labels[0] == Side.POS and not topo.cuts


def test_lone_negative_vertex():
    topo = one_triangle([-1, 1, 1])
    assert topo.labels[0] == Side.CUT
    cut = topo.cuts[0]
    # intersections at the midpoints of the two edges leaving vertex 0
    got = sorted(map(tuple, np.round(cut.endpoints, 15)))
    assert got == [(0.0, 0.5), (0.5, 0.0)]
    a = areas(cut)
    assert a[Side.NEG] == pytest.approx(1 / 8, abs=1e-15)
    assert a[Side.POS] == pytest.approx(3 / 8, abs=1e-15)
    assert cut.fractions == pytest.approx((0.25, 0.75), abs=1e-15)


def test_sign_swap_swaps_fractions():
    f1 = one_triangle([-1, -1, 1]).cuts[0].fractions
    f2 = one_triangle([1, 1, -1]).cuts[0].fractions
    assert f1[0] == pytest.approx(f2[1], abs=1e-15) and f1[1] == pytest.approx(f2[0], abs=1e-15)


def test_normal_points_to_positive_side():
    cut = one_triangle([-1, 1, -1]).cuts[0]
    np.testing.assert_allclose(cut.normal, [1.0, 0.0], atol=1e-15)


nonzero = st.builds(lambda m, s: m * s, st.floats(1e-6, 1), st.sampled_from([-1.0, 1.0]))


@settings(max_examples=60, deadline=None)
@given(
    st.lists(nonzero, min_size=3, max_size=3),
    st.tuples(st.floats(-2, 2), st.floats(-2, 2)),
    st.tuples(st.floats(0.2, 2), st.floats(0.2, 2)),
    st.floats(0, 2 * np.pi),
    st.floats(0.3, np.pi - 0.3),
)
def test_area_conservation(vals, base, radii, angle, opening):
    # counter-clockwise triangle with edge lengths and opening angle bounded away from degeneracy
    e1 = radii[0] * np.array([np.cos(angle), np.sin(angle)])
    e2 = radii[1] * np.array([np.cos(angle + opening), np.sin(angle + opening)])
    verts = np.array([base, np.add(base, e1), np.add(base, e2)])
    vals = np.array(vals)
    topo = one_triangle(vals, verts)
    if topo.labels[0] != Side.CUT:
        assert (vals < 0).all() or (vals >= 0).all() or not topo.cuts
        return
    cut = topo.cuts[0]
    a = areas(cut)
    assert abs(a[Side.NEG] + a[Side.POS] - 0.5) <= 1e-13 * 0.5
    assert sum(cut.fractions) == pytest.approx(1.0, abs=1e-15)
    # sign consistency at sub-triangle centroids
    for c, s in cut.subtriangles:
        y = c.mean(axis=0)
        v = (1 - y.sum()) * vals[0] + y[0] * vals[1] + y[1] * vals[2]
        assert (v < 0) == (s == Side.NEG)


def disk_topology(level, k=1):
    mesh = refine(build_disk_mesh(2.0, 2), level)
    dls = discretize_levelset(mesh, k, circle_levelset(1.0))
    return dls, classify(dls)


@pytest.mark.parametrize("level", [0, 1, 2])
def test_disk_area_conservation_and_closure(level):
    dls, topo = disk_topology(level)
    assert len(topo.cut_elements) > 0
    for e in topo.cut_elements:
        a = areas(topo.cuts[e])
        assert abs(a[Side.NEG] + a[Side.POS] - 0.5) <= 1e-13 * 0.5
    segs = interface_segments(topo)
    ends = np.round(np.concatenate([s.endpoints for s in segs]), 12)
    _, counts = np.unique(ends, axis=0, return_counts=True)
    assert np.all(counts == 2)


def test_disk_normals_radial():
    _, topo = disk_topology(3)
    for s in interface_segments(topo):
        m = s.endpoints.mean(axis=0)
        ang = np.arccos(np.clip(s.normal @ (m / np.linalg.norm(m)), -1, 1))
        assert ang < 0.2


def test_interface_length_converges():
    lengths, hs = [], []
    for level in range(3):
        dls, topo = disk_topology(level + 1)
        lengths.append(sum(s.length for s in interface_segments(topo)))
        hs.append(dls.mesh.h_max)
    err = np.abs(np.array(lengths) - 2 * np.pi)
    assert np.log2(err[-2] / err[-1]) >= 1.7


def test_linear_levelset_exact():
    mesh = refine(build_disk_mesh(2.0, 2), 1)
    ls = planar_levelset([0.6, 0.8], 0.1)
    for k in (1, 3):
        dls = discretize_levelset(mesh, k, ls)
        rng = np.random.default_rng(k)
        for e in rng.integers(0, mesh.n_triangles, 20):
            y = rng.random((5, 2)) * 0.5
            x = dls.space.to_physical(int(e), y)
            np.testing.assert_allclose(dls.phi_h.eval(int(e), y), ls.value(x), atol=1e-12)


def test_circle_k1_linear_equals_discrete():
    dls, _ = disk_topology(1, k=1)
    np.testing.assert_array_equal(dls.phi_h.coeffs, dls.phi_lin.coeffs)


def test_circle_k2_sup_norm_order():
    # sampled in the band around the interface; ||x|| has a kink at the origin
    ls = circle_levelset(1.0)
    y = np.array([[i / 8, j / 8] for i in range(9) for j in range(9 - i)])
    errs = []
    for level in (2, 3):
        mesh = refine(build_disk_mesh(2.0, 2), level)
        dls = discretize_levelset(mesh, 2, ls)
        elems = np.arange(mesh.n_triangles)
        x = dls.space.to_physical(elems, np.broadcast_to(y, (len(elems),) + y.shape))
        vals = np.einsum("qj,nj->nq", dls.space.basis.values(y), dls.phi_h.coeffs[dls.space.cell_dofs])
        r = np.linalg.norm(x, axis=-1)
        band = (r >= 0.75) & (r <= 1.25)
        errs.append(np.abs(vals - ls.value(x))[band].max())
    assert errs[0] / errs[1] >= 2**2.7


def test_levelset_gradient_floor():
    ls = circle_levelset(1.0)
    assert ls.check_gradient(np.array([[0.5, 0.0], [0.0, 2.0]])) == pytest.approx(1.0)
    with np.errstate(invalid="ignore"), pytest.raises(ValueError):
        ls.check_gradient(np.array([[0.0, 0.0]]))
