"""Isoparametric mesh deformation that lifts the linear interface and boundary to high order.

On cut elements every Lagrange node is moved along a search direction until
the element polynomial of the discrete level set takes the value of its
linear interpolant; the element-wise displacements are averaged into a
continuous field. The displacement is then extended, together with the
interpolated boundary correction on curved domains, into the neighbouring
uncut elements.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cutgeom import REF_VERTICES, CutTopology, DiscreteLevelSet, LevelSet, Side
from .fespace import DofMap, VectorField, monomials, _centre
from .quadrature import segment_rule, volume_rule

log = logging.getLogger(__name__)

GRAD = "grad"
PROJECTED = "projected"


class NoRootInInterval(RuntimeError):
    def __init__(self, elem: int, x, delta: float):
        super().__init__(
            f"isomap: no step length in [-{delta:.3g}, {delta:.3g}] on element {elem} at {np.asarray(x)}; "
            "mesh too coarse for the geometry"
        )
        self.elem = elem


class ZeroDirection(ValueError):
    pass


class NonPositiveJacobian(RuntimeError):
    def __init__(self, elem: int, point, det: float):
        super().__init__(f"isomap: det(DTheta) = {det:.3e} <= 0 on element {elem} at reference point {point}")
        self.elem, self.point, self.det = elem, point, det


class MappingError(RuntimeError):
    pass


class MissingData(ValueError):
    pass


def oswald_project(space: DofMap, elems: np.ndarray, local_values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average element-local nodal values over the elements of ``elems`` sharing each node.

    ``local_values`` has shape ``(len(elems), n_local, ...)``. Returns the global
    coefficients (zero at nodes not touched by ``elems``) and the touched mask.
    """
    elems = np.asarray(elems, dtype=np.int64)
    local_values = np.asarray(local_values, dtype=float)
    tail = local_values.shape[2:]
    total = np.zeros((space.ndof,) + tail)
    count = np.zeros(space.ndof)
    dofs = space.cell_dofs[elems].ravel()
    np.add.at(total, dofs, local_values.reshape((-1,) + tail))
    np.add.at(count, dofs, 1.0)
    touched = count > 0
    total[touched] /= count[touched].reshape((-1,) + (1,) * len(tail))
    return total, touched


@dataclass
class SearchDirectionField:
    variant: str
    elems: np.ndarray
    nodal: np.ndarray  # (n_cut, n_local, 2) direction at each local node of each cut element
    field: VectorField | None = None  # continuous field for the projected variant


def search_direction(dls: DiscreteLevelSet, topology: CutTopology, variant: str = GRAD) -> SearchDirectionField:
    if variant not in (GRAD, PROJECTED):
        raise ValueError(f"isomap: unknown search direction {variant!r}")
    space = dls.space
    elems = topology.cut_elements
    nodes = space.basis.nodes
    grads = np.array([dls.phi_h.eval_grad(int(e), nodes) for e in elems]).reshape(len(elems), len(nodes), 2)
    if variant == GRAD:
        return SearchDirectionField(variant, elems, grads)
    coeffs, _ = oswald_project(space, elems, grads)
    return SearchDirectionField(variant, elems, coeffs[space.cell_dofs[elems]], VectorField(space, coeffs))


def _safeguarded_newton(f, df, a, b, fa, fb, ftol, xtol, maxiter=100):
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    x = 0.5 * (a + b)
    for _ in range(maxiter):
        fx = f(x)
        if abs(fx) <= ftol:
            return x
        if np.sign(fx) == np.sign(fa):
            a, fa = x, fx
        else:
            b = x
        if abs(b - a) <= xtol:
            return 0.5 * (a + b)
        d = df(x)
        step = fx / d if d != 0.0 else np.inf
        xn = x - step
        if not (min(a, b) < xn < max(a, b)):
            xn = 0.5 * (a + b)
        x = xn
    return x


def step_length(
    dls: DiscreteLevelSet,
    elem: int,
    x,
    G,
    *,
    n_scan: int = 32,
    delta_factor: float = 0.5,
) -> float:
    """Smallest-magnitude ``d`` with ``E_T phi_h(x + d G) = phi_lin(x)``.

    The element polynomial is evaluated beyond the element where needed. Roots
    are bracketed by scanning ``[-delta, delta]`` (``delta = delta_factor * h_T``)
    outward from zero; ties favour positive ``d``.
    """
    space = dls.space
    x = np.asarray(x, dtype=float)
    G = np.asarray(G, dtype=float)
    h = float(space.mesh.diameters()[elem])
    delta = delta_factor * h
    verts = dls.phi_lin.coeffs[space.mesh.triangles[elem]]
    xi = space.to_reference(elem, x)
    target = float(verts[0] + (verts[1] - verts[0]) * xi[0] + (verts[2] - verts[0]) * xi[1])
    coef = space.basis.coeffs @ dls.phi_h.local(elem)
    exps = space.basis.exponents
    dxi = space.inv_jac[elem] @ G
    local = dls.phi_h.local(elem)

    def psi(d):
        ref = xi + np.multiply.outer(d, dxi)
        return monomials(exps, _centre(ref)) @ coef - target

    def dpsi(d):
        return float(local @ space.basis.grads(xi + d * dxi) @ dxi)

    ftol = 1e-12 * max(1.0, abs(target))
    xtol = 1e-14 * h
    if abs(psi(0.0)) <= ftol:
        return 0.0
    if np.linalg.norm(G) <= 1e-12:
        raise ZeroDirection(f"isomap: zero search direction on element {elem} at {x}")
    grid = np.linspace(-delta, delta, n_scan + 1)
    vals = psi(grid)
    mid = n_scan // 2
    for m in range(1, mid + 1):
        found = []
        for lo, hi in ((mid + m - 1, mid + m), (mid - m, mid - m + 1)):
            if vals[lo] == 0.0 or vals[hi] == 0.0 or np.sign(vals[lo]) != np.sign(vals[hi]):
                found.append(_safeguarded_newton(psi, dpsi, grid[lo], grid[hi], vals[lo], vals[hi], ftol, xtol))
        if found:
            return float(min(found, key=lambda d: (abs(d), -d)))
    raise NoRootInInterval(elem, x, delta)


@dataclass
class ThetaGamma:
    elems: np.ndarray
    steps: np.ndarray  # (n_cut, n_local)
    local: np.ndarray  # (n_cut, n_local, 2) element-wise d_h G_h
    coeffs: np.ndarray  # (ndof, 2) averaged displacement on the cut region
    touched: np.ndarray  # (ndof,) nodes of cut elements


def build_theta_gamma(dls: DiscreteLevelSet, topology: CutTopology, sdir: SearchDirectionField, **solver) -> ThetaGamma:
    space = dls.space
    elems = sdir.elems
    nloc = space.n_local
    steps = np.zeros((len(elems), nloc))
    for i, e in enumerate(elems):
        xs = space.node_coords[space.cell_dofs[e]]
        for j in range(nloc):
            steps[i, j] = step_length(dls, int(e), xs[j], sdir.nodal[i, j], **solver)
    local = steps[..., None] * sdir.nodal
    coeffs, touched = oswald_project(space, elems, local)
    return ThetaGamma(elems, steps, local, coeffs, touched)


def chi_disk(radius: float):
    def chi(x):
        x = np.asarray(x, dtype=float)
        return (radius / np.linalg.norm(x, axis=-1) - 1.0)[..., None] * x

    return chi


def boundary_displacement(space: DofMap, chi=None) -> tuple[np.ndarray, np.ndarray]:
    """Nodal values of the boundary correction at the Lagrange nodes of boundary edges.

    ``chi`` defaults to radial projection for disk meshes and zero otherwise.
    Returns ``(dofs, values)``; values vanish exactly at boundary vertices.
    """
    mesh = space.mesh
    dofs = np.flatnonzero(space.boundary_mask)
    if chi is None and mesh.tag.kind == "disk":
        chi = chi_disk(mesh.tag.size)
    if chi is None:
        return dofs, np.zeros((len(dofs), 2))
    vals = np.asarray(chi(space.node_coords[dofs]), dtype=float)
    vals[dofs < mesh.n_vertices] = 0.0
    return dofs, vals


def boundary_of(space: DofMap, elems: np.ndarray) -> tuple[list, np.ndarray, np.ndarray]:
    """Boundary edges of the element set as ``[(elem, local edge)]``, plus boundary dofs and vertices."""
    mesh = space.mesh
    inside = np.zeros(mesh.n_triangles, dtype=bool)
    inside[elems] = True
    edges = []
    dofs = []
    for e in elems:
        for l in range(3):
            pair = mesh.edge_tris[mesh.tri_edges[e, l]]
            other = pair[1] if pair[0] == e else pair[0]
            if other < 0 or not inside[other]:
                edges.append((int(e), l))
                dofs.append(space.cell_dofs[e, space.local_edge_nodes(l)])
    if not edges:
        return [], np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    dofs = np.unique(np.concatenate(dofs))
    return edges, dofs, dofs[dofs < mesh.n_vertices]


def extend(space: DofMap, elems: np.ndarray, values: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Hierarchical (vertex, then edge) extension of boundary data into ``elems``.

    ``values`` (ndof, ...) supplies the data at every Lagrange node on the
    boundary of the element set, ``known`` marks where it is defined. The
    result vanishes outside the first element layer along that boundary.
    """
    elems = np.asarray(elems, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    out = np.zeros_like(values)
    if len(elems) == 0:
        return out
    edges, bdofs, bverts = boundary_of(space, elems)
    missing = bdofs[~known[bdofs]]
    if len(missing):
        raise MissingData(f"isomap: no extension data at nodes {missing[:5].tolist()}")
    on_boundary = np.zeros(space.ndof, dtype=bool)
    on_boundary[bverts] = True
    nodes = space.basis.nodes
    lam = np.column_stack([1.0 - nodes.sum(axis=1), nodes])  # (n_local, 3)
    tri = space.mesh.triangles
    for e in elems:
        gv = np.where(on_boundary[tri[e]].reshape((3,) + (1,) * (values.ndim - 1)), values[tri[e]], 0.0)
        out[space.cell_dofs[e]] = np.tensordot(lam, gv, axes=(1, 0))
    k = space.k
    if k == 1:
        return out
    t = np.arange(1, k) / k
    V = np.vander(t, k - 1, increasing=True)
    for e, l in edges:
        loc = space.local_edge_nodes(l)[1:-1]
        inner = space.cell_dofs[e, loc]
        rem = values[inner] - out[inner]
        # r(t) = t (1 - t) q(t); E r = la lb (la + lb)^(k-2) q(lb / (la + lb)) vanishes on the other edges
        q = np.linalg.solve(V, rem.reshape(k - 1, -1) / (t * (1.0 - t))[:, None])
        la, lb = lam[:, (l + 1) % 3], lam[:, (l + 2) % 3]
        s = la + lb
        ts = np.divide(lb, s, out=np.zeros_like(s), where=s > 0)
        ext = (la * lb * s ** (k - 2))[:, None] * (np.vander(ts, k - 1, increasing=True) @ q)
        touch = np.zeros(len(lam), dtype=bool)
        touch[loc] = True
        touch[3 + 3 * (k - 1) :] = True
        dofs = space.cell_dofs[e, touch]
        out[dofs] += ext[touch].reshape((-1,) + values.shape[1:])
    return out


@dataclass
class Geometry:
    """Mapped geometry at a batch of points: ``x = Theta_h(y)``."""

    y: np.ndarray
    x: np.ndarray
    F: np.ndarray  # DTheta_h
    det: np.ndarray
    FinvT: np.ndarray


@dataclass
class MappingBundle:
    space: DofMap
    displacement: VectorField
    identity: np.ndarray  # (n_triangles,) True where all local displacement dofs vanish

    def evaluate(self, elems, ref_pts: np.ndarray, check: bool = True) -> Geometry:
        """Geometry for ``elems`` (n,) at reference points ``ref_pts`` (n, q, 2) or (q, 2)."""
        space = self.space
        elems = np.asarray(elems, dtype=np.int64)
        ref_pts = np.broadcast_to(ref_pts, (len(elems),) + np.shape(ref_pts)[-2:])
        y = space.to_physical(elems, ref_pts)
        D = self.displacement.coeffs[space.cell_dofs[elems]]  # (n, nloc, 2)
        vals = space.basis.values(ref_pts)  # (n, q, nloc)
        pg = space.physical_grads(elems, ref_pts)  # (n, q, nloc, 2)
        x = y + np.einsum("nqj,nja->nqa", vals, D)
        F = np.eye(2) + np.einsum("nqjb,nja->nqab", pg, D)
        F[self.identity[elems]] = np.eye(2)
        det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
        if check and np.any(det <= 0):
            n, q = np.unravel_index(np.argmin(det), det.shape)
            raise NonPositiveJacobian(int(elems[n]), ref_pts[n, q], float(det[n, q]))
        FinvT = np.stack(
            [np.stack([F[..., 1, 1], -F[..., 1, 0]], -1), np.stack([-F[..., 0, 1], F[..., 0, 0]], -1)], -2
        ) / det[..., None, None]
        return Geometry(y, x, F, det, FinvT)

    def theta(self, elem: int, ref_pts) -> np.ndarray:
        return self.evaluate([elem], np.atleast_2d(ref_pts), check=False).x[0]

    def jacobian(self, elem: int, ref_pts):
        """``(DTheta, det, DTheta^{-T})`` at points of one element; identity elements skip evaluation."""
        pts = np.atleast_2d(ref_pts)
        if self.identity[elem]:
            eye = np.broadcast_to(np.eye(2), (len(pts), 2, 2)).copy()
            return eye, np.ones(len(pts)), eye.copy()
        g = self.evaluate([elem], pts)
        return g.F[0], g.det[0], g.FinvT[0]

    @property
    def max_displacement(self) -> float:
        c = self.displacement.coeffs
        return float(np.linalg.norm(c, axis=1).max()) if len(c) else 0.0


def assemble_global_mapping(
    space: DofMap,
    topology: CutTopology,
    theta_gamma: ThetaGamma,
    boundary: tuple[np.ndarray, np.ndarray] | None = None,
) -> MappingBundle:
    """Displacement on cut elements, extended into the negative and positive element sets."""
    disp_gamma = theta_gamma.coeffs
    known = theta_gamma.touched.copy()
    data = disp_gamma.copy()
    if boundary is not None:
        bdofs, bvals = boundary
        take = ~known[bdofs]
        data[bdofs[take]] = bvals[take]
        known[bdofs] = True
    total = np.zeros((space.ndof, 2))
    for side in (Side.NEG, Side.POS):
        elems = topology.elements(side)
        if len(elems) == 0:
            continue
        _, bd, _ = boundary_of(space, elems)
        gap = bd[~known[bd]]
        side_known = known.copy()
        if len(gap):
            log.warning("isomap: %d nodes on the %s boundary have no data; using zero", len(gap), side.name)
            side_known[gap] = True
        ext = extend(space, elems, data, side_known)
        err = np.abs(ext[bd] - data[bd]).max() if len(bd) else 0.0
        if err > 1e-11:
            raise MappingError(f"isomap: extension mismatch {err:.3e} on the {side.name} boundary")
        dofs = np.unique(space.cell_dofs[elems])
        total[dofs] = ext[dofs]
    total[theta_gamma.touched] = disp_gamma[theta_gamma.touched]
    identity = np.all(total[space.cell_dofs] == 0.0, axis=(1, 2))
    return MappingBundle(space, VectorField(space, total), identity)


def build_mapping(
    dls: DiscreteLevelSet, topology: CutTopology, variant: str = GRAD, chi=None, **solver
) -> MappingBundle:
    """Full pipeline: search direction, step lengths, averaging, extension."""
    sdir = search_direction(dls, topology, variant)
    tg = build_theta_gamma(dls, topology, sdir, **solver)
    bnd = boundary_displacement(dls.space, chi)
    return assemble_global_mapping(dls.space, topology, tg, bnd)


# -- geometry diagnostics -------------------------------------------------------------------------


def segment_points(topology: CutTopology, degree: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Cut element ids, reference quadrature points (n, q, 2), weights (q,), and reference directions (n, 2)."""
    rule = segment_rule(degree)
    elems = topology.cut_elements
    ends = np.array([topology.cuts[e].endpoints for e in elems]).reshape(-1, 2, 2)
    direction = ends[:, 1] - ends[:, 0]
    pts = ends[:, None, 0] + rule.points[None, :, None] * direction[:, None, :]
    return elems, pts, rule.weights, direction


def interface_distance(bundle: MappingBundle, topology: CutTopology, ls: LevelSet, degree: int = 8) -> float:
    """max |phi| / |grad phi| over quadrature points of the mapped interface."""
    elems, pts, _, _ = segment_points(topology, degree)
    if len(elems) == 0:
        return 0.0
    x = bundle.evaluate(elems, pts, check=False).x.reshape(-1, 2)
    return float(np.max(np.abs(ls.value(x)) / np.linalg.norm(ls.grad(x), axis=-1)))


def boundary_edge_points(space: DofMap, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Owning elements and reference points (m, n, 2) along every boundary edge (open Gauss points)."""
    mesh = space.mesh
    t = segment_rule(2 * n - 1).points
    elems, pts = [], []
    for e in np.flatnonzero(mesh.boundary_edge_mask):
        owner = mesh.edge_tris[e, 0]
        l = int(np.flatnonzero(mesh.tri_edges[owner] == e)[0])
        a, b = REF_VERTICES[(l + 1) % 3], REF_VERTICES[(l + 2) % 3]
        elems.append(owner)
        pts.append(a + t[:, None] * (b - a))
    return np.array(elems, dtype=np.int64), np.array(pts).reshape(-1, len(t), 2)


def boundary_distance(bundle: MappingBundle, radius: float, n: int = 8) -> float:
    elems, pts = boundary_edge_points(bundle.space, n)
    x = bundle.evaluate(elems, pts, check=False).x
    return float(np.max(np.abs(np.linalg.norm(x, axis=-1) - radius)))


def det_range(bundle: MappingBundle, degree: int) -> tuple[float, float]:
    """(min, max) of det DTheta_h over a volume rule on every element."""
    rule = volume_rule(degree)
    elems = np.arange(bundle.space.mesh.n_triangles)
    g = bundle.evaluate(elems, rule.points, check=False)
    return float(g.det.min()), float(g.det.max())
