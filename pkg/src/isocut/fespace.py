"""Continuous Lagrange spaces of degree 1..5 on triangle meshes.

Global dof layout: vertex dofs first (dof id == vertex id), then ``k - 1``
dofs per edge ordered from the lower to the higher vertex id, then the
interior dofs of each triangle.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mesh import Mesh

MAX_DEGREE = 5


def _exponents(k: int) -> np.ndarray:
    return np.array([(a, d - a) for d in range(k + 1) for a in range(d, -1, -1)])


def monomials(exps: np.ndarray, pts: np.ndarray) -> np.ndarray:
    x = pts[..., 0, None]
    y = pts[..., 1, None]
    return x ** exps[:, 0] * y ** exps[:, 1]


def monomial_grads(exps: np.ndarray, pts: np.ndarray) -> np.ndarray:
    x = pts[..., 0, None]
    y = pts[..., 1, None]
    a, b = exps[:, 0], exps[:, 1]
    dx = a * x ** np.maximum(a - 1, 0) * y**b
    dy = b * x**a * y ** np.maximum(b - 1, 0)
    return np.stack([dx, dy], axis=-1)


def reference_nodes(k: int) -> np.ndarray:
    """Vertices, then nodes of edges (v1->v2), (v2->v0), (v0->v1), then interior lattice."""
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = [verts]
    for l in range(3):
        a, b = verts[(l + 1) % 3], verts[(l + 2) % 3]
        t = np.arange(1, k)[:, None] / k
        nodes.append(a + t * (b - a))
    interior = [(i / k, j / k) for j in range(1, k) for i in range(1, k - j)]
    if interior:
        nodes.append(np.array(interior))
    return np.vstack(nodes)


@dataclass(frozen=True)
class ReferenceBasis:
    """Nodal basis on the reference triangle, stored as monomial coefficients.

    ``coeffs[m, j]`` is the coefficient of monomial ``m`` (in the centred
    variable ``3 (xi - 1/3)``) in basis function ``j``. Monomials are global
    polynomials, so evaluation outside the triangle is the natural polynomial
    extension.
    """

    degree: int
    nodes: np.ndarray
    exponents: np.ndarray
    coeffs: np.ndarray

    @property
    def n_local(self) -> int:
        return len(self.nodes)

    def values(self, pts: np.ndarray) -> np.ndarray:
        return monomials(self.exponents, _centre(pts)) @ self.coeffs

    def grads(self, pts: np.ndarray) -> np.ndarray:
        g = monomial_grads(self.exponents, _centre(pts))
        return _SCALE * np.einsum("...md,mj->...jd", g, self.coeffs)


_SCALE = 3.0


def _centre(pts) -> np.ndarray:
    return _SCALE * (np.asarray(pts, dtype=float) - 1.0 / 3.0)


@lru_cache(maxsize=None)
def reference_basis(k: int) -> ReferenceBasis:
    if not 1 <= k <= MAX_DEGREE:
        raise ValueError(f"fespace: k out of range (got {k}, need 1..{MAX_DEGREE})")
    nodes = reference_nodes(k)
    exps = _exponents(k)
    V = monomials(exps, _centre(nodes))
    coeffs = np.linalg.solve(V, np.eye(len(nodes)))
    for arr in (nodes, exps, coeffs):
        arr.setflags(write=False)
    return ReferenceBasis(k, nodes, exps, coeffs)


class DofMap:
    """Degree-``k`` continuous Lagrange numbering on ``mesh`` plus affine element data."""

    def __init__(self, mesh: Mesh, k: int):
        self.mesh = mesh
        self.k = k
        self.basis = reference_basis(k)
        nv, ne, nt = mesh.n_vertices, len(mesh.edges), mesh.n_triangles
        ni = (k - 1) * (k - 2) // 2
        self.ndof = nv + ne * (k - 1) + nt * ni
        tri = mesh.triangles
        cols = [tri]
        m = np.arange(1, k)
        for l in range(3):
            a, b = tri[:, (l + 1) % 3], tri[:, (l + 2) % 3]
            base = nv + mesh.tri_edges[:, l, None] * (k - 1)
            forward = (a < b)[:, None]
            cols.append(base + np.where(forward, m - 1, k - 1 - m))
        cols.append(nv + ne * (k - 1) + np.arange(nt)[:, None] * ni + np.arange(ni))
        self.cell_dofs = np.hstack(cols).astype(np.int64)

        p = mesh.vertices[tri]
        self.origin = p[:, 0]
        self.jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        self.det_jac = np.linalg.det(self.jac)
        self.inv_jac = np.linalg.inv(self.jac)

        coords = np.zeros((self.ndof, 2))
        local_phys = self.origin[:, None, :] + np.einsum("tij,nj->tni", self.jac, self.basis.nodes)
        coords[self.cell_dofs] = local_phys
        self.node_coords = coords

        mask = np.zeros(self.ndof, dtype=bool)
        bnd_edges = np.flatnonzero(mesh.boundary_edge_mask)
        mask[mesh.edges[bnd_edges].ravel()] = True
        for e in bnd_edges:
            mask[nv + e * (k - 1) : nv + (e + 1) * (k - 1)] = True
        self.boundary_mask = mask
        for arr in (self.cell_dofs, self.node_coords, self.boundary_mask, self.jac, self.inv_jac):
            arr.setflags(write=False)

    @property
    def n_local(self) -> int:
        return self.basis.n_local

    def edge_dofs(self, e: int) -> np.ndarray:
        """All dofs on edge ``e`` from its lower to its higher vertex id."""
        nv, k = self.mesh.n_vertices, self.k
        v0, v1 = self.mesh.edges[e]
        inner = np.arange(nv + e * (self.k - 1), nv + (e + 1) * (k - 1))
        return np.concatenate([[v0], inner, [v1]])

    def local_edge_nodes(self, l: int) -> np.ndarray:
        """Local node indices on local edge ``l`` (vertices included), from v_{l+1} to v_{l+2}."""
        k = self.k
        inner = 3 + l * (k - 1) + np.arange(k - 1)
        return np.concatenate([[(l + 1) % 3], inner, [(l + 2) % 3]])

    def to_physical(self, elems, ref_pts: np.ndarray) -> np.ndarray:
        """``elems`` of shape (...) and ``ref_pts`` of shape (..., n, 2)."""
        elems = np.asarray(elems)
        return self.origin[elems][..., None, :] + np.einsum("...ij,...nj->...ni", self.jac[elems], ref_pts)

    def to_reference(self, elem: int, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.origin[elem]) @ self.inv_jac[elem].T

    def physical_grads(self, elems, ref_pts: np.ndarray) -> np.ndarray:
        """Basis gradients in physical coordinates: ``(..., n_pts, n_local, 2)``."""
        g = self.basis.grads(ref_pts)
        return np.einsum("...qjd,...de->...qje", g, self.inv_jac[elems])


def make_space(mesh: Mesh, k: int) -> DofMap:
    if not 1 <= k <= MAX_DEGREE:
        raise ValueError(f"fespace: k out of range (got {k}, need 1..{MAX_DEGREE})")
    return DofMap(mesh, k)


@dataclass
class ScalarField:
    space: DofMap
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.ndof,):
            raise ValueError("fespace: coefficient length does not match dof count")

    def local(self, elem: int) -> np.ndarray:
        return self.coeffs[self.space.cell_dofs[elem]]

    def eval(self, elem: int, ref_pt) -> float | np.ndarray:
        _check_elem(self.space, elem)
        return self.space.basis.values(ref_pt) @ self.local(elem)

    def eval_grad(self, elem: int, ref_pt) -> np.ndarray:
        _check_elem(self.space, elem)
        g = self.space.basis.grads(ref_pt)
        return np.einsum("...jd,j,de->...e", g, self.local(elem), self.space.inv_jac[elem])

    def monomial_coeffs(self, elem: int) -> np.ndarray:
        return self.space.basis.coeffs @ self.local(elem)


@dataclass
class VectorField:
    space: DofMap
    coeffs: np.ndarray  # (ndof, 2)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.ndof, 2):
            raise ValueError("fespace: coefficient shape does not match (ndof, 2)")

    def local(self, elem: int) -> np.ndarray:
        return self.coeffs[self.space.cell_dofs[elem]]

    def eval(self, elem: int, ref_pt) -> np.ndarray:
        _check_elem(self.space, elem)
        return self.space.basis.values(ref_pt) @ self.local(elem)

    def eval_grad(self, elem: int, ref_pt) -> np.ndarray:
        """Physical Jacobian ``[..., a, b] = d field_a / d x_b``."""
        _check_elem(self.space, elem)
        g = self.space.basis.grads(ref_pt)
        return np.einsum("...jd,ja,de->...ae", g, self.local(elem), self.space.inv_jac[elem])


def _check_elem(space: DofMap, elem: int):
    if not 0 <= elem < space.mesh.n_triangles:
        raise IndexError(f"fespace: invalid element id {elem}")


def interpolate(space: DofMap, f) -> ScalarField:
    """Nodal interpolant of a vectorized point function ``f((n, 2)) -> (n,)``."""
    vals = np.asarray(f(space.node_coords), dtype=float)
    vals = np.broadcast_to(vals, (space.ndof,)).copy()
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise ValueError(f"fespace: non-finite value at node {bad} {space.node_coords[bad]}")
    return ScalarField(space, vals)


def interpolate_vector(space: DofMap, f) -> VectorField:
    vals = np.asarray(f(space.node_coords), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("fespace: non-finite vector value at a node")
    return VectorField(space, vals)


def linearize(field: ScalarField, p1: DofMap | None = None) -> ScalarField:
    """Degree-1 field through the vertex values of ``field``."""
    if p1 is None:
        p1 = field.space if field.space.k == 1 else make_space(field.space.mesh, 1)
    return ScalarField(p1, field.coeffs[: field.space.mesh.n_vertices].copy())
