"""Level sets, cut classification and sub-triangulation of cut elements.

The low-order interface is the zero level of the piecewise linear vertex
interpolant of the discrete level set. Vertex values equal to zero count
as positive; elements whose zero level only grazes a vertex or an edge are
treated as uncut.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable

import numpy as np

from .fespace import DofMap, ScalarField, interpolate, linearize, make_space
from .mesh import Mesh

log = logging.getLogger(__name__)

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class Side(IntEnum):
    CUT = 0
    NEG = 1
    POS = 2


class DegenerateCut(ValueError):
    pass


@dataclass(frozen=True)
class LevelSet:
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    curvature_bound: float | None = None

    def check_gradient(self, pts: np.ndarray, floor: float = 1e-8) -> float:
        """Smallest sampled gradient norm; raises if it drops below ``floor``."""
        g = np.linalg.norm(self.grad(pts), axis=-1).min()
        if not g >= floor:  # also catches NaN
            raise ValueError(f"cutgeom: level-set gradient {g:.3e} below {floor:g}")
        return float(g)


def circle_levelset(radius: float = 1.0, centre=(0.0, 0.0)) -> LevelSet:
    c = np.asarray(centre, dtype=float)

    def value(x):
        return np.linalg.norm(np.asarray(x) - c, axis=-1) - radius

    def grad(x):
        d = np.asarray(x) - c
        return d / np.linalg.norm(d, axis=-1)[..., None]

    return LevelSet(value, grad, 1.0 / radius)


def planar_levelset(normal, offset: float) -> LevelSet:
    """``phi(x) = normal . x - offset``."""
    n = np.asarray(normal, dtype=float)
    return LevelSet(
        lambda x: np.asarray(x) @ n - offset,
        lambda x: np.broadcast_to(n, np.shape(x)).copy(),
        0.0,
    )


@dataclass
class DiscreteLevelSet:
    phi_h: ScalarField
    phi_lin: ScalarField
    source: LevelSet

    @property
    def space(self) -> DofMap:
        return self.phi_h.space

    @property
    def mesh(self) -> Mesh:
        return self.phi_h.space.mesh


def discretize_levelset(mesh: Mesh, k: int, ls: LevelSet, space: DofMap | None = None) -> DiscreteLevelSet:
    space = space if space is not None else make_space(mesh, k)
    phi_h = interpolate(space, ls.value)
    return DiscreteLevelSet(phi_h, linearize(phi_h), ls)


@dataclass
class CutElement:
    elem: int
    endpoints: np.ndarray  # (2, 2) reference coordinates, ordered so (tangent, normal) is right-handed
    normal: np.ndarray  # physical unit normal from NEG into POS
    length: float  # physical length of the linear segment
    subtriangles: list  # [(corners (3, 2) reference, Side)]
    fractions: tuple  # (|T1|/|T|, |T2|/|T|)


@dataclass
class CutTopology:
    mesh: Mesh
    labels: np.ndarray
    cuts: dict = field(default_factory=dict)  # elem -> CutElement

    @property
    def cut_elements(self) -> np.ndarray:
        return np.flatnonzero(self.labels == Side.CUT)

    def elements(self, side: Side) -> np.ndarray:
        return np.flatnonzero(self.labels == side)

    def active_elements(self, side: Side) -> np.ndarray:
        return np.flatnonzero((self.labels == side) | (self.labels == Side.CUT))

    def subcells(self, side: Side) -> tuple[np.ndarray, np.ndarray]:
        """Parent ids (n,) and reference corners (n, 3, 2) of the sub-triangles on ``side``."""
        elems, corners = [], []
        for e in self.cut_elements:
            for c, s in self.cuts[e].subtriangles:
                if s == side:
                    elems.append(e)
                    corners.append(c)
        return np.array(elems, dtype=np.int64), np.array(corners).reshape(-1, 3, 2)


def _signed_area(c: np.ndarray) -> float:
    a, b = c[1] - c[0], c[2] - c[0]
    return 0.5 * (a[0] * b[1] - a[1] * b[0])


def _subdivide_values(vals: np.ndarray, jac: np.ndarray, h: float) -> tuple:
    """Reference-space segment and sub-triangles for vertex values ``vals`` (3,)."""
    neg = vals < 0
    lone = int(np.flatnonzero(neg)[0]) if neg.sum() == 1 else int(np.flatnonzero(~neg)[0])
    b, c = (lone + 1) % 3, (lone + 2) % 3
    A, B, C = REF_VERTICES[lone], REF_VERTICES[b], REF_VERTICES[c]
    p = A + vals[lone] / (vals[lone] - vals[b]) * (B - A)
    q = A + vals[lone] / (vals[lone] - vals[c]) * (C - A)
    if np.linalg.norm(jac @ (q - p)) < 1e-14 * h:
        raise DegenerateCut("zero level grazes the element boundary")
    if np.linalg.norm(jac @ (p - C)) <= np.linalg.norm(jac @ (B - q)):
        quad = [(p, B, C), (p, C, q)]
    else:
        quad = [(p, B, q), (B, C, q)]
    pieces = []
    for tri in [(A, p, q)] + quad:
        corners = np.array(tri)
        area = _signed_area(corners)
        if abs(area) <= 1e-15:
            continue
        if area < 0:
            corners = corners[[0, 2, 1]]
        centroid = corners.mean(axis=0)
        lam = np.array([1.0 - centroid.sum(), centroid[0], centroid[1]])
        pieces.append((corners, Side.NEG if lam @ vals < 0 else Side.POS))
    return np.array([p, q]), pieces


def subdivide(dls: DiscreteLevelSet, elem: int) -> CutElement:
    """Split a cut element along the linear interface; raises ``DegenerateCut``."""
    mesh = dls.mesh
    space = dls.phi_lin.space
    vals = dls.phi_lin.coeffs[mesh.triangles[elem]]
    if not ((vals < 0).any() and (vals >= 0).any()):
        raise ValueError(f"cutgeom: element {elem} is not cut")
    jac = space.jac[elem]
    h = float(mesh.diameters()[elem])
    endpoints, pieces = _subdivide_values(vals, jac, h)
    grad_ref = np.array([vals[1] - vals[0], vals[2] - vals[0]])
    grad = space.inv_jac[elem].T @ grad_ref
    norm = np.linalg.norm(grad)
    if norm == 0.0:
        raise ValueError(f"cutgeom: zero gradient of the linear level set on cut element {elem}")
    normal = grad / norm
    tangent = jac @ (endpoints[1] - endpoints[0])
    if tangent[0] * normal[1] - tangent[1] * normal[0] < 0:
        endpoints = endpoints[::-1]
    neg_area = sum(abs(_signed_area(c)) for c, s in pieces if s == Side.NEG)
    frac_neg = neg_area / 0.5
    return CutElement(
        elem=elem,
        endpoints=endpoints,
        normal=normal,
        length=float(np.linalg.norm(tangent)),
        subtriangles=pieces,
        fractions=(frac_neg, 1.0 - frac_neg),
    )


def classify(dls: DiscreteLevelSet) -> CutTopology:
    mesh = dls.mesh
    vals = dls.phi_lin.coeffs[mesh.triangles]
    nneg = (vals < 0).sum(axis=1)
    labels = np.where(nneg == 3, Side.NEG, Side.POS).astype(np.int64)
    cuts = {}
    curv = dls.source.curvature_bound
    p = mesh.vertices[mesh.triangles]
    coarse = []
    for e in np.flatnonzero((nneg > 0) & (nneg < 3)):
        try:
            cut = subdivide(dls, int(e))
        except DegenerateCut:
            labels[e] = Side.NEG if vals[e].mean() < 0 else Side.POS
            log.debug("cutgeom: element %d touches the interface only at its boundary", e)
            continue
        labels[e] = Side.CUT
        cuts[int(e)] = cut
        if curv:
            a, b, c = (np.linalg.norm(p[e, i] - p[e, j]) for i, j in ((1, 2), (2, 0), (0, 1)))
            area = 0.5 * abs(float(dls.phi_lin.space.det_jac[e]))
            if a * b * c / (4.0 * area) * curv > 0.5:
                coarse.append(int(e))
    if coarse:
        log.warning("cutgeom: %d cut elements have circumradius * curvature > 1/2 (first: %d)", len(coarse), coarse[0])
    return CutTopology(mesh, labels, cuts)


@dataclass(frozen=True)
class Segment:
    elem: int
    endpoints: np.ndarray  # (2, 2) physical
    normal: np.ndarray
    length: float


def interface_segments(topology: CutTopology, space: DofMap | None = None) -> list[Segment]:
    if space is None:
        space = make_space(topology.mesh, 1)
    out = []
    for e in topology.cut_elements:
        c = topology.cuts[e]
        pts = space.origin[e] + c.endpoints @ space.jac[e].T
        out.append(Segment(int(e), pts, c.normal, c.length))
    return out
