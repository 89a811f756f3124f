"""Conforming triangle meshes of the disk and the square.

Disk meshes are the inscribed polygons of a circle: every boundary vertex
lies on the circle, also after refinement (boundary midpoints are pushed
back onto the circle).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BoundaryTag:
    kind: str  # "disk", "square" or "polygon"
    size: float = 0.0  # radius for disks, side length for squares


@dataclass
class Mesh:
    """Triangulation with edge tables.

    ``tri_edges[t, l]`` is the global edge opposite local vertex ``l``;
    ``edge_tris[e]`` holds the (one or two) triangles sharing edge ``e``,
    padded with -1.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    tag: BoundaryTag = field(default_factory=lambda: BoundaryTag("polygon"))
    edges: np.ndarray = field(init=False, repr=False)
    tri_edges: np.ndarray = field(init=False, repr=False)
    edge_tris: np.ndarray = field(init=False, repr=False)
    _diam: np.ndarray | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("mesh: non-finite vertex coordinates")
        area = self.signed_areas()
        if np.any(area <= 0.0):
            bad = int(np.flatnonzero(area <= 0.0)[0])
            raise ValueError(f"mesh: triangle {bad} is not counterclockwise")
        self._build_edges()
        for arr in (self.vertices, self.triangles, self.edges, self.tri_edges, self.edge_tris):
            arr.setflags(write=False)

    def _build_edges(self):
        tri = self.triangles
        local = np.stack([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]], axis=1)
        keys = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        self.edges = edges
        self.tri_edges = inverse.reshape(-1, 3)
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        owners = np.repeat(np.arange(len(tri)), 3)
        count = np.zeros(len(edges), dtype=np.int64)
        for e, t in zip(inverse, owners):
            if count[e] >= 2:
                raise ValueError(f"mesh: edge {tuple(edges[e])} shared by more than two triangles")
            edge_tris[e, count[e]] = t
            count[e] += 1
        self.edge_tris = edge_tris

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        a = p[:, 1] - p[:, 0]
        b = p[:, 2] - p[:, 0]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    @property
    def boundary_edge_mask(self) -> np.ndarray:
        return self.edge_tris[:, 1] < 0

    @property
    def boundary_edges(self) -> np.ndarray:
        """(n, 3) array of (vertex, vertex, owning triangle)."""
        idx = np.flatnonzero(self.boundary_edge_mask)
        return np.column_stack([self.edges[idx], self.edge_tris[idx, 0]])

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edge_mask])

    def diameters(self) -> np.ndarray:
        if self._diam is None:
            p = self.vertices[self.triangles]
            lengths = np.linalg.norm(p[:, [1, 2, 0]] - p[:, [2, 0, 1]], axis=2)
            self._diam = lengths.max(axis=1)
            self._diam.setflags(write=False)
        return self._diam

    @property
    def h_max(self) -> float:
        return float(self.diameters().max())

    def is_connected(self) -> bool:
        interior = self.edge_tris[self.edge_tris[:, 1] >= 0]
        parent = np.arange(self.n_triangles)

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b in interior:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
        return len({find(i) for i in range(self.n_triangles)}) == 1


def element_diameter(mesh: Mesh, t: int) -> float:
    """Longest edge of triangle ``t``."""
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"mesh: triangle id {t} out of range")
    return float(mesh.diameters()[t])


def _ring_points(radius: float, n: int) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(n) / n
    return radius * np.column_stack([np.cos(theta), np.sin(theta)])


# (1/2) ** DEFAULT_GRADING = 9/32: with rings=2 the inner ring sits at 0.28125 R
DEFAULT_GRADING = float(np.log2(32.0 / 9.0))


def build_disk_mesh(radius: float, rings: int, grading: float = DEFAULT_GRADING) -> Mesh:
    """Hexagon fan plus ``rings - 1`` annular layers.

    Ring ``j`` carries ``6 j`` vertices at radius ``radius * (j / rings) ** grading``,
    so the outermost ring lies on the circle. ``grading > 1`` pulls the inner
    rings towards the centre; with the default and ``rings=2`` on the radius-2
    disk the unit circle crosses the annulus, so the cut elements keep away
    from the origin.
    """
    if radius <= 0 or rings < 1:
        raise ValueError("mesh: need radius > 0 and rings >= 1")
    vertices = [np.zeros((1, 2))]
    ring_ids = [np.array([0])]
    offset = 1
    for j in range(1, rings + 1):
        r = radius if j == rings else radius * (j / rings) ** grading
        pts = _ring_points(r, 6 * j)
        vertices.append(pts)
        ring_ids.append(np.arange(offset, offset + 6 * j))
        offset += 6 * j
    tris = []
    for j in range(1, rings + 1):
        inner, outer = ring_ids[j - 1], ring_ids[j]
        n0, n1 = len(inner), len(outer)
        if j == 1:
            for i in range(n1):
                tris.append((inner[0], outer[i], outer[(i + 1) % n1]))
            continue
        a = b = 0
        while a < n0 or b < n1:
            next_outer = (b + 1) / n1
            next_inner = (a + 1) / n0
            if b < n1 and (a >= n0 or next_outer <= next_inner + 1e-14):
                tris.append((inner[a % n0], outer[b], outer[(b + 1) % n1]))
                b += 1
            else:
                tris.append((inner[a], outer[b % n1], inner[(a + 1) % n0]))
                a += 1
    return Mesh(np.vstack(vertices), np.array(tris), BoundaryTag("disk", float(radius)))


def build_square_mesh(side: float, n: int) -> Mesh:
    """``n x n`` squares on ``[-side/2, side/2]^2``, each cut along its rising diagonal."""
    if n < 1:
        raise ValueError("mesh: need n >= 1")
    s = np.linspace(-side / 2, side / 2, n + 1)
    X, Y = np.meshgrid(s, s, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    p00 = idx[:-1, :-1].ravel()
    p10 = idx[:-1, 1:].ravel()
    p01 = idx[1:, :-1].ravel()
    p11 = idx[1:, 1:].ravel()
    tris = np.vstack([np.column_stack([p00, p10, p11]), np.column_stack([p00, p11, p01])])
    return Mesh(vertices, tris, BoundaryTag("square", float(side)))


def uniform_refine(mesh: Mesh) -> Mesh:
    """Red refinement; disk boundary midpoints are projected radially onto the circle."""
    nv = mesh.n_vertices
    mid = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    if mesh.tag.kind == "disk":
        bnd = mesh.boundary_edge_mask
        R = mesh.tag.size
        mid[bnd] *= R / np.linalg.norm(mid[bnd], axis=1)[:, None]
    vertices = np.vstack([mesh.vertices, mid])
    v = mesh.triangles
    m = mesh.tri_edges + nv
    children = np.concatenate(
        [
            np.column_stack([v[:, 0], m[:, 2], m[:, 1]]),
            np.column_stack([m[:, 2], v[:, 1], m[:, 0]]),
            np.column_stack([m[:, 1], m[:, 0], v[:, 2]]),
            np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
        ]
    )
    return Mesh(vertices, children, mesh.tag)


def refine(mesh: Mesh, times: int) -> Mesh:
    for _ in range(times):
        mesh = uniform_refine(mesh)
    return mesh
