"""File output: legacy VTK, interface CSV, a plain-text mesh format, Matrix Market."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import scipy.io

from .isomap import segment_points
from .mesh import BoundaryTag, Mesh
from .nitsche import SIDES


def lattice(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Points (m, 2) and triangles of the uniform ``n``-subdivision of the reference triangle."""
    pts, index = [], {}
    for j in range(n + 1):
        for i in range(n + 1 - j):
            index[i, j] = len(pts)
            pts.append((i / n, j / n))
    tris = []
    for j in range(n):
        for i in range(n - j):
            tris.append((index[i, j], index[i + 1, j], index[i, j + 1]))
            if i + j < n - 1:
                tris.append((index[i + 1, j], index[i + 1, j + 1], index[i, j + 1]))
    return np.array(pts), np.array(tris, dtype=np.int64)


def _on_corners(corners: np.ndarray, pts: np.ndarray) -> np.ndarray:
    a, b, c = corners
    return a + np.outer(pts[:, 0], b - a) + np.outer(pts[:, 1], c - a)


def _write_unstructured(path, points, cells, cell_type: int, point_data=None, cell_data=None, title="isocut"):
    points = np.asarray(points, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(points)} double\n")
        for x, y in points:
            fh.write(f"{x:.16g} {y:.16g} 0\n")
        nper = cells.shape[1]
        fh.write(f"CELLS {len(cells)} {len(cells) * (nper + 1)}\n")
        for c in cells:
            fh.write(f"{nper} " + " ".join(map(str, c)) + "\n")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        fh.write("\n".join([str(cell_type)] * len(cells)) + "\n")
        for header, data, size in (("POINT_DATA", point_data, len(points)), ("CELL_DATA", cell_data, len(cells))):
            if not data:
                continue
            fh.write(f"{header} {size}\n")
            for name, vals in data.items():
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.write("\n".join(f"{v:.16g}" for v in np.asarray(vals, dtype=float)) + "\n")


VTK_LINE, VTK_TRIANGLE = 3, 5


def write_mesh_vtk(path, bundle, topology, subdiv: int = 1):
    """Mapped mesh, each element drawn as ``subdiv**2`` triangles; cell data ``label`` (0 cut, 1 neg, 2 pos)."""
    space = bundle.space
    ref, sub = lattice(subdiv)
    elems = np.arange(space.mesh.n_triangles)
    x = bundle.evaluate(elems, ref, check=False).x
    npts = len(ref)
    cells = (elems[:, None, None] * npts + sub[None]).reshape(-1, 3)
    labels = np.repeat(topology.labels, len(sub))
    _write_unstructured(path, x.reshape(-1, 2), cells, VTK_TRIANGLE, cell_data={"label": labels, "element": np.repeat(elems, len(sub))})


def interface_points(bundle, topology, n: int = 8):
    """Cut element ids and mapped points (m, n + 1, 2) along each interface segment, endpoints included."""
    elems = topology.cut_elements
    t = np.linspace(0.0, 1.0, n + 1)
    if len(elems) == 0:
        return elems, np.zeros((0, n + 1, 2))
    ends = np.array([topology.cuts[e].endpoints for e in elems])
    pts = ends[:, None, 0] + t[None, :, None] * (ends[:, 1] - ends[:, 0])[:, None, :]
    return elems, bundle.evaluate(elems, pts, check=False).x


def write_interface_vtk(path, bundle, topology, n: int = 8):
    elems, x = interface_points(bundle, topology, n)
    m = x.shape[1]
    cells = np.array([(e * m + i, e * m + i + 1) for e in range(len(elems)) for i in range(m - 1)], dtype=np.int64)
    _write_unstructured(path, x.reshape(-1, 2), cells.reshape(-1, 2), VTK_LINE,
                        cell_data={"element": np.repeat(elems, m - 1)})


def write_interface_csv(path, bundle, topology, levelset=None, degree: int = 8):
    """One row per segment quadrature point: element, mapped x, y, and the level-set distance estimate."""
    elems, pts, _, _ = segment_points(topology, degree)
    x = bundle.evaluate(elems, pts, check=False).x if len(elems) else np.zeros((0, 1, 2))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "x", "y", "distance"])
        for e, xs in zip(elems, x):
            dist = np.abs(levelset.value(xs)) / np.linalg.norm(levelset.grad(xs), axis=-1) if levelset else [np.nan] * len(xs)
            for p, d in zip(xs, dist):
                w.writerow([int(e), f"{p[0]:.16g}", f"{p[1]:.16g}", f"{d:.6e}"])


def write_solution_vtk(path, solution, case=None, subdiv: int = 2):
    """Discrete solution on both mapped sides; cut elements are drawn per sub-triangle."""
    sol = solution
    space = sol.space.dofmap
    topo = sol.space.topology
    ref, sub = lattice(subdiv)
    points, cells, uh, ue, dom = [], [], [], [], []
    offset = 0
    for i, side in enumerate(SIDES):
        whole = topo.elements(side)
        parents, corners = topo.subcells(side)
        elems = np.concatenate([whole, parents]).astype(np.int64)
        if len(elems) == 0:
            continue
        rp = np.concatenate(
            [np.broadcast_to(ref, (len(whole),) + ref.shape), np.array([_on_corners(c, ref) for c in corners]).reshape(-1, len(ref), 2)]
        )
        x = sol.bundle.evaluate(elems, rp, check=False).x
        vals = np.einsum("nqj,nj->nq", space.basis.values(rp), sol.domain(side)[space.cell_dofs[elems]])
        points.append(x.reshape(-1, 2))
        uh.append(vals.ravel())
        ue.append(case.u[i](x.reshape(-1, 2)) if case is not None else np.full(vals.size, np.nan))
        dom.append(np.full(len(elems) * len(sub), i + 1))
        cells.append((offset + np.arange(len(elems))[:, None, None] * len(ref) + sub[None]).reshape(-1, 3))
        offset += vals.size
    uh, ue = np.concatenate(uh), np.concatenate(ue)
    _write_unstructured(
        path, np.concatenate(points), np.concatenate(cells), VTK_TRIANGLE,
        point_data={"u_h": uh, "u_exact": ue, "error": uh - ue}, cell_data={"domain": np.concatenate(dom)},
    )


def write_mesh_text(path, mesh: Mesh):
    """``tag kind size``, then ``vertices n`` with n coordinate lines, then ``triangles m`` with m index lines."""
    with open(path, "w") as fh:
        fh.write(f"tag {mesh.tag.kind} {mesh.tag.size:.17g}\n")
        fh.write(f"vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"triangles {mesh.n_triangles}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")


def read_mesh_text(path) -> Mesh:
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    try:
        it = iter(lines)
        head = next(it)
        tag = BoundaryTag("polygon")
        if head[0] == "tag":
            tag = BoundaryTag(head[1], float(head[2]))
            head = next(it)
        if head[0] != "vertices":
            raise ValueError("expected 'vertices'")
        verts = np.array([[float(v) for v in next(it)] for _ in range(int(head[1]))])
        head = next(it)
        if head[0] != "triangles":
            raise ValueError("expected 'triangles'")
        tris = np.array([[int(v) for v in next(it)] for _ in range(int(head[1]))], dtype=np.int64)
    except (StopIteration, IndexError, ValueError) as exc:
        raise ValueError(f"export: malformed mesh file {path}: {exc}") from None
    return Mesh(verts.reshape(-1, 2), tris.reshape(-1, 3), tag)


def write_matrix_market(directory, system, reduced=None, prefix: str = "system"):
    """Dump the assembled (and optionally the reduced) matrix and right-hand side."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(d / f"{prefix}_A.mtx", system.A, symmetry="symmetric")
    scipy.io.mmwrite(d / f"{prefix}_b.mtx", system.b[:, None])
    if reduced is not None:
        scipy.io.mmwrite(d / f"{prefix}_reduced_A.mtx", reduced.A, symmetry="symmetric")
        scipy.io.mmwrite(d / f"{prefix}_reduced_b.mtx", reduced.b[:, None])
