import numpy as np
import pytest
import scipy.io

from isocut.analysis import StudyConfig, register_disk_case, solve_level
from isocut.export import (
    lattice,
    read_mesh_text,
    write_interface_csv,
    write_interface_vtk,
    write_matrix_market,
    write_mesh_text,
    write_mesh_vtk,
    write_solution_vtk,
)
from isocut.mesh import build_disk_mesh, build_square_mesh


@pytest.fixture(scope="module")
def state():
    return solve_level(register_disk_case(), build_disk_mesh(2.0, 2), 2, StudyConfig())


def vtk_sections(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# vtk DataFile")
    return {ln.split()[0]: int(ln.split()[1]) for ln in lines if ln.split() and ln.split()[0] in ("POINTS", "CELLS", "POINT_DATA", "CELL_DATA")}


@pytest.mark.parametrize("n", [1, 2, 5])
def test_lattice(n):
    pts, tris = lattice(n)
    assert len(pts) == (n + 1) * (n + 2) // 2 and len(tris) == n * n
    a = pts[tris]
    area = 0.5 * ((a[:, 1, 0] - a[:, 0, 0]) * (a[:, 2, 1] - a[:, 0, 1]) - (a[:, 1, 1] - a[:, 0, 1]) * (a[:, 2, 0] - a[:, 0, 0]))
    assert np.all(area > 0) and area.sum() == pytest.approx(0.5)


def test_mesh_text_roundtrip(tmp_path):
    for m in (build_disk_mesh(2.0, 3), build_square_mesh(1.5, 3)):
        p = tmp_path / "m.txt"
        write_mesh_text(p, m)
        back = read_mesh_text(p)
        assert np.array_equal(back.vertices, m.vertices)
        assert np.array_equal(back.triangles, m.triangles)
        assert back.tag == m.tag


def test_mesh_text_malformed(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("vertices 3\n0 0\n1 0\n")
    with pytest.raises(ValueError, match="malformed"):
        read_mesh_text(p)


def test_vtk_files(tmp_path, state):
    write_mesh_vtk(tmp_path / "mesh.vtk", state.bundle, state.topology, subdiv=2)
    s = vtk_sections(tmp_path / "mesh.vtk")
    assert s["CELLS"] == 4 * state.mesh.n_triangles and s["CELL_DATA"] == s["CELLS"]
    write_interface_vtk(tmp_path / "interface.vtk", state.bundle, state.topology, n=4)
    s = vtk_sections(tmp_path / "interface.vtk")
    assert s["CELLS"] == 4 * len(state.topology.cut_elements)
    write_solution_vtk(tmp_path / "solution.vtk", state.solution, register_disk_case())
    s = vtk_sections(tmp_path / "solution.vtk")
    assert s["POINT_DATA"] == s["POINTS"]


def test_interface_csv(tmp_path, state):
    p = tmp_path / "if.csv"
    case = register_disk_case()
    write_interface_csv(p, state.bundle, state.topology, case.levelset)
    rows = np.loadtxt(p, delimiter=",", skiprows=1)
    x = rows[:, 1:3]
    np.testing.assert_allclose(np.abs(np.linalg.norm(x, axis=1) - 1), rows[:, 3], rtol=1e-5, atol=1e-12)


def test_matrix_market(tmp_path, state):
    write_matrix_market(tmp_path, state.system, state.solution.info["reduced"])
    A = scipy.io.mmread(tmp_path / "system_A.mtx")
    assert abs(A - state.system.A).max() == 0.0
    R = scipy.io.mmread(tmp_path / "system_reduced_A.mtx")
    assert R.shape == state.solution.info["reduced"].A.shape
