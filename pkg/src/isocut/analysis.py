"""Manufactured cases, error functionals and the convergence driver."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cutgeom import LevelSet, Side, circle_levelset, classify, discretize_levelset, planar_levelset
from .fespace import make_space
from .isomap import GRAD, boundary_distance, build_mapping, chi_disk, det_range, interface_distance
from .mesh import Mesh, build_disk_mesh, build_square_mesh, refine
from .nitsche import (
    SIDES,
    assemble,
    build_cut_space,
    condition_estimate,
    galerkin_residual,
    interface_quadrature,
    segment_degree,
    side_quadrature,
    solve,
    volume_degree,
)

log = logging.getLogger(__name__)


class InterfaceConditionError(ValueError):
    pass


@dataclass
class ManufacturedCase:
    """Two-domain exact solution; every callable takes points of shape (n, 2)."""

    name: str
    levelset: LevelSet
    alpha: tuple
    u: tuple  # (u_1, u_2)
    grad_u: tuple
    f: tuple
    base_mesh: Callable[[], Mesh]
    chi: Callable | None = None
    radius: float | None = None  # for the boundary-distance diagnostic
    lift: bool = False  # impose u on the boundary (otherwise homogeneous data)
    interface_points: Callable[[int], tuple] | None = None  # n -> (points, unit normals) on the interface
    notes: list = field(default_factory=list)

    def mesh(self, level: int) -> Mesh:
        return refine(self.base_mesh(), level)

    def interface_jumps(self, n: int = 100) -> tuple[float, float]:
        """Max value jump and max flux jump at ``n`` interface points."""
        x, nrm = self.interface_points(n)
        du = np.abs(self.u[0](x) - self.u[1](x)).max()
        flux = [self.alpha[i] * np.einsum("na,na->n", self.grad_u[i](x), nrm) for i in range(2)]
        return float(du), float(np.abs(flux[0] - flux[1]).max())

    def check_interface(self, n: int = 100, tol: float = 1e-10):
        du, dflux = self.interface_jumps(n)
        if du > tol or dflux > tol:
            raise InterfaceConditionError(
                f"analysis: case {self.name!r} violates the interface conditions (value jump {du:.3e}, flux jump {dflux:.3e})"
            )


def _circle_points(n: int):
    t = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    x = np.column_stack([np.cos(t), np.sin(t)])
    return x, x.copy()


def register_disk_case(alpha_paper: bool = False, radius: float = 2.0) -> ManufacturedCase:
    """Radial solution on the disk of radius 2 with unit-circle interface.

    The default coefficient pair (2, pi) makes the flux continuous; the pair
    (pi, 2) is available via ``alpha_paper`` and violates flux continuity.
    """
    alpha = (np.pi, 2.0) if alpha_paper else (2.0, np.pi)
    a1, a2 = alpha

    def r(x):
        return np.linalg.norm(x, axis=-1)

    def f2(x):
        rr = r(x)
        if np.any(rr < 0.5):
            raise ValueError("analysis: f_2 evaluated at r < 0.5, too close to its singularity")
        return a2 / rr

    case = ManufacturedCase(
        name="disk",
        levelset=circle_levelset(1.0),
        alpha=alpha,
        u=(lambda x: 1.0 + np.cos(0.5 * np.pi * r(x)), lambda x: 2.0 - r(x)),
        grad_u=(
            lambda x: -(np.pi**2 / 4.0) * np.sinc(0.5 * r(x))[:, None] * x,
            lambda x: -x / r(x)[:, None],
        ),
        # -alpha (u'' + u'/r) for the radial profiles; sinc keeps f_1 finite at the origin
        f=(lambda x: a1 * (np.pi**2 / 4.0) * (np.cos(0.5 * np.pi * r(x)) + np.sinc(0.5 * r(x))), f2),
        base_mesh=lambda: build_disk_mesh(radius, 2),
        chi=chi_disk(radius),
        radius=radius,
        interface_points=_circle_points,
    )
    if alpha_paper:
        du, dflux = case.interface_jumps()
        case.notes.append(f"alpha=(pi,2) leaves a flux jump of {dflux:.6f} across the interface")
        log.warning("analysis: %s", case.notes[-1])
    else:
        case.check_interface()
    return case


def register_square_patch_case(side: float = 2.0, n: int = 2) -> ManufacturedCase:
    """Kinked linear solution across ``x_1 = 0.3``; reproduced exactly by the discrete space."""

    def pts(m):
        y = np.linspace(-side / 2, side / 2, m)
        return np.column_stack([np.full(m, 0.3), y]), np.tile([1.0, 0.0], (m, 1))

    case = ManufacturedCase(
        name="square-patch",
        levelset=planar_levelset([1.0, 0.0], 0.3),
        alpha=(1.0, 2.0),
        u=(lambda x: 2.0 * x[:, 0], lambda x: x[:, 0] + 0.3),
        grad_u=(lambda x: np.tile([2.0, 0.0], (len(x), 1)), lambda x: np.tile([1.0, 0.0], (len(x), 1))),
        f=(lambda x: np.zeros(len(x)), lambda x: np.zeros(len(x))),
        base_mesh=lambda: build_square_mesh(side, n),
        lift=True,
        interface_points=pts,
    )
    case.check_interface()
    return case


CASES = {"disk": register_disk_case, "square-patch": register_square_patch_case}


# -- errors ---------------------------------------------------------------------------------------


def _side_values(sol, side: Side, degree: int):
    """Quadrature data on one side: weights with det, mapped points, u_h and transformed grad u_h."""
    space = sol.space.dofmap
    elems, pts, wts = side_quadrature(sol.space.topology, side, degree)
    geo = sol.bundle.evaluate(elems, pts)
    w = wts * np.abs(space.det_jac[elems])[:, None] * geo.det
    loc = sol.domain(side)[space.cell_dofs[elems]]
    uh = np.einsum("nqj,nj->nq", space.basis.values(pts), loc)
    g = np.einsum("nqjb,nj->nqb", space.physical_grads(elems, pts), loc)
    guh = np.einsum("nqab,nqb->nqa", geo.FinvT, g)
    return w, geo.x, uh, guh


def l2_error(sol, case: ManufacturedCase, degree: int | None = None) -> float:
    degree = degree if degree is not None else volume_degree(sol.space.k)
    total = 0.0
    for i, side in enumerate(SIDES):
        w, x, uh, _ = _side_values(sol, side, degree)
        ue = case.u[i](x.reshape(-1, 2)).reshape(uh.shape)
        total += float(np.sum(w * (ue - uh) ** 2))
    return float(np.sqrt(total))


def h1_error(sol, case: ManufacturedCase, degree: int | None = None) -> float:
    """alpha-weighted broken H1 seminorm of the error."""
    degree = degree if degree is not None else volume_degree(sol.space.k)
    total = 0.0
    for i, side in enumerate(SIDES):
        w, x, _, guh = _side_values(sol, side, degree)
        ge = case.grad_u[i](x.reshape(-1, 2)).reshape(guh.shape)
        total += case.alpha[i] * float(np.sum(w * np.sum((ge - guh) ** 2, axis=-1)))
    return float(np.sqrt(total))


def jump_norm(sol, alpha, degree: int | None = None) -> float:
    """``sqrt(sum_T abar / h_T * int_{Gamma_h cap T} [u_h]^2)``."""
    cs = sol.space
    degree = degree if degree is not None else segment_degree(cs.k)
    iq = interface_quadrature(cs, sol.bundle, degree)
    if len(iq.elems) == 0:
        return 0.0
    space = cs.dofmap
    phi = space.basis.values(iq.ref_pts)
    dofs = space.cell_dofs[iq.elems]
    jump = np.einsum("nqj,nj->nq", phi, sol.u1[dofs] - sol.u2[dofs])
    h = cs.topology.mesh.diameters()[iq.elems]
    abar = 0.5 * (alpha[0] + alpha[1])
    return float(np.sqrt(np.sum(abar / h[:, None] * iq.ds * jump**2)))


def eoc(errors) -> list[float]:
    """``log2(e_{L-1} / e_L)`` for successive entries (uniform refinement by halving)."""
    e = np.asarray(errors, dtype=float)
    if len(e) < 2:
        raise ValueError("analysis: eoc needs at least two errors")
    if np.any(~(e > 0)):
        raise ValueError("analysis: eoc needs positive errors")
    return list(np.log2(e[:-1] / e[1:]))


def fitted_slope(h, e) -> float:
    """Least-squares slope of log e against log h."""
    return float(np.polyfit(np.log(np.asarray(h, dtype=float)), np.log(np.asarray(e, dtype=float)), 1)[0])


# -- driver ---------------------------------------------------------------------------------------


@dataclass
class StudyConfig:
    ghat: str = GRAD
    lambda_scale: float = 20.0
    quad_offset: int = 0
    threads: int = 1
    condition: bool = False
    galerkin_check: bool = True


@dataclass
class LevelResult:
    level: int
    h: float
    ndof: int
    l2: float
    h1: float
    jump: float
    geom_if: float
    geom_bnd: float
    det_min: float = 1.0
    det_max: float = 1.0
    max_displacement: float = 0.0
    solver: str = ""
    residual: float = 0.0
    galerkin: float = 0.0
    condition: float = float("nan")
    seconds: float = 0.0


@dataclass
class LevelState:
    """Everything built for one level, handed to callbacks (exports)."""

    mesh: Mesh
    dls: object
    topology: object
    bundle: object
    cut_space: object
    system: object
    solution: object


@dataclass
class ConvergenceReport:
    case: str
    k: int
    rows: list = field(default_factory=list)
    complete: bool = True
    error: str = ""
    notes: list = field(default_factory=list)

    COLUMNS = ("level", "h", "ndof", "l2", "l2_eoc", "h1", "h1_eoc", "jump", "geom_if", "geom_bnd")

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]

    def eocs(self, name: str) -> list[float]:
        vals = self.column(name)
        if len(vals) < 2:
            return []
        e = np.asarray(vals, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return list(np.log2(e[:-1] / e[1:]))

    def records(self) -> list[dict]:
        l2e = [float("nan")] + self.eocs("l2")
        h1e = [float("nan")] + self.eocs("h1")
        out = []
        for r, a, b in zip(self.rows, l2e, h1e):
            out.append(
                dict(
                    level=r.level, h=r.h, ndof=r.ndof, l2=r.l2, l2_eoc=a, h1=r.h1, h1_eoc=b,
                    jump=r.jump, geom_if=r.geom_if, geom_bnd=r.geom_bnd,
                )
            )
        return out

    def table(self) -> str:
        head = f"{'k':>2} {'L':>2} {'h':>9} {'ndof':>7} {'L2 error':>12} {'eoc':>6} {'H1 error':>12} {'eoc':>6}"
        lines = [head]
        for rec in self.records():
            def fmt(v):
                return f"{v:6.2f}" if np.isfinite(v) else f"{'-':>6}"

            lines.append(
                f"{self.k:>2} {rec['level']:>2} {rec['h']:9.4f} {rec['ndof']:>7} {rec['l2']:12.5e} {fmt(rec['l2_eoc'])} "
                f"{rec['h1']:12.5e} {fmt(rec['h1_eoc'])}"
            )
        if not self.complete:
            lines.append(f"incomplete: {self.error}")
        return "\n".join(lines)


def solve_level(case: ManufacturedCase, mesh: Mesh, k: int, cfg: StudyConfig) -> LevelState:
    dls = discretize_levelset(mesh, k, case.levelset, make_space(mesh, k))
    topo = classify(dls)
    bundle = build_mapping(dls, topo, variant=cfg.ghat, chi=case.chi)
    cs = build_cut_space(dls.space, topo)
    lam = cfg.lambda_scale * k**2
    system = assemble(cs, bundle, case.alpha, lam, case.f, cfg.quad_offset, cfg.threads)
    lift = None
    if case.lift:
        # prescribed values at the mapped positions of the boundary nodes
        nodes = dls.space.node_coords + bundle.displacement.coeffs
        lift = np.zeros(cs.n_unknowns)
        for i, idx in enumerate(cs.unknowns):
            act = np.flatnonzero(idx >= 0)
            lift[idx[act]] = case.u[i](nodes[act])
    sol = solve(system, bundle, lift)
    return LevelState(mesh, dls, topo, bundle, cs, system, sol)


def measure(state: LevelState, case: ManufacturedCase, level: int, cfg: StudyConfig) -> LevelResult:
    sol, k = state.solution, state.cut_space.k
    deg = volume_degree(k, cfg.quad_offset)
    lo, hi = det_range(state.bundle, deg)
    red = sol.info["reduced"]
    res = LevelResult(
        level=level,
        h=state.mesh.h_max,
        ndof=state.cut_space.n_unknowns,
        l2=l2_error(sol, case, deg),
        h1=h1_error(sol, case, deg),
        jump=jump_norm(sol, case.alpha, segment_degree(k, cfg.quad_offset)),
        geom_if=interface_distance(state.bundle, state.topology, case.levelset),
        geom_bnd=boundary_distance(state.bundle, case.radius) if case.radius else 0.0,
        det_min=lo,
        det_max=hi,
        max_displacement=state.bundle.max_displacement,
        solver=sol.info["method"],
        residual=sol.info["residual"],
    )
    if cfg.galerkin_check:
        res.galerkin = galerkin_residual(red, sol.coeffs[red.free])
    if cfg.condition:
        res.condition = condition_estimate(red.A, sol.info.get("factor"))
    return res


def run_convergence(
    case: ManufacturedCase, k: int, levels: int, cfg: StudyConfig | None = None, on_level=None
) -> ConvergenceReport:
    """Solve on ``levels`` uniformly refined meshes; a failing level ends the study with a partial report."""
    cfg = cfg or StudyConfig()
    if levels < 1:
        raise ValueError("analysis: need at least one level")
    report = ConvergenceReport(case.name, k, notes=list(case.notes))
    mesh = case.base_mesh()
    for level in range(levels):
        t0 = time.perf_counter()
        try:
            state = solve_level(case, mesh, k, cfg)
            row = measure(state, case, level, cfg)
        except Exception as exc:  # partial report, caller decides the exit status
            log.error("analysis: level %d failed: %s", level, exc)
            report.complete = False
            report.error = f"level {level}: {type(exc).__name__}: {exc}"
            return report
        row.seconds = time.perf_counter() - t0
        report.rows.append(row)
        if on_level is not None:
            on_level(level, state)
        if level + 1 < levels:
            mesh = refine(mesh, 1)
    return report


@dataclass
class GeometryRow:
    level: int
    h: float
    geom_if: float
    geom_bnd: float
    det_min: float
    det_max: float
    max_displacement: float


def geometry_study(case: ManufacturedCase, k: int, levels: int, ghat: str = GRAD, quad_offset: int = 0) -> list[GeometryRow]:
    """Mapping diagnostics only (no solve) on ``levels`` refinements."""
    rows = []
    mesh = case.base_mesh()
    for level in range(levels):
        dls = discretize_levelset(mesh, k, case.levelset)
        topo = classify(dls)
        bundle = build_mapping(dls, topo, variant=ghat, chi=case.chi)
        lo, hi = det_range(bundle, volume_degree(k, quad_offset))
        rows.append(
            GeometryRow(
                level, mesh.h_max, interface_distance(bundle, topo, case.levelset),
                boundary_distance(bundle, case.radius) if case.radius else 0.0, lo, hi, bundle.max_displacement,
            )
        )
        if level + 1 < levels:
            mesh = refine(mesh, 1)
    return rows
