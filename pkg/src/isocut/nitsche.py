"""Unfitted Nitsche discretization on the isoparametrically mapped geometry.

Domain 1 is the negative side of the level set, domain 2 the positive side.
Every cut element carries two independent copies of its local dofs. All
integrals are pulled back to the undeformed mesh, so each quadrature point
picks up ``det DTheta`` and gradients are transformed with ``DTheta^{-T}``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cutgeom import CutTopology, Side
from .fespace import DofMap
from .isomap import MappingBundle, segment_points
from .quadrature import MAX_SEGMENT_DEGREE, MAX_VOLUME_DEGREE, subtriangle_rule, volume_rule

log = logging.getLogger(__name__)

SIDES = (Side.NEG, Side.POS)
CHUNK = 256  # elements per assembly batch; fixed so results do not depend on the thread count


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


class NoConvergence(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"nitsche: CG did not converge in {iterations} iterations (relative residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


def volume_degree(k: int, offset: int = 0) -> int:
    deg = 2 * k + 2 + offset
    if deg > MAX_VOLUME_DEGREE:
        log.warning("nitsche: volume quadrature degree %d capped at %d", deg, MAX_VOLUME_DEGREE)
    return min(deg, MAX_VOLUME_DEGREE)


def segment_degree(k: int, offset: int = 0) -> int:
    return min(2 * k + 2 + offset, MAX_SEGMENT_DEGREE)


@dataclass
class CutSpace:
    """Doubled-unknown bookkeeping: ``unknowns[i][dof]`` is the global unknown of ``dof`` in domain ``i + 1`` or -1."""

    dofmap: DofMap
    topology: CutTopology
    unknowns: tuple
    n_unknowns: int
    dirichlet: np.ndarray  # (n_unknowns,) bool
    n_domain: tuple = field(default=(0, 0))

    @property
    def k(self) -> int:
        return self.dofmap.k

    def cell_unknowns(self, side: Side, elems) -> np.ndarray:
        return self.unknowns[SIDES.index(side)][self.dofmap.cell_dofs[np.asarray(elems, dtype=np.int64)]]

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-domain coefficient arrays over all dofs (zero where inactive)."""
        out = []
        for idx in self.unknowns:
            u = np.zeros(self.dofmap.ndof)
            act = idx >= 0
            u[act] = x[idx[act]]
            out.append(u)
        return out[0], out[1]


def build_cut_space(space: DofMap, topology: CutTopology) -> CutSpace:
    unknowns, dirichlet, sizes = [], [], []
    offset = 0
    for side in SIDES:
        active = np.zeros(space.ndof, dtype=bool)
        active[space.cell_dofs[topology.active_elements(side)].ravel()] = True
        idx = np.full(space.ndof, -1, dtype=np.int64)
        n = int(active.sum())
        idx[active] = offset + np.arange(n)
        offset += n
        unknowns.append(idx)
        dirichlet.append(space.boundary_mask[active])
        sizes.append(n)
    return CutSpace(space, topology, tuple(unknowns), offset, np.concatenate(dirichlet), tuple(sizes))


@dataclass
class LinearSystem:
    A: sp.csr_matrix
    b: np.ndarray
    space: CutSpace | None = None


@dataclass
class ReducedSystem:
    A: sp.csr_matrix
    b: np.ndarray
    free: np.ndarray  # unknown ids kept
    lift: np.ndarray  # full-length vector of prescribed values (zero on free unknowns)


@dataclass
class DiscreteSolution:
    space: CutSpace
    bundle: MappingBundle
    coeffs: np.ndarray  # (n_unknowns,)
    u1: np.ndarray = field(init=False)
    u2: np.ndarray = field(init=False)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u1, self.u2 = self.space.split(self.coeffs)

    def domain(self, side: Side) -> np.ndarray:
        return self.u1 if side == Side.NEG else self.u2


# -- quadrature on the two sides -------------------------------------------------------------------


def side_quadrature(topology: CutTopology, side: Side, degree: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parent elements (n,), reference points (n, q, 2) and reference-measure weights (n, q).

    Uncut elements of ``side`` use the plain rule, cut elements one entry per
    sub-triangle on ``side``.
    """
    rule = volume_rule(degree)
    whole = topology.elements(side)
    parents, corners = topology.subcells(side)
    nq = len(rule.weights)
    pts = np.empty((len(whole) + len(parents), nq, 2))
    wts = np.empty((len(whole) + len(parents), nq))
    pts[: len(whole)] = rule.points
    wts[: len(whole)] = rule.weights
    for i, c in enumerate(corners):
        pts[len(whole) + i], wts[len(whole) + i] = subtriangle_rule(rule, c)
    return np.concatenate([whole, parents]).astype(np.int64), pts, wts


def _chunks(n: int):
    return [slice(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]


def _run(tasks, threads: int):
    if threads <= 1 or len(tasks) <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: t(), tasks))


def _coo(rows, cols, vals, n) -> sp.csr_matrix:
    if not rows:
        return sp.csr_matrix((n, n))
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


# -- assembly -------------------------------------------------------------------------------------


def _volume_block(space: DofMap, bundle: MappingBundle, elems, pts, wts):
    geo = bundle.evaluate(elems, pts)
    g = np.einsum("nqab,nqjb->nqja", geo.FinvT, space.physical_grads(elems, pts))
    w = wts * np.abs(space.det_jac[elems])[:, None] * geo.det
    K = np.einsum("nq,nqia,nqja->nij", w, g, g)
    return 0.5 * (K + K.transpose(0, 2, 1))


def assemble_volume(
    cs: CutSpace, bundle: MappingBundle, alpha, degree: int, threads: int = 1
) -> sp.csr_matrix:
    """Sum over both sides of ``alpha_i * int DTheta^{-T} grad u . DTheta^{-T} grad v det DTheta``."""
    space = cs.dofmap
    rows, cols, vals = [], [], []
    for i, side in enumerate(SIDES):
        elems, pts, wts = side_quadrature(cs.topology, side, degree)
        if len(elems) == 0:
            continue
        a = float(alpha[i])
        tasks = [
            (lambda s=s: a * _volume_block(space, bundle, elems[s], pts[s], wts[s])) for s in _chunks(len(elems))
        ]
        for s, K in zip(_chunks(len(elems)), _run(tasks, threads)):
            idx = cs.cell_unknowns(side, elems[s])
            rows.append(np.repeat(idx, idx.shape[1], axis=1).ravel())
            cols.append(np.tile(idx, (1, idx.shape[1])).ravel())
            vals.append(K.ravel())
    return _coo(rows, cols, vals, cs.n_unknowns)


def heaviside_kappa(fraction_1: float) -> tuple[float, float]:
    """``kappa_1 = 1`` iff the domain-1 part exceeds half the element; a tie goes to domain 2."""
    return (1.0, 0.0) if fraction_1 > 0.5 else (0.0, 1.0)


@dataclass
class InterfaceQuadrature:
    """Mapped interface quadrature on every cut element."""

    elems: np.ndarray
    ref_pts: np.ndarray  # (n, q, 2)
    ds: np.ndarray  # (n, q) mapped line element times weight
    normal: np.ndarray  # (n, q, 2) unit normal of the mapped interface, pointing into domain 2
    x: np.ndarray  # (n, q, 2) mapped points
    FinvT: np.ndarray  # (n, q, 2, 2)


def interface_quadrature(cs: CutSpace, bundle: MappingBundle, degree: int) -> InterfaceQuadrature:
    topo, space = cs.topology, cs.dofmap
    elems, pts, w, direction = segment_points(topo, degree)
    if len(elems) == 0:
        q = len(w)
        return InterfaceQuadrature(
            elems, np.zeros((0, q, 2)), np.zeros((0, q)), np.zeros((0, q, 2)), np.zeros((0, q, 2)), np.zeros((0, q, 2, 2))
        )
    geo = bundle.evaluate(elems, pts)
    t_lin = np.einsum("nab,nb->na", space.jac[elems], direction)
    tau = np.einsum("nqab,nb->nqa", geo.F, t_lin)
    ds = np.linalg.norm(tau, axis=-1) * w
    n_lin = np.array([topo.cuts[e].normal for e in elems])
    n = np.einsum("nqab,nb->nqa", geo.FinvT, n_lin)
    n /= np.linalg.norm(n, axis=-1)[..., None]
    return InterfaceQuadrature(elems, pts, ds, n, geo.x, geo.FinvT)


def assemble_interface(
    cs: CutSpace, bundle: MappingBundle, alpha, lam: float, degree: int
) -> sp.csr_matrix:
    """Symmetric Nitsche coupling plus penalty ``abar * lam / h_T`` on every cut element."""
    space, topo = cs.dofmap, cs.topology
    iq = interface_quadrature(cs, bundle, degree)
    if len(iq.elems) == 0:
        return sp.csr_matrix((cs.n_unknowns, cs.n_unknowns))
    abar = 0.5 * (alpha[0] + alpha[1])
    h = cs.topology.mesh.diameters()[iq.elems]
    kappa = np.array([heaviside_kappa(topo.cuts[e].fractions[0]) for e in iq.elems])
    phi = space.basis.values(iq.ref_pts)  # (n, q, nloc)
    grad = np.einsum("nqab,nqjb->nqja", iq.FinvT, space.physical_grads(iq.elems, iq.ref_pts))
    dn = np.einsum("nqja,nqa->nqj", grad, iq.normal)
    B = np.concatenate([phi, -phi], axis=-1)
    F = np.concatenate(
        [-(kappa[:, 0] * alpha[0])[:, None, None] * dn, -(kappa[:, 1] * alpha[1])[:, None, None] * dn], axis=-1
    )
    gamma = (abar * lam / h)[:, None, None, None]
    FB = np.einsum("nq,nqi,nqj->nij", iq.ds, F, B)
    BB = np.einsum("nq,nqi,nqj->nij", iq.ds, B, B)
    K = FB + FB.transpose(0, 2, 1) + gamma[:, 0] * BB
    K = 0.5 * (K + K.transpose(0, 2, 1))
    idx = np.concatenate([cs.cell_unknowns(Side.NEG, iq.elems), cs.cell_unknowns(Side.POS, iq.elems)], axis=1)
    m = idx.shape[1]
    rows = np.repeat(idx, m, axis=1).ravel()
    cols = np.tile(idx, (1, m)).ravel()
    return _coo([rows], [cols], [K.ravel()], cs.n_unknowns)


def assemble_rhs(cs: CutSpace, bundle: MappingBundle, sources, degree: int) -> np.ndarray:
    """``sum_i int f_i(Theta_h(y)) v(y) det DTheta_h(y) dy`` over the undeformed sides."""
    space = cs.dofmap
    b = np.zeros(cs.n_unknowns)
    for i, side in enumerate(SIDES):
        f = sources[i]
        if f is None:
            continue
        elems, pts, wts = side_quadrature(cs.topology, side, degree)
        if len(elems) == 0:
            continue
        geo = bundle.evaluate(elems, pts)
        fx = np.asarray(f(geo.x.reshape(-1, 2)), dtype=float).reshape(geo.det.shape)
        if not np.all(np.isfinite(fx)):
            n, q = np.unravel_index(np.flatnonzero(~np.isfinite(fx))[0], fx.shape)
            raise ValueError(f"nitsche: non-finite source value on element {elems[n]} at {geo.x[n, q]}")
        w = wts * np.abs(space.det_jac[elems])[:, None] * geo.det * fx
        loc = np.einsum("nq,nqj->nj", w, space.basis.values(pts))
        np.add.at(b, cs.cell_unknowns(side, elems).ravel(), loc.ravel())
    return b


def assemble(
    cs: CutSpace,
    bundle: MappingBundle,
    alpha,
    lam: float,
    sources=(None, None),
    quad_offset: int = 0,
    threads: int = 1,
) -> LinearSystem:
    k = cs.k
    vdeg = volume_degree(k, quad_offset)
    A = assemble_volume(cs, bundle, alpha, vdeg, threads) + assemble_interface(
        cs, bundle, alpha, lam, segment_degree(k, quad_offset)
    )
    A = ((A + A.T) * 0.5).tocsr()
    A.sort_indices()
    return LinearSystem(A, assemble_rhs(cs, bundle, sources, vdeg), cs)


def apply_dirichlet(system: LinearSystem, mask: np.ndarray, values: np.ndarray | None = None) -> ReducedSystem:
    """Eliminate the unknowns in ``mask`` symmetrically, prescribing ``values`` (default 0) there."""
    n = system.A.shape[0]
    lift = np.zeros(n)
    if values is not None:
        lift[mask] = np.asarray(values, dtype=float)[mask]
    free = np.flatnonzero(~mask)
    A = system.A[free][:, free].tocsr()
    b = system.b[free] - (system.A @ lift)[free] if np.any(lift) else system.b[free].copy()
    return ReducedSystem(A, b, free, lift)


def expand(reduced: ReducedSystem, x: np.ndarray) -> np.ndarray:
    full = reduced.lift.copy()
    full[reduced.free] = x
    return full


# -- solvers --------------------------------------------------------------------------------------


def _pcg(A, b, rtol: float, maxiter: int):
    """Jacobi-preconditioned CG that reports loss of definiteness instead of diverging."""
    d = A.diagonal()
    if np.any(d <= 0):
        raise NotPositiveDefinite("nitsche: non-positive diagonal entry")
    Minv = 1.0 / d
    nb = np.linalg.norm(b)
    x = np.zeros_like(b)
    r = b.copy()
    it = 0
    while it < maxiter:
        z = Minv * r
        p = z.copy()
        rz = r @ z
        while it < maxiter:
            it += 1
            Ap = A @ p
            pAp = p @ Ap
            if pAp <= 0:
                raise NotPositiveDefinite(f"nitsche: non-positive curvature p'Ap = {pAp:.3e} in CG")
            a = rz / pAp
            x += a * p
            r -= a * Ap
            if np.linalg.norm(r) <= rtol * nb:
                break
            z = Minv * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        r = b - A @ x  # restart from the true residual
        if np.linalg.norm(r) <= rtol * nb:
            return x, it
    raise NoConvergence(maxiter, float(np.linalg.norm(b - A @ x) / nb))


BACKWARD_TOL = 64 * np.finfo(float).eps
PIVOT_FLOOR = float(np.sqrt(np.finfo(float).eps))


def _relres(A, x, b) -> float:
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(b - A @ x) / nb) if nb > 0 else float(np.linalg.norm(A @ x))


def backward_error(A, x, b) -> float:
    """Componentwise backward error ``max_i |b - A x|_i / (|A| |x| + |b|)_i``."""
    r = np.abs(b - A @ x)
    scale = abs(A) @ np.abs(x) + np.abs(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(scale > 0, r / scale, np.where(r > 0, np.inf, 0.0))
    return float(q.max()) if len(q) else 0.0


def solve_spd(A: sp.csr_matrix, b: np.ndarray, rtol: float = 1e-12, method: str = "direct", maxiter: int | None = None):
    """Solve an SPD system; returns ``(x, info)``.

    The direct path factors with symmetric pivoting only; equal row and
    column permutations plus non-negative pivots certify definiteness.
    The relative residual target ``rtol`` is not reachable in double
    precision when ``eps * || |A| |x| || / ||b||`` exceeds it (near-null
    small-cut modes); a direct solution whose componentwise backward error
    is at rounding level is then accepted with a warning. If the
    factorization had to pivot off the diagonal, CG is used instead.
    """
    n = A.shape[0]
    info = {"n": n}
    if n == 0:
        return np.zeros(0), {**info, "method": "empty", "residual": 0.0, "backward_error": 0.0}
    if not np.all(np.isfinite(b)):
        raise ValueError("nitsche: non-finite right-hand side")
    A = sp.csr_matrix(A)
    if method == "direct":
        lu = spla.splu(
            A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True}
        )
        if np.array_equal(lu.perm_r, lu.perm_c):
            piv = lu.U.diagonal()
            # small cuts produce near-null modes whose pivots may round to tiny negative values,
            # while a too-weak penalty gives negative pivots of the order of the element energy
            floor = PIVOT_FLOOR * np.abs(piv).max()
            if np.any(piv < -floor):
                raise NotPositiveDefinite(f"nitsche: pivot {piv.min():.3e} below -{floor:.1e} in the symmetric factorization")
            if np.any(piv <= 0):
                log.warning("nitsche: %d pivots within rounding of zero (small cuts)", int(np.sum(piv <= 0)))
            info["min_pivot"] = float(piv.min())
            x = lu.solve(b)
            res = _relres(A, x, b)
            for _ in range(3):  # iterative refinement, keep the best iterate
                if res <= rtol:
                    break
                y = x + lu.solve(b - A @ x)
                ry = _relres(A, y, b)
                if ry >= res:
                    break
                x, res = y, ry
            berr = backward_error(A, x, b)
            out = {**info, "method": "direct", "residual": res, "backward_error": berr, "factor": lu}
            if res <= rtol:
                return x, out
            if berr <= BACKWARD_TOL:
                log.warning(
                    "nitsche: relative residual %.2e above %.0e is at the rounding floor (backward error %.1e)",
                    res, rtol, berr,
                )
                return x, {**out, "at_rounding_floor": True}
            log.warning("nitsche: direct residual %.3e above %.1e; switching to CG", res, rtol)
        else:
            log.warning("nitsche: factorization pivoted off the diagonal; switching to CG")
    x, it = _pcg(A, b, rtol, maxiter or 20 * n)
    return x, {**info, "method": "cg", "iterations": it, "residual": _relres(A, x, b), "backward_error": backward_error(A, x, b)}


def solve(system: LinearSystem, bundle: MappingBundle, lift: np.ndarray | None = None, **kw) -> DiscreteSolution:
    """Eliminate Dirichlet unknowns (prescribed by ``lift``, default 0) and solve."""
    cs = system.space
    red = apply_dirichlet(system, cs.dirichlet, lift)
    x, info = solve_spd(red.A, red.b, **kw)
    info["reduced"] = red
    return DiscreteSolution(cs, bundle, expand(red, x), info)


def galerkin_residual(reduced: ReducedSystem, x: np.ndarray, n: int = 20, seed: int = 0) -> float:
    """Largest ``|A(u_h, v) - f(v)|`` over random test vectors, relative to ``|A||u||v| + |f||v|``."""
    rng = np.random.default_rng(seed)
    A, b = reduced.A, reduced.b
    r = A @ x - b
    normA = spla.norm(A, 1) if A.shape[0] else 0.0
    worst = 0.0
    for _ in range(n):
        v = rng.standard_normal(len(b))
        scale = normA * np.linalg.norm(x) * np.linalg.norm(v) + np.linalg.norm(b) * np.linalg.norm(v)
        worst = max(worst, abs(r @ v) / scale if scale > 0 else abs(r @ v))
    return worst


def condition_estimate(A: sp.csr_matrix, factor=None) -> float:
    """1-norm condition estimate via ``onenormest`` on ``A`` and its inverse."""
    if A.shape[0] == 0:
        return 1.0
    lu = factor if factor is not None else spla.splu(A.tocsc())
    inv = spla.LinearOperator(A.shape, matvec=lu.solve, rmatvec=lambda v: lu.solve(v, trans="T"), dtype=float)
    return float(spla.onenormest(A) * spla.onenormest(inv))
