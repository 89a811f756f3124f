"""Command-line driver.

    python -m isocut.cli convergence --case disk --k 2 --levels 4 --out runs/k2
    python -m isocut.cli geomtest --k 3 --levels 4
    python -m isocut.cli single --k 2 --levels 3 --export-vtk --out runs/single
    python -m isocut.cli patchtest

Settings may also come from a ``key=value`` file given with ``--config``;
explicit flags take precedence over the file.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import CASES, StudyConfig, fitted_slope, geometry_study, run_convergence
from .fespace import MAX_DEGREE
from .isomap import GRAD, PROJECTED

log = logging.getLogger("isocut")

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2
PATCH_TOL = 1e-10


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    case: str = "disk"
    k: int = 2
    levels: int = 4
    ghat: str = GRAD
    lambda_scale: float = 20.0
    quad_offset: int = 0
    out: str = "out"
    export_vtk: bool = False
    export_matrix: bool = False
    export_interface: bool = False
    alpha_paper: bool = False
    threads: int = 1

    def validate(self) -> "RunConfig":
        if self.case not in CASES:
            raise ConfigError(f"cli: unknown case {self.case!r} (choose from {', '.join(CASES)})")
        if not 1 <= self.k <= MAX_DEGREE:
            raise ConfigError(f"cli: k out of range (got {self.k}, need 1..{MAX_DEGREE})")
        if self.levels < 1:
            raise ConfigError("cli: levels must be >= 1")
        if not self.lambda_scale > 0:
            raise ConfigError("cli: lambda scale must be > 0")
        if self.ghat not in (GRAD, PROJECTED):
            raise ConfigError(f"cli: unknown search direction {self.ghat!r}")
        if self.threads < 1:
            raise ConfigError("cli: threads must be >= 1")
        if self.quad_offset < 0:
            raise ConfigError("cli: quad offset must be >= 0")
        return self

    def study(self) -> StudyConfig:
        return StudyConfig(ghat=self.ghat, lambda_scale=self.lambda_scale, quad_offset=self.quad_offset, threads=self.threads)

    def make_case(self):
        if self.case == "disk":
            return CASES["disk"](alpha_paper=self.alpha_paper)
        return CASES[self.case]()

    def lines(self) -> list[str]:
        return [f"{k}={v}" for k, v in asdict(self).items()]


def _coerce(name: str, raw: str, kind):
    if kind is bool or kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cli: {name} expects a boolean, got {raw!r}")
    try:
        return {"int": int, "float": float, "str": str}.get(kind, kind)(raw.strip())
    except ValueError:
        raise ConfigError(f"cli: {name} expects {kind}, got {raw!r}") from None


def read_config(path) -> dict:
    """``key=value`` lines; ``#`` starts a comment; keys match RunConfig fields (dashes allowed)."""
    known = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cli: cannot read config {path}: {exc}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"cli: {path}:{n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"cli: {path}:{n}: unknown key {key!r}")
        out[key] = _coerce(key, val, known[key])
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; flags override it")
    common.add_argument("--case", choices=sorted(CASES), help="manufactured case (default disk)")
    common.add_argument("--k", type=int, help="polynomial degree 1..5 (default 2)")
    common.add_argument("--levels", type=int, help="number of mesh levels (default 4)")
    common.add_argument("--ghat", choices=[GRAD, PROJECTED], help="search direction variant (default grad)")
    common.add_argument("--lambda-scale", type=float, dest="lambda_scale", help="penalty lambda = scale * k^2 (default 20)")
    common.add_argument("--quad-offset", type=int, dest="quad_offset", help="extra quadrature degree on top of 2k+2 (default 0)")
    common.add_argument("--out", help="output directory, created if missing (default out)")
    common.add_argument("--export-vtk", action="store_const", const=True, dest="export_vtk", help="write mesh, interface and solution .vtk for the last level")
    common.add_argument("--export-matrix", action="store_const", const=True, dest="export_matrix", help="write the system in Matrix Market format")
    common.add_argument("--export-interface", action="store_const", const=True, dest="export_interface", help="write mapped interface points as csv")
    common.add_argument("--alpha-paper", action="store_const", const=True, dest="alpha_paper",
                        help="use alpha = (pi, 2) instead of the flux-continuous (2, pi)")
    common.add_argument("--threads", type=int, help="assembly threads (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="isocut", description="Unfitted isoparametric Nitsche FEM experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("convergence", parents=[common], help="convergence study with EOC table")
    sub.add_parser("geomtest", parents=[common], help="geometry accuracy of the mapping")
    sub.add_parser("single", parents=[common], help="one solve on the finest requested level")
    sub.add_parser("patchtest", parents=[common], help="exactness check on the square patch case")
    return p


def resolve_config(args) -> RunConfig:
    values = read_config(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values).validate()


def _header(cfg: RunConfig, command: str, notes=()) -> list[str]:
    # the output directory is left out so a rerun elsewhere gives identical files
    echo = [line for line in cfg.lines() if not line.startswith("out=")]
    return [f"# isocut {__version__} {command}"] + [f"# {line}" for line in echo] + [f"# note: {n}" for n in notes]


def _write_csv(path: Path, header: list[str], columns, rows):
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if not np.isfinite(v) else repr(float(v))
    return v


def _outdir(cfg: RunConfig) -> Path:
    d = Path(cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.txt").write_text("\n".join(cfg.lines()) + "\n")
    return d


def _exporter(cfg: RunConfig, out: Path, case, only_level=None):
    from . import export

    def on_level(level, state):
        if only_level is not None and level != only_level:
            return
        tag = "" if only_level is not None else f"_L{level}"
        if cfg.export_vtk:
            export.write_mesh_vtk(out / f"mesh{tag}.vtk", state.bundle, state.topology, subdiv=max(1, cfg.k))
            export.write_interface_vtk(out / f"interface{tag}.vtk", state.bundle, state.topology, n=4 * cfg.k)
            export.write_solution_vtk(out / f"solution{tag}.vtk", state.solution, case, subdiv=max(2, cfg.k))
        if cfg.export_interface:
            export.write_interface_csv(out / f"interface{tag}.csv", state.bundle, state.topology, case.levelset)
        if cfg.export_matrix:
            export.write_matrix_market(out, state.system, state.solution.info.get("reduced"), prefix=f"system{tag}")

    return on_level if (cfg.export_vtk or cfg.export_matrix or cfg.export_interface) else None


def cmd_convergence(cfg: RunConfig) -> int:
    case = cfg.make_case()
    out = _outdir(cfg)
    report = run_convergence(case, cfg.k, cfg.levels, cfg.study(), _exporter(cfg, out, case))
    recs = report.records()
    notes = list(report.notes) + ([f"incomplete: {report.error}"] if not report.complete else [])
    _write_csv(out / "report.csv", _header(cfg, "convergence", notes), report.COLUMNS,
               [[r[c] for c in report.COLUMNS] for r in recs])
    print(report.table())
    for n in report.notes:
        print(f"note: {n}")
    return EXIT_OK if report.complete else EXIT_FAILED


GEOM_COLUMNS = ("level", "h", "geom_if", "geom_bnd", "det_min", "det_max", "max_displacement")


def cmd_geomtest(cfg: RunConfig) -> int:
    case = cfg.make_case()
    out = _outdir(cfg)
    try:
        rows = geometry_study(case, cfg.k, cfg.levels, cfg.ghat, cfg.quad_offset)
    except Exception as exc:
        log.error("cli: geometry study failed: %s", exc)
        return EXIT_FAILED
    recs = [[getattr(r, c) for c in GEOM_COLUMNS] for r in rows]
    notes = []
    if len(rows) >= 2:
        h = [r.h for r in rows]
        for name in ("geom_if", "geom_bnd"):
            vals = [getattr(r, name) for r in rows]
            slope = fitted_slope(h, vals) if all(v > 0 for v in vals) else float("nan")
            notes.append(f"slope_{name}={slope:.4f}")
    _write_csv(out / "geometry.csv", _header(cfg, "geomtest", notes), GEOM_COLUMNS, recs)
    print(",".join(GEOM_COLUMNS))
    for r in recs:
        print(",".join(str(_fmt(v)) for v in r))
    for n in notes:
        print(n)
    return EXIT_OK


def cmd_single(cfg: RunConfig) -> int:
    case = cfg.make_case()
    out = _outdir(cfg)
    level = cfg.levels - 1
    report = run_convergence(case, cfg.k, cfg.levels, cfg.study(), _exporter(cfg, out, case, only_level=level))
    if not report.complete:
        log.error("cli: %s", report.error)
        return EXIT_FAILED
    r = report.rows[-1]
    cols = ("level", "h", "ndof", "l2", "h1", "jump", "geom_if", "geom_bnd", "det_min", "solver", "residual")
    _write_csv(out / "single.csv", _header(cfg, "single", report.notes), cols, [[getattr(r, c) for c in cols]])
    print(f"level {r.level}: h={r.h:.4f} ndof={r.ndof} l2={r.l2:.6e} h1={r.h1:.6e} jump={r.jump:.3e}")
    return EXIT_OK


def cmd_patchtest(cfg: RunConfig, ks=None) -> int:
    from .analysis import register_square_patch_case

    case = register_square_patch_case()
    ks = ks or (1, 2, 3)
    levels = 2 if cfg.levels is None else cfg.levels
    failed = False
    out = _outdir(cfg)
    rows = []
    for k in ks:
        report = run_convergence(case, k, levels, cfg.study())
        errs = report.column("l2")
        ok = report.complete and len(errs) == levels and max(errs) <= PATCH_TOL
        failed |= not ok
        worst = max(errs) if errs else float("nan")
        print(f"{'PASS' if ok else 'FAIL'} patch k={k} levels={levels} max L2 error {worst:.3e} (tol {PATCH_TOL:g})")
        rows.append([k, levels, worst, "PASS" if ok else "FAIL"])
    _write_csv(out / "patchtest.csv", _header(cfg, "patchtest"), ("k", "levels", "max_l2", "status"), rows)
    return EXIT_FAILED if failed else EXIT_OK


COMMANDS = {"convergence": cmd_convergence, "geomtest": cmd_geomtest, "single": cmd_single}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "patchtest":
        # the patch case defines its own geometry; --k narrows the degrees checked
        ks = (args.k,) if args.k is not None else None
        if args.levels is None:
            cfg.levels = 2
        return cmd_patchtest(cfg, ks)
    try:
        return COMMANDS[args.command](cfg)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
