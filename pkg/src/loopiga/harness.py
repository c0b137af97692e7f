"""Experiment harness: mesh generators, error norms, experimental order
of convergence, the reference-solution protocol, and file output.

A convergence study refines a control mesh by Loop subdivision, solves
the chosen problem per level, and measures errors against a reference
solution computed one level deeper with high-order adaptive quadrature.
Coefficients are compared on the reference mesh via the exact
nested-space prolongation, so no cross-parameterization interpolation
is involved.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__ as _pkg_version
from .assembly import (
    assemble,
    assemble_midedge,
    assemble_rhs,
)
from .basis import limit_surface_points, limit_values
from .errors import (
    DegenerateErrors,
    InvalidResolution,
    LevelMismatch,
    MeshMismatch,
)
from .quadrature import adaptive_rule, gauss_rule, parse_rule_spec, rules_for
from .solve import ConstrainedSystem, eigen_solve, solve_zero_mean
from .topology import ControlMesh, build_mesh, has_adjacent_EVs, loop_subdivide, mesh_size_h

#: Gaussian exactness per problem: degree 6 keeps the full order for the
#: second-order problem, degree 4 for the fourth-order problem.
PROBLEM_DEGREE = {"laplace": 6, "bilaplace": 4, "eigen": 6}
#: adaptive depth of the reference rule per problem
REFERENCE_AG_LEVELS = {"laplace": 3, "bilaplace": 6}


# ------------------------------------------------------------ generators

def generate_torus(n: int, m: int, R: float = 2.0, r: float = 1.0) -> ControlMesh:
    """Regular torus control grid: n x m points on the standard torus
    lattice, quads split with consistent diagonals; no EVs."""
    if n < 3 or m < 3:
        raise InvalidResolution(f"torus grid needs n, m >= 3, got {n}x{m}")
    th = 2.0 * np.pi * np.arange(n) / n
    ph = 2.0 * np.pi * np.arange(m) / m
    pts = np.empty((n * m, 3))
    for i, t in enumerate(th):
        rho = R + r * np.cos(ph)
        pts[i * m:(i + 1) * m, 0] = rho * np.cos(t)
        pts[i * m:(i + 1) * m, 1] = rho * np.sin(t)
        pts[i * m:(i + 1) * m, 2] = r * np.sin(ph)

    def vid(i, j):
        return (i % n) * m + (j % m)

    cells = []
    for i in range(n):
        for j in range(m):
            cells.append([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)])
            cells.append([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)])
    return build_mesh(cells, pts)


def generate_spherical_3_4() -> ControlMesh:
    """Triangular bipyramid on the unit sphere: EVs of valence 3 (two
    apexes) and 4 (three equatorial vertices).  Must be subdivided once
    before simulation (adjacent EVs)."""
    pts = [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]
    for kk in range(3):
        a = 2.0 * np.pi * kk / 3.0
        pts.append([np.cos(a), np.sin(a), 0.0])
    e = [2, 3, 4]
    cells = []
    for kk in range(3):
        cells.append([0, e[kk], e[(kk + 1) % 3]])
        cells.append([1, e[(kk + 1) % 3], e[kk]])
    return build_mesh(cells, pts)


def generate_spherical_5_12() -> ControlMesh:
    """Gyroelongated 12-gonal bipyramid on the unit sphere: two apexes
    of valence 12 and two 12-rings (offset by pi/12) of valence-5
    vertices; 26 vertices, 48 cells."""
    z0 = 0.5
    rho = math.sqrt(1.0 - z0 * z0)
    pts = [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]
    for kk in range(12):
        a = 2.0 * np.pi * kk / 12.0
        pts.append([rho * np.cos(a), rho * np.sin(a), z0])
    for kk in range(12):
        a = 2.0 * np.pi * kk / 12.0 + np.pi / 12.0
        pts.append([rho * np.cos(a), rho * np.sin(a), -z0])
    top = [2 + kk for kk in range(12)]
    bot = [14 + kk for kk in range(12)]
    cells = []
    for kk in range(12):
        k1 = (kk + 1) % 12
        cells.append([0, top[kk], top[k1]])                 # top fan
        cells.append([1, bot[k1], bot[kk]])                 # bottom fan
        cells.append([top[kk], bot[kk], top[k1]])           # band
        cells.append([bot[kk], bot[k1], top[k1]])
    return build_mesh(cells, pts)


GENERATORS = {
    "torus": generate_torus,
    "spherical-3-4": generate_spherical_3_4,
    "spherical-5-12": generate_spherical_5_12,
}


# ------------------------------------------------------------ rhs fields

def rhs_field(name: str):
    """Named analytic right-hand sides used by the experiments."""
    if name == "torus":
        def f(y):
            return np.sin(np.pi * y[..., 0]) * np.sin(np.pi * y[..., 1]) \
                * np.sin(np.pi * y[..., 2])
        return f
    if name == "sphere":
        def f(y):
            return np.sin(3 * np.pi * y[..., 0]) * np.sin(3 * np.pi * y[..., 1]) \
                * np.sin(3 * np.pi * y[..., 2])
        return f
    raise KeyError(f"unknown rhs field {name!r}")


def default_rhs_name(geometry: str) -> str:
    return "torus" if geometry == "torus" else "sphere"


# ----------------------------------------------------------- prolongation

def prolong(coeffs: np.ndarray, chain) -> np.ndarray:
    """Push coefficients through a subdivision chain.

    ``chain`` is the list of meshes as produced by repeated
    :func:`loop_subdivide`, coarsest first; ``coeffs`` lives on
    ``chain[0]`` and the result represents the identical limit function
    on ``chain[-1]``.
    """
    out = np.asarray(coeffs, dtype=float)
    if out.shape[0] != chain[0].n_vertices:
        raise LevelMismatch(
            f"coefficients ({out.shape[0]}) do not match mesh "
            f"({chain[0].n_vertices} vertices)")
    for mesh in chain[1:]:
        if mesh.prolongation is None or mesh.prolongation.shape[1] != out.shape[0]:
            raise LevelMismatch("mesh chain was not produced by loop_subdivide")
        out = mesh.prolongation @ out
    return out


# ------------------------------------------------------------ error norms

def _norm_matrices(mesh):
    reg = gauss_rule(6)
    ev = adaptive_rule(6, 3)
    mass = assemble(mesh, "mass", (reg, ev))
    lap = assemble(mesh, "laplace", (reg, ev))
    bil = assemble(mesh, "bilaplace", (reg, ev))
    return mass, lap, bil


def error_norms(u_coarse, u_reference, reference_mesh, chain=None,
                matrices=None):
    """(L2, H1-semi, H2-semi) norms of the difference on the reference
    mesh.

    ``u_coarse`` is prolonged through ``chain`` (coarse mesh to the
    reference mesh) if given, else must already live on the reference
    mesh.  The comparison is taken in the zero-mean quotient: the
    M-weighted mean of the difference is removed first.
    """
    e = np.asarray(u_coarse, dtype=float)
    if chain is not None:
        e = prolong(e, chain)
    if e.shape[0] != reference_mesh.n_vertices \
            or u_reference.shape[0] != reference_mesh.n_vertices:
        raise MeshMismatch("fields do not live on the reference mesh")
    e = e - u_reference
    mass, lap, bil = matrices if matrices is not None else _norm_matrices(reference_mesh)
    mvec = np.asarray(mass @ np.ones(reference_mesh.n_vertices)).ravel()
    e = e - mvec @ e / mvec.sum()
    return (float(np.sqrt(max(e @ (mass @ e), 0.0))),
            float(np.sqrt(max(e @ (lap @ e), 0.0))),
            float(np.sqrt(max(e @ (bil @ e), 0.0))))


def eoc(errors, h) -> np.ndarray:
    """Experimental orders of convergence for successive level pairs:
    rate_k = log(e_k / e_{k+1}) / log(h_k / h_{k+1})."""
    errors = np.asarray(errors, dtype=float)
    h = np.asarray(h, dtype=float)
    if errors.shape[0] != h.shape[0] or errors.shape[0] < 2:
        raise DegenerateErrors("need matching errors/h with >= 2 levels")
    if np.any(errors <= 0.0):
        raise DegenerateErrors("errors must be positive")
    if np.any(np.diff(h) >= 0.0):
        raise DegenerateErrors("mesh sizes must decrease strictly")
    return np.log(errors[:-1] / errors[1:]) / np.log(h[:-1] / h[1:])


# ------------------------------------------------------------ the study

@dataclass
class StudyConfig:
    """Configuration of one convergence study."""

    geometry: str = "torus"
    problem: str = "laplace"
    quadrature: str = "ga"
    levels: tuple = (0, 1, 2, 3)
    reference_extra_levels: int = 1
    torus_n: int = 8
    torus_m: int = 8
    torus_R: float = 2.0
    torus_r: float = 1.0
    obj_path: str | None = None
    out_dir: str | None = None
    write_vtk: bool = False
    solver_tol: float = 1e-10

    def __post_init__(self):
        lv = tuple(int(x) for x in self.levels)
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError("levels must be strictly increasing")
        object.__setattr__(self, "levels", lv)
        if self.problem not in ("laplace", "bilaplace"):
            raise ValueError(f"unknown problem {self.problem!r}")
        parse_rule_spec(self.quadrature)
        if self.reference_extra_levels < 1:
            raise ValueError("reference level must exceed the finest study level")

    def to_dict(self):
        return {
            "geometry": self.geometry, "problem": self.problem,
            "quadrature": self.quadrature, "levels": list(self.levels),
            "reference_extra_levels": self.reference_extra_levels,
            "torus_n": self.torus_n, "torus_m": self.torus_m,
            "torus_R": self.torus_R, "torus_r": self.torus_r,
            "obj_path": self.obj_path, "solver_tol": self.solver_tol,
        }


@dataclass
class ErrorReport:
    """Per-level mesh sizes and errors plus per-pair convergence rates."""

    levels: list
    h: list
    errors: list                    # rows (L2, H1semi, H2semi)
    rates: np.ndarray = field(default=None)  # (pairs, 3)

    def finalize(self):
        err = np.asarray(self.errors)
        self.rates = np.stack([eoc(err[:, j], self.h) for j in range(3)], axis=1)
        return self

    def to_csv(self) -> str:
        lines = ["level,h,err_l2,err_h1semi,err_h2semi"]
        for lv, h, e in zip(self.levels, self.h, self.errors):
            lines.append(f"{lv},{h:.17g},{e[0]:.17g},{e[1]:.17g},{e[2]:.17g}")
        for i, r in enumerate(self.rates):
            lines.append(f"eoc:{self.levels[i]}-{self.levels[i+1]},,"
                         f"{r[0]:.17g},{r[1]:.17g},{r[2]:.17g}")
        return "\n".join(lines) + "\n"


def base_mesh_for(config: StudyConfig) -> ControlMesh:
    if config.geometry == "file":
        from .topology import read_obj

        return read_obj(config.obj_path)
    if config.geometry == "torus":
        return generate_torus(config.torus_n, config.torus_m,
                              config.torus_R, config.torus_r)
    return GENERATORS[config.geometry]()


def simulation_mesh(mesh: ControlMesh, auto_subdivide: bool = True) -> ControlMesh:
    """Entry gate: refuse meshes with adjacent EVs (the lookup tables
    and patch collection need isolated EVs); optionally subdivide once
    to separate them."""
    if has_adjacent_EVs(mesh):
        if not auto_subdivide:
            from .errors import MeshError

            raise MeshError("mesh has adjacent extraordinary vertices; "
                            "subdivide once before simulation")
        mesh = loop_subdivide(mesh)
        if has_adjacent_EVs(mesh):
            raise AssertionError("one subdivision must isolate EVs")
    return mesh


def study_rules(problem: str, quadrature: str):
    return rules_for(quadrature, PROBLEM_DEGREE[problem])


def reference_rules(problem: str):
    p = PROBLEM_DEGREE[problem]
    return gauss_rule(p), adaptive_rule(p, REFERENCE_AG_LEVELS[problem])


def solve_problem(mesh, problem, quadrature, f, tol=1e-10, x0=None):
    """Assemble and solve one level; returns the coefficient vector."""
    kind = "laplace" if problem == "laplace" else "bilaplace"
    reg, ev, rkind = study_rules(problem, quadrature)
    if rkind == "me":
        s = assemble_midedge(mesh, kind)
        b = assemble_midedge(mesh, "rhs", f=f)
        mvec = assemble_midedge(mesh, "rhs", f=lambda y: np.ones(y.shape[0]))
    else:
        s = assemble(mesh, kind, (reg, ev))
        b = assemble_rhs(mesh, (reg, ev), f)
        mvec = assemble_rhs(mesh, (reg, ev), lambda y: np.ones(y.shape[0]))
    return solve_zero_mean(ConstrainedSystem(S=s, B=b, m=mvec), tol=tol,
                           jacobi=True, x0=x0)


def run_rule_comparison(config: StudyConfig, quadratures, progress=None):
    """Run the study protocol for several quadrature rules against one
    shared reference solution; returns {rule spec: ErrorReport}.

    Solves coarse-to-fine with nested-space warm starts; the reference
    solve is warm-started from the prolonged finest study solution.
    """
    base = simulation_mesh(base_mesh_for(config))
    f = rhs_field(default_rhs_name(config.geometry))
    top = max(config.levels) + config.reference_extra_levels
    chain = [base]
    while len(chain) <= top:
        chain.append(loop_subdivide(chain[-1]))

    kind = "laplace" if config.problem == "laplace" else "bilaplace"
    solutions = {}
    warm_top = None
    for q in quadratures:
        us = {}
        prev = None
        for lv in config.levels:
            x0 = None
            if prev is not None:
                x0 = prolong(us[prev], chain[prev:lv + 1])
            us[lv] = solve_problem(chain[lv], config.problem, q, f,
                                   tol=config.solver_tol, x0=x0)
            prev = lv
            if progress:
                progress(f"[{q}] level {lv}: |I_v|={chain[lv].n_vertices}")
        solutions[q] = us
        if warm_top is None:
            warm_top = prolong(us[prev], chain[prev:top + 1])

    ref_mesh = chain[top]
    ref_rules = reference_rules(config.problem)
    s_ref = assemble(ref_mesh, kind, ref_rules)
    b_ref = assemble_rhs(ref_mesh, ref_rules, f)
    m_ref = assemble_rhs(ref_mesh, ref_rules, lambda y: np.ones(y.shape[0]))
    u_ref = solve_zero_mean(ConstrainedSystem(S=s_ref, B=b_ref, m=m_ref),
                            tol=config.solver_tol, jacobi=True, x0=warm_top)
    del s_ref, b_ref, m_ref
    if progress:
        progress(f"reference solved on {ref_mesh.n_vertices} vertices")
    norm_mats = _norm_matrices(ref_mesh)

    reports = {}
    for q in quadratures:
        report = ErrorReport(levels=list(config.levels), h=[], errors=[])
        for lv in config.levels:
            e = error_norms(solutions[q][lv], u_ref, ref_mesh,
                            chain=chain[lv:top + 1], matrices=norm_mats)
            report.h.append(mesh_size_h(chain[lv]))
            report.errors.append(e)
        reports[q] = report.finalize()
    return reports


def run_study(config: StudyConfig, progress=None) -> ErrorReport:
    """Execute the full protocol: generate, gate, refine, solve per
    level, reference solve, norms, rates; write CSV/manifest (and VTK)
    when ``config.out_dir`` is set."""
    t_start = time.perf_counter()
    report = run_rule_comparison(config, [config.quadrature],
                                 progress=progress)[config.quadrature]

    if config.out_dir:
        os.makedirs(config.out_dir, exist_ok=True)
        csv_path = os.path.join(config.out_dir, "report.csv")
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
        manifest = {
            "package_version": _pkg_version,
            "config": config.to_dict(),
            "csv_sha256": hashlib.sha256(
                report.to_csv().encode("utf-8")).hexdigest(),
            "elapsed_seconds": round(time.perf_counter() - t_start, 3),
        }
        with open(os.path.join(config.out_dir, "manifest.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        if config.write_vtk:
            base = simulation_mesh(base_mesh_for(config))
            f = rhs_field(default_rhs_name(config.geometry))
            chain = [base]
            for _ in range(max(config.levels)):
                chain.append(loop_subdivide(chain[-1]))
            for lv in config.levels:
                u = solve_problem(chain[lv], config.problem,
                                  config.quadrature, f, tol=config.solver_tol)
                path = os.path.join(config.out_dir, f"field_level{lv}.vtk")
                write_solution_vtk(path, chain[lv], u, name="u")
    return report


# ------------------------------------------------------------- vtk output

def write_vtk(path, points, cells, point_scalars) -> None:
    """Legacy ASCII VTK PolyData with POINT_DATA scalar fields."""
    points = np.asarray(points, dtype=float)
    cells = np.asarray(cells, dtype=int)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("loopiga field\nASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {points.shape[0]} double\n")
        for p in points:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        fh.write(f"POLYGONS {cells.shape[0]} {4 * cells.shape[0]}\n")
        for c in cells:
            fh.write(f"3 {c[0]} {c[1]} {c[2]}\n")
        fh.write(f"POINT_DATA {points.shape[0]}\n")
        for name, values in point_scalars.items():
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in np.asarray(values, dtype=float):
                fh.write(f"{v:.17g}\n")


def write_solution_vtk(path, mesh, coeffs, name="u", view_levels=1) -> None:
    """Visualization output: subdivide ``view_levels`` times, place the
    vertices at their limit positions and store the limit values of the
    coefficient field."""
    view = mesh
    vals = np.asarray(coeffs, dtype=float)
    for _ in range(view_levels):
        view_next = loop_subdivide(view)
        vals = view_next.prolongation @ vals
        view = view_next
    write_vtk(path, limit_surface_points(view), view.cells,
              {name: limit_values(view, vals)})
