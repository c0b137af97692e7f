"""Command-line interface.

Subcommands: generate-mesh, subdivide, solve, eigen, convergence-study.
Exit codes: 0 success, 2 validation errors, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .errors import LoopIgaError, NoConvergence
from .harness import (
    StudyConfig,
    default_rhs_name,
    rhs_field,
    run_study,
    simulation_mesh,
    solve_problem,
    write_solution_vtk,
)
from .solve import SolverTelemetry, eigen_solve
from .topology import SubdivisionConfig, read_obj, subdivide, write_obj

_SHAPES = {"torus": "torus", "sph34": "spherical-3-4", "sph512": "spherical-5-12"}


def _cmd_generate_mesh(args):
    from .harness import generate_spherical_3_4, generate_spherical_5_12, generate_torus

    if args.shape == "torus":
        mesh = generate_torus(args.torus_n, args.torus_m, args.torus_R, args.torus_r)
    elif args.shape == "sph34":
        mesh = generate_spherical_3_4()
    else:
        mesh = generate_spherical_5_12()
    write_obj(mesh, args.out)
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_cells} cells")
    return 0


def _cmd_subdivide(args):
    mesh = read_obj(getattr(args, "in"))
    mesh = subdivide(mesh, SubdivisionConfig(levels=args.levels))
    write_obj(mesh, args.out)
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_cells} cells")
    return 0


def _cmd_solve(args):
    mesh = simulation_mesh(read_obj(getattr(args, "in")),
                           auto_subdivide=not args.no_auto_subdivide)
    f = rhs_field(args.rhs)
    u = solve_problem(mesh, args.problem, args.quadrature, f, tol=args.tol)
    write_solution_vtk(args.out, mesh, u, name="u", view_levels=args.view_levels)
    lo, hi = float(u.min()), float(u.max())
    print(f"wrote {args.out}; coefficient range [{lo:.6g}, {hi:.6g}]")
    return 0


def _cmd_eigen(args):
    from .assembly import assemble
    from .quadrature import adaptive_rule, gauss_rule

    mesh = simulation_mesh(read_obj(getattr(args, "in")),
                           auto_subdivide=not args.no_auto_subdivide)
    rules = (gauss_rule(6), adaptive_rule(6, 3))
    s = assemble(mesh, "laplace", rules)
    m = assemble(mesh, "mass", rules)
    result = eigen_solve(s, m, k=args.count)
    from .basis import limit_surface_points, limit_values

    fields = {f"mode_{i:02d}": limit_values(mesh, result.eigenvectors[:, i])
              for i in range(args.count)}
    from .harness import write_vtk

    write_vtk(args.out, limit_surface_points(mesh), mesh.cells, fields)
    print("eigenvalues:", " ".join(f"{v:.8g}" for v in result.eigenvalues))
    print(f"wrote {args.out}")
    return 0


def _parse_config_file(path):
    opts = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            opts[key.strip()] = value.strip()
    return opts


def _cmd_convergence_study(args):
    opts = _parse_config_file(args.config)
    kwargs = {}
    if "geometry" in opts:
        kwargs["geometry"] = opts["geometry"]
    if "problem" in opts:
        kwargs["problem"] = opts["problem"]
    if "quadrature" in opts:
        kwargs["quadrature"] = opts["quadrature"]
    if "levels" in opts:
        kwargs["levels"] = tuple(int(x) for x in opts["levels"].split(","))
    for key in ("torus_n", "torus_m", "reference_extra_levels"):
        if key in opts:
            kwargs[key] = int(opts[key])
    for key in ("torus_R", "torus_r", "solver_tol"):
        if key in opts:
            kwargs[key] = float(opts[key])
    if "obj_path" in opts:
        kwargs["obj_path"] = opts["obj_path"]
    if "write_vtk" in opts:
        kwargs["write_vtk"] = opts["write_vtk"].lower() in ("1", "true", "yes")
    import os

    kwargs["out_dir"] = os.path.dirname(os.path.abspath(args.out)) or "."
    config = StudyConfig(**kwargs)
    report = run_study(config, progress=lambda s: print(s, flush=True))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loopiga",
                                description="surface PDE solver on Loop "
                                            "subdivision surfaces")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-mesh", help="write a built-in control mesh")
    g.add_argument("--shape", choices=sorted(_SHAPES), required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--torus-n", type=int, default=8, dest="torus_n")
    g.add_argument("--torus-m", type=int, default=8, dest="torus_m")
    g.add_argument("--torus-R", type=float, default=2.0, dest="torus_R")
    g.add_argument("--torus-r", type=float, default=1.0, dest="torus_r")
    g.set_defaults(func=_cmd_generate_mesh)

    s = sub.add_parser("subdivide", help="Loop-refine an OBJ mesh")
    s.add_argument("--in", required=True)
    s.add_argument("--levels", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_subdivide)

    so = sub.add_parser("solve", help="solve a surface PDE")
    so.add_argument("--in", required=True)
    so.add_argument("--problem", choices=["laplace", "bilaplace"], required=True)
    so.add_argument("--quadrature", default="ga")
    so.add_argument("--rhs", choices=["torus", "sphere"], default="sphere")
    so.add_argument("--out", required=True)
    so.add_argument("--tol", type=float, default=1e-10)
    so.add_argument("--view-levels", type=int, default=1)
    so.add_argument("--no-auto-subdivide", action="store_true")
    so.set_defaults(func=_cmd_solve)

    e = sub.add_parser("eigen", help="smallest nonzero eigenmodes")
    e.add_argument("--in", required=True)
    e.add_argument("--count", type=int, default=8)
    e.add_argument("--out", required=True)
    e.add_argument("--no-auto-subdivide", action="store_true")
    e.set_defaults(func=_cmd_eigen)

    c = sub.add_parser("convergence-study", help="run a study from a config file")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=_cmd_convergence_study)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NoConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (LoopIgaError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
