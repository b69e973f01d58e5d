#!/usr/bin/env python3
"""
surfstokes command line
-----------------------
Mesh generation, Taylor-Hood and stream-function solves, convergence sweeps,
the vortex benchmark and DOF reporting. Every command writes STARTED and a
final status to the run log; the exit code is 0 on success, 2 for invalid
input and 3 for solver failures.
"""
import os
import sys
import json
import logging
import argparse
from typing import Dict, List, Optional

import benchmark
import complexity
import error_metrics
from config import load_config, parse_int_list
from errors import DegenerateInput, SurfStokesError, ValidationError
from forms_assembly import AssemblyContext
from levelset_geometry import biconcave, center_point, d_presets, field_from_config, frame, resolve_d
from manufactured import ManufacturedCase
from parametric_surface import build_curved
from results_store import ResultsStore, series_key, write_text_atomic
from runlog import configure_logging, log_run_event, logger
from stokes_solvers import (
    SolverOptions, divergence_residual, solve_stream_function, solve_taylor_hood, write_fields,
)
from surface_mesh import build_base_mesh, export_off, import_off, stats, validate


def _add_surface_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON options file (defaults to $SURFSTOKES_OPTIONS)")
    parser.add_argument("--shape", choices=("sphere", "biconcave"), help="surface family")
    parser.add_argument("--c", type=float, help="biconcave parameter c")
    parser.add_argument("--d", help="biconcave parameter d, a number or one of 0, d0, 0.8, 0.96")
    parser.add_argument("--radius", type=float, help="sphere radius")
    parser.add_argument("--base-level", type=int, help="icosphere level of the level-0 mesh (default 3)")
    parser.add_argument("--no-smooth", action="store_true", help="skip tangential smoothing")


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--degree", type=int, help="quadrature degree (default 2k+3)")
    parser.add_argument("--eta", type=float, help="penalty parameter (default h^-2)")
    parser.add_argument("--solver", choices=("direct", "minres"), help="linear solver")
    parser.add_argument("--tol", type=float, help="relative residual tolerance")
    parser.add_argument("--refine-steps", type=int, help="iterative refinement steps after LU")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surfstokes", description="Surface Stokes finite elements")
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    commands = parser.add_subparsers(dest="command", required=True)

    mesh = commands.add_parser("mesh", help="generate or check a surface triangulation")
    _add_surface_flags(mesh)
    mesh.add_argument("--level", type=int, default=0, help="number of red refinements")
    mesh.add_argument("--input", help="validate an existing OFF file instead of generating one")
    mesh.add_argument("--out", help="OFF file to write")

    solve = commands.add_parser("solve", help="solve the manufactured problem once")
    _add_surface_flags(solve)
    _add_solver_flags(solve)
    solve.add_argument("--formulation", choices=("th", "sf"), default="th")
    solve.add_argument("--order", type=int, default=2)
    solve.add_argument("--level", type=int, default=0)
    solve.add_argument("--mesh", help="solve on an OFF mesh instead of a generated one")
    solve.add_argument("--out", help="field dump to write")

    conv = commands.add_parser("convergence", help="error table over a grid of levels and orders")
    _add_surface_flags(conv)
    _add_solver_flags(conv)
    conv.add_argument("--formulation", help="comma separated list of th, sf")
    conv.add_argument("--order", help="orders, e.g. 2,3 or 2..3")
    conv.add_argument("--levels", help="levels, e.g. 0..3")
    conv.add_argument("--fit-points", type=int, default=3, help="points in the EOC regression")
    conv.add_argument("--resume", action="store_true", help="reuse levels already in the results store")
    conv.add_argument("--out", help="output directory")

    bench = commands.add_parser("benchmark", help="vortex distance on the biconcave surface")
    _add_solver_flags(bench)
    bench.add_argument("--d", default="all", help="0, d0, 0.8, 0.96, a number, or all")
    bench.add_argument("--c", type=float, default=0.95)
    bench.add_argument("--formulation", choices=("th", "sf"), default="sf")
    bench.add_argument("--order", type=int, default=3)
    bench.add_argument("--level", type=int, default=3)
    bench.add_argument("--base-level", type=int, default=1)
    bench.add_argument("--no-smooth", action="store_true")
    bench.add_argument("--out", help="CSV file to write")

    dofs = commands.add_parser("dofs", help="unknown counts of both formulations")
    dofs.add_argument("--method", choices=complexity.METHODS, default="sfem")
    dofs.add_argument("--formulation", choices=complexity.FORMULATIONS, default="th")
    dofs.add_argument("--n", type=int, help="surface triangles (sfem) or cut tetrahedra (tracefem)")
    dofs.add_argument("--k", type=int, help="polynomial order")
    dofs.add_argument("--exact", action="store_true", help="exact counts for a closed mesh with --faces")
    dofs.add_argument("--faces", type=int, help="triangle count for --exact")
    dofs.add_argument("--sweep", help="orders for a CSV sweep, e.g. 1..8")
    dofs.add_argument("--out", help="CSV file for --sweep")

    geometry = commands.add_parser("geometry", help="curvatures at the axis point for the d presets")
    geometry.add_argument("--c", type=float, default=0.95)
    geometry.add_argument("--out", help="CSV file to write")

    dump = commands.add_parser("config-dump", help="print or write the effective configuration")
    _add_surface_flags(dump)
    _add_solver_flags(dump)
    dump.add_argument("--out", help="JSON file to write")
    return parser


def _overrides(args) -> Dict[str, object]:
    """Flag values as configuration keys; unset flags are left out."""
    flags = {
        "surface.kind": getattr(args, "shape", None),
        "surface.c": getattr(args, "c", None),
        "surface.radius": getattr(args, "radius", None),
        "mesh.base_level": getattr(args, "base_level", None),
        "quadrature.degree": getattr(args, "degree", None),
        "penalty.eta_override": getattr(args, "eta", None),
        "solver.kind": getattr(args, "solver", None),
        "solver.tol": getattr(args, "tol", None),
        "solver.refine_steps": getattr(args, "refine_steps", None),
    }
    if getattr(args, "no_smooth", False):
        flags["mesh.smooth"] = False
    if args.command == "convergence":
        flags["run.formulations"] = args.formulation
        flags["run.orders"] = args.order
        flags["run.levels"] = args.levels
    if getattr(args, "out", None) and args.command == "convergence":
        flags["output.dir"] = args.out
    return {key: value for key, value in flags.items() if value is not None}


def _config(args):
    cfg = load_config(getattr(args, "config", None), _overrides(args))
    if getattr(args, "d", None) is not None:
        cfg.update({"surface.d": resolve_d(args.d, cfg["surface.c"])})
    return cfg


def _surface_mesh(cfg, field, level: int, path: Optional[str] = None):
    if path:
        return validate(import_off(path), field)
    return build_base_mesh(field, level, cfg["mesh.base_level"], cfg["mesh.smooth"])


def _solve(formulation: str, surface, order: int, case, cfg):
    ctx = AssemblyContext.from_config(surface, cfg)
    options = SolverOptions.from_config(cfg)
    if formulation == "th":
        return solve_taylor_hood(surface, order, case.f, ctx, options)
    return solve_stream_function(surface, order, case.f, ctx, options)


def cmd_mesh(args) -> Dict[str, object]:
    cfg = _config(args)
    field = field_from_config(cfg)
    mesh = _surface_mesh(cfg, field, args.level, args.input)
    info = stats(mesh)
    print(f"V={info.V} E={info.E} F={info.F} chi={mesh.euler_characteristic} "
          f"h_max={info.h_max:.6g} h_avg={info.h_avg:.6g} min_angle={info.min_angle:.3f}")
    if args.out:
        export_off(mesh, args.out)
        logger.info(f"Mesh written to {args.out}")
    return {"F": info.F, "V": info.V, "level": args.level}


def cmd_solve(args) -> Dict[str, object]:
    cfg = _config(args)
    field = field_from_config(cfg)
    mesh = _surface_mesh(cfg, field, args.level, args.mesh)
    surface = build_curved(mesh, field, args.order)
    case = ManufacturedCase.for_field(field)
    solution = _solve(args.formulation, surface, args.order, case, cfg)
    record = error_metrics.compute_errors(solution, case, cfg["quadrature.degree"])
    for name, diag in solution.diagnostics.items():
        print(f"{name}: residual {diag.residual:.3e} ({diag.method}, size {diag.size})")
    if args.formulation == "th":
        print(f"discrete divergence |Bu|/|u| = {divergence_residual(solution):.3e}")
    print(", ".join(f"{key}={value:.6e}" if isinstance(value, float) else f"{key}={value}"
                    for key, value in record.as_dict().items()))
    if args.out:
        write_fields(args.out, solution)
        logger.info(f"Fields written to {args.out}")
    return {"formulation": args.formulation, "k": args.order, "level": args.level, "dofs": solution.dofs}


def _series_records(store: ResultsStore, formulation: str, order: int, levels: List[int]):
    records = []
    for level in levels:
        row = store.get(formulation, order, level)
        records.append(error_metrics.ErrorRecord(**{
            key: (int(row[key]) if key in ("dofs", "elements") else float(row[key]))
            for key in error_metrics.CSV_COLUMNS
        }))
    return records


def cmd_convergence(args) -> Dict[str, object]:
    cfg = _config(args)
    field = field_from_config(cfg)
    out_dir = cfg["output.dir"]
    os.makedirs(out_dir, exist_ok=True)
    cfg.dump(os.path.join(out_dir, "config.json"))
    store = ResultsStore(os.path.join(out_dir, "results.json"))
    case = ManufacturedCase.for_field(field)
    levels = sorted(cfg["run.levels"])
    meshes = {}

    for formulation in cfg["run.formulations"]:
        for order in cfg["run.orders"]:
            done = set(store.levels(formulation, order)) if args.resume else set()
            for level in levels:
                if level in done:
                    logger.info(f"{series_key(formulation, order)} level {level}: reusing stored record")
                    continue
                if level not in meshes:
                    meshes[level] = build_base_mesh(field, level, cfg["mesh.base_level"], cfg["mesh.smooth"])
                surface = build_curved(meshes[level], field, order)
                solution = _solve(formulation, surface, order, case, cfg)
                record = error_metrics.compute_errors(solution, case, cfg["quadrature.degree"])
                store.put(formulation, order, level, record.as_dict())
                logger.info(f"{series_key(formulation, order)} level {level}: l2_u={record.l2_u:.3e} "
                            f"h1semi_u={record.h1semi_u:.3e} l2_p={record.l2_p:.3e}")

    summaries = {}
    for formulation in cfg["run.formulations"]:
        for order in cfg["run.orders"]:
            key = series_key(formulation, order)
            records = _series_records(store, formulation, order, levels)
            error_metrics.write_csv(os.path.join(out_dir, f"convergence_{formulation}_k{order}.csv"), records)
            summaries[key] = error_metrics.summary(records, args.fit_points) if len(records) > 1 else {}
            slopes = ", ".join(f"{column} {entry['slope']:.2f}" for column, entry in summaries[key].items())
            print(f"{key}: {slopes or 'single level, no orders'}")

    write_text_atomic(store.summary_path(), json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    return {"series": sorted(summaries), "levels": levels, "out": out_dir}


def cmd_benchmark(args) -> Dict[str, object]:
    cfg = load_config(None, _overrides(args))
    options = SolverOptions.from_config(cfg)
    template = benchmark.BenchmarkConfig(
        c=args.c, formulation=args.formulation, order=args.order, level=args.level,
        base_level=args.base_level, smooth=not args.no_smooth,
        degree=cfg["quadrature.degree"], eta=cfg["penalty.eta_override"],
    )
    names = list(d_presets(args.c)) if args.d == "all" else [args.d]
    for name in names:
        resolve_d(name, args.c)  # reject unknown presets before any solve
    reference = benchmark.reference_distances()
    rows = []
    for row in benchmark.run_all(template, names, options):
        name = row["preset"]
        expected = f" (reference {reference[name]})" if name in reference else ""
        print(f"d={name}: distance {row['distance']:.6f}, x<0 face {row['mirror_distance']:.6f}{expected}")
        rows.append(row)
    if args.out:
        benchmark.write_csv(args.out, rows)
    else:
        sys.stdout.write(benchmark.format_csv(rows))
    return {"d": names, "formulation": args.formulation, "k": args.order, "level": args.level}


def cmd_dofs(args) -> Dict[str, object]:
    if args.exact:
        if args.faces is None or args.k is None:
            raise DegenerateInput("--exact needs --faces and --k")
        k = int(args.k)
        th = complexity.exact_counts(args.faces, k, "th")
        sf = complexity.exact_counts(args.faces, k, "sf")
        print(f"TH {th}, SF {sf}")
        return {"faces": args.faces, "k": k, "th": th, "sf": sf}
    if args.n is None:
        raise DegenerateInput("dofs needs --n (or --exact --faces)")
    if args.sweep:
        rows = complexity.sweep(args.method, args.n, parse_int_list(args.sweep))
        lines = ["k,dofTH,dofSF,dofSFtotal"]
        lines += [f"{r['k']},{'' if r['dofTH'] is None else r['dofTH']},{r['dofSF']},{r['dofSFtotal']}" for r in rows]
        text = "\n".join(lines) + "\n"
        if args.out:
            write_text_atomic(args.out, text)
        else:
            sys.stdout.write(text)
        return {"method": args.method, "n": args.n, "rows": len(rows)}
    if args.k is None:
        raise DegenerateInput("dofs needs --k")
    count = complexity.dofs_formula(args.method, args.formulation, args.n, int(args.k))
    note = f" ({complexity.APPROXIMATE_NOTE})" if args.method == "tracefem" else ""
    print(f"{args.method} {args.formulation} n={args.n} k={args.k}: {count}{note}")
    return {"method": args.method, "formulation": args.formulation, "n": args.n, "k": args.k, "dofs": count}


def curvature_table(c: float = 0.95) -> List[dict]:
    """Gaussian and mean curvature at the axis point for each d preset."""
    rows = []
    for name, d in d_presets(c).items():
        field = biconcave(c, d)
        point = frame(field, center_point(field))
        rows.append({"d": name, "value": d, "K": point.gauss, "trH": point.mean})
    return rows


def cmd_geometry(args) -> Dict[str, object]:
    rows = curvature_table(args.c)
    lines = ["d,value,K,trH"] + [f"{r['d']},{r['value']!r},{r['K']!r},{r['trH']!r}" for r in rows]
    for r in rows:
        print(f"d={r['d']}: K={r['K']:.2f} trH={r['trH']:.2f}")
    if args.out:
        write_text_atomic(args.out, "\n".join(lines) + "\n")
    return {"c": args.c, "rows": len(rows)}


def cmd_config_dump(args) -> Dict[str, object]:
    cfg = _config(args)
    if args.out:
        cfg.dump(args.out)
    else:
        print(json.dumps(cfg.as_dict(), indent=2, sort_keys=True))
    return {"out": args.out or "-"}


COMMANDS = {
    "mesh": cmd_mesh,
    "solve": cmd_solve,
    "convergence": cmd_convergence,
    "benchmark": cmd_benchmark,
    "dofs": cmd_dofs,
    "geometry": cmd_geometry,
    "config-dump": cmd_config_dump,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(getattr(logging, args.log_level))
    log_run_event(args.command, "STARTED", " ".join(argv if argv is not None else sys.argv[1:]))
    try:
        fields = COMMANDS[args.command](args)
    except ValidationError as e:
        logger.error(f"{args.command}: {e}")
        log_run_event(args.command, "VALIDATION_FAILURE", str(e), error=type(e).__name__)
        return e.exit_code
    except SurfStokesError as e:
        logger.error(f"{args.command}: {e}")
        log_run_event(args.command, "SOLVER_FAILURE", str(e), error=type(e).__name__)
        return e.exit_code
    except Exception as e:
        logger.exception(f"{args.command}: unexpected error")
        log_run_event(args.command, "EXCEPTION", str(e), error=type(e).__name__)
        return 1
    log_run_event(args.command, "SUCCESS", **{k: v for k, v in fields.items() if k != "details"})
    return 0


if __name__ == "__main__":
    sys.exit(main())
