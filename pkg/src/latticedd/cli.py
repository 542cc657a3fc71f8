"""Command line interface and case runner.

    latticedd solve --config case.json [--mode direct|fetidp|rom-ifetidp]
                    [--tol-rb X] [--report out.json] [--export-field out.vtk]
    latticedd solve --case curved-beam --cells 8 4
    latticedd bench --suite 2d|3d --out DIR
    latticedd cases
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .assembly import Material
from .config import SCHEMA_VERSION, bundled_case, bundled_cases, load_config, validate_config
from .decomposition import DirichletBC
from .errors import LatticeDDError
from .export import export_field
from .fetidp import SolveReport, solve_fetidp
from .geometry import build_macro_model, build_reference_cell
from .ifetidp import SolverOptions, solve_ifetidp
from .problem import DDProblem, NeumannBC, build_problem

log = logging.getLogger("latticedd")

REPORT_VERSION = 1


class PhaseError(LatticeDDError):
    def __init__(self, phase, err):
        super().__init__(f"[{phase}] {type(err).__name__}: {err}")
        self.phase = phase
        self.__cause__ = err


def _macro_spec(cfg: dict) -> dict:
    macro = dict(cfg["macro"])
    if macro["kind"] == "affine-box" and "cell_size" in macro:
        macro["lengths"] = [h * n for h, n in zip(macro.pop("cell_size"), cfg["cells"])]
    return macro


def problem_from_config(cfg: dict) -> DDProblem:
    """Geometry, assembly and decomposition for a validated config."""
    c = cfg["cell"]
    try:
        rc = build_reference_cell(c["pattern"], c["degree"], c["refinement"], c["strut_thickness"])
        mm = build_macro_model(_macro_spec(cfg), cfg["cells"])
    except Exception as e:
        raise PhaseError("geometry", e) from e
    d = rc.dim
    mat = Material(E=cfg["material"]["E"], nu=cfg["material"]["nu"], dim=d)
    dirichlet = [DirichletBC(face=b["face"], value=tuple(b.get("value", [0.0] * d)),
                             gradient=None if b.get("gradient") is None
                             else tuple(map(tuple, b["gradient"])),
                             components=None if b.get("components") is None
                             else tuple(b["components"]))
                 for b in cfg["bcs"]["dirichlet"]]
    neumann = [NeumannBC(face=b["face"], traction=tuple(b["traction"])) for b in cfg["bcs"]["neumann"]]
    try:
        return build_problem(rc, mm, mat, dirichlet, neumann, body=cfg["bcs"]["body_force"],
                             fit_degree=cfg["solver"]["fit_degree"])
    except Exception as e:
        raise PhaseError("assembly", e) from e


def solve_problem(prob: DDProblem, mode: str, solver_cfg: dict):
    """Run one solver; returns (cell displacements, multipliers or None, report)."""
    if mode == "direct":
        t0 = time.perf_counter()
        u_cells, _ = prob.direct_solve()
        rep = SolveReport(mode="direct", n_cells=prob.n_cells, n_dof=prob.dp.n_U,
                          n_multipliers=prob.jo.L, n_primal=prob.dp.n_P, converged=True,
                          factorizations=1)
        rep.wall_times = dict(prob.timings, iterate=time.perf_counter() - t0)
        return u_cells, None, rep
    if mode == "fetidp":
        u_cells, lam, rep, _ = solve_fetidp(prob, tol_cg=solver_cfg["tol_cg"])
        return u_cells, lam, rep
    if mode == "rom-ifetidp":
        opts = SolverOptions(tol_gmres=solver_cfg["tol_gmres"], tol_cg=solver_cfg["tol_cg"],
                             tol_rb=solver_cfg["tol_rb"], max_outer=solver_cfg["max_outer"],
                             max_inner=solver_cfg["max_inner"])
        u_cells, lam, rep, _ = solve_ifetidp(prob, opts)
        return u_cells, lam, rep
    raise ValueError(f"unknown mode {mode!r}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def run_case(cfg: dict, mode: str | None = None, tol_rb: float | None = None,
             report_path=None, field_path=None, return_solution: bool = False):
    """Execute a case end to end and build the report dictionary."""
    cfg = validate_config(cfg)
    if mode is not None:
        cfg["solver"]["mode"] = mode
    if tol_rb is not None:
        cfg["solver"]["tol_rb"] = tol_rb
    if report_path is not None:
        cfg["output"]["report"] = str(report_path)
    if field_path is not None:
        cfg["output"]["field"] = str(field_path)
    mode = cfg["solver"]["mode"]

    prob = problem_from_config(cfg)
    try:
        u_cells, lam, rep = solve_problem(prob, mode, cfg["solver"])
    except LatticeDDError as e:
        raise PhaseError("solve", e) from e
    u = prob.to_global(u_cells)
    report = {
        "report_version": REPORT_VERSION,
        "schema_version": SCHEMA_VERSION,
        "config": cfg,
        "mode": mode,
        "summary": {
            "cells": int(prob.n_cells),
            "dof": int(prob.dp.n_U),
            "global_dof": int(u.size),
            "multipliers": int(prob.jo.L),
            "primal": int(prob.dp.n_P),
            "factorizations": int(rep.factorizations),
            "coarse_factorizations": int(rep.coarse_factorizations),
            "outer_iterations": int(rep.outer_iterations),
            "inner_iterations_total": int(rep.inner_iterations_total),
            "n_rb": rep.n_rb,
        },
        "solver_report": rep.as_dict(),
        "solution": {"u_l2": float(np.linalg.norm(u)), "u_max": float(np.abs(u).max(initial=0.0))},
        "tolerances": {k: cfg["solver"][k] for k in ("tol_gmres", "tol_cg", "tol_rb")},
    }
    report = _jsonable(report)
    if cfg["output"]["report"]:
        Path(cfg["output"]["report"]).write_text(json.dumps(report, indent=2) + "\n")
    if cfg["output"]["field"]:
        export_field(cfg["output"]["field"], prob.rc, prob.mm, prob.mat, u_cells)
    if return_solution:
        return report, prob, u_cells
    return report


BENCH_SUITES = {
    "2d": [(name, cells) for name in ("rectangle", "curved-beam", "swept-patch")
           for cells in ((4, 2), (8, 4), (16, 8))],
    "3d": [("beam3d", (2, 2, 2)), ("beam3d", (4, 2, 2)), ("curved-beam3d", (4, 2, 1))],
}

SUMMARY_COLUMNS = ["case", "#cells", "#DOF", "mode", "factorizations", "Glo. It.",
                   "Loc. It. total", "setup time", "iterate time"]


def run_bench(suite: str, out_dir, modes=("fetidp", "rom-ifetidp")) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, cells in BENCH_SUITES[suite]:
        for mode in modes:
            cfg = bundled_case(name, cells=cells)
            tag = f"{name}-{'x'.join(map(str, cells))}-{mode}"
            rep = run_case(cfg, mode=mode, report_path=out / f"{tag}.json")
            wt = rep["solver_report"]["wall_times"]
            setup = sum(v for k, v in wt.items() if k not in ("iterate", "recover"))
            rows.append([name, rep["summary"]["cells"], rep["summary"]["dof"], mode,
                         rep["summary"]["factorizations"],
                         rep["summary"]["outer_iterations"] if mode == "rom-ifetidp" else "-",
                         rep["summary"]["inner_iterations_total"],
                         f"{setup:.2f}", f"{wt.get('iterate', 0.0):.2f}"])
            log.info("%s done", tag)
    lines = ["\t".join(SUMMARY_COLUMNS)] + ["\t".join(map(str, r)) for r in rows]
    (out / "summary.tsv").write_text("\n".join(lines) + "\n")
    return rows


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latticedd", description="Domain decomposition solvers "
                                "for linear-elastic lattice structures.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one case")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="JSON case file")
    src.add_argument("--case", help="bundled case name")
    s.add_argument("--cells", type=int, nargs="+", help="override the cell grid")
    s.add_argument("--mode", choices=["direct", "fetidp", "rom-ifetidp"])
    s.add_argument("--tol-rb", type=float)
    s.add_argument("--report", help="write the JSON report here")
    s.add_argument("--export-field", help="write a legacy VTK field file here")

    b = sub.add_parser("bench", help="run a scalability sweep")
    b.add_argument("--suite", choices=sorted(BENCH_SUITES), required=True)
    b.add_argument("--out", required=True)

    sub.add_parser("cases", help="list bundled cases")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "cases":
            print("\n".join(bundled_cases()))
            return 0
        if args.command == "bench":
            rows = run_bench(args.suite, args.out)
            print("\t".join(SUMMARY_COLUMNS))
            for r in rows:
                print("\t".join(map(str, r)))
            return 0
        cfg = load_config(args.config) if args.config else bundled_case(args.case)
        if args.cells:
            cfg["cells"] = args.cells
        rep = run_case(cfg, mode=args.mode, tol_rb=args.tol_rb, report_path=args.report,
                       field_path=args.export_field)
        print(json.dumps(rep["summary"], indent=2))
        return 0
    except LatticeDDError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
