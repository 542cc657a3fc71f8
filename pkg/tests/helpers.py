"""Shared builders for the test suite; problems and solves are cached per session."""

from __future__ import annotations

import functools

import numpy as np

from latticedd.cli import problem_from_config
from latticedd.config import bundled_case
from latticedd.fetidp import solve_fetidp
from latticedd.ifetidp import SolverOptions, solve_ifetidp

CASES_2D = ("rectangle", "curved-beam", "swept-patch")
CASES_3D = ("beam3d", "curved-beam3d")
ALL_CASES = CASES_2D + CASES_3D


def rel(a, b) -> float:
    """Relative l2 difference of ``a`` against the reference ``b``."""
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@functools.lru_cache(maxsize=None)
def problem(case: str, cells: tuple | None = None):
    cfg = bundled_case(case) if cells is None else bundled_case(case, cells=cells)
    return problem_from_config(cfg)


@functools.lru_cache(maxsize=None)
def direct(case: str, cells: tuple | None = None):
    return problem(case, cells).direct_solve()


@functools.lru_cache(maxsize=None)
def fetidp(case: str, cells: tuple | None = None):
    return solve_fetidp(problem(case, cells))


def ifetidp(case: str, cells: tuple | None = None, tol_rb: float = 1e-6):
    return _ifetidp(case, cells, tol_rb)


@functools.lru_cache(maxsize=None)
def _ifetidp(case, cells, tol_rb):
    return solve_ifetidp(problem(case, cells), SolverOptions(tol_rb=tol_rb))
