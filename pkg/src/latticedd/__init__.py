"""Domain decomposition solvers for linear-elastic lattice structures.

Exact FETI-DP and a reduced-order inexact FETI-DP that factorizes only a
few principal cells selected greedily from the cells' pulled-back
material fields.
"""

from .assembly import Material
from .cli import run_case
from .config import bundled_case, load_config
from .decomposition import DirichletBC
from .fetidp import solve_fetidp
from .geometry import build_macro_model, build_reference_cell
from .ifetidp import SolverOptions, solve_ifetidp
from .problem import NeumannBC, build_problem

__all__ = ["Material", "DirichletBC", "NeumannBC", "SolverOptions", "build_reference_cell",
           "build_macro_model", "build_problem", "solve_fetidp", "solve_ifetidp", "run_case",
           "load_config", "bundled_case"]

__version__ = "0.1.0"
