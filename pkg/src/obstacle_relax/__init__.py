"""Relaxed optimal control of semilinear elliptic obstacle problems.

Finite-difference discretization on the unit square, smoothing-function
relaxation of the complementarity constraint, an interior-point solver, a
penalization solver, and a reference solver for the obstacle problem.
"""

from .grid import (CUBIC, Grid, Nonlinearity, ProblemData, WEIGHTINGS, assemble_laplacian, build_grid,
                   example71_data, grid_dump, inner, linear)
from .model import KktReport, RelaxedOcp, solve_state
from .smoothing import DomainError, KINDS, SmoothingFn
from .solver import SolverConfig, SolveReport, alpha_continuation, solve_barrier, solve_penalty
from .vi import ViSolution, brute_force_active_set, solve_vi

__all__ = [
    "CUBIC", "Grid", "Nonlinearity", "ProblemData", "WEIGHTINGS", "assemble_laplacian", "build_grid",
    "example71_data", "grid_dump", "inner", "linear", "KktReport", "RelaxedOcp", "solve_state",
    "DomainError", "KINDS", "SmoothingFn", "SolverConfig", "SolveReport", "alpha_continuation",
    "solve_barrier", "solve_penalty", "ViSolution", "brute_force_active_set", "solve_vi",
]
