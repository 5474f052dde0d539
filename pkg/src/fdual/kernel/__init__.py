"""Self-contained convex solvers: dense LP and separable concave programs."""

from .concave import ConcaveBuilder, ConcaveTerm, SeparableConcaveProgram, solve_concave
from .kkt import check_kkt
from .lp import (EMPTY_INTERIOR, EQ, GE, INFEASIBLE, LE, MAX_ITER, OPTIMAL,
                 UNBOUNDED, KKTResiduals, LinearProgram, LPBuilder, SolveReport,
                 lp_duality_gap, solve_lp, solve_lp_robust)

__all__ = [
    "ConcaveBuilder", "ConcaveTerm", "SeparableConcaveProgram", "solve_concave",
    "check_kkt", "KKTResiduals", "LinearProgram", "LPBuilder", "SolveReport",
    "lp_duality_gap", "solve_lp", "solve_lp_robust", "OPTIMAL", "INFEASIBLE", "UNBOUNDED",
    "MAX_ITER", "EMPTY_INTERIOR", "LE", "EQ", "GE",
]
