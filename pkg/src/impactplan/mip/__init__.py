"""Mixed-integer convex programming: model building, branch and bound,
LP/QP relaxation solvers and LP-format I/O."""
from .model import (Constraint, Expr, MipError, MipModel, MipSolution, add_disjunction,
                    add_implication, check_solution, lin_sum)
from .bnb import branch_and_bound, solve, solve_highs
from .simplex import solve_lp
from .qp import solve_qp
from .lpformat import export_model, format_lp, parse_lp, read_model

__all__ = ["Constraint", "Expr", "MipError", "MipModel", "MipSolution", "add_disjunction",
           "add_implication", "check_solution", "lin_sum", "branch_and_bound", "solve",
           "solve_highs", "solve_lp", "solve_qp", "export_model", "format_lp", "parse_lp",
           "read_model"]
