"""Solver-agnostic MILP modelling, MPS export and solver backends."""

from .model import (
    INF,
    LinearConstraint,
    LinExpr,
    MilpModel,
    ModelError,
    Variable,
    Violation,
    add_octagon,
    check_assignment,
)
from .mps import export_mps, mangle
from .solvers import (
    STATUSES,
    CommandBackend,
    HighsBackend,
    SolveResult,
    SolverError,
    incumbent_trace,
    make_backend,
    solve,
)

__all__ = [
    "INF", "LinearConstraint", "LinExpr", "MilpModel", "ModelError", "Variable", "Violation",
    "add_octagon", "check_assignment", "export_mps", "mangle", "STATUSES", "CommandBackend",
    "HighsBackend", "SolveResult", "SolverError", "incumbent_trace", "make_backend", "solve",
]
