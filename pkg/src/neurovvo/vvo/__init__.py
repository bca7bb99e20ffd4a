"""Deterministic, recourse and extensive-form VVO models."""

from .builder import (
    FirstStageVars,
    VvoError,
    add_first_stage,
    add_recourse,
    build_deterministic,
    build_extensive,
    build_recourse,
    curtailment_weight,
    first_stage_model,
    first_stage_violations,
    retarget_recourse,
)
from .decision import FirstStageDecision, first_stage_completion, flat_labels, flat_size, is_radial
from .evaluate import PlanEvaluation, evaluate_plan, solution_from_evaluation, solve_exact
from .solution import ScenarioRecourse, VvoSolution, decision_from_values, extract_solution
from .verify import VerificationReport, spanning_tree_count, verify_solution

__all__ = [
    "FirstStageVars", "VvoError", "add_first_stage", "add_recourse", "build_deterministic",
    "build_extensive", "build_recourse", "curtailment_weight", "first_stage_model",
    "first_stage_violations", "retarget_recourse", "FirstStageDecision", "first_stage_completion", "flat_labels",
    "flat_size", "is_radial", "PlanEvaluation", "evaluate_plan", "solution_from_evaluation",
    "solve_exact", "ScenarioRecourse", "VvoSolution", "decision_from_values", "extract_solution",
    "VerificationReport", "spanning_tree_count", "verify_solution",
]
