"""Exact extensive-form solves and evaluation of fixed first-stage plans."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..feeder import Feeder
from ..milp import incumbent_trace, make_backend, solve
from ..scenario import ScenarioSet
from .builder import VvoError, build_extensive, build_recourse, first_stage_violations, retarget_recourse
from .decision import FirstStageDecision
from .solution import ScenarioRecourse, VvoSolution, extract_solution, recourse_from_values

log = logging.getLogger(__name__)


@dataclass
class PlanEvaluation:
    """Cost of a fixed first-stage plan over a scenario set."""

    switching: float
    oltc: float
    q_values: np.ndarray
    statuses: list
    probabilities: np.ndarray
    recourse: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def first_stage_cost(self) -> float:
        return self.switching + self.oltc

    @property
    def feasible(self) -> bool:
        return all(s in ("optimal", "feasible") for s in self.statuses)

    @property
    def expected_recourse(self) -> float:
        if not self.feasible:
            return float("inf")
        return float(np.dot(self.probabilities, self.q_values))

    @property
    def total(self) -> float:
        return self.first_stage_cost + self.expected_recourse

    def failures(self) -> dict:
        return {k: s for k, s in enumerate(self.statuses) if s not in ("optimal", "feasible")}


def evaluate_plan(feeder: Feeder, scenarios: ScenarioSet, x: FirstStageDecision, backend=None,
                  time_limit: float | None = None, mip_gap: float | None = 0.0, workers: int = 1,
                  keep_recourse: bool = False) -> PlanEvaluation:
    """First-stage cost of ``x`` plus the probability-weighted recourse costs.

    Each scenario's recourse MILP is solved independently; infeasible
    scenarios are reported in ``statuses`` with ``Q = inf``.
    """
    bad = first_stage_violations(feeder, x)
    if bad:
        raise VvoError(f"first-stage decision infeasible: {bad[0]}")
    backend = make_backend(backend)
    t0 = time.perf_counter()

    template = build_recourse(feeder, scenarios[0], x, check=False)

    def one(k):
        model = template if k == 0 else retarget_recourse(template, feeder, scenarios[k])
        res = solve(model, backend, time_limit=time_limit, mip_gap=mip_gap)
        rec = None
        if res.has_solution and keep_recourse:
            rec = recourse_from_values(feeder, x.horizon, res.assignment, "s0",
                                       scenarios.probabilities[k], res.objective, res.status)
        q = res.objective if res.has_solution else float("inf")
        return q, res.status, rec

    idx = range(len(scenarios))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(one, idx))
    else:
        out = [one(k) for k in idx]
    sw, oc = x.cost_breakdown(feeder)
    return PlanEvaluation(sw, oc, np.array([o[0] for o in out]), [o[1] for o in out],
                          scenarios.probabilities.copy(), [o[2] for o in out] if keep_recourse else [],
                          time.perf_counter() - t0)


def solve_exact(feeder: Feeder, scenarios: ScenarioSet, backend=None, time_limit: float | None = None,
                mip_gap: float | None = 1e-4, capture_log: bool = False) -> VvoSolution:
    """Build and solve the extensive form."""
    backend = make_backend(backend)
    t0 = time.perf_counter()
    model = build_extensive(feeder, scenarios)
    t_build = time.perf_counter() - t0
    res = solve(model, backend, time_limit=time_limit, mip_gap=mip_gap, capture_log=capture_log)
    sol = extract_solution(feeder, model, res, mode="exact")
    sol.timings = {"build": t_build, "solve": res.wall_time, "total": time.perf_counter() - t0}
    if capture_log:
        sol.extra["trace"] = [list(p) for p in incumbent_trace(res.log_text, backend.name)]
    if res.violations:
        sol.extra["violations"] = [str(v) for v in res.violations[:20]]
    return sol


def solution_from_evaluation(feeder: Feeder, x: FirstStageDecision, ev: PlanEvaluation,
                             mode: str = "neural") -> VvoSolution:
    """A :class:`VvoSolution` for a fixed plan, using per-scenario recourse points."""
    status = "optimal" if ev.feasible else "infeasible"
    scen = [r for r in ev.recourse if isinstance(r, ScenarioRecourse)]
    breakdown = {"curtailment": ev.expected_recourse, "switching": ev.switching, "oltc": ev.oltc}
    return VvoSolution(status, ev.total if ev.feasible else None, breakdown, x, scen,
                       buses=[b.id for b in feeder.buses], branches=[br.id for br in feeder.branches],
                       x_flat=x.to_flat(feeder).tolist(), mode=mode)
