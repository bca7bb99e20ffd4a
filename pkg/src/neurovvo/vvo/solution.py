"""Solved VVO plans: extraction from model values and JSON persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..feeder import PHASE_INDEX, PHASES, Feeder
from .decision import FirstStageDecision

SCHEMA_VERSION = 1


@dataclass
class ScenarioRecourse:
    """Operating point of one scenario; arrays are ``(bus|branch, phase, t)``."""

    probability: float
    cost: float
    U: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    Pg: np.ndarray
    Qg: np.ndarray
    z: np.ndarray
    status: str = "optimal"

    def to_json(self) -> dict:
        return {"probability": self.probability, "cost": self.cost, "status": self.status,
                "U": self.U.tolist(), "P": self.P.tolist(), "Q": self.Q.tolist(),
                "Pg": self.Pg.tolist(), "Qg": self.Qg.tolist(), "z": self.z.astype(int).tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "ScenarioRecourse":
        arr = {k: np.asarray(doc[k], dtype=float) for k in ("U", "P", "Q", "Pg", "Qg", "z")}
        return cls(float(doc["probability"]), float(doc["cost"]), status=doc.get("status", "optimal"), **arr)


@dataclass
class VvoSolution:
    status: str
    objective: float | None
    breakdown: dict
    decision: FirstStageDecision | None
    scenarios: list = field(default_factory=list)
    buses: list = field(default_factory=list)
    branches: list = field(default_factory=list)
    x_flat: list = field(default_factory=list)
    mode: str = "exact"
    mip_gap: float | None = None
    timings: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def expected_recourse(self) -> float:
        return float(sum(s.probability * s.cost for s in self.scenarios))

    def to_json(self) -> dict:
        doc = {
            "version": SCHEMA_VERSION,
            "mode": self.mode,
            "status": self.status,
            "objective": self.objective,
            "breakdown": dict(self.breakdown),
            "mip_gap": self.mip_gap,
            "buses": list(self.buses),
            "branches": list(self.branches),
            "phases": list(PHASES),
            "first_stage": None if self.decision is None else {
                **self.decision.to_json(), "x_flat": [float(v) for v in self.x_flat]},
            "scenarios": [s.to_json() for s in self.scenarios],
            "timings": dict(self.timings),
        }
        doc.update(self.extra)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "VvoSolution":
        fs = doc.get("first_stage")
        known = {"version", "mode", "status", "objective", "breakdown", "mip_gap", "buses", "branches",
                 "phases", "first_stage", "scenarios", "timings"}
        return cls(
            status=doc["status"], objective=doc["objective"], breakdown=dict(doc["breakdown"]),
            decision=None if fs is None else FirstStageDecision.from_json(fs),
            scenarios=[ScenarioRecourse.from_json(s) for s in doc.get("scenarios", [])],
            buses=list(doc.get("buses", [])), branches=list(doc.get("branches", [])),
            x_flat=list(fs["x_flat"]) if fs else [], mode=doc.get("mode", "exact"),
            mip_gap=doc.get("mip_gap"), timings=dict(doc.get("timings", {})),
            extra={k: v for k, v in doc.items() if k not in known},
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "VvoSolution":
        return cls.from_json(json.loads(Path(path).read_text()))


def decision_from_values(feeder: Feeder, horizon: int, values: dict) -> FirstStageDecision:
    """Read switch states and taps from a name -> value map (rounded)."""
    sw = {br.id: tuple(int(round(values[f"alpha[{br.id},{t}]"])) for t in range(horizon))
          for br in feeder.switchable_branches}
    taps = {}
    for br in feeder.oltc_branches:
        seq = []
        for t in range(horizon):
            block = [values[f"tap[{br.id},{t},{m}]"] for m in range(1, br.oltc.n_taps + 1)]
            seq.append(int(np.argmax(block)) + 1)
        taps[br.id] = tuple(seq)
    return FirstStageDecision(horizon, sw, taps)


def recourse_from_values(feeder: Feeder, horizon: int, values: dict, tag: str,
                         probability: float, cost: float, status: str = "optimal") -> ScenarioRecourse:
    n, e = feeder.n_buses, len(feeder.branches)
    U = np.zeros((n, 3, horizon))
    P = np.zeros((e, 3, horizon))
    Q = np.zeros((e, 3, horizon))
    Pg = np.zeros((n, 3, horizon))
    Qg = np.zeros((n, 3, horizon))
    z = np.zeros((n, 3, horizon))
    u_ref = feeder.limits.u_ref
    for k, b in enumerate(feeder.buses):
        for ph in b.phases:
            i = PHASE_INDEX[ph]
            for t in range(horizon):
                key = f"[{b.id},{ph},{t},{tag}]"
                U[k, i, t] = u_ref if b.is_substation else values[f"U{key}"]
                Pg[k, i, t] = values.get(f"Pg{key}", 0.0)
                Qg[k, i, t] = values.get(f"Qg{key}", 0.0)
                z[k, i, t] = round(values.get(f"zv{key}", 0.0))
    for k, br in enumerate(feeder.branches):
        for ph in br.phases:
            i = PHASE_INDEX[ph]
            for t in range(horizon):
                P[k, i, t] = values[f"P[{br.id},{ph},{t},{tag}]"]
                Q[k, i, t] = values[f"Q[{br.id},{ph},{t},{tag}]"]
    return ScenarioRecourse(float(probability), float(cost), U, P, Q, Pg, Qg, z, status)


def extract_solution(feeder: Feeder, model, result, mode: str = "exact") -> VvoSolution:
    """Turn a solved extensive/deterministic model into a :class:`VvoSolution`."""
    meta = model.meta
    T = meta["horizon"]
    base = dict(buses=[b.id for b in feeder.buses], branches=[br.id for br in feeder.branches],
                mode=mode, mip_gap=result.mip_gap, timings={"solve": result.wall_time})
    if not result.has_solution:
        return VvoSolution(result.status, None, {}, None, **base)
    values = result.assignment
    x = result.values
    decision = decision_from_values(feeder, T, values)
    scen = []
    for rv, p in zip(meta["recourse"], meta["probabilities"]):
        scen.append(recourse_from_values(feeder, T, values, rv.tag, p, rv.cost.value(x)))
    fs = meta["first_stage"]
    breakdown = {"curtailment": float(sum(s.probability * s.cost for s in scen)),
                 "switching": float(fs.switch_cost.value(x)),
                 "oltc": float(fs.oltc_cost.value(x))}
    return VvoSolution(result.status, float(result.objective), breakdown, decision, scen,
                       x_flat=decision.to_flat(feeder).tolist(), **base)
