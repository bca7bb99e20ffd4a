"""Solver-free checks of a VVO solution against the feeder data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..feeder import PHASE_INDEX, Feeder, phase_impedance_matrices
from ..scenario import ScenarioSet
from .builder import curtailment_weight
from .decision import spanning_orientation
from .solution import VvoSolution

SQRT2 = math.sqrt(2.0)


@dataclass
class VerificationReport:
    issues: list = field(default_factory=list)
    checked: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, kind: str, msg: str) -> None:
        self.issues.append(f"{kind}: {msg}")

    def kinds(self) -> set:
        return {i.split(":", 1)[0] for i in self.issues}

    def __str__(self):
        if self.ok:
            return "clean (" + ", ".join(self.checked) + ")"
        return "\n".join(self.issues)


def spanning_tree_count(feeder: Feeder, closed) -> int:
    """Kirchhoff matrix-tree count of the closed subgraph."""
    n = feeder.n_buses
    lap = np.zeros((n, n))
    for br, on in zip(feeder.branches, closed):
        if on:
            i, j = feeder.bus_index(br.from_bus), feeder.bus_index(br.to_bus)
            lap[i, i] += 1
            lap[j, j] += 1
            lap[i, j] -= 1
            lap[j, i] -= 1
    if n == 1:
        return 1
    root = feeder.bus_index(feeder.substations[0].id)
    keep = [k for k in range(n) if k != root]
    return int(round(np.linalg.det(lap[np.ix_(keep, keep)])))


def _in_octagon(p: float, q: float, s: float, tol: float) -> bool:
    return (abs(p) <= s + tol and abs(q) <= s + tol
            and abs(p + q) <= SQRT2 * s + tol and abs(p - q) <= SQRT2 * s + tol)


def verify_solution(feeder: Feeder, sol: VvoSolution, scenarios: ScenarioSet | None = None,
                    tol: float = 1e-6) -> VerificationReport:
    """Recheck radiality, operation budgets, voltage bands, duration budgets,
    octagon limits and (given the scenarios) balance and voltage-drop residuals.
    """
    rep = VerificationReport()
    lim = feeder.limits
    x = sol.decision
    if x is None:
        rep.add("status", f"no first-stage decision (status {sol.status})")
        return rep
    T = x.horizon
    n = feeder.n_buses

    # radiality and connectivity
    rep.checked.append("radiality")
    closed_by_t = []
    for t in range(T):
        closed = x.closed(feeder, t)
        closed_by_t.append(closed)
        count = sum(closed)
        if count != n - 1:
            rep.add("radiality", f"t={t}: {count} closed branches, expected {n - 1}")
        _, seen = spanning_orientation(feeder, closed)
        if len(seen) != n:
            rep.add("connectivity", f"t={t}: buses {sorted(set(b.id for b in feeder.buses) - seen)} unreachable")
        trees = spanning_tree_count(feeder, closed)
        if trees != 1:
            rep.add("radiality", f"t={t}: closed subgraph has {trees} spanning trees, expected exactly 1")

    # operation budgets
    rep.checked.append("operations")
    for br_id, ops in x.switch_operations(feeder).items():
        if sum(ops) > lim.switch_max:
            rep.add("switching", f"branch {br_id}: {sum(ops)} operations > {lim.switch_max}")
    for br in feeder.oltc_branches:
        taps = x.taps[br.id]
        if any(not 1 <= m <= br.oltc.n_taps for m in taps):
            rep.add("oltc", f"branch {br.id}: tap out of range")
        ops = x.tap_operations(feeder)[br.id]
        if sum(ops) > br.oltc.max_daily_ops:
            rep.add("oltc", f"branch {br.id}: {sum(ops)} tap changes > {br.oltc.max_daily_ops}")

    # objective breakdown
    if sol.objective is not None and sol.breakdown:
        total = sum(sol.breakdown.values())
        if abs(total - sol.objective) > tol * max(1.0, abs(sol.objective)):
            rep.add("breakdown", f"components sum to {total}, objective is {sol.objective}")
        sw, oc = x.cost_breakdown(feeder)
        if sol.breakdown.get("switching", sw) < sw - tol * max(1.0, sw):
            rep.add("breakdown", f"switching cost {sol.breakdown['switching']} below {sw}")
        if sol.breakdown.get("oltc", oc) < oc - tol * max(1.0, oc):
            rep.add("breakdown", f"OLTC cost {sol.breakdown['oltc']} below {oc}")

    mats = {br.id: phase_impedance_matrices(br) for br in feeder.branches}
    w_curt = curtailment_weight(feeder)
    rep.checked += ["voltage", "duration", "octagon"]
    for s, rec in enumerate(sol.scenarios):
        U, P, Q, Pg, Qg = rec.U, rec.P, rec.Q, rec.Pg, rec.Qg
        for k, b in enumerate(feeder.buses):
            idx = [PHASE_INDEX[p] for p in b.phases]
            for t in range(T):
                u = U[k, idx, t]
                if b.is_substation:
                    if np.any(np.abs(u - lim.u_ref) > tol):
                        rep.add("voltage", f"s{s} substation {b.id} t={t} not at reference")
                    continue
                if np.any(u < lim.u_min - tol) or np.any(u > lim.u_max + tol):
                    rep.add("voltage", f"s{s} bus {b.id} t={t}: outside Range B")
                if b.three_phase:
                    avg = u.sum() / 3.0
                    if np.any(u > (1 + lim.imbalance_eps) * avg + tol) or np.any(u < (1 - lim.imbalance_eps) * avg - tol):
                        rep.add("imbalance", f"s{s} bus {b.id} t={t}: phase imbalance above {lim.imbalance_eps}")
            if b.monitored and not b.is_substation:
                for i in idx:
                    viol = (U[k, i] < lim.ua_min - tol) | (U[k, i] > lim.ua_max + tol)
                    if viol.sum() > lim.d1:
                        rep.add("duration", f"s{s} bus {b.id}.{'abc'[i]}: {int(viol.sum())} Range A violation steps > d1={lim.d1}")
                    for t0 in range(T - lim.d2):
                        if viol[t0:t0 + lim.d2 + 1].all():
                            rep.add("duration", f"s{s} bus {b.id}.{'abc'[i]}: violations throughout t={t0}..{t0 + lim.d2}")
                    if np.any(viol & (rec.z[k, i] < 0.5)):
                        rep.add("duration", f"s{s} bus {b.id}.{'abc'[i]}: violation without indicator")
        for d in feeder.ders:
            k = feeder.bus_index(d.bus)
            for ph, cap in d.capacity.items():
                i = PHASE_INDEX[ph]
                for t in range(T):
                    if Pg[k, i, t] < -tol or not _in_octagon(Pg[k, i, t], Qg[k, i, t], cap, tol):
                        rep.add("octagon", f"s{s} DER {d.bus}.{ph} t={t}: ({Pg[k, i, t]:.6g}, {Qg[k, i, t]:.6g}) outside capacity {cap:.6g}")
        for e, br in enumerate(feeder.branches):
            for ph in br.phases:
                i = PHASE_INDEX[ph]
                for t in range(T):
                    smax = br.s_max if closed_by_t[t][e] else 0.0
                    if not _in_octagon(P[e, i, t], Q[e, i, t], smax, tol):
                        rep.add("octagon", f"s{s} branch {br.id}.{ph} t={t}: flow outside thermal octagon")

        if scenarios is None:
            continue
        sc = scenarios[s] if len(scenarios) == len(sol.scenarios) else None
        if sc is None:
            rep.add("scenarios", "scenario count differs from solution")
            break
        if s == 0:
            rep.checked += ["balance", "voltage-drop"]
        curt = 0.0
        for d in feeder.ders:
            k = feeder.bus_index(d.bus)
            for ph in d.capacity:
                i = PHASE_INDEX[ph]
                if np.any(Pg[k, i] > sc.pg_hat[k, i] + tol):
                    rep.add("octagon", f"s{s} DER {d.bus}.{ph}: dispatch above availability")
                curt += w_curt * float(np.sum(sc.pg_hat[k, i] - Pg[k, i]))
        if abs(curt - rec.cost) > tol * max(1.0, abs(curt)):
            rep.add("breakdown", f"s{s}: curtailment recount {curt} differs from reported {rec.cost}")
        for k, b in enumerate(feeder.buses):
            if b.is_substation:
                continue
            for ph in b.phases:
                i = PHASE_INDEX[ph]
                for t in range(T):
                    pin = qin = 0.0
                    for e, br in enumerate(feeder.branches):
                        if ph not in br.phases:
                            continue
                        if br.to_bus == b.id:
                            pin += P[e, i, t]
                            qin += Q[e, i, t]
                        elif br.from_bus == b.id:
                            pin -= P[e, i, t]
                            qin -= Q[e, i, t]
                    rp = pin + Pg[k, i, t] - sc.pd_hat[k, i, t]
                    rq = qin + Qg[k, i, t] - sc.qd_hat[k, i, t]
                    if max(abs(rp), abs(rq)) > tol:
                        rep.add("balance", f"s{s} bus {b.id}.{ph} t={t}: residual ({rp:.3g}, {rq:.3g})")
        for e, br in enumerate(feeder.branches):
            mp, mq = mats[br.id]
            fi, ti = feeder.bus_index(br.from_bus), feeder.bus_index(br.to_bus)
            for t in range(T):
                if not closed_by_t[t][e]:
                    continue
                ratio = 1.0
                if br.oltc is not None:
                    ratio = br.oltc.tap_ratios[x.taps[br.id][t] - 1] ** 2
                for ph in br.phases:
                    i = PHASE_INDEX[ph]
                    pred = ratio * U[fi, i, t] + mp[i] @ P[e, :, t] + mq[i] @ Q[e, :, t]
                    if abs(U[ti, i, t] - pred) > tol:
                        rep.add("voltage-drop", f"s{s} branch {br.id}.{ph} t={t}: residual {U[ti, i, t] - pred:.3g}")
    return rep
