"""MILP builders for deterministic, recourse and extensive-form VVO.

Variable names (periods ``t`` are 0-based, taps ``m`` 1-based, scenario tag
``sK``)::

    alpha[br,t]  tap[br,t,m]  beta[br,f|r,t]  cflow[br,t]  gamma[br,t]
    tau[br,t]  rho[br,t]
    P[br,ph,t,sK]  Q[br,ph,t,sK]  U[bus,ph,t,sK]  y[br,m,ph,t,sK]
    Pg[bus,ph,t,sK]  Qg[bus,ph,t,sK]  delta[bus,ph,t,sK]  zv[bus,ph,t,sK]

The substation voltage is the constant ``u_ref`` and has no variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..feeder import PHASE_INDEX, Feeder, phase_impedance_matrices
from ..milp import LinExpr, MilpModel, Variable, add_octagon
from ..scenario import Scenario, ScenarioSet
from .decision import FirstStageDecision, first_stage_completion


class VvoError(ValueError):
    pass


@dataclass
class FirstStageVars:
    """Handles on the first-stage block of a model.

    ``alpha`` and ``tap`` map keys to affine expressions, which are
    constants when the decision was fixed at build time.
    """

    horizon: int
    alpha: dict = field(default_factory=dict)  # (branch_id, t) -> LinExpr
    tap: dict = field(default_factory=dict)  # (branch_id, t, m) -> LinExpr
    switch_cost: LinExpr = field(default_factory=LinExpr)
    oltc_cost: LinExpr = field(default_factory=LinExpr)
    fixed: bool = False

    @property
    def cost(self) -> LinExpr:
        return self.switch_cost + self.oltc_cost

    def x_flat(self, feeder: Feeder) -> list[LinExpr]:
        out = [self.alpha[(br.id, t)] for br in feeder.switchable_branches for t in range(self.horizon)]
        out += [self.tap[(br.id, t, m)] for br in feeder.oltc_branches for t in range(self.horizon)
                for m in range(1, br.oltc.n_taps + 1)]
        return out


def _check_static(feeder: Feeder, horizon: int) -> None:
    lim = feeder.limits
    if horizon < 1:
        raise VvoError("horizon must be at least one period")
    if len(feeder.substations) != 1:
        raise VvoError("exactly one substation bus is required")
    if lim.d2 > horizon:
        raise VvoError(f"infeasible static data: d2={lim.d2} exceeds horizon T={horizon}")
    if lim.d2 > lim.d1:
        raise VvoError(f"infeasible static data: d2={lim.d2} exceeds d1={lim.d1}")


def add_first_stage(model: MilpModel, feeder: Feeder, horizon: int,
                    fixed: FirstStageDecision | None = None) -> FirstStageVars:
    """Tap selection, tap counting, radiality, orientation and switching limits.

    With ``fixed`` the decisions become constants and no rows are added.
    Besides orientation variables, a single-commodity flow from the
    substation (one unit consumed per other bus, carried only on closed
    branches) forces every closed configuration to be connected; with the
    closed-count row this makes each period a spanning tree.
    """
    _check_static(feeder, horizon)
    lim = feeder.limits
    fs = FirstStageVars(horizon, fixed=fixed is not None)
    T = range(horizon)

    if fixed is not None:
        if fixed.horizon != horizon:
            raise VvoError(f"decision horizon {fixed.horizon} differs from T={horizon}")
        for br in feeder.switchable_branches:
            for t in T:
                fs.alpha[(br.id, t)] = LinExpr(None, float(fixed.switch[br.id][t]))
        for br in feeder.oltc_branches:
            for t in T:
                for m in range(1, br.oltc.n_taps + 1):
                    fs.tap[(br.id, t, m)] = LinExpr(None, float(fixed.taps[br.id][t] == m))
        sw, oc = fixed.cost_breakdown(feeder)
        fs.switch_cost, fs.oltc_cost = LinExpr(None, sw), LinExpr(None, oc)
        return fs

    n = feeder.n_buses
    sub = feeder.substations[0].id
    # switch states and switching counters
    for br in feeder.switchable_branches:
        prev = LinExpr(None, float(br.initial_closed))
        ops = LinExpr()
        for t in T:
            a = model.add_var(f"alpha[{br.id},{t}]", "binary").expr()
            g = model.add_var(f"gamma[{br.id},{t}]", "binary")
            model.add_le(a - prev - g, 0.0, f"swup[{br.id},{t}]")
            model.add_le(prev - a - g, 0.0, f"swdn[{br.id},{t}]")
            ops.iadd(g)
            fs.alpha[(br.id, t)] = a
            prev = a
        model.add_le(ops, float(lim.switch_max), f"swmax[{br.id}]")
        fs.switch_cost.iadd(ops, lim.w_sw)

    def alpha_of(br, t) -> LinExpr:
        return fs.alpha[(br.id, t)] if br.switchable else LinExpr(None, 1.0)

    # OLTC taps
    for br in feeder.oltc_branches:
        o = br.oltc
        prev = LinExpr(None, float(o.initial_tap))
        ops = LinExpr()
        for t in T:
            tau = model.add_var(f"tau[{br.id},{t}]", "continuous", 1.0, float(o.n_taps))
            rho = model.add_var(f"rho[{br.id},{t}]", "integer", 0.0, float(o.n_taps - 1))
            pick = LinExpr()
            pos = LinExpr()
            for m in range(1, o.n_taps + 1):
                xm = model.add_var(f"tap[{br.id},{t},{m}]", "binary").expr()
                fs.tap[(br.id, t, m)] = xm
                pick.iadd(xm)
                pos.iadd(xm, float(m))
            model.add_eq(pick, 1.0, f"sos1[{br.id},{t}]")
            model.add_eq(pos - tau, 0.0, f"tappos[{br.id},{t}]")
            model.add_le(tau - prev - rho, 0.0, f"tapup[{br.id},{t}]")
            model.add_le(prev - tau - rho, 0.0, f"tapdn[{br.id},{t}]")
            ops.iadd(rho)
            prev = tau.expr()
        model.add_le(ops, float(o.max_daily_ops), f"tapmax[{br.id}]")
        fs.oltc_cost.iadd(ops, lim.w_oc)

    # radiality, orientation and connectivity
    for t in T:
        total = LinExpr()
        incoming = {b.id: LinExpr() for b in feeder.buses}
        net_flow = {b.id: LinExpr() for b in feeder.buses}
        for br in feeder.branches:
            a = alpha_of(br, t)
            total.iadd(a)
            bf = model.add_var(f"beta[{br.id},f,{t}]", "binary")
            bb = model.add_var(f"beta[{br.id},r,{t}]", "binary")
            model.add_eq(bf + bb - a, 0.0, f"orient[{br.id},{t}]")
            incoming[br.to_bus].iadd(bf)
            incoming[br.from_bus].iadd(bb)
            f = model.add_var(f"cflow[{br.id},{t}]", "continuous", -(n - 1.0), n - 1.0)
            if br.switchable:
                model.add_le(f - a * (n - 1.0), 0.0, f"cfup[{br.id},{t}]")
                model.add_le(-f - a * (n - 1.0), 0.0, f"cfdn[{br.id},{t}]")
            net_flow[br.to_bus].iadd(f)
            net_flow[br.from_bus].iadd(f, -1.0)
        model.add_eq(total, float(n - 1), f"radial[{t}]")
        for b in feeder.buses:
            rhs = 0.0 if b.id == sub else 1.0
            model.add_eq(incoming[b.id], rhs, f"parent[{b.id},{t}]")
            if b.id != sub:
                model.add_eq(net_flow[b.id], 1.0, f"cfbal[{b.id},{t}]")
    return fs


def first_stage_model(feeder: Feeder, horizon: int) -> tuple[MilpModel, FirstStageVars]:
    """First-stage block alone, objective = switching + OLTC cost."""
    model = MilpModel(f"{feeder.name}-first-stage")
    fs = add_first_stage(model, feeder, horizon)
    model.set_objective(fs.cost)
    return model, fs


def first_stage_violations(feeder: Feeder, x: FirstStageDecision, tol: float = 1e-6):
    """Rows of the first-stage block violated by the cheapest completion of ``x``."""
    from ..milp import check_assignment

    for br in feeder.switchable_branches:
        if br.id not in x.switch or len(x.switch[br.id]) != x.horizon:
            raise VvoError(f"decision lacks switch states for branch {br.id}")
    for br in feeder.oltc_branches:
        if br.id not in x.taps or len(x.taps[br.id]) != x.horizon:
            raise VvoError(f"decision lacks taps for branch {br.id}")
        if any(not 1 <= m <= br.oltc.n_taps for m in x.taps[br.id]):
            raise VvoError(f"branch {br.id}: tap index out of range")
    model, _ = first_stage_model(feeder, x.horizon)
    return check_assignment(model, first_stage_completion(feeder, x), tol=tol)


# -- recourse ---------------------------------------------------------------
@dataclass
class RecourseVars:
    """Cost of one scenario block and where its scenario data entered the model.

    ``balance_rows`` holds ``(row index, channel, bus index, phase index, t)``
    and ``pg_vars`` holds ``(variable index, bus index, phase index, t, capacity)``.
    """

    tag: str
    cost: LinExpr
    balance_rows: list = field(default_factory=list)
    pg_vars: list = field(default_factory=list)


def _voltage_range(feeder: Feeder, bus_id: str) -> tuple[float, float]:
    lim = feeder.limits
    if feeder.bus(bus_id).is_substation:
        return lim.u_ref, lim.u_ref
    return lim.u_min, lim.u_max


def flow_big_m(feeder: Feeder, br) -> float:
    """Smallest valid relaxation constant for an open branch's voltage-drop pair.

    An open branch carries no flow, so the pair only needs to admit any
    difference between the end voltages (after the tap ratio on OLTC branches).
    """
    lo_i, hi_i = _voltage_range(feeder, br.from_bus)
    lo_j, hi_j = _voltage_range(feeder, br.to_bus)
    if br.oltc is not None:
        sq = [r * r for r in br.oltc.tap_ratios]
        lo_i, hi_i = min(sq) * lo_i, max(sq) * hi_i
    return max(hi_j - lo_i, hi_i - lo_j, 0.0)


def duration_big_m(feeder: Feeder) -> float:
    lim = feeder.limits
    return max(lim.ua_min - lim.u_min, lim.u_max - lim.ua_max, 0.0)


def curtailment_weight(feeder: Feeder) -> float:
    """Dollars per p.u. of curtailed per-phase power over one period."""
    return feeder.limits.w_der * feeder.base.kva_phase * feeder.base.dt_hours


def add_recourse(model: MilpModel, feeder: Feeder, fs: FirstStageVars, scenario: Scenario,
                 tag: str = "s0") -> RecourseVars:
    """Operational block for one scenario; returns its curtailment cost (dollars)."""
    lim = feeder.limits
    T = fs.horizon
    if scenario.horizon != T:
        raise VvoError(f"scenario horizon {scenario.horizon} differs from T={T}")
    if scenario.n_buses != feeder.n_buses:
        raise VvoError(f"scenario covers {scenario.n_buses} buses, feeder has {feeder.n_buses}")
    sub = feeder.substations[0].id
    ders = feeder.der_buses
    w_curt = curtailment_weight(feeder)
    m_dur = duration_big_m(feeder)
    cost = LinExpr()
    rv = RecourseVars(tag, cost)
    mats = {br.id: phase_impedance_matrices(br) for br in feeder.branches}

    for t in range(T):
        U = {}
        for b in feeder.buses:
            for ph in b.phases:
                if b.id == sub:
                    U[(b.id, ph)] = LinExpr(None, lim.u_ref)
                else:
                    U[(b.id, ph)] = model.add_var(f"U[{b.id},{ph},{t},{tag}]", "continuous",
                                                  lim.u_min, lim.u_max).expr()
        P, Q = {}, {}
        inflow = {(b.id, ph): [LinExpr(), LinExpr()] for b in feeder.buses for ph in b.phases}
        for br in feeder.branches:
            a = fs.alpha[(br.id, t)] if br.switchable else LinExpr(None, 1.0)
            for ph in br.phases:
                p = model.add_var(f"P[{br.id},{ph},{t},{tag}]", "continuous", -br.s_max, br.s_max)
                q = model.add_var(f"Q[{br.id},{ph},{t},{tag}]", "continuous", -br.s_max, br.s_max)
                P[(br.id, ph)], Q[(br.id, ph)] = p, q
                add_octagon(model, p, q, a * br.s_max, f"therm[{br.id},{ph},{t},{tag}]")
                inflow[(br.to_bus, ph)][0].iadd(p)
                inflow[(br.to_bus, ph)][1].iadd(q)
                inflow[(br.from_bus, ph)][0].iadd(p, -1.0)
                inflow[(br.from_bus, ph)][1].iadd(q, -1.0)

        # DERs and curtailment
        for bus_id, der in ders.items():
            k = feeder.bus_index(bus_id)
            for ph, cap in der.capacity.items():
                avail = float(scenario.pg_hat[k, PHASE_INDEX[ph], t])
                pg = model.add_var(f"Pg[{bus_id},{ph},{t},{tag}]", "continuous", 0.0, min(avail, cap))
                rv.pg_vars.append((pg.index, k, PHASE_INDEX[ph], t, cap))
                qg = model.add_var(f"Qg[{bus_id},{ph},{t},{tag}]", "continuous", -cap, cap)
                add_octagon(model, pg, qg, cap, f"der[{bus_id},{ph},{t},{tag}]")
                if bus_id != sub:
                    inflow[(bus_id, ph)][0].iadd(pg)
                    inflow[(bus_id, ph)][1].iadd(qg)
                cost.iadd(avail * w_curt)
                cost.iadd(pg, -w_curt)

        # nodal balance: inflow + generation = load
        for b in feeder.buses:
            if b.id == sub:
                continue
            k = feeder.bus_index(b.id)
            for ph in b.phases:
                i = PHASE_INDEX[ph]
                ep, eq = inflow[(b.id, ph)]
                for channel, expr, lbl in (("pd_hat", ep, "balP"), ("qd_hat", eq, "balQ")):
                    con = model.add_eq(expr, float(scenario.channel(channel)[k, i, t]),
                                       f"{lbl}[{b.id},{ph},{t},{tag}]")
                    if con is not None:
                        rv.balance_rows.append((model.n_constraints - 1, channel, k, i, t))

        # voltage drop, with the OLTC dummy bus on the from side
        for br in feeder.branches:
            a = fs.alpha[(br.id, t)] if br.switchable else LinExpr(None, 1.0)
            if not br.switchable or a.is_constant():
                state = a.const if br.switchable else 1.0
                if state == 0.0:
                    continue  # open: voltages decouple, thermal rows zero the flow
            mp, mq = mats[br.id]
            m_big = flow_big_m(feeder, br)
            for ph in br.phases:
                i = PHASE_INDEX[ph]
                src = _from_voltage(model, feeder, fs, br, ph, t, tag, U)
                rhs = src.copy()
                for ph2 in br.phases:
                    j = PHASE_INDEX[ph2]
                    if mp[i, j] != 0.0:
                        rhs.iadd(P[(br.id, ph2)], mp[i, j])
                    if mq[i, j] != 0.0:
                        rhs.iadd(Q[(br.id, ph2)], mq[i, j])
                diff = U[(br.to_bus, ph)] - rhs
                if a.is_constant():
                    model.add_eq(diff, 0.0, f"drop[{br.id},{ph},{t},{tag}]")
                else:
                    slack = (1.0 - a) * m_big
                    model.add_le(diff - slack, 0.0, f"dropup[{br.id},{ph},{t},{tag}]")
                    model.add_ge(diff + slack, 0.0, f"dropdn[{br.id},{ph},{t},{tag}]")

        # phase imbalance at three-phase buses
        for b in feeder.buses:
            if b.id == sub or not b.three_phase:
                continue
            avg = LinExpr()
            for ph in b.phases:
                avg.iadd(U[(b.id, ph)], 1.0 / 3.0)
            for ph in b.phases:
                u = U[(b.id, ph)]
                model.add_le(u - avg * (1.0 + lim.imbalance_eps), 0.0, f"imbup[{b.id},{ph},{t},{tag}]")
                model.add_ge(u - avg * (1.0 - lim.imbalance_eps), 0.0, f"imbdn[{b.id},{ph},{t},{tag}]")

        # Range A deviations at monitored buses
        for b in feeder.buses:
            if b.id == sub or not b.monitored:
                continue
            for ph in b.phases:
                u = U[(b.id, ph)]
                d = model.add_var(f"delta[{b.id},{ph},{t},{tag}]", "continuous", 0.0, m_dur)
                z = model.add_var(f"zv[{b.id},{ph},{t},{tag}]", "binary")
                model.add_ge(u + d, lim.ua_min, f"rangeAlo[{b.id},{ph},{t},{tag}]")
                model.add_le(u - d, lim.ua_max, f"rangeAhi[{b.id},{ph},{t},{tag}]")
                model.add_le(d - z * m_dur, 0.0, f"vind[{b.id},{ph},{t},{tag}]")

    # duration budgets
    for b in feeder.buses:
        if b.id == sub or not b.monitored:
            continue
        for ph in b.phases:
            zs = [model.var(f"zv[{b.id},{ph},{t},{tag}]") for t in range(T)]
            total = LinExpr()
            for z in zs:
                total.iadd(z)
            model.add_le(total, float(lim.d1), f"dur1[{b.id},{ph},{tag}]")
            for t0 in range(T - lim.d2):
                win = LinExpr()
                for z in zs[t0:t0 + lim.d2 + 1]:
                    win.iadd(z)
                model.add_le(win, float(lim.d2), f"dur2[{b.id},{ph},{t0},{tag}]")
    return rv


def _from_voltage(model, feeder, fs, br, ph, t, tag, U) -> LinExpr:
    """Squared voltage seen at the from side of ``br`` (dummy bus for an OLTC)."""
    u_i = U[(br.from_bus, ph)]
    if br.oltc is None:
        return u_i
    sq = [r * r for r in br.oltc.tap_ratios]
    taps = [fs.tap[(br.id, t, m)] for m in range(1, br.oltc.n_taps + 1)]
    if u_i.is_constant() or all(x.is_constant() for x in taps):
        # the product of a constant with the selection is already linear
        out = LinExpr()
        for eta2, x in zip(sq, taps):
            if u_i.is_constant():
                out.iadd(x, eta2 * u_i.const)
            else:
                out.iadd(u_i, eta2 * x.const)
        return out
    m_big = feeder.limits.u_max
    out = LinExpr()
    for m, (eta2, x) in enumerate(zip(sq, taps), start=1):
        y = model.add_var(f"y[{br.id},{m},{ph},{t},{tag}]", "continuous", 0.0, m_big)
        model.add_le(y - x * m_big, 0.0, f"prodx[{br.id},{m},{ph},{t},{tag}]")
        model.add_ge(u_i - y, 0.0, f"produ[{br.id},{m},{ph},{t},{tag}]")
        model.add_le(u_i - y - (1.0 - x) * m_big, 0.0, f"produx[{br.id},{m},{ph},{t},{tag}]")
        out.iadd(y, eta2)
    return out


def retarget_recourse(model: MilpModel, feeder: Feeder, scenario: Scenario) -> MilpModel:
    """Copy of a recourse model (from :func:`build_recourse`) with another scenario's data.

    Only the DER availability bounds, the balance right-hand sides and the
    curtailment constant depend on the scenario, so those are swapped and
    everything else is shared with ``model``.
    """
    if model.meta.get("kind") != "recourse":
        raise VvoError("only recourse models can be retargeted")
    if scenario.horizon != model.meta["horizon"] or scenario.n_buses != feeder.n_buses:
        raise VvoError("scenario dimensions differ from the model")
    rv = model.meta["recourse"][0]
    w_curt = curtailment_weight(feeder)
    out = MilpModel(model.name)
    out.variables = list(model.variables)
    out.constraints = list(model.constraints)
    out._by_name = dict(model._by_name)
    out._con_names = model._con_names
    const = 0.0
    for idx, k, i, t, cap in rv.pg_vars:
        avail = float(scenario.pg_hat[k, i, t])
        v = model.variables[idx]
        nv = Variable(v.name, v.kind, v.lo, min(avail, cap), idx)
        out.variables[idx] = nv
        out._by_name[v.name] = nv
        const += avail * w_curt
    for row, channel, k, i, t in rv.balance_rows:
        out.constraints[row] = replace(model.constraints[row], rhs=float(scenario.channel(channel)[k, i, t]))
    cost = LinExpr(rv.cost.terms, const)
    out.set_objective(cost)
    out.meta = dict(model.meta)
    out.meta["recourse"] = [RecourseVars(rv.tag, cost, rv.balance_rows, rv.pg_vars)]
    return out


# -- public builders --------------------------------------------------------
def build_extensive(feeder: Feeder, scenarios: ScenarioSet) -> MilpModel:
    """Extensive form: one first-stage block and a recourse block per scenario."""
    T = scenarios.horizon
    model = MilpModel(f"{feeder.name}-extensive-S{len(scenarios)}")
    fs = add_first_stage(model, feeder, T)
    obj = fs.cost.copy()
    recourse = []
    for k, (sc, p) in enumerate(zip(scenarios, scenarios.probabilities)):
        rv = add_recourse(model, feeder, fs, sc, f"s{k}")
        obj.iadd(rv.cost, float(p))
        recourse.append(rv)
    model.set_objective(obj)
    model.meta.update(kind="extensive", horizon=T, n_scenarios=len(scenarios), first_stage=fs,
                      recourse=recourse, probabilities=scenarios.probabilities.copy())
    return model


def build_deterministic(feeder: Feeder, scenario: Scenario, horizon: int | None = None) -> MilpModel:
    """Single-scenario VVO; identical to the extensive form with ``S = 1``."""
    if horizon is not None and horizon != scenario.horizon:
        raise VvoError(f"scenario horizon {scenario.horizon} differs from T={horizon}")
    model = build_extensive(feeder, ScenarioSet([scenario]))
    model.name = f"{feeder.name}-deterministic"
    model.meta["kind"] = "deterministic"
    return model


def build_recourse(feeder: Feeder, scenario: Scenario, x_fixed: FirstStageDecision, tag: str = "s0",
                   check: bool = True) -> MilpModel:
    """Recourse problem ``Q(x, xi)`` for fixed first-stage decisions."""
    if check:
        bad = first_stage_violations(feeder, x_fixed)
        if bad:
            raise VvoError(f"first-stage decision infeasible: {bad[0]}" + (f" (+{len(bad) - 1} more)" if len(bad) > 1 else ""))
    model = MilpModel(f"{feeder.name}-recourse")
    fs = add_first_stage(model, feeder, scenario.horizon, fixed=x_fixed)
    rv = add_recourse(model, feeder, fs, scenario, tag)
    model.set_objective(rv.cost)
    model.meta.update(kind="recourse", horizon=scenario.horizon, n_scenarios=1, first_stage=fs,
                      recourse=[rv], probabilities=np.ones(1), decision=x_fixed)
    return model
