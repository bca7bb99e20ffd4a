"""Embedding the trained main network into a first-stage MILP.

Each hidden ReLU neuron with pre-activation interval ``[lo, hi]`` becomes

* ``lo >= 0``: a continuous copy ``h = pre`` (no binary),
* ``hi <= 0``: the constant 0,
* otherwise: ``h_pos - h_neg = pre``, ``h_pos <= mu * hi``,
  ``h_neg <= (1 - mu) * (-lo)`` with ``mu`` binary and ``h_pos, h_neg >= 0``.

The scenario embedding enters as constants folded into the first layer's
bias, so the model size does not depend on the number of scenarios.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .feeder import Feeder
from .milp import INF, LinExpr, MilpModel, Variable, make_backend, solve
from .scenario import ScenarioSet
from .surrogate import MlpStack, SurrogateWeights, check_feeder, encoder_forward, main_forward
from .surrogate.layers import ShapeError
from .vvo import (VvoSolution, add_first_stage, decision_from_values, evaluate_plan,
                  flat_size, solution_from_evaluation)


class OutOfDistributionWarning(UserWarning):
    """The scenario embedding left the box the network bounds were computed on."""


@dataclass
class NeuronBounds:
    """Pre-activation intervals per layer (hidden layers and the output layer)."""

    lo: list
    hi: list

    @property
    def n_layers(self) -> int:
        return len(self.lo)

    def stability(self) -> dict:
        """Counts of stable-active, stable-inactive and unstable hidden neurons."""
        out = {"active": 0, "inactive": 0, "unstable": 0}
        for lo, hi in zip(self.lo[:-1], self.hi[:-1]):
            out["active"] += int(np.sum(lo >= 0))
            out["inactive"] += int(np.sum((hi <= 0) & (lo < 0)))
            out["unstable"] += int(np.sum((lo < 0) & (hi > 0)))
        return out

    def contains(self, pre: list, tol: float = 0.0) -> bool:
        return all(np.all(p >= lo - tol) and np.all(p <= hi + tol) for p, lo, hi in zip(pre, self.lo, self.hi))


def _as_stack(main) -> MlpStack:
    if isinstance(main, SurrogateWeights):
        return main.main
    if isinstance(main, MlpStack):
        return main
    return MlpStack(list(main))


def propagate_bounds(main, lo, hi, one_hot=()) -> NeuronBounds:
    """Interval arithmetic through the dense layers, clamping hidden outputs at 0.

    ``one_hot`` lists groups of input indices of which exactly one equals 1
    and the rest 0 (tap positions); such a group adds between the smallest
    and largest of its weights to a first-layer neuron, which is tighter
    than treating each entry as an independent ``[0, 1]`` input.
    """
    main = _as_stack(main)
    lo = np.asarray(lo, dtype=float).copy()
    hi = np.asarray(hi, dtype=float).copy()
    if lo.shape != (main.in_dim,) or hi.shape != lo.shape:
        raise ShapeError(f"input box of size {lo.shape}, network expects {main.in_dim}")
    if np.any(lo > hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("input box must be finite with lo <= hi")
    grouped = np.zeros(main.in_dim, dtype=bool)
    groups = [np.asarray(g, dtype=int) for g in one_hot]
    for g in groups:
        if np.any(grouped[g]):
            raise ValueError("one-hot groups overlap")
        grouped[g] = True
    out_lo, out_hi = [], []
    for m, (W, b) in enumerate(main.layers):
        if m == 0 and groups:
            free = ~grouped
            wp, wn = np.maximum(W[:, free], 0.0), np.minimum(W[:, free], 0.0)
            plo = wp @ lo[free] + wn @ hi[free] + b
            phi = wp @ hi[free] + wn @ lo[free] + b
            for g in groups:
                plo = plo + W[:, g].min(axis=1)
                phi = phi + W[:, g].max(axis=1)
        else:
            wp, wn = np.maximum(W, 0.0), np.minimum(W, 0.0)
            plo = wp @ lo + wn @ hi + b
            phi = wp @ hi + wn @ lo + b
        out_lo.append(plo)
        out_hi.append(phi)
        lo, hi = np.maximum(plo, 0.0), np.maximum(phi, 0.0)
    return NeuronBounds(out_lo, out_hi)


def preactivations(main, h: np.ndarray) -> list:
    """Pre-activations of every layer for a batch of inputs ``(B, in_dim)``."""
    main = _as_stack(main)
    out = []
    for m, (W, b) in enumerate(main.layers):
        pre = h @ W.T + b
        out.append(pre)
        h = np.maximum(pre, 0.0)
    return out


@dataclass
class EmbeddedNet:
    psi: Variable
    inputs: list
    h_pos: dict = field(default_factory=dict)  # (layer, neuron) -> Variable
    h_neg: dict = field(default_factory=dict)
    mu: dict = field(default_factory=dict)
    bounds: NeuronBounds | None = None
    counts: dict = field(default_factory=dict)


def encode_relu(model: MilpModel, main, bounds: NeuronBounds, inputs, name: str = "nn") -> EmbeddedNet:
    """Add the network to ``model`` over ``inputs`` (expressions or constants)."""
    main = _as_stack(main)
    if len(inputs) != main.in_dim:
        raise ShapeError(f"network expects {main.in_dim} inputs, got {len(inputs)}")
    if bounds.n_layers != len(main.layers):
        raise ShapeError("bounds do not match the network depth")
    exprs = [LinExpr.of(e) for e in inputs]
    net = EmbeddedNet(psi=None, inputs=exprs, bounds=bounds)
    counts = {"active": 0, "inactive": 0, "unstable": 0, "constant": 0}
    last = len(main.layers) - 1
    for m, (W, b) in enumerate(main.layers):
        consts = np.array([e.const for e in exprs])
        bias = W @ consts + b  # constant inputs fold into the bias
        pres = []
        for i in range(W.shape[0]):
            pre = LinExpr(None, bias[i])
            for j, e in enumerate(exprs):
                if W[i, j] != 0.0 and e.terms:
                    for k, v in e.terms.items():
                        pre.terms[k] = pre.terms.get(k, 0.0) + W[i, j] * v
            pres.append(pre)
        if m == last:
            psi = model.add_var(f"{name}_psi", "continuous", -INF, INF)
            model.add_eq(psi - pres[0], 0.0, f"{name}_out")
            net.psi = psi
            break
        lo, hi = bounds.lo[m], bounds.hi[m]
        nxt = []
        for i, pre in enumerate(pres):
            key = (m, i)
            if lo[i] == hi[i]:
                counts["constant"] += 1
                nxt.append(LinExpr(None, max(lo[i], 0.0)))
            elif hi[i] <= 0.0:
                counts["inactive"] += 1
                nxt.append(LinExpr())
            elif lo[i] >= 0.0:
                counts["active"] += 1
                h = model.add_var(f"{name}_h[{m},{i}]", "continuous", lo[i], hi[i])
                model.add_eq(h - pre, 0.0, f"{name}_id[{m},{i}]")
                net.h_pos[key] = h
                nxt.append(h.expr())
            else:
                counts["unstable"] += 1
                hp = model.add_var(f"{name}_hp[{m},{i}]", "continuous", 0.0, hi[i])
                hn = model.add_var(f"{name}_hn[{m},{i}]", "continuous", 0.0, -lo[i])
                mu = model.add_var(f"{name}_mu[{m},{i}]", "binary")
                model.add_eq(hp - hn - pre, 0.0, f"{name}_split[{m},{i}]")
                model.add_le(hp - mu * hi[i], 0.0, f"{name}_on[{m},{i}]")
                model.add_le(hn + mu * (-lo[i]), -lo[i], f"{name}_off[{m},{i}]")
                net.h_pos[key], net.h_neg[key], net.mu[key] = hp, hn, mu
                nxt.append(hp.expr())
        exprs = nxt
    net.counts = counts
    return net


def input_box(weights: SurrogateWeights, zeta: np.ndarray | None = None):
    """``[0, 1]`` for first-stage entries and the stored embedding box for ``zeta``.

    Without a stored box the box collapses to ``zeta`` itself.
    """
    if weights.zeta_lo is not None:
        zlo, zhi = np.asarray(weights.zeta_lo, float), np.asarray(weights.zeta_hi, float)
    elif zeta is not None:
        zlo = zhi = np.asarray(zeta, dtype=float)
    else:
        raise ValueError("weights carry no embedding box and no embedding was given")
    lo = np.concatenate([np.zeros(weights.x_dim), zlo])
    hi = np.concatenate([np.ones(weights.x_dim), zhi])
    return lo, hi


def _widened(weights: SurrogateWeights, zeta: np.ndarray, margin: float = 0.1):
    lo, hi = input_box(weights, zeta)
    nx = weights.x_dim
    zlo, zhi = lo[nx:], hi[nx:]
    span = np.maximum(zhi - zlo, 1e-6)
    zlo = np.minimum(zlo, zeta - margin * span)
    zhi = np.maximum(zhi, zeta + margin * span)
    return np.concatenate([lo[:nx], zlo]), np.concatenate([hi[:nx], zhi])


def tap_groups(feeder: Feeder, horizon: int) -> list:
    """Index groups of the one-hot tap blocks inside ``x_flat``."""
    k = len(feeder.switchable_branches) * horizon
    out = []
    for br in feeder.oltc_branches:
        for _ in range(horizon):
            out.append(list(range(k, k + br.oltc.n_taps)))
            k += br.oltc.n_taps
    return out


def build_neural_vvo(feeder: Feeder, scenarios: ScenarioSet, weights: SurrogateWeights,
                     zeta: np.ndarray | None = None) -> MilpModel:
    """First-stage block plus the embedded main network as the recourse-cost term.

    Objective: switching + OLTC cost + ``psi (J_max - J_min) + J_min``.
    ``model.meta`` holds ``first_stage``, ``net``, ``zeta`` and ``out_of_box``.
    """
    check_feeder(weights, feeder)
    T = weights.horizon
    if scenarios.horizon != T:
        raise ShapeError(f"scenario horizon {scenarios.horizon}, weights expect {T}")
    if flat_size(feeder, T) != weights.x_dim:
        raise ShapeError(f"feeder has {flat_size(feeder, T)} first-stage entries, weights expect {weights.x_dim}")
    if zeta is None:
        zeta = encoder_forward(weights, feeder, scenarios)
    zeta = np.asarray(zeta, dtype=float)
    lo, hi = input_box(weights, zeta)
    nx = weights.x_dim
    outside = bool(np.any(zeta < lo[nx:]) or np.any(zeta > hi[nx:]))
    if outside:
        lo, hi = _widened(weights, zeta)
        warnings.warn("scenario embedding lies outside the training range; network bounds were widened "
                      "and the surrogate may be unreliable", OutOfDistributionWarning, stacklevel=2)
    bounds = propagate_bounds(weights.main, lo, hi, tap_groups(feeder, T))

    model = MilpModel(f"{feeder.name}-neural")
    fs = add_first_stage(model, feeder, T)
    net = encode_relu(model, weights.main, bounds, fs.x_flat(feeder) + [float(v) for v in zeta])
    span = weights.j_max - weights.j_min
    model.set_objective(fs.cost + net.psi * span + weights.j_min)
    model.meta.update({"kind": "neural", "horizon": T, "first_stage": fs, "net": net, "zeta": zeta,
                       "out_of_box": outside})
    return model


def input_model(main, lo, hi, integer=()) -> tuple[MilpModel, EmbeddedNet]:
    """A model whose inputs are free variables in ``[lo, hi]`` (for exactness checks)."""
    main = _as_stack(main)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    integer = set(integer)
    model = MilpModel("relu-check")
    xs = [model.add_var(f"in[{j}]", "binary" if j in integer else "continuous", lo[j], hi[j])
          for j in range(main.in_dim)]
    net = encode_relu(model, main, propagate_bounds(main, lo, hi), [x.expr() for x in xs])
    net.inputs = xs
    model.set_objective(net.psi.expr())
    return model, net


def verify_encoding(model: MilpModel, net: EmbeddedNet, main, trials: int = 100, seed: int = 0,
                    backend=None, vertices: bool = False) -> float:
    """Largest ``|psi_milp - main_forward|`` over random fixed inputs.

    ``net.inputs`` must be the model's input variables (see :func:`input_model`).
    With ``vertices`` every input is drawn from its box endpoints.
    """
    main = _as_stack(main)
    backend = make_backend(backend)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        vals = {}
        u = np.empty(len(net.inputs))
        for j, v in enumerate(net.inputs):
            if v.is_integer or vertices:
                u[j] = v.lo if rng.random() < 0.5 else v.hi
            else:
                u[j] = rng.uniform(v.lo, v.hi)
            vals[v.index] = u[j]
        res = solve(model.fixed_copy(vals), backend)
        if not res.has_solution:
            return float("inf")
        worst = max(worst, abs(res.values[net.psi.index] - main_forward(main, u, [])))
    return worst


def solve_neural(feeder: Feeder, scenarios: ScenarioSet, weights: SurrogateWeights, backend=None,
                 time_limit: float | None = None, mip_gap: float | None = 1e-4, evaluate: bool = True,
                 eval_workers: int = 1, capture_log: bool = False) -> VvoSolution:
    """Solve the surrogate model; optionally price the plan with true recourse solves.

    ``timings['total']`` covers encoding, building and solving only; the
    evaluation time is reported separately as ``timings['evaluate']``.
    """
    from .milp import incumbent_trace

    backend = make_backend(backend)
    t0 = time.perf_counter()
    zeta = encoder_forward(weights, feeder, scenarios)
    t_enc = time.perf_counter() - t0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", OutOfDistributionWarning)
        model = build_neural_vvo(feeder, scenarios, weights, zeta)
    for w in caught:
        warnings.warn(w.message, w.category, stacklevel=2)
    t_build = time.perf_counter() - t0 - t_enc
    res = solve(model, backend, time_limit=time_limit, mip_gap=mip_gap, capture_log=capture_log)
    t_total = time.perf_counter() - t0
    timings = {"encode": t_enc, "build": t_build, "solve": res.wall_time, "total": t_total}
    if not res.has_solution:
        return VvoSolution(res.status, None, {}, None, buses=[b.id for b in feeder.buses],
                           branches=[br.id for br in feeder.branches], mode="neural", timings=timings)
    x = decision_from_values(feeder, weights.horizon, res.assignment)
    psi = float(res.values[model.meta["net"].psi.index])
    j_pred = float(weights.rescale(psi))
    sw, oc = x.cost_breakdown(feeder)
    predicted = {"objective": sw + oc + j_pred, "curtailment": j_pred, "psi": psi}
    extra = {"predicted": predicted, "zeta": [float(v) for v in zeta],
             "out_of_box": model.meta["out_of_box"], "model_size": {
                 "variables": model.n_vars, "constraints": model.n_constraints, "integers": model.n_integer()}}
    if capture_log:
        extra["trace"] = [list(p) for p in incumbent_trace(res.log_text, backend.name)]
    if evaluate:
        t1 = time.perf_counter()
        ev = evaluate_plan(feeder, scenarios, x, backend, keep_recourse=True, workers=eval_workers)
        sol = solution_from_evaluation(feeder, x, ev, mode="neural")
        timings["evaluate"] = time.perf_counter() - t1
    else:
        sol = VvoSolution(res.status, predicted["objective"],
                          {"curtailment": j_pred, "switching": sw, "oltc": oc}, x,
                          buses=[b.id for b in feeder.buses], branches=[br.id for br in feeder.branches],
                          x_flat=x.to_flat(feeder).tolist(), mode="neural")
    sol.mip_gap = res.mip_gap
    sol.timings = timings
    sol.extra.update(extra)
    return sol
