"""Shared oracles for the solver-backed tests."""

import itertools

import numpy as np

from neurovvo.scenario import ScenarioSet, base_scenario, sample_scenarios
from neurovvo.vvo import FirstStageDecision, evaluate_plan, first_stage_violations


def all_first_stage(feeder, horizon):
    """Every first-stage assignment that passes the first-stage rows."""
    sw = feeder.switchable_branches
    oc = feeder.oltc_branches
    per_t = list(itertools.product(*([(0, 1)] * len(sw)), *[range(1, b.oltc.n_taps + 1) for b in oc]))
    out = []
    for combo in itertools.product(per_t, repeat=horizon):
        switch = {b.id: tuple(c[k] for c in combo) for k, b in enumerate(sw)}
        taps = {b.id: tuple(c[len(sw) + k] for c in combo) for k, b in enumerate(oc)}
        x = FirstStageDecision(horizon, switch, taps)
        if not first_stage_violations(feeder, x):
            out.append(x)
    return out


def brute_force(feeder, scenarios):
    """``min_x c(x) + sum_s pi_s Q(x, xi_s)`` by enumeration; returns ``(best, x)``."""
    best, arg = np.inf, None
    for x in all_first_stage(feeder, scenarios.horizon):
        ev = evaluate_plan(feeder, scenarios, x)
        if ev.feasible and ev.total < best:
            best, arg = ev.total, x
    return best, arg


def toy_scenarios(feeder, n, seed, load=(1.0, 0.8), pv=(0.6, 1.3), perturbation=0.2):
    base = base_scenario(feeder, list(load), list(pv))
    return sample_scenarios(base, n, seed, perturbation)


def single(scenario):
    return ScenarioSet([scenario])


def jittered_weights(feeder, horizon, x_dim, seed, config=None):
    """Random weights with nonzero biases and positional terms, so ReLU inputs avoid exact zeros."""
    from neurovvo.surrogate import SurrogateConfig, init_weights
    config = config or SurrogateConfig(gcn_hidden=(6,), temporal_channels=(4,), temporal_kernels=(2,),
                                       decoder_hidden=(5, 3), main_hidden=(6, 4))
    w = init_weights(feeder, horizon, x_dim, config, seed=seed)
    g = np.random.default_rng(seed + 1)
    for k, v in w.params.items():
        if k.endswith(".b") or k in ("pos", "ln.beta"):
            w.params[k] = g.normal(0.0, 0.3, v.shape)
        elif k == "ln.gamma":
            w.params[k] = 1.0 + g.normal(0.0, 0.2, v.shape)
    return w


def random_sample(w, seed):
    g = np.random.default_rng(seed)
    feats = g.normal(0.0, 1.0, (w.n_nodes, w.horizon, 9))
    x = (g.random(w.x_dim) < 0.5).astype(float)
    return feats, x, float(g.normal())
