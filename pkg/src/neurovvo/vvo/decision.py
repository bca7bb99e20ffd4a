"""First-stage decisions: switch states and OLTC taps over the horizon."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..feeder import Feeder


class DecisionError(ValueError):
    pass


@dataclass(frozen=True)
class FirstStageDecision:
    """Switch states of switchable branches and tap indices of OLTC branches.

    ``switch[branch_id]`` is a length-``T`` tuple of 0/1 states and
    ``taps[branch_id]`` a length-``T`` tuple of 1-based tap indices.
    Non-switchable branches are always closed and carry no entry.
    """

    horizon: int
    switch: dict
    taps: dict

    @classmethod
    def default(cls, feeder: Feeder, horizon: int) -> "FirstStageDecision":
        """Hold the initial switch states and taps for the whole horizon."""
        sw = {br.id: (int(br.initial_closed),) * horizon for br in feeder.switchable_branches}
        taps = {br.id: (br.oltc.initial_tap,) * horizon for br in feeder.oltc_branches}
        return cls(horizon, sw, taps)

    def closed(self, feeder: Feeder, t: int) -> list[bool]:
        """Closed flag of every feeder branch at period ``t``."""
        return [bool(self.switch[br.id][t]) if br.switchable else True for br in feeder.branches]

    def switch_operations(self, feeder: Feeder) -> dict:
        out = {}
        for br in feeder.switchable_branches:
            prev = int(br.initial_closed)
            ops = []
            for s in self.switch[br.id]:
                ops.append(abs(int(s) - prev))
                prev = int(s)
            out[br.id] = ops
        return out

    def tap_operations(self, feeder: Feeder) -> dict:
        out = {}
        for br in feeder.oltc_branches:
            prev = br.oltc.initial_tap
            ops = []
            for m in self.taps[br.id]:
                ops.append(abs(int(m) - prev))
                prev = int(m)
            out[br.id] = ops
        return out

    def cost_breakdown(self, feeder: Feeder) -> tuple[float, float]:
        """Cheapest switching and OLTC costs consistent with these decisions."""
        lim = feeder.limits
        sw = sum(sum(v) for v in self.switch_operations(feeder).values())
        oc = sum(sum(v) for v in self.tap_operations(feeder).values())
        return lim.w_sw * sw, lim.w_oc * oc

    def cost(self, feeder: Feeder) -> float:
        return sum(self.cost_breakdown(feeder))

    # -- flat encoding ----------------------------------------------------
    def to_flat(self, feeder: Feeder) -> np.ndarray:
        """``[alpha(branch, t)] + [onehot tap(branch, t, m)]``."""
        out = []
        for br in feeder.switchable_branches:
            out.extend(float(v) for v in self.switch[br.id])
        for br in feeder.oltc_branches:
            for m in self.taps[br.id]:
                hot = np.zeros(br.oltc.n_taps)
                hot[int(m) - 1] = 1.0
                out.extend(hot.tolist())
        return np.array(out, dtype=float)

    @classmethod
    def from_flat(cls, feeder: Feeder, horizon: int, flat) -> "FirstStageDecision":
        flat = np.asarray(flat, dtype=float)
        if flat.size != flat_size(feeder, horizon):
            raise DecisionError(f"flat vector has {flat.size} entries, expected {flat_size(feeder, horizon)}")
        pos = 0
        sw = {}
        for br in feeder.switchable_branches:
            sw[br.id] = tuple(int(round(v)) for v in flat[pos:pos + horizon])
            pos += horizon
        taps = {}
        for br in feeder.oltc_branches:
            seq = []
            for _ in range(horizon):
                block = flat[pos:pos + br.oltc.n_taps]
                seq.append(int(np.argmax(block)) + 1)
                pos += br.oltc.n_taps
            taps[br.id] = tuple(seq)
        return cls(horizon, sw, taps)

    def to_json(self) -> dict:
        return {"horizon": self.horizon,
                "switch_states": {k: list(v) for k, v in self.switch.items()},
                "taps": {k: list(v) for k, v in self.taps.items()}}

    @classmethod
    def from_json(cls, doc: dict) -> "FirstStageDecision":
        return cls(int(doc["horizon"]),
                   {k: tuple(int(s) for s in v) for k, v in doc["switch_states"].items()},
                   {k: tuple(int(s) for s in v) for k, v in doc["taps"].items()})


def flat_size(feeder: Feeder, horizon: int) -> int:
    return horizon * (len(feeder.switchable_branches) + sum(br.oltc.n_taps for br in feeder.oltc_branches))


def flat_labels(feeder: Feeder, horizon: int) -> list[str]:
    """Human-readable names of the flat encoding entries, in order."""
    out = [f"alpha[{br.id},{t}]" for br in feeder.switchable_branches for t in range(horizon)]
    out += [f"tap[{br.id},{t},{m}]" for br in feeder.oltc_branches for t in range(horizon)
            for m in range(1, br.oltc.n_taps + 1)]
    return out


def spanning_orientation(feeder: Feeder, closed) -> tuple[dict, set]:
    """BFS tree from the substation over closed branches.

    Returns ``(parent_of, reached)`` where ``parent_of[bus] = (branch_index,
    parent_bus)`` for every reached non-root bus.
    """
    adj: dict[str, list] = {b.id: [] for b in feeder.buses}
    for k, (br, on) in enumerate(zip(feeder.branches, closed)):
        if on:
            adj[br.from_bus].append((k, br.to_bus))
            adj[br.to_bus].append((k, br.from_bus))
    root = feeder.substations[0].id
    parent = {}
    seen = {root}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for k, v in adj[u]:
            if v not in seen:
                seen.add(v)
                parent[v] = (k, u)
                queue.append(v)
    return parent, seen


def first_stage_completion(feeder: Feeder, x: FirstStageDecision) -> dict:
    """Values of every first-stage model variable implied by ``x``.

    Orientation and commodity flows follow a BFS tree from the substation;
    switching and tap-change counters take their least feasible values. If
    ``x`` is not radial the returned point violates the first-stage rows,
    which :func:`first_stage_violations` then reports.
    """
    vals = {}
    for t in range(x.horizon):
        closed = x.closed(feeder, t)
        parent, _ = spanning_orientation(feeder, closed)
        # subtree sizes for the single-commodity flow
        size = {b.id: 1 for b in feeder.buses}
        order = list(parent.keys())
        for bus in reversed(order):
            k, up = parent[bus]
            if up in parent:
                size[up] += size[bus]
        tree_edge = {k: (up, bus) for bus, (k, up) in parent.items()}
        for k, br in enumerate(feeder.branches):
            if br.switchable:
                vals[f"alpha[{br.id},{t}]"] = float(closed[k])
            fwd = rev = 0.0
            flow = 0.0
            if k in tree_edge:
                up, down = tree_edge[k]
                if up == br.from_bus:
                    fwd, flow = 1.0, float(size[down])
                else:
                    rev, flow = 1.0, -float(size[down])
            vals[f"beta[{br.id},f,{t}]"] = fwd
            vals[f"beta[{br.id},r,{t}]"] = rev
            vals[f"cflow[{br.id},{t}]"] = flow
    for br, ops in x.switch_operations(feeder).items():
        for t, g in enumerate(ops):
            vals[f"gamma[{br},{t}]"] = float(g)
    for br in feeder.oltc_branches:
        ops = x.tap_operations(feeder)[br.id]
        for t, m in enumerate(x.taps[br.id]):
            for j in range(1, br.oltc.n_taps + 1):
                vals[f"tap[{br.id},{t},{j}]"] = float(j == m)
            vals[f"tau[{br.id},{t}]"] = float(m)
            vals[f"rho[{br.id},{t}]"] = float(ops[t])
    return vals


def is_radial(feeder: Feeder, closed) -> bool:
    """Spanning tree test: ``N - 1`` closed branches that reach every bus."""
    if sum(bool(c) for c in closed) != feeder.n_buses - 1:
        return False
    _, seen = spanning_orientation(feeder, closed)
    return len(seen) == feeder.n_buses
