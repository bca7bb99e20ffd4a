"""Three-phase unbalanced feeder data model, JSON ingestion and validation.

All electrical quantities are converted to per-unit on parse. Power
quantities use a per-phase base of ``base.kva / 3`` and impedances use
``Z_base = kv**2 * 1000 / kva`` ohm (line-to-line kV, three-phase kVA),
which is the same impedance base seen from either convention.
Voltage quantities inside :class:`OperatingLimits` are *squared* p.u.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Literal

import numpy as np

PHASES = ("a", "b", "c")
PHASE_INDEX = {p: i for i, p in enumerate(PHASES)}

Phase = Literal["a", "b", "c"]
BusKind = Literal["substation", "load", "junction"]

SQRT3 = math.sqrt(3.0)
# Sign pattern of the sqrt(3) mutual terms in the active-power block; the
# reactive block uses the negated pattern on the resistances.
_MUTUAL_SIGN = np.array([[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]])


class FeederError(ValueError):
    """Raised when a feeder document cannot be turned into a Feeder."""


@dataclass(frozen=True)
class Base:
    kva: float = 1000.0
    kv: float = 4.16
    dt_hours: float = 1.0

    @property
    def kva_phase(self) -> float:
        return self.kva / 3.0

    @property
    def z_base(self) -> float:
        return self.kv**2 * 1000.0 / self.kva


@dataclass(frozen=True)
class Bus:
    id: str
    phases: tuple[str, ...]
    kind: BusKind = "load"
    monitored: bool = False
    # nominal per-phase load in p.u.: phase -> (p, q)
    load: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def three_phase(self) -> bool:
        return len(self.phases) == 3

    @property
    def is_substation(self) -> bool:
        return self.kind == "substation"


@dataclass(frozen=True)
class OltcSpec:
    tap_ratios: tuple[float, ...]
    max_daily_ops: int = 4
    initial_tap: int = 1  # 1-based index into tap_ratios

    @property
    def n_taps(self) -> int:
        return len(self.tap_ratios)


@dataclass(frozen=True, eq=False)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    phases: tuple[str, ...]
    r: np.ndarray  # 3x3 p.u.
    x: np.ndarray  # 3x3 p.u.
    s_max: float  # per-phase p.u.
    switchable: bool = False
    oltc: OltcSpec | None = None
    initial_closed: bool = True

    @property
    def fixed_closed(self) -> bool:
        return not self.switchable


@dataclass(frozen=True)
class DerUnit:
    bus: str
    capacity: dict  # phase -> per-phase apparent power capacity, p.u.


@dataclass(frozen=True)
class OperatingLimits:
    """Operating limits; voltages are squared p.u."""

    u_ref: float = 1.0
    u_min: float = 0.917**2
    u_max: float = 1.058**2
    ua_min: float = 0.95**2
    ua_max: float = 1.05**2
    imbalance_eps: float = 0.02
    d1: int = 8
    d2: int = 4
    switch_max: int = 8
    w_der: float = 120.0
    w_sw: float = 100.0
    w_oc: float = 300.0
    big_m: float = 10.0


@dataclass(frozen=True, eq=False)
class Feeder:
    name: str
    base: Base
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    ders: tuple[DerUnit, ...]
    limits: OperatingLimits

    def __post_init__(self):
        object.__setattr__(self, "_bus_index", {b.id: k for k, b in enumerate(self.buses)})
        object.__setattr__(self, "_branch_index", {br.id: k for k, br in enumerate(self.branches)})

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    def bus_index(self, bus_id: str) -> int:
        return self._bus_index[bus_id]

    def branch_index(self, branch_id: str) -> int:
        return self._branch_index[branch_id]

    def bus(self, bus_id: str) -> Bus:
        return self.buses[self._bus_index[bus_id]]

    @property
    def substations(self) -> list[Bus]:
        return [b for b in self.buses if b.is_substation]

    @property
    def switchable_branches(self) -> list[Branch]:
        return [br for br in self.branches if br.switchable]

    @property
    def oltc_branches(self) -> list[Branch]:
        return [br for br in self.branches if br.oltc is not None]

    @property
    def der_buses(self) -> dict[str, DerUnit]:
        return {d.bus: d for d in self.ders}

    def phase_mask(self) -> np.ndarray:
        """(N, 3) boolean mask of existing bus phases."""
        mask = np.zeros((self.n_buses, 3), dtype=bool)
        for k, b in enumerate(self.buses):
            for p in b.phases:
                mask[k, PHASE_INDEX[p]] = True
        return mask

    def kw_per_pu(self) -> float:
        return self.base.kva_phase


def _phases(value, where: str) -> tuple[str, ...]:
    if isinstance(value, str):
        items = list(value.lower())
    else:
        items = [str(v).lower() for v in value]
    if not items or any(p not in PHASE_INDEX for p in items) or len(set(items)) != len(items):
        raise FeederError(f"{where}: invalid phase set {value!r}")
    return tuple(sorted(items, key=PHASE_INDEX.__getitem__))


def _impedance(doc: dict, phases: tuple[str, ...], scale: float, where: str):
    r = np.zeros((3, 3))
    x = np.zeros((3, 3))
    for key, val in (doc or {}).items():
        if len(key) != 2 or key[0] not in PHASE_INDEX or key[1] not in PHASE_INDEX:
            raise FeederError(f"{where}: bad impedance key {key!r}")
        if key[0] not in phases or key[1] not in phases:
            if float(val.get("r", 0.0)) != 0.0 or float(val.get("x", 0.0)) != 0.0:
                raise FeederError(f"{where}: phase mismatch, impedance entry {key} on absent phase")
            continue
        i, j = PHASE_INDEX[key[0]], PHASE_INDEX[key[1]]
        r[i, j] = r[j, i] = float(val.get("r", 0.0)) * scale
        x[i, j] = x[j, i] = float(val.get("x", 0.0)) * scale
    return r, x


def parse_feeder(document: str | dict) -> Feeder:
    """Build a :class:`Feeder` from a JSON document (text or parsed dict)."""
    doc = json.loads(document) if isinstance(document, (str, bytes)) else document
    for key in ("buses", "branches"):
        if key not in doc:
            raise FeederError(f"missing top-level key {key!r}")

    bdoc = doc.get("base", {})
    base = Base(kva=float(bdoc.get("kva", 1000.0)), kv=float(bdoc.get("kv", 4.16)),
                dt_hours=float(bdoc.get("dt_hours", 1.0)))
    unit = bdoc.get("impedance_unit", "ohm")
    if unit not in ("ohm", "pu"):
        raise FeederError(f"unknown impedance unit {unit!r}")
    z_scale = 1.0 / base.z_base if unit == "ohm" else 1.0
    s_scale = 1.0 / base.kva_phase

    buses = []
    seen = set()
    for entry in doc["buses"]:
        bid = str(entry["id"])
        if bid in seen:
            raise FeederError(f"duplicate bus {bid!r}")
        seen.add(bid)
        phases = _phases(entry.get("phases", "abc"), f"bus {bid}")
        kind = entry.get("kind", "load")
        if kind not in ("substation", "load", "junction"):
            raise FeederError(f"bus {bid}: unknown kind {kind!r}")
        load = {}
        for ph, pq in (entry.get("load") or {}).items():
            if ph not in phases:
                raise FeederError(f"bus {bid}: phase mismatch, load on absent phase {ph}")
            load[ph] = (float(pq["p"]) * s_scale, float(pq.get("q", 0.0)) * s_scale)
        buses.append(Bus(bid, phases, kind, bool(entry.get("monitored", False)), load))
    bus_by_id = {b.id: b for b in buses}

    branches = []
    seen_ids, seen_pairs = set(), set()
    for entry in doc["branches"]:
        fb, tb = str(entry["from"]), str(entry["to"])
        brid = str(entry.get("id", f"{fb}-{tb}"))
        for end in (fb, tb):
            if end not in bus_by_id:
                raise FeederError(f"branch {brid}: unknown bus {end!r}")
        pair = frozenset((fb, tb))
        if brid in seen_ids or pair in seen_pairs:
            raise FeederError(f"duplicate branch {brid!r} ({fb}-{tb})")
        seen_ids.add(brid)
        seen_pairs.add(pair)
        phases = _phases(entry.get("phases", "abc"), f"branch {brid}")
        for end in (fb, tb):
            if not set(phases) <= set(bus_by_id[end].phases):
                raise FeederError(f"branch {brid}: phase mismatch with bus {end!r}")
        length = float(entry.get("length", 1.0))
        r, x = _impedance(entry.get("impedance"), phases, z_scale * length, f"branch {brid}")
        oltc = None
        if entry.get("oltc"):
            o = entry["oltc"]
            oltc = OltcSpec(tuple(float(v) for v in o["tap_ratios"]), int(o.get("max_daily_ops", 4)),
                            int(o.get("initial_tap", 1)))
        branches.append(Branch(
            id=brid, from_bus=fb, to_bus=tb, phases=phases, r=r, x=x,
            s_max=float(entry.get("s_max", 2000.0)) * s_scale,
            switchable=bool(entry.get("switchable", False)), oltc=oltc,
            initial_closed=bool(entry.get("initial_closed", True)),
        ))

    ders = []
    der_seen = set()
    for entry in doc.get("ders", []):
        bid = str(entry["bus"])
        if bid not in bus_by_id:
            raise FeederError(f"der: unknown bus {bid!r}")
        if bid in der_seen:
            raise FeederError(f"der: duplicate unit at bus {bid!r}")
        der_seen.add(bid)
        cap = entry["capacity"]
        if not isinstance(cap, dict):
            cap = {p: cap for p in bus_by_id[bid].phases}
        capacity = {}
        for ph, val in cap.items():
            if ph not in bus_by_id[bid].phases:
                raise FeederError(f"der at {bid}: phase mismatch, capacity on absent phase {ph}")
            capacity[ph] = float(val) * s_scale
        ders.append(DerUnit(bid, capacity))

    limits = parse_limits(doc.get("limits", {}))
    return Feeder(str(doc.get("name", "feeder")), base, tuple(buses), tuple(branches), tuple(ders), limits)


def parse_limits(doc: dict) -> OperatingLimits:
    """Limits document: voltages as p.u. magnitudes, squared here."""
    defaults = OperatingLimits()
    v_ref = doc.get("v_ref")
    rb = doc.get("range_b")
    ra = doc.get("range_a")
    costs = doc.get("costs", {})
    return OperatingLimits(
        u_ref=float(v_ref) ** 2 if v_ref is not None else defaults.u_ref,
        u_min=float(rb[0]) ** 2 if rb else defaults.u_min,
        u_max=float(rb[1]) ** 2 if rb else defaults.u_max,
        ua_min=float(ra[0]) ** 2 if ra else defaults.ua_min,
        ua_max=float(ra[1]) ** 2 if ra else defaults.ua_max,
        imbalance_eps=float(doc.get("imbalance_eps", defaults.imbalance_eps)),
        d1=int(doc.get("d1", defaults.d1)),
        d2=int(doc.get("d2", defaults.d2)),
        switch_max=int(doc.get("switch_max", defaults.switch_max)),
        w_der=float(costs.get("der", defaults.w_der)),
        w_sw=float(costs.get("switch", defaults.w_sw)),
        w_oc=float(costs.get("oltc", defaults.w_oc)),
        big_m=float(doc.get("big_m", defaults.big_m)),
    )


def load_feeder(path: str | Path) -> Feeder:
    return parse_feeder(Path(path).read_text())


def bundled_feeder(name: str) -> Feeder:
    """Load one of the feeders shipped in ``neurovvo/data`` (e.g. ``"desk7"``)."""
    text = resources.files("neurovvo.data").joinpath(f"{name}.json").read_text()
    return parse_feeder(text)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("neurovvo.data").joinpath(name)))


def phase_impedance_matrices(branch: Branch) -> tuple[np.ndarray, np.ndarray]:
    """Voltage-drop sensitivity blocks of the three-phase LinDistFlow model.

    Returns ``(MP, MQ)`` such that ``U_j = U_i + MP @ P + MQ @ Q`` for a
    closed branch. Rows and columns of absent phases are zero.
    """
    r, x = branch.r, branch.x
    mp = r + SQRT3 * _MUTUAL_SIGN * x
    mq = x - SQRT3 * _MUTUAL_SIGN * r
    np.fill_diagonal(mp, -2.0 * np.diag(r))
    np.fill_diagonal(mq, -2.0 * np.diag(x))
    present = np.zeros(3, dtype=bool)
    present[[PHASE_INDEX[p] for p in branch.phases]] = True
    keep = np.outer(present, present)
    return np.where(keep, mp, 0.0), np.where(keep, mq, 0.0)


def adjacency_with_self_loops(feeder: Feeder) -> tuple[np.ndarray, np.ndarray]:
    """``(A + I, diag(row sums))`` over all branches, switches taken as closed."""
    n = feeder.n_buses
    a = np.zeros((n, n))
    for br in feeder.branches:
        i, j = feeder.bus_index(br.from_bus), feeder.bus_index(br.to_bus)
        a[i, j] = a[j, i] = 1.0
    a_tilde = a + np.eye(n)
    return a_tilde, np.diag(a_tilde.sum(axis=1))


def normalized_adjacency(feeder: Feeder) -> np.ndarray:
    a_tilde, d_tilde = adjacency_with_self_loops(feeder)
    inv_sqrt = 1.0 / np.sqrt(np.diag(d_tilde))
    return inv_sqrt[:, None] * a_tilde * inv_sqrt[None, :]


def _reachable(feeder: Feeder, closed) -> set[str]:
    adj: dict[str, list[str]] = {b.id: [] for b in feeder.buses}
    for br, on in zip(feeder.branches, closed):
        if on:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    roots = [b.id for b in feeder.substations] or [feeder.buses[0].id]
    seen = set(roots)
    queue = deque(roots)
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def validate_feeder(feeder: Feeder) -> list[str]:
    """Return human-readable invariant violations; empty when the feeder is usable."""
    out = []
    lim = feeder.limits
    if lim.ua_min < lim.u_min or lim.ua_max > lim.u_max:
        out.append("range nesting: Range A must lie inside Range B")
    if lim.ua_min > lim.ua_max or lim.u_min > lim.u_max:
        out.append("range order: lower voltage limit exceeds upper limit")
    if lim.d2 > lim.d1:
        out.append(f"duration budgets: d2={lim.d2} exceeds d1={lim.d1}")
    if min(lim.w_der, lim.w_sw, lim.w_oc) < 0:
        out.append("costs: negative cost coefficient")
    if lim.imbalance_eps < 0:
        out.append("imbalance: negative epsilon")

    subs = feeder.substations
    if len(subs) != 1:
        out.append(f"substation: expected exactly one substation bus, found {len(subs)}")
    for b in feeder.buses:
        if b.three_phase != (len(b.phases) == 3):
            out.append(f"bus {b.id}: three-phase flag inconsistent")

    for br in feeder.branches:
        if br.switchable and br.oltc is not None:
            out.append(f"branch {br.id}: switchable and OLTC sets must be disjoint")
        if not br.s_max > 0:
            out.append(f"branch {br.id}: thermal capacity must be positive")
        absent = [PHASE_INDEX[p] for p in PHASES if p not in br.phases]
        if absent and (np.any(br.r[absent, :]) or np.any(br.r[:, absent])
                       or np.any(br.x[absent, :]) or np.any(br.x[:, absent])):
            out.append(f"branch {br.id}: nonzero impedance on absent phase")
        if br.oltc is not None:
            o = br.oltc
            if o.n_taps < 1:
                out.append(f"branch {br.id}: OLTC needs at least one tap")
            if any(not t > 0 for t in o.tap_ratios):
                out.append(f"branch {br.id}: tap ratios must be positive")
            if not 1 <= o.initial_tap <= o.n_taps:
                out.append(f"branch {br.id}: initial tap {o.initial_tap} out of range")
            if o.max_daily_ops < 0:
                out.append(f"branch {br.id}: negative OLTC operation budget")
        if not br.switchable and not br.initial_closed:
            out.append(f"branch {br.id}: non-switchable branch must be closed")

    for d in feeder.ders:
        if not d.capacity or any(not c > 0 for c in d.capacity.values()):
            out.append(f"der at {d.bus}: capacities must be positive")

    reach = _reachable(feeder, [True] * len(feeder.branches))
    for b in feeder.buses:
        if b.id not in reach:
            out.append(f"unreachable bus {b.id}")
    return out
