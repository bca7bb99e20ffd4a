"""Uncertainty scenarios: sampling, min/mean/max pooling and CSV persistence.

A :class:`Scenario` stores the three uncertain channels (available DER
active power, active load, reactive load) as ``(N, 3, T)`` arrays in
per-unit, indexed by bus, phase (a, b, c) and period.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feeder import PHASE_INDEX, PHASES, Feeder

CHANNELS = ("pg_hat", "pd_hat", "qd_hat")
POOLS = ("min", "mean", "max")
N_FEATURES = len(CHANNELS) * len(POOLS)


class ScenarioFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Scenario:
    pg_hat: np.ndarray
    pd_hat: np.ndarray
    qd_hat: np.ndarray

    def __post_init__(self):
        shapes = {self.pg_hat.shape, self.pd_hat.shape, self.qd_hat.shape}
        if len(shapes) != 1 or self.pg_hat.ndim != 3 or self.pg_hat.shape[1] != 3:
            raise ValueError(f"channel shapes must agree and be (N, 3, T), got {shapes}")
        if np.any(self.pg_hat < 0):
            raise ValueError("available DER power must be nonnegative")

    @property
    def horizon(self) -> int:
        return self.pg_hat.shape[2]

    @property
    def n_buses(self) -> int:
        return self.pg_hat.shape[0]

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def stacked(self) -> np.ndarray:
        """``(3 channels, N, 3 phases, T)``."""
        return np.stack([self.pg_hat, self.pd_hat, self.qd_hat])

    def net_load(self) -> float:
        return float(self.pd_hat.sum() - self.pg_hat.sum())

    def equals(self, other: "Scenario") -> bool:
        return all(np.array_equal(self.channel(c), other.channel(c)) for c in CHANNELS)


class ScenarioSet:
    """A finite scenario set with probabilities summing to one."""

    def __init__(self, scenarios, probabilities=None):
        scenarios = list(scenarios)
        if not scenarios:
            raise ValueError("a scenario set needs at least one scenario")
        shape = scenarios[0].pg_hat.shape
        if any(s.pg_hat.shape != shape for s in scenarios):
            raise ValueError("all scenarios must share (N, 3, T)")
        if probabilities is None:
            probabilities = np.full(len(scenarios), 1.0 / len(scenarios))
        p = np.asarray(probabilities, dtype=float)
        if p.shape != (len(scenarios),) or np.any(p <= 0):
            raise ValueError("probabilities must be positive, one per scenario")
        self.scenarios = scenarios
        self.probabilities = p / p.sum()
        # scenarios are frozen, so the stacked tensor is built once here
        parts = [a for sc in scenarios for a in (sc.pg_hat, sc.pd_hat, sc.qd_hat)]
        self._array = np.array(parts, dtype=float).reshape((len(scenarios), len(CHANNELS)) + shape)
        self._array.flags.writeable = False

    def __len__(self):
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    def __getitem__(self, k) -> Scenario:
        return self.scenarios[k]

    @property
    def horizon(self) -> int:
        return self.scenarios[0].horizon

    @property
    def n_buses(self) -> int:
        return self.scenarios[0].n_buses

    def array(self) -> np.ndarray:
        """``(S, 3 channels, N, 3 phases, T)``, read-only."""
        return self._array

    def subset(self, indices) -> "ScenarioSet":
        idx = list(indices)
        return ScenarioSet([self.scenarios[k] for k in idx], self.probabilities[idx])

    def resample(self, n: int, seed: int) -> "ScenarioSet":
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(self), size=n, replace=True, p=self.probabilities)
        return ScenarioSet([self.scenarios[k] for k in idx])

    def permuted(self, order) -> "ScenarioSet":
        return self.subset(order)

    def equals(self, other: "ScenarioSet") -> bool:
        return (len(self) == len(other)
                and np.array_equal(self.probabilities, other.probabilities)
                and all(a.equals(b) for a, b in zip(self, other)))


def base_scenario(feeder: Feeder, load_shape, pv_shape) -> Scenario:
    """Nominal loads and DER capacities modulated by per-period multipliers."""
    load_shape = np.asarray(load_shape, dtype=float)
    pv_shape = np.asarray(pv_shape, dtype=float)
    if load_shape.shape != pv_shape.shape or load_shape.ndim != 1:
        raise ValueError("load and pv shapes must be 1-D of equal length")
    n, t = feeder.n_buses, load_shape.size
    p_nom = np.zeros((n, 3))
    q_nom = np.zeros((n, 3))
    for k, bus in enumerate(feeder.buses):
        for ph, (p, q) in bus.load.items():
            p_nom[k, PHASE_INDEX[ph]] = p
            q_nom[k, PHASE_INDEX[ph]] = q
    g_nom = np.zeros((n, 3))
    for der in feeder.ders:
        k = feeder.bus_index(der.bus)
        for ph, cap in der.capacity.items():
            g_nom[k, PHASE_INDEX[ph]] = cap
    return Scenario(
        pg_hat=g_nom[:, :, None] * np.clip(pv_shape, 0.0, None)[None, None, :],
        pd_hat=p_nom[:, :, None] * load_shape[None, None, :],
        qd_hat=q_nom[:, :, None] * load_shape[None, None, :],
    )


def load_profile_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``t,load,pv`` multiplier table."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ScenarioFormatError(f"{path}: empty profile")
    rows.sort(key=lambda r: int(r["t"]))
    return (np.array([float(r["load"]) for r in rows]), np.array([float(r["pv"]) for r in rows]))


def sample_scenarios(base: Scenario, n: int, seed: int, perturbation: float) -> ScenarioSet:
    """``n`` scenarios with every entry scaled by ``1 + u``, ``u ~ U(-p, p)``.

    Each scenario draws from its own child of ``SeedSequence(seed)`` so the
    result does not depend on how the work is split across workers.
    """
    if n <= 0:
        raise ValueError("need at least one scenario")
    if not 0.0 <= perturbation < 1.0:
        raise ValueError("perturbation must lie in [0, 1)")
    children = np.random.SeedSequence(seed).spawn(n)
    return ScenarioSet([_perturbed(base, np.random.default_rng(ss), perturbation) for ss in children])


def _perturbed(base: Scenario, rng: np.random.Generator, perturbation: float) -> Scenario:
    out = {}
    for name in CHANNELS:
        arr = base.channel(name)
        u = rng.uniform(-perturbation, perturbation, size=arr.shape)
        out[name] = arr * (1.0 + u)
    return Scenario(**out)


def bus_channels(scenarios: ScenarioSet) -> np.ndarray:
    """Per-bus channel data ``(S, N, T, 3)``, phases summed."""
    arr = scenarios.array()  # (S, C, N, P, T)
    # explicit adds: same rounding as a phase sum, several times faster on a strided axis
    return (arr[:, :, :, 0] + arr[:, :, :, 1] + arr[:, :, :, 2]).transpose(0, 2, 3, 1)


def pool_scenarios(scenarios: ScenarioSet) -> np.ndarray:
    """Element-wise min / mean / max over scenarios, ``(N, T, 9)``.

    Feature order is pool-major: ``[min(pg, pd, qd), mean(...), max(...)]``.
    The mean is taken over the sorted scenario axis as an offset from the
    minimum, which makes the result exactly invariant to scenario order and
    exactly equal to the common value when all scenarios coincide.
    """
    if len(scenarios) == 0:
        raise ValueError("cannot pool an empty scenario set")
    # scenario axis last and contiguous, so the sort and sum run on rows
    data = np.sort(np.ascontiguousarray(bus_channels(scenarios).transpose(1, 2, 3, 0)), axis=-1)
    lo = data[..., 0]
    hi = data[..., -1]
    mean = lo + (data - lo[..., None]).sum(axis=-1) / data.shape[-1]
    mean = np.clip(mean, lo, hi)
    return np.concatenate([lo, mean, hi], axis=-1)


def reshape_temporal(pooled: np.ndarray) -> list[np.ndarray]:
    """Split an ``(N, T, F)`` feature into ``T`` slices of shape ``(N, F)``."""
    return [pooled[:, t, :] for t in range(pooled.shape[1])]


def save_scenarios(scenarios: ScenarioSet, path, bus_ids=None) -> Path:
    """Write ``<path>.csv`` (long format, nonzero entries) and ``<path>.json`` manifest.

    ``path`` may be given with or without suffix; the manifest path is returned.
    """
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".csv", ".json") else path
    csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    n, t = scenarios.n_buses, scenarios.horizon
    bus_ids = list(bus_ids) if bus_ids is not None else [str(k) for k in range(n)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scenario", "bus", "phase", "channel", "t", "value"])
    rows = 0
    for s, sc in enumerate(scenarios):
        for name in CHANNELS:
            arr = sc.channel(name)
            for k, ph, tt in zip(*np.nonzero(arr)):
                writer.writerow([s, bus_ids[k], PHASES[ph], name, tt, repr(float(arr[k, ph, tt]))])
                rows += 1
    csv_path.write_text(buf.getvalue())
    manifest = {
        "format": "neurovvo-scenarios",
        "version": 1,
        "csv": csv_path.name,
        "n_scenarios": len(scenarios),
        "n_buses": n,
        "horizon": t,
        "buses": bus_ids,
        "units": "pu",
        "n_rows": rows,
        "probabilities": [repr(float(p)) for p in scenarios.probabilities],
    }
    json_path.write_text(json.dumps(manifest, indent=1) + "\n")
    return json_path


def load_scenarios(path) -> ScenarioSet:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".csv", ".json") else path
    json_path = stem.with_suffix(".json")
    try:
        manifest = json.loads(json_path.read_text())
        n_s, n, t = manifest["n_scenarios"], manifest["n_buses"], manifest["horizon"]
        bus_pos = {b: k for k, b in enumerate(manifest["buses"])}
        probs = np.array([float(p) for p in manifest["probabilities"]])
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ScenarioFormatError(f"{json_path}: bad manifest ({exc})") from exc
    data = {c: np.zeros((n_s, n, 3, t)) for c in CHANNELS}
    rows = 0
    csv_path = json_path.parent / manifest.get("csv", stem.with_suffix(".csv").name)
    try:
        text = csv_path.read_text()
    except OSError as exc:
        raise ScenarioFormatError(str(exc)) from exc
    if text and not text.endswith("\n"):
        raise ScenarioFormatError(f"{csv_path}: truncated (no trailing newline)")
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["scenario", "bus", "phase", "channel", "t", "value"]:
        raise ScenarioFormatError(f"{csv_path}: unexpected header {header}")
    for line_no, row in enumerate(reader, start=2):
        try:
            s, bus, ph, ch, tt, val = row
            data[ch][int(s), bus_pos[bus], PHASE_INDEX[ph], int(tt)] = float(val)
        except (ValueError, KeyError, IndexError) as exc:
            raise ScenarioFormatError(f"{csv_path}:{line_no}: malformed row {row!r}") from exc
        rows += 1
    if rows != manifest.get("n_rows", rows):
        raise ScenarioFormatError(f"{csv_path}: expected {manifest['n_rows']} rows, found {rows}")
    scen = [Scenario(data["pg_hat"][s], data["pd_hat"][s], data["qd_hat"][s]) for s in range(n_s)]
    out = ScenarioSet(scen, probs)
    if abs(probs.sum() - 1.0) <= 1e-12:
        out.probabilities = probs  # keep the persisted bits
    return out
