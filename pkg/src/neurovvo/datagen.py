"""Training-sample generation: instances, kernel solves, perturbation and labels.

An instance is a scenario set drawn around the daily profile with random
load and PV multipliers. Accelerated samples solve a deterministic VVO on
one representative scenario (the kernel), move away from its first-stage
decision by a random objective inside an L1 ball, and label the result
with per-scenario recourse solves. Exact samples solve the extensive form.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .feeder import Feeder, bundled_path
from .milp import LinExpr, make_backend, solve
from .scenario import ScenarioSet, base_scenario, load_profile_csv, load_scenarios, sample_scenarios, save_scenarios
from .vvo import (FirstStageDecision, build_deterministic, decision_from_values, evaluate_plan,
                  first_stage_model, first_stage_violations, solve_exact)

log = logging.getLogger(__name__)

DATASET_FORMAT = "neurovvo-dataset"
QUANTILES = ("low", "median", "high")


class DatagenError(RuntimeError):
    pass


@dataclass
class DatagenConfig:
    n_samples: int = 100
    scenarios_per_instance: int = 10
    seed: int = 0
    mode: str = "accelerated"
    eta: float = 0.2
    perturbation: float = 0.2
    load_range: tuple = (0.95, 1.05)
    pv_range: tuple = (1.0, 1.1)
    workers: int = 4
    time_limit: float | None = None
    mip_gap: float | None = 1e-4
    max_failure_fraction: float = 0.1
    backend: object = None

    def __post_init__(self):
        if self.mode not in ("accelerated", "exact"):
            raise ValueError(f"unknown datagen mode {self.mode!r}")
        if self.n_samples < 1 or self.scenarios_per_instance < 1:
            raise ValueError("n_samples and scenarios_per_instance must be positive")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        self.load_range = tuple(float(v) for v in self.load_range)
        self.pv_range = tuple(float(v) for v in self.pv_range)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["load_range"], doc["pv_range"] = list(self.load_range), list(self.pv_range)
        doc.pop("backend")
        doc.pop("workers")
        return doc


def default_profile() -> tuple[np.ndarray, np.ndarray]:
    return load_profile_csv(bundled_path("profile_desk.csv"))


def make_instance(feeder: Feeder, seed: int, n_scenarios: int, perturbation: float = 0.2,
                  load_range=(0.95, 1.05), pv_range=(1.0, 1.1), profile=None) -> ScenarioSet:
    """A scenario set around the profile scaled by random load and PV multipliers."""
    load_shape, pv_shape = profile if profile is not None else default_profile()
    ss_scale, ss_scen = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(ss_scale)
    lm = rng.uniform(*load_range)
    pm = rng.uniform(*pv_range)
    base = base_scenario(feeder, np.asarray(load_shape) * lm, np.asarray(pv_shape) * pm)
    return sample_scenarios(base, n_scenarios, int(ss_scen.generate_state(1)[0]), perturbation)


def select_kernel_scenarios(scenarios: ScenarioSet, which=QUANTILES) -> ScenarioSet:
    """Scenarios at the low / median / high quantile of total net load."""
    order = sorted(range(len(scenarios)), key=lambda k: (scenarios[k].net_load(), k))
    pos = {"low": 0, "median": (len(order) - 1) // 2, "high": len(order) - 1}
    return ScenarioSet([scenarios[order[pos[q]]] for q in which])


def solve_kernel(feeder: Feeder, scenarios: ScenarioSet, backend=None, time_limit=None,
                 mip_gap=1e-4) -> list:
    """Deterministic VVO per scenario; failed solves are skipped (``None`` entries dropped)."""
    backend = make_backend(backend)
    out = []
    for k, sc in enumerate(scenarios):
        model = build_deterministic(feeder, sc)
        res = solve(model, backend, time_limit=time_limit, mip_gap=mip_gap)
        if not res.has_solution:
            log.warning("kernel %d: solver status %s, skipped", k, res.status)
            continue
        out.append(decision_from_values(feeder, sc.horizon, res.assignment))
    return out


def perturb_first_stage(feeder: Feeder, x_star: FirstStageDecision, seed: int, eta: float = 0.2,
                        backend=None) -> FirstStageDecision:
    """Minimize a random linear objective over feasible plans within an L1 ball around ``x_star``.

    The radius is ``eta * len(x_flat)``; for binaries the distance is linear:
    ``sum_{x*=0} x + sum_{x*=1} (1 - x)``.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    T = x_star.horizon
    model, fs = first_stage_model(feeder, T)
    xs = fs.x_flat(feeder)
    ref = x_star.to_flat(feeder)
    rng = np.random.default_rng(seed)
    r = rng.uniform(-1.0, 1.0, size=len(xs))
    dist = LinExpr()
    obj = LinExpr()
    for e, v, c in zip(xs, ref, r):
        obj.iadd(e, c)
        if v > 0.5:
            dist.iadd(1.0).iadd(e, -1.0)
        else:
            dist.iadd(e)
    model.add_le(dist, eta * len(xs), "ball")
    model.set_objective(obj)
    res = solve(model, make_backend(backend), mip_gap=0.0)
    if not res.has_solution:
        raise DatagenError(f"perturbation problem {res.status}")
    return decision_from_values(feeder, T, res.assignment)


@dataclass
class TrainingSample:
    index: int
    seed: int
    scenario_set_ref: str
    x_flat: list
    decision: dict
    label: float
    first_stage_cost: float
    provenance: str
    kernel: dict | None = None
    timing: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc.pop("timing")
        return doc


def label_sample(feeder: Feeder, scenarios: ScenarioSet, x: FirstStageDecision, backend=None,
                 time_limit=None) -> float:
    """Expected recourse cost ``sum_s pi_s Q(x, xi_s)``; raises if a scenario is infeasible."""
    ev = evaluate_plan(feeder, scenarios, x, backend, time_limit=time_limit)
    if not ev.feasible:
        raise DatagenError(f"recourse infeasible in scenarios {sorted(ev.failures())}")
    return max(ev.expected_recourse, 0.0)  # curtailment is nonnegative; drop solver round-off


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _one_sample(feeder: Feeder, cfg: DatagenConfig, index: int, profile):
    """Returns ``(index, scenarios, sample | None, reason)``."""
    t0 = time.perf_counter()
    seed = sample_seed(cfg.seed, index)
    scen = make_instance(feeder, seed, cfg.scenarios_per_instance, cfg.perturbation,
                         cfg.load_range, cfg.pv_range, profile)
    backend = make_backend(cfg.backend)
    timing = {}
    try:
        if cfg.mode == "exact":
            sol = solve_exact(feeder, scen, backend, time_limit=cfg.time_limit, mip_gap=cfg.mip_gap)
            if sol.decision is None:
                return index, scen, None, f"extensive solve {sol.status}"
            x = sol.decision
            label = float(sol.breakdown["curtailment"])
            kernel = None
            timing["solve"] = sol.timings["total"]
        else:
            rng = np.random.default_rng(seed)
            which = QUANTILES[int(rng.integers(len(QUANTILES)))]
            t1 = time.perf_counter()
            kernels = solve_kernel(feeder, select_kernel_scenarios(scen, (which,)), backend,
                                   cfg.time_limit, cfg.mip_gap)
            if not kernels:
                return index, scen, None, "kernel solve failed"
            timing["kernel"] = time.perf_counter() - t1
            t1 = time.perf_counter()
            x = perturb_first_stage(feeder, kernels[0], int(rng.integers(2**31)), cfg.eta, backend)
            timing["perturb"] = time.perf_counter() - t1
            t1 = time.perf_counter()
            label = label_sample(feeder, scen, x, backend, cfg.time_limit)
            timing["label"] = time.perf_counter() - t1
            kernel = {"quantile": which, **kernels[0].to_json()}
    except DatagenError as exc:
        return index, scen, None, str(exc)
    bad = first_stage_violations(feeder, x)
    if bad:
        return index, scen, None, f"first-stage check failed: {bad[0]}"
    timing["total"] = time.perf_counter() - t0
    sample = TrainingSample(index, seed, f"scenarios/sample_{index:05d}", x.to_flat(feeder).tolist(),
                            x.to_json(), label, sum(x.cost_breakdown(feeder)), cfg.mode, kernel, timing)
    return index, scen, sample, None


def _one_sample_star(args):
    return _one_sample(*args)


def generate_dataset(feeder: Feeder, cfg: DatagenConfig, out_dir, profile=None) -> dict:
    """Write ``manifest.json``, ``samples/*.json``, ``scenarios/*`` and ``timings.json``.

    Samples are indexed from 0; failed indices are recorded in the manifest
    and replaced by further indices. More than ``max_failure_fraction``
    failures abort the run. Returns the manifest.
    """
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    (out / "scenarios").mkdir(exist_ok=True)
    profile = profile if profile is not None else default_profile()
    budget = math.floor(cfg.max_failure_fraction * cfg.n_samples)
    t0 = time.perf_counter()
    samples, discarded, timings = [], [], {}
    bus_ids = [b.id for b in feeder.buses]
    next_index = 0
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        while len(samples) < cfg.n_samples:
            need = cfg.n_samples - len(samples)
            batch = [(feeder, cfg, i, profile) for i in range(next_index, next_index + need)]
            next_index += need
            results = pool.map(_one_sample_star, batch) if pool else map(_one_sample_star, batch)
            for index, scen, sample, reason in results:
                if sample is None:
                    discarded.append({"index": index, "reason": reason})
                    log.warning("sample %d discarded: %s", index, reason)
                    if len(discarded) > budget:
                        raise DatagenError(f"{len(discarded)} of {next_index} samples failed "
                                           f"(limit {budget}); last reason: {reason}")
                    continue
                save_scenarios(scen, out / sample.scenario_set_ref, bus_ids)
                (out / "samples" / f"sample_{index:05d}.json").write_text(json.dumps(sample.to_json(), indent=1) + "\n")
                samples.append(sample)
                timings[str(index)] = sample.timing
    finally:
        if pool:
            pool.shutdown()
    samples.sort(key=lambda s: s.index)
    manifest = {
        "format": DATASET_FORMAT,
        "version": 1,
        "feeder": feeder.name,
        "config": cfg.to_json(),
        "n_samples": len(samples),
        "samples": [f"samples/sample_{s.index:05d}.json" for s in samples],
        "seeds": {str(s.index): s.seed for s in samples},
        "discarded": sorted(discarded, key=lambda d: d["index"]),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    total = time.perf_counter() - t0
    (out / "timings.json").write_text(json.dumps({"total": total, "workers": cfg.workers,
                                                  "per_sample": timings}, indent=1) + "\n")
    return manifest


@dataclass
class Dataset:
    root: Path
    manifest: dict
    samples: list

    def scenarios(self, sample) -> ScenarioSet:
        return load_scenarios(self.root / sample["scenario_set_ref"])

    def labels(self) -> np.ndarray:
        return np.array([s["label"] for s in self.samples])

    def triples(self):
        """``(ScenarioSet, x_flat, label)`` per sample, as accepted by training."""
        return [(self.scenarios(s), np.asarray(s["x_flat"], dtype=float), s["label"]) for s in self.samples]

    def timings(self) -> dict:
        path = self.root / "timings.json"
        return json.loads(path.read_text()) if path.exists() else {}


def load_dataset(path) -> Dataset:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("format") != DATASET_FORMAT:
        raise DatagenError(f"{root}: not a dataset directory")
    samples = [json.loads((root / rel).read_text()) for rel in manifest["samples"]]
    return Dataset(root, manifest, samples)
