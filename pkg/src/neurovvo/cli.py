"""Command-line entry point.

Commands::

    neurovvo feeder validate FEEDER
    neurovvo datagen scenarios --feeder F --n N --out PATH
    neurovvo datagen samples --feeder F --n N --mode accelerated --out DIR
    neurovvo train --feeder F --dataset DIR --out weights.json
    neurovvo solve --feeder F --scenarios PATH --mode exact|neural [--weights W] --out sol.json
    neurovvo bench --feeder F --weights W --instances 20 --scenarios 50 --out bench.csv
    neurovvo report bench.csv [--trace trace.csv]

``FEEDER`` is a path to a feeder JSON file or the name of a bundled feeder
(``toy2``, ``toy4``, ``toy8``, ``desk7``, ``ieee123``). Every command takes
``--seed`` and ``--config``; the config file is JSON with the keys listed in
:data:`DEFAULT_CONFIG`.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import statistics
import sys
import warnings
from pathlib import Path

import numpy as np

from .feeder import FeederError, bundled_path, load_feeder, validate_feeder
from .scenario import ScenarioFormatError, base_scenario, load_profile_csv, load_scenarios, sample_scenarios, \
    save_scenarios

log = logging.getLogger("neurovvo")

DEFAULT_CONFIG = {
    # solver: {"backend": "highs" | "cbc", "cmd": path to cbc, "threads": int}
    "solver": {"backend": "highs"},
    "time_limit": 3600.0,
    "mip_gap": 1e-4,
    # instance family used by datagen and bench
    "instances": {"perturbation": 0.2, "load_range": [0.95, 1.05], "pv_range": [1.0, 1.1], "profile": None},
    "datagen": {"scenarios_per_instance": 10, "eta": 0.2, "workers": 1, "max_failure_fraction": 0.1},
    # surrogate: an architecture profile name plus any SurrogateConfig field
    "surrogate": {"profile": "desk", "epochs": 600, "val_fraction": 0.1},
}

BENCH_FIELDS = ["instance", "seed", "n_scenarios", "exact_objective", "neural_objective", "neural_predicted",
                "gap_pct", "exact_time", "neural_time", "speedup", "exact_status", "neural_status",
                "exact_solution", "neural_solution"]
AGGREGATES = ("mean", "median")


class CliError(RuntimeError):
    """A user-facing failure; printed without a traceback."""


def load_config(path) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is None:
        return cfg
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    unknown = set(doc) - set(cfg)
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    for k, v in doc.items():
        if isinstance(cfg[k], dict) and isinstance(v, dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    return cfg


def resolve_feeder(spec: str):
    path = Path(spec)
    if not path.exists() and not spec.endswith(".json"):
        candidate = bundled_path(f"{spec}.json")
        if candidate.exists():
            path = candidate
    try:
        return load_feeder(path)
    except OSError as exc:
        raise CliError(f"cannot read feeder {spec}: {exc}") from exc


def _profile(cfg):
    from .datagen import default_profile
    p = cfg["instances"].get("profile")
    return load_profile_csv(p) if p else default_profile()


# -- feeder ---------------------------------------------------------------
def cmd_feeder_validate(args, cfg) -> int:
    try:
        feeder = resolve_feeder(args.feeder)
    except FeederError as exc:
        print(json.dumps({"feeder": args.feeder, "valid": False, "issues": [str(exc)]}, indent=1))
        return 1
    issues = validate_feeder(feeder)
    print(json.dumps({"feeder": feeder.name, "valid": not issues, "issues": issues,
                      "buses": feeder.n_buses, "branches": len(feeder.branches),
                      "switchable": len(feeder.switchable_branches), "oltc": len(feeder.oltc_branches),
                      "ders": len(feeder.ders)}, indent=1))
    return 0 if not issues else 1


# -- datagen --------------------------------------------------------------
def cmd_datagen_scenarios(args, cfg) -> int:
    feeder = resolve_feeder(args.feeder)
    load_shape, pv_shape = _profile(cfg)
    base = base_scenario(feeder, np.asarray(load_shape) * args.load_mult, np.asarray(pv_shape) * args.pv_mult)
    pert = cfg["instances"]["perturbation"] if args.perturbation is None else args.perturbation
    scen = sample_scenarios(base, args.n, args.seed, pert)
    out = save_scenarios(scen, args.out, [b.id for b in feeder.buses])
    print(json.dumps({"scenarios": str(out), "n": len(scen), "horizon": scen.horizon}))
    return 0


def cmd_datagen_samples(args, cfg) -> int:
    from .datagen import DatagenConfig, generate_dataset
    feeder = resolve_feeder(args.feeder)
    dg, inst = cfg["datagen"], cfg["instances"]
    dcfg = DatagenConfig(
        n_samples=args.n, scenarios_per_instance=args.scenarios_per_instance or dg["scenarios_per_instance"],
        seed=args.seed, mode=args.mode, eta=dg["eta"], perturbation=inst["perturbation"],
        load_range=inst["load_range"], pv_range=inst["pv_range"],
        workers=args.workers or dg["workers"], time_limit=cfg["time_limit"], mip_gap=cfg["mip_gap"],
        max_failure_fraction=dg["max_failure_fraction"], backend=cfg["solver"])
    manifest = generate_dataset(feeder, dcfg, args.out, _profile(cfg))
    print(json.dumps({"dataset": str(args.out), "n_samples": manifest["n_samples"],
                      "discarded": len(manifest["discarded"])}))
    return 0


# -- train ----------------------------------------------------------------
def surrogate_config(cfg, args):
    from .surrogate import SurrogateConfig
    doc = dict(cfg["surrogate"])
    if getattr(args, "profile", None):
        doc["profile"] = args.profile
    if getattr(args, "epochs", None):
        doc["epochs"] = args.epochs
    doc["seed"] = args.seed
    try:
        return SurrogateConfig.from_json(doc)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def cmd_train(args, cfg) -> int:
    from .datagen import load_dataset
    from .surrogate import TrainingData, train
    feeder = resolve_feeder(args.feeder)
    ds = load_dataset(args.dataset)
    data = TrainingData.from_samples(feeder, ds.triples())
    scfg = surrogate_config(cfg, args)
    weights, hist = train(data, scfg, feeder)
    weights.meta["dataset"] = str(args.dataset)
    weights.save(args.out)
    if args.history:
        with open(args.history, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "batch_loss", "val_loss"])
            for e, (a, b) in enumerate(zip(hist.loss, hist.batch_loss)):
                w.writerow([e, repr(a), repr(b), repr(hist.val_loss[e]) if hist.val_loss else ""])
    print(json.dumps({"weights": str(args.out), "samples": len(data), "final_loss": hist.loss[-1],
                      "best_epoch": hist.best_epoch}))
    return 0


# -- solve ----------------------------------------------------------------
def run_solve(feeder, scenarios, mode, weights, cfg, capture_log=False):
    from .embed import solve_neural
    from .vvo import solve_exact
    if mode == "exact":
        return solve_exact(feeder, scenarios, cfg["solver"], time_limit=cfg["time_limit"],
                           mip_gap=cfg["mip_gap"], capture_log=capture_log)
    return solve_neural(feeder, scenarios, weights, cfg["solver"], time_limit=cfg["time_limit"],
                        mip_gap=cfg["mip_gap"], capture_log=capture_log)


def _load_weights(path):
    from .surrogate import SurrogateWeights, WeightsError
    try:
        return SurrogateWeights.load(path)
    except (OSError, WeightsError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read weights {path}: {exc}") from exc


def cmd_solve(args, cfg) -> int:
    from .vvo import verify_solution
    feeder = resolve_feeder(args.feeder)
    try:
        scen = load_scenarios(args.scenarios)
    except ScenarioFormatError as exc:
        raise CliError(str(exc)) from exc
    weights = _load_weights(args.weights) if args.mode == "neural" else None
    sol = run_solve(feeder, scen, args.mode, weights, cfg, capture_log=args.trace is not None)
    if sol.decision is not None:
        rep = verify_solution(feeder, sol, scen)
        sol.extra["verification"] = {"ok": rep.ok, "issues": rep.issues[:20]}
    sol.save(args.out)
    if args.trace:
        write_trace(args.trace, [(args.mode, p) for p in sol.extra.get("trace", [])])
    print(json.dumps({"solution": str(args.out), "status": sol.status, "objective": sol.objective}))
    return 0 if sol.status in ("optimal", "feasible") else 3


# -- bench ----------------------------------------------------------------
def optimality_gap(neural_cost: float, exact_cost: float) -> float:
    """Percent gap of the neural plan's true cost over the exact optimum.

    With a zero exact cost the gap is 0 for a zero-cost plan and infinite otherwise.
    """
    if abs(exact_cost) < 1e-9:
        return 0.0 if abs(neural_cost) < 1e-6 else float("inf")
    return (neural_cost - exact_cost) / abs(exact_cost) * 100.0


def bench_row(instance, seed, n_scen, exact, neural, exact_file, neural_file) -> dict:
    ok = exact.objective is not None and neural.objective is not None
    gap = optimality_gap(neural.objective, exact.objective) if ok else float("nan")
    te, tn = exact.timings.get("total", float("nan")), neural.timings.get("total", float("nan"))
    return {"instance": instance, "seed": seed, "n_scenarios": n_scen,
            "exact_objective": exact.objective, "neural_objective": neural.objective,
            "neural_predicted": neural.extra.get("predicted", {}).get("objective"),
            "gap_pct": gap, "exact_time": te, "neural_time": tn, "speedup": te / tn if tn > 0 else float("nan"),
            "exact_status": exact.status, "neural_status": neural.status,
            "exact_solution": exact_file, "neural_solution": neural_file}


def aggregate(rows) -> dict:
    """Mean and median of gap and speedup over finite values."""
    out = {}
    for key in ("gap_pct", "speedup", "exact_time", "neural_time"):
        vals = [float(r[key]) for r in rows if r[key] not in ("", None) and np.isfinite(float(r[key]))]
        out[key] = {"mean": statistics.fmean(vals) if vals else float("nan"),
                    "median": statistics.median(vals) if vals else float("nan")}
    out["n"] = len(rows)
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_bench(path, rows) -> None:
    agg = aggregate(rows)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, BENCH_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in BENCH_FIELDS})
        for stat in AGGREGATES:
            w.writerow({"instance": stat, **{k: _fmt(agg[k][stat]) for k in ("gap_pct", "speedup",
                                                                            "exact_time", "neural_time")}})


def cmd_bench(args, cfg) -> int:
    from .datagen import make_instance, sample_seed
    feeder = resolve_feeder(args.feeder)
    weights = _load_weights(args.weights)
    counts = [int(s) for s in str(args.scenarios).split(",")]
    out = Path(args.out)
    sol_dir = Path(args.solutions) if args.solutions else out.with_suffix(".solutions")
    sol_dir.mkdir(parents=True, exist_ok=True)
    inst = cfg["instances"]
    profile = _profile(cfg)
    rows = []
    for k in range(args.instances):
        seed = sample_seed(args.seed, k)
        for n in counts:
            scen = make_instance(feeder, seed, n, inst["perturbation"], inst["load_range"], inst["pv_range"], profile)
            exact = run_solve(feeder, scen, "exact", None, cfg, capture_log=True)
            with warnings.catch_warnings():
                warnings.simplefilter("always")
                neural = run_solve(feeder, scen, "neural", weights, cfg, capture_log=True)
            names = []
            for tag, sol in (("exact", exact), ("neural", neural)):
                name = f"inst{k:03d}_S{n}_{tag}.json"
                sol.save(sol_dir / name)
                names.append(str(Path(sol_dir.name) / name))
            row = bench_row(k, seed, n, exact, neural, *names)
            rows.append(row)
            log.info("instance %d S=%d gap %.3f%% speedup %.2f", k, n, row["gap_pct"], row["speedup"])
    write_bench(out, rows)
    agg = aggregate(rows)
    print(json.dumps({"bench": str(out), "rows": len(rows), "median_gap_pct": agg["gap_pct"]["median"],
                      "median_speedup": agg["speedup"]["median"]}))
    return 0


# -- report ---------------------------------------------------------------
def read_bench(path) -> list:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if r.get("instance") not in AGGREGATES]
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise CliError(f"{path}: empty report, no benchmark rows")
    missing = set(BENCH_FIELDS) - set(rows[0])
    if missing:
        raise CliError(f"{path}: missing columns {sorted(missing)}")
    return rows


def write_trace(path, runs) -> None:
    """``runs`` holds ``(run label, (time, objective))`` pairs."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "time_s", "incumbent_objective"])
        for label, (t, v) in runs:
            w.writerow([label, repr(float(t)), repr(float(v))])


def format_table(agg) -> str:
    lines = [f"instances: {agg['n']}", f"{'metric':<12}{'mean':>14}{'median':>14}"]
    for key, label in (("gap_pct", "gap (%)"), ("speedup", "speedup"), ("exact_time", "exact (s)"),
                       ("neural_time", "neural (s)")):
        lines.append(f"{label:<12}{agg[key]['mean']:>14.4f}{agg[key]['median']:>14.4f}")
    return "\n".join(lines)


def cmd_report(args, cfg) -> int:
    rows = read_bench(args.bench)
    agg = aggregate(rows)
    table = format_table(agg)
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n")
    if args.trace:
        from .vvo import VvoSolution
        root = Path(args.bench).parent
        runs = []
        for r in rows:
            for tag in ("exact", "neural"):
                ref = r[f"{tag}_solution"]
                if not ref:
                    continue
                sol = VvoSolution.load(root / ref)
                label = f"{r['instance']}:S{r['n_scenarios']}:{tag}"
                runs.extend((label, tuple(p)) for p in sol.extra.get("trace", []))
        write_trace(args.trace, runs)
    return 0


# -- parser ---------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--config", help="JSON config file")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="neurovvo", description="Stochastic Volt-VAR optimization with a "
                                "neural recourse surrogate")
    sub = p.add_subparsers(dest="command", required=True)

    fd = sub.add_parser("feeder", help="feeder utilities").add_subparsers(dest="action", required=True)
    v = fd.add_parser("validate", parents=[common], help="check a feeder file")
    v.add_argument("feeder")
    v.set_defaults(func=cmd_feeder_validate)

    dg = sub.add_parser("datagen", help="scenario sets and training samples").add_subparsers(
        dest="action", required=True)
    s = dg.add_parser("scenarios", parents=[common], help="sample a scenario set around the profile")
    s.add_argument("--feeder", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--load-mult", type=float, default=1.0)
    s.add_argument("--pv-mult", type=float, default=1.0)
    s.add_argument("--perturbation", type=float)
    s.set_defaults(func=cmd_datagen_scenarios)
    m = dg.add_parser("samples", parents=[common], help="labelled training samples")
    m.add_argument("--feeder", required=True)
    m.add_argument("--n", type=int, required=True)
    m.add_argument("--mode", choices=("accelerated", "exact"), default="accelerated")
    m.add_argument("--out", required=True)
    m.add_argument("--scenarios-per-instance", type=int)
    m.add_argument("--workers", type=int)
    m.set_defaults(func=cmd_datagen_samples)

    t = sub.add_parser("train", parents=[common], help="fit the surrogate to a dataset")
    t.add_argument("--feeder", required=True)
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--profile", choices=("desk", "full"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--history", help="CSV of per-epoch losses")
    t.set_defaults(func=cmd_train)

    so = sub.add_parser("solve", parents=[common], help="solve one instance")
    so.add_argument("--feeder", required=True)
    so.add_argument("--scenarios", required=True)
    so.add_argument("--mode", choices=("exact", "neural"), default="exact")
    so.add_argument("--weights")
    so.add_argument("--out", required=True)
    so.add_argument("--trace", help="CSV of improving incumbents from the solver log")
    so.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", parents=[common], help="exact against neural on generated instances")
    b.add_argument("--feeder", required=True)
    b.add_argument("--weights", required=True)
    b.add_argument("--instances", type=int, default=20)
    b.add_argument("--scenarios", default="50", help="comma-separated scenario counts")
    b.add_argument("--out", required=True)
    b.add_argument("--solutions", help="directory for solution files (default <out>.solutions)")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", parents=[common], help="aggregate a bench CSV")
    r.add_argument("bench")
    r.add_argument("--out", help="write the table here as well")
    r.add_argument("--trace", help="CSV of incumbent traces from the stored solutions")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "solve" and args.mode == "neural" and not args.weights:
        parser.error("solve --mode neural requires --weights")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except CliError as exc:
        print(f"neurovvo: error: {exc}", file=sys.stderr)
        return 1
