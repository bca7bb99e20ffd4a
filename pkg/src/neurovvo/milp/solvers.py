"""Solver backends and the generic ``solve`` entry point.

Two backends ship:

* :class:`HighsBackend` drives HiGHS in-process through ``highspy``.
* :class:`CommandBackend` writes free MPS, runs a solver executable and
  parses its solution dump (CBC's ``-solu`` text format).
"""

from __future__ import annotations

import logging
import math
import os
import re
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import MilpModel, Violation, check_assignment
from .mps import export_mps, mangle

log = logging.getLogger(__name__)

STATUSES = ("optimal", "feasible", "infeasible", "unbounded", "timeout")
FEAS_TOL = 1e-6
INT_TOL = 1e-5


class SolverError(RuntimeError):
    pass


@dataclass
class SolveResult:
    status: str
    objective: float | None = None
    values: np.ndarray | None = None
    names: list[str] | None = None
    wall_time: float = 0.0
    mip_gap: float | None = None
    backend: str = ""
    log_text: str = ""
    violations: list[Violation] = field(default_factory=list)

    @property
    def has_solution(self) -> bool:
        return self.status in ("optimal", "feasible")

    @property
    def assignment(self) -> dict[str, float] | None:
        if self.values is None:
            return None
        return dict(zip(self.names, self.values.tolist()))

    def __getitem__(self, name: str) -> float:
        return self.values[self.names.index(name)]


class HighsBackend:
    """In-process HiGHS via ``highspy``."""

    name = "highs"

    def __init__(self, threads: int | None = None, options: dict | None = None):
        self.threads = threads
        self.options = dict(options or {})

    def run(self, model: MilpModel, time_limit: float | None, mip_gap: float | None,
            capture_log: bool = False) -> SolveResult:
        import highspy

        c, const, indptr, indices, data, row_lo, row_hi, col_lo, col_hi, is_int = model.to_arrays()
        h = highspy.Highs()
        h.setOptionValue("output_flag", bool(capture_log))
        h.setOptionValue("log_to_console", False)
        log_file = None
        if capture_log:
            fd, log_file = tempfile.mkstemp(suffix=".log", prefix="highs_")
            os.close(fd)
            h.setOptionValue("log_file", log_file)
        if time_limit is not None:
            h.setOptionValue("time_limit", float(time_limit))
        if mip_gap is not None:
            h.setOptionValue("mip_rel_gap", float(mip_gap))
        h.setOptionValue("mip_feasibility_tolerance", 1e-7)
        h.setOptionValue("primal_feasibility_tolerance", 1e-8)
        if self.threads:
            h.setOptionValue("threads", int(self.threads))
        for k, v in self.options.items():
            h.setOptionValue(k, v)

        inf = highspy.kHighsInf
        lp = highspy.HighsLp()
        lp.num_col_ = model.n_vars
        lp.num_row_ = model.n_constraints
        lp.col_cost_ = c
        lp.offset_ = const
        lp.col_lower_ = np.where(np.isinf(col_lo), -inf, col_lo)
        lp.col_upper_ = np.where(np.isinf(col_hi), inf, col_hi)
        lp.row_lower_ = np.where(np.isinf(row_lo), -inf, row_lo)
        lp.row_upper_ = np.where(np.isinf(row_hi), inf, row_hi)
        lp.a_matrix_.format_ = highspy.MatrixFormat.kRowwise
        lp.a_matrix_.start_ = indptr.astype(np.int32)
        lp.a_matrix_.index_ = indices.astype(np.int32)
        lp.a_matrix_.value_ = data
        if is_int.any():
            lp.integrality_ = [highspy.HighsVarType.kInteger if f else highspy.HighsVarType.kContinuous
                               for f in is_int]
        t0 = time.perf_counter()
        h.passModel(lp)
        h.run()
        wall = time.perf_counter() - t0

        status = h.getModelStatus()
        S = highspy.HighsModelStatus
        info = h.getInfo()
        sol = h.getSolution()
        has_primal = info.primal_solution_status == 2 or (
            info.primal_solution_status != 0 and len(sol.col_value) == model.n_vars and status == S.kOptimal)
        if status == S.kOptimal:
            st = "optimal"
        elif status in (S.kInfeasible,):
            st = "infeasible"
        elif status == S.kUnbounded:
            st = "unbounded"
        elif status == S.kUnboundedOrInfeasible:
            st = "infeasible"
        elif status in (S.kTimeLimit, S.kIterationLimit, S.kSolutionLimit, S.kInterrupt):
            st = "feasible" if has_primal else "timeout"
        else:
            st = "feasible" if has_primal else "infeasible"
        text = ""
        if log_file:
            h.setOptionValue("output_flag", False)
            text = Path(log_file).read_text(errors="replace")
            os.unlink(log_file)
        res = SolveResult(status=st, wall_time=wall, backend=self.name, log_text=text)
        if st in ("optimal", "feasible"):
            res.values = np.asarray(sol.col_value, dtype=float)
            res.objective = float(info.objective_function_value)
            gap = info.mip_gap
            res.mip_gap = 0.0 if (st == "optimal" and not is_int.any()) else (float(gap) if math.isfinite(gap) else None)
        return res


def default_cbc_command() -> str | None:
    exe = shutil.which("cbc")
    if exe:
        return exe
    try:  # pulp bundles a CBC binary
        from pulp.apis.coin_api import COIN_CMD

        path = COIN_CMD().path
        if path and os.path.exists(path):
            return path
    except Exception:  # pragma: no cover - pulp missing or unusual layout
        pass
    try:
        import pulp

        cand = Path(pulp.__file__).parent / "solverdir" / "cbc" / "linux" / "i64" / "cbc"
        if cand.exists():
            return str(cand)
    except ImportError:
        pass
    return None


CBC_ARGS = ["{mps}", "-sec", "{time}", "-ratio", "{gap}", "-solve", "-solu", "{sol}"]


class CommandBackend:
    """Process-based backend: MPS in, textual solution out.

    ``args`` is a template list; ``{mps}``, ``{sol}``, ``{time}`` and ``{gap}``
    are substituted. Only the CBC solution format is parsed at present.
    """

    name = "cbc"

    def __init__(self, cmd: str | None = None, args: list[str] | None = None, fmt: str = "cbc"):
        self.cmd = cmd or default_cbc_command()
        self.args = list(args or CBC_ARGS)
        if fmt != "cbc":
            raise ValueError(f"unsupported solution format {fmt!r}")
        self.fmt = fmt

    def run(self, model: MilpModel, time_limit: float | None, mip_gap: float | None,
            capture_log: bool = False) -> SolveResult:
        if not self.cmd:
            raise SolverError("no solver executable configured (solver.cmd) and cbc not found")
        if model.n_constraints == 0:
            # CBC aborts on models without rows; those are separable and solved here
            return _solve_rowless(model, self.name)
        with tempfile.TemporaryDirectory(prefix="neurovvo_") as tmp:
            mps = Path(tmp) / "model.mps"
            sol = Path(tmp) / "model.sol"
            mps.write_text(export_mps(model))
            subs = {"mps": str(mps), "sol": str(sol),
                    "time": f"{time_limit if time_limit is not None else 1e8:g}",
                    "gap": f"{mip_gap if mip_gap is not None else 1e-4:g}"}
            argv = [self.cmd] + [a.format(**subs) for a in self.args]
            t0 = time.perf_counter()
            try:
                proc = subprocess.run(argv, capture_output=True, text=True, check=False)
            except OSError as exc:
                raise SolverError(f"failed to launch {self.cmd}: {exc}") from exc
            wall = time.perf_counter() - t0
            if not sol.exists():
                raise SolverError(f"solver produced no solution file (exit {proc.returncode}): {proc.stderr[-500:]}")
            status, obj, values = parse_cbc_solution(sol.read_text(), model)
        res = SolveResult(status=status, wall_time=wall, backend=self.name, log_text=proc.stdout)
        if status in ("optimal", "feasible"):
            res.values = values
            res.objective = obj
            res.mip_gap = 0.0 if status == "optimal" else parse_cbc_gap(proc.stdout)
        return res


def _solve_rowless(model: MilpModel, backend: str) -> SolveResult:
    values = np.zeros(model.n_vars)
    coef = model.objective.terms
    for v in model.variables:
        c = coef.get(v.index, 0.0)
        target = v.lo if c > 0 else v.hi if c < 0 else (v.lo if math.isfinite(v.lo) else min(v.hi, 0.0))
        if not math.isfinite(target):
            if c != 0.0:
                return SolveResult(status="unbounded", backend=backend)
            target = 0.0
        values[v.index] = math.ceil(target) if v.is_integer and c > 0 else math.floor(target) if v.is_integer else target
    return SolveResult(status="optimal", objective=model.objective.value(values), values=values,
                       mip_gap=0.0, backend=backend)


def parse_cbc_solution(text: str, model: MilpModel):
    """Parse CBC's ``-solu`` dump into ``(status, objective, values)``."""
    lines = text.splitlines()
    if not lines:
        raise SolverError("empty solution file")
    head = lines[0].strip()
    low = head.lower()
    m = re.search(r"objective value\s+([-+0-9.eE]+|nan|inf)", head, re.IGNORECASE)
    obj = float(m.group(1)) if m else None
    if low.startswith("optimal"):
        status = "optimal"
    elif "infeasible" in low:
        status = "infeasible"
    elif "unbounded" in low:
        status = "unbounded"
    elif low.startswith("stopped"):
        status = "timeout" if "no integer solution" in low else "feasible"
    else:
        raise SolverError(f"unparseable solution status line: {head!r}")
    index = {mangle(v.name): v.index for v in model.variables}
    values = np.zeros(model.n_vars)
    for line in lines[1:]:
        parts = line.split()
        if len(parts) < 3:
            continue
        if parts[0] == "**":
            parts = parts[1:]
        try:
            values[index[parts[1]]] = float(parts[2])
        except (KeyError, ValueError) as exc:
            raise SolverError(f"unparseable solution line: {line!r}") from exc
    return status, obj, values


def parse_cbc_gap(log_text: str) -> float | None:
    m = re.findall(r"Gap:\s+([-+0-9.eE]+)", log_text)
    return float(m[-1]) if m else None


# -- incumbent traces -----------------------------------------------------
_HIGHS_ROW = re.compile(
    r"^\s*(?P<src>[A-Za-z])?\s+\d+\s+\d+\s+\d+\s+[\d.]+%\s+(?P<bound>\S+)\s+(?P<best>\S+)\s+.*?(?P<time>[\d.]+)s\s*$")
_CBC_SOL = re.compile(r"Integer solution of\s+(?P<obj>[-+0-9.eE]+).*?\((?P<time>[\d.]+) seconds\)")


def incumbent_trace(log_text: str, backend: str) -> list[tuple[float, float]]:
    """Improving incumbents ``(time_s, objective)`` recovered from a solver log."""
    points = []
    if backend == "highs":
        for line in log_text.splitlines():
            m = _HIGHS_ROW.match(line)
            if not m:
                continue
            try:
                best = float(m.group("best"))
            except ValueError:
                continue
            if math.isfinite(best):
                points.append((float(m.group("time")), best))
    else:
        for m in _CBC_SOL.finditer(log_text):
            points.append((float(m.group("time")), float(m.group("obj"))))
    out = []
    for t, v in points:
        if not out or v < out[-1][1] - 1e-12:
            out.append((t, v))
    return out


# -- generic solve --------------------------------------------------------
def make_backend(spec=None):
    """Backend from a name, a backend object, or a config mapping."""
    if spec is None:
        return HighsBackend()
    if hasattr(spec, "run"):
        return spec
    if isinstance(spec, str):
        spec = {"backend": spec}
    kind = spec.get("backend", "highs")
    if kind == "highs":
        return HighsBackend(threads=spec.get("threads"))
    if kind in ("cbc", "command"):
        return CommandBackend(spec.get("cmd"), spec.get("args"))
    raise ValueError(f"unknown solver backend {kind!r}")


def solve(model: MilpModel, backend=None, time_limit: float | None = None, mip_gap: float | None = 1e-4,
          capture_log: bool = False, tol: float = FEAS_TOL) -> SolveResult:
    """Solve ``model`` and return a checked result.

    Integer columns of the returned point are rounded; if that breaks any row
    by more than ``tol`` the integers are fixed and the continuous part is
    re-solved. Remaining violations are recorded on the result.
    """
    backend = make_backend(backend)
    t0 = time.perf_counter()
    res = backend.run(model, time_limit, mip_gap, capture_log)
    res.names = [v.name for v in model.variables]
    if res.has_solution:
        x = res.values
        is_int = np.array([v.is_integer for v in model.variables], dtype=bool)
        if is_int.any():
            x[is_int] = np.round(x[is_int])
        viol = check_assignment(model, x, tol=tol, int_tol=INT_TOL)
        if viol and is_int.any():
            fixed = model.fixed_copy({int(k): float(x[k]) for k in np.nonzero(is_int)[0]})
            lp = backend.run(fixed, time_limit, None, False)
            if lp.has_solution:
                x2 = lp.values
                x2[is_int] = x[is_int]
                viol2 = check_assignment(model, x2, tol=tol, int_tol=INT_TOL)
                if len(viol2) <= len(viol):
                    x, viol = x2, viol2
        res.values = x
        res.objective = model.objective_value(x)
        res.violations = viol
        if viol:
            log.warning("solution violates %d rows/bounds beyond %.1e (worst %s)", len(viol), tol,
                        max(viol, key=lambda v: v.slack))
    res.wall_time = time.perf_counter() - t0
    return res
