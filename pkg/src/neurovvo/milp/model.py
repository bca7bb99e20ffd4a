"""Solver-agnostic MILP container with name-addressable variables."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

INF = math.inf
SQRT2 = math.sqrt(2.0)
KINDS = ("continuous", "binary", "integer")
SENSES = ("<=", "=", ">=")


class ModelError(ValueError):
    pass


class Variable:
    __slots__ = ("name", "kind", "lo", "hi", "index")

    def __init__(self, name: str, kind: str, lo: float, hi: float, index: int):
        self.name = name
        self.kind = kind
        self.lo = lo
        self.hi = hi
        self.index = index

    @property
    def is_integer(self) -> bool:
        return self.kind != "continuous"

    def expr(self) -> "LinExpr":
        return LinExpr({self.index: 1.0})

    def __add__(self, other):
        return self.expr() + other

    __radd__ = __add__

    def __sub__(self, other):
        return self.expr() - other

    def __rsub__(self, other):
        return (-self.expr()) + other

    def __mul__(self, c):
        return self.expr() * c

    __rmul__ = __mul__

    def __neg__(self):
        return -self.expr()

    def __repr__(self):
        return f"Variable({self.name!r}, {self.kind}, [{self.lo}, {self.hi}])"


class LinExpr:
    """Sparse affine expression ``sum(coef * var) + const`` keyed by variable index."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: dict | None = None, const: float = 0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def of(value) -> "LinExpr":
        if isinstance(value, LinExpr):
            return value
        if isinstance(value, Variable):
            return value.expr()
        if isinstance(value, (int, float, np.integer, np.floating)):
            return LinExpr(None, float(value))
        raise TypeError(f"cannot build a linear expression from {type(value).__name__}")

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.const)

    def is_constant(self) -> bool:
        return not any(self.terms.values())

    def add_term(self, var: Variable, coef: float) -> "LinExpr":
        self.terms[var.index] = self.terms.get(var.index, 0.0) + coef
        return self

    def iadd(self, other, scale: float = 1.0) -> "LinExpr":
        """In-place ``self += scale * other``."""
        if isinstance(other, Variable):
            self.terms[other.index] = self.terms.get(other.index, 0.0) + scale
        elif isinstance(other, LinExpr):
            for k, v in other.terms.items():
                self.terms[k] = self.terms.get(k, 0.0) + scale * v
            self.const += scale * other.const
        else:
            self.const += scale * float(other)
        return self

    def __add__(self, other):
        return self.copy().iadd(other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.copy().iadd(other, -1.0)

    def __rsub__(self, other):
        return (-self).iadd(other)

    def __mul__(self, c):
        if isinstance(c, (LinExpr, Variable)):
            raise TypeError("product of two linear expressions is not linear")
        c = float(c)
        return LinExpr({k: v * c for k, v in self.terms.items()}, self.const * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(v * x[k] for k, v in self.terms.items())

    def __repr__(self):
        return f"LinExpr({self.terms}, const={self.const})"


@dataclass(frozen=True)
class LinearConstraint:
    name: str
    indices: tuple[int, ...]
    coefs: tuple[float, ...]
    sense: str
    rhs: float

    def activity(self, x: np.ndarray) -> float:
        return float(sum(c * x[i] for i, c in zip(self.indices, self.coefs)))

    def violation(self, x: np.ndarray) -> float:
        a = self.activity(x)
        if self.sense == "<=":
            return max(0.0, a - self.rhs)
        if self.sense == ">=":
            return max(0.0, self.rhs - a)
        return abs(a - self.rhs)


@dataclass(frozen=True)
class Violation:
    name: str
    slack: float

    def __str__(self):
        return f"{self.name}: violated by {self.slack:.3g}"


class MilpModel:
    """A minimisation MILP: variables, linear rows and a linear objective.

    ``meta`` is free-form bookkeeping attached by model builders (index maps,
    cost-term expressions) and is not part of the mathematical model.
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[LinearConstraint] = []
        self.objective = LinExpr()
        self.meta: dict = {}
        self._by_name: dict[str, Variable] = {}
        self._con_names: set[str] = set()

    # -- variables -------------------------------------------------------
    def add_var(self, name: str, kind: str = "continuous", lo: float = 0.0, hi: float = INF) -> Variable:
        if kind not in KINDS:
            raise ModelError(f"unknown variable kind {kind!r}")
        if name in self._by_name:
            raise ModelError(f"duplicate variable name {name!r}")
        lo, hi = float(lo), float(hi)
        if kind == "binary":
            lo, hi = max(lo, 0.0), min(hi, 1.0)
        if lo > hi:
            raise ModelError(f"variable {name!r}: lower bound {lo} exceeds upper bound {hi}")
        var = Variable(name, kind, lo, hi, len(self.variables))
        self.variables.append(var)
        self._by_name[name] = var
        return var

    def var(self, name: str) -> Variable:
        return self._by_name[name]

    def has_var(self, name: str) -> bool:
        return name in self._by_name

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    def n_integer(self) -> int:
        return sum(v.is_integer for v in self.variables)

    # -- constraints -----------------------------------------------------
    def add_constraint(self, expr, sense: str, rhs=0.0, name: str | None = None) -> LinearConstraint | None:
        """Add ``expr <sense> rhs``; both sides may be affine expressions.

        Duplicate variables are merged and constants moved to the right-hand
        side. Rows whose variables all cancel are checked and dropped.
        """
        if sense not in SENSES:
            raise ModelError(f"unknown sense {sense!r}")
        e = LinExpr.of(expr).copy().iadd(LinExpr.of(rhs), -1.0)
        items = [(k, v) for k, v in e.terms.items() if v != 0.0]
        if name is None:
            name = f"c{len(self.constraints)}"
        if name in self._con_names:
            raise ModelError(f"duplicate constraint name {name!r}")
        if not items:
            if _violation(-e.const, sense, 0.0) > 1e-9:
                raise ModelError(f"constraint {name!r} is constant and infeasible")
            return None
        n = len(self.variables)
        if any(not 0 <= k < n for k, _ in items):
            raise ModelError(f"constraint {name!r} references an unregistered variable")
        self._con_names.add(name)
        con = LinearConstraint(name, tuple(k for k, _ in items), tuple(v for _, v in items), sense, -e.const)
        self.constraints.append(con)
        return con

    def add_le(self, lhs, rhs=0.0, name=None):
        return self.add_constraint(lhs, "<=", rhs, name)

    def add_ge(self, lhs, rhs=0.0, name=None):
        return self.add_constraint(lhs, ">=", rhs, name)

    def add_eq(self, lhs, rhs=0.0, name=None):
        return self.add_constraint(lhs, "=", rhs, name)

    def set_objective(self, expr) -> None:
        self.objective = LinExpr.of(expr).copy()

    # -- evaluation ------------------------------------------------------
    def vector(self, assignment) -> np.ndarray:
        """Dense value vector from a name->value map (missing names -> 0)."""
        if isinstance(assignment, np.ndarray):
            return assignment.astype(float)
        x = np.zeros(self.n_vars)
        for name, val in assignment.items():
            var = self._by_name.get(name)
            if var is not None:
                x[var.index] = val
        return x

    def objective_value(self, assignment) -> float:
        return self.objective.value(self.vector(assignment))

    def value(self, expr, assignment) -> float:
        return LinExpr.of(expr).value(self.vector(assignment))

    def to_arrays(self):
        """Row-wise sparse arrays ``(c, const, indptr, indices, data, row_lo, row_hi, col_lo, col_hi, is_int)``."""
        n = self.n_vars
        c = np.zeros(n)
        for k, v in self.objective.terms.items():
            c[k] += v
        indptr = np.zeros(len(self.constraints) + 1, dtype=np.int64)
        lens = [len(con.indices) for con in self.constraints]
        indptr[1:] = np.cumsum(lens)
        indices = np.fromiter((i for con in self.constraints for i in con.indices), dtype=np.int32, count=int(indptr[-1]))
        data = np.fromiter((v for con in self.constraints for v in con.coefs), dtype=float, count=int(indptr[-1]))
        rhs = np.array([con.rhs for con in self.constraints])
        senses = [con.sense for con in self.constraints]
        row_lo = np.array([r if s != "<=" else -INF for r, s in zip(rhs, senses)])
        row_hi = np.array([r if s != ">=" else INF for r, s in zip(rhs, senses)])
        col_lo = np.array([v.lo for v in self.variables])
        col_hi = np.array([v.hi for v in self.variables])
        is_int = np.array([v.is_integer for v in self.variables], dtype=bool)
        return c, self.objective.const, indptr, indices, data, row_lo, row_hi, col_lo, col_hi, is_int

    def fixed_copy(self, values: dict[int, float]) -> "MilpModel":
        """Shallow copy with selected variables fixed to the given values."""
        out = MilpModel(self.name)
        out.constraints = self.constraints
        out.objective = self.objective
        out.meta = self.meta
        out._con_names = self._con_names
        for v in self.variables:
            if v.index in values:
                val = values[v.index]
                nv = Variable(v.name, v.kind, val, val, v.index)
            else:
                nv = v
            out.variables.append(nv)
            out._by_name[nv.name] = nv
        return out


def _violation(activity: float, sense: str, rhs: float) -> float:
    if sense == "<=":
        return max(0.0, activity - rhs)
    if sense == ">=":
        return max(0.0, rhs - activity)
    return abs(activity - rhs)


def check_assignment(model: MilpModel, assignment, tol: float = 1e-6, int_tol: float = 1e-5) -> list[Violation]:
    """Rows, bounds and integrality violated by more than ``tol`` at ``assignment``.

    Row activities are evaluated in plain float arithmetic on the given values.
    """
    x = model.vector(assignment)
    out = []
    for v in model.variables:
        val = x[v.index]
        if val < v.lo - tol:
            out.append(Violation(f"bound:{v.name}", v.lo - val))
        elif val > v.hi + tol:
            out.append(Violation(f"bound:{v.name}", val - v.hi))
        if v.is_integer and abs(val - round(val)) > int_tol:
            out.append(Violation(f"integrality:{v.name}", abs(val - round(val))))
    if model.constraints:
        *_, indptr, indices, data, row_lo, row_hi = model.to_arrays()[:7]
        act = np.add.reduceat(data * x[indices], indptr[:-1]) if len(data) else np.zeros(0)
        # reduceat repeats the next element for empty rows; rows are never empty here
        over = np.maximum(act - row_hi, 0.0)
        under = np.maximum(row_lo - act, 0.0)
        bad = np.nonzero((over > tol) | (under > tol))[0]
        for k in bad:
            out.append(Violation(model.constraints[k].name, float(max(over[k], under[k]))))
    return out


def add_octagon(model: MilpModel, p, q, s, name: str) -> list[LinearConstraint]:
    """Eight-row polyhedral inner approximation of ``p**2 + q**2 <= s**2``.

    ``s`` is a nonnegative constant or an affine expression (for example a
    binary status times a rating). Adds ``|p| <= s``, ``|q| <= s`` and
    ``|p +- q| <= sqrt(2) s``.
    """
    if not isinstance(s, (int, float, np.integer, np.floating, LinExpr, Variable)):
        raise TypeError(f"octagon bound must be a constant or linear expression, got {type(s).__name__}")
    s = LinExpr.of(s)
    p, q = LinExpr.of(p), LinExpr.of(q)
    rows = []
    for tag, expr, scale in (("p", p, 1.0), ("q", q, 1.0), ("sum", p + q, SQRT2), ("diff", p - q, SQRT2)):
        bound = s * scale
        rows.append(model.add_le(expr - bound, 0.0, f"{name}:{tag}+"))
        rows.append(model.add_le(-expr - bound, 0.0, f"{name}:{tag}-"))
    return [r for r in rows if r is not None]
