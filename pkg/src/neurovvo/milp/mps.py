"""Free-format MPS writer."""

from __future__ import annotations

import math
import re

from .model import MilpModel, ModelError

OBJ_ROW = "OBJ"
_WS = re.compile(r"\s+")


def _num(v: float) -> str:
    return repr(float(v))


def mangle(name: str) -> str:
    return _WS.sub("_", name) or "_"


def export_mps(model: MilpModel) -> str:
    """Serialise ``model`` as free MPS in insertion order.

    The objective constant is written as the negated right-hand side of the
    objective row, the usual convention of MPS readers. Integer columns are
    enclosed in MARKER blocks and always carry explicit bounds. The ``FREE``
    tag on the NAME line stops readers that sniff the layout (CBC) from
    falling back to fixed columns when names are short.
    """
    col_names = [mangle(v.name) for v in model.variables]
    row_names = [mangle(c.name) for c in model.constraints]
    if len(set(col_names)) != len(col_names):
        raise ModelError("variable name collision after MPS name mangling")
    if len(set(row_names)) != len(row_names) or OBJ_ROW in row_names:
        raise ModelError("constraint name collision after MPS name mangling")

    columns: list[list[tuple[str, float]]] = [[] for _ in model.variables]
    for k, v in model.objective.terms.items():
        if v != 0.0:
            columns[k].append((OBJ_ROW, v))
    for rname, con in zip(row_names, model.constraints):
        for i, c in zip(con.indices, con.coefs):
            columns[i].append((rname, c))

    out = [f"NAME {mangle(model.name)} FREE", "ROWS", f" N  {OBJ_ROW}"]
    sense_code = {"<=": "L", ">=": "G", "=": "E"}
    out.extend(f" {sense_code[c.sense]}  {r}" for r, c in zip(row_names, model.constraints))

    out.append("COLUMNS")
    in_int = False
    marker = 0
    for var, cname, entries in zip(model.variables, col_names, columns):
        if var.is_integer != in_int:
            tag = "'INTORG'" if var.is_integer else "'INTEND'"
            out.append(f"    MARKER{marker} 'MARKER' {tag}")
            marker += 1
            in_int = var.is_integer
        if not entries:
            # keep the column declared so bounds and integrality survive
            out.append(f"    {cname} {OBJ_ROW} 0.0")
        for rname, val in entries:
            out.append(f"    {cname} {rname} {_num(val)}")
    if in_int:
        out.append(f"    MARKER{marker} 'MARKER' 'INTEND'")

    out.append("RHS")
    if model.objective.const != 0.0:
        out.append(f"    RHS {OBJ_ROW} {_num(-model.objective.const)}")
    for rname, con in zip(row_names, model.constraints):
        if con.rhs != 0.0:
            out.append(f"    RHS {rname} {_num(con.rhs)}")

    out.append("BOUNDS")
    for var, cname in zip(model.variables, col_names):
        out.extend(_bounds(var, cname))
    out.append("ENDATA")
    return "\n".join(out) + "\n"


def _bounds(var, cname: str) -> list[str]:
    lo, hi = var.lo, var.hi
    if var.kind == "binary" and lo == 0.0 and hi == 1.0:
        return [f" BV BND {cname}"]
    if lo == hi:
        return [f" FX BND {cname} {_num(lo)}"]
    lines = []
    if lo == -math.inf and hi == math.inf:
        return [f" FR BND {cname}"]
    if lo == -math.inf:
        lines.append(f" MI BND {cname}")
    elif lo != 0.0 or var.is_integer or hi < 0.0:
        lines.append(f" LO BND {cname} {_num(lo)}")
    if hi != math.inf:
        lines.append(f" UP BND {cname} {_num(hi)}")
    elif var.is_integer:
        lines.append(f" PL BND {cname}")
    return lines
