"""Plain-text model file reader/writer (MPS-compatible).

The layout is fixed-position and also parses under free-format MPS
readers: indicator field at column 2, name fields at columns 5 and 15,
value fields at columns 25 and 55, every field whitespace-delimited and
one matrix entry per COLUMNS line.  Values are written with Python's
shortest round-trip float representation so a write/read cycle
reproduces coefficients bit-exact.  Minimization is assumed throughout.

Sections emitted: NAME, ROWS (one N objective row, L rows for
inequalities, E rows for equalities), COLUMNS (with INTORG/INTEND
markers around binary variables), RHS, BOUNDS, ENDATA.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .solver import LpProblem, MilpProblem

_OBJ = "OBJ"


def _fmt(value: float) -> str:
    return repr(float(value))


def _line(f1: str, f2: str = "", f3: str = "", f4: str = "", f5: str = "", f6: str = "") -> str:
    out = f" {f1:<2} {f2:<9} {f3:<9} {f4:<29} {f5:<9} {f6}"
    return out.rstrip()


def write_mps(problem: LpProblem, binaries: list[int] | None = None,
              name: str = "FLEXAGG") -> str:
    """Serialize an LpProblem (optionally with binaries) to MPS text."""
    prob = problem.normalized()
    binaries = sorted(set(binaries or []))
    n = prob.c.size
    m_ub = 0 if prob.a_ub is None else prob.a_ub.shape[0]
    m_eq = 0 if prob.a_eq is None else prob.a_eq.shape[0]

    def rname(kind, i):
        return f"{kind}{i + 1:07d}"

    def xname(j):
        return f"X{j + 1:07d}"

    lines = [f"NAME          {name}", "ROWS", _line("N", _OBJ)]
    for i in range(m_ub):
        lines.append(_line("L", rname("L", i)))
    for i in range(m_eq):
        lines.append(_line("E", rname("E", i)))

    lines.append("COLUMNS")
    marker = 0
    in_int = False
    for j in range(n):
        want_int = j in binaries
        if want_int and not in_int:
            lines.append(_line("", f"MARK{marker:04d}", "'MARKER'", "", "'INTORG'"))
            marker += 1
            in_int = True
        elif not want_int and in_int:
            lines.append(_line("", f"MARK{marker:04d}", "'MARKER'", "", "'INTEND'"))
            marker += 1
            in_int = False
        if prob.c[j] != 0.0:
            lines.append(_line("", xname(j), _OBJ, _fmt(prob.c[j])))
        for i in range(m_ub):
            v = prob.a_ub[i, j]
            if v != 0.0:
                lines.append(_line("", xname(j), rname("L", i), _fmt(v)))
        for i in range(m_eq):
            v = prob.a_eq[i, j]
            if v != 0.0:
                lines.append(_line("", xname(j), rname("E", i), _fmt(v)))
    if in_int:
        lines.append(_line("", f"MARK{marker:04d}", "'MARKER'", "", "'INTEND'"))

    lines.append("RHS")
    for i in range(m_ub):
        if prob.b_ub[i] != 0.0:
            lines.append(_line("", "RHS", rname("L", i), _fmt(prob.b_ub[i])))
    for i in range(m_eq):
        if prob.b_eq[i] != 0.0:
            lines.append(_line("", "RHS", rname("E", i), _fmt(prob.b_eq[i])))

    lines.append("BOUNDS")
    for j in range(n):
        lo, hi = prob.lo[j], prob.hi[j]
        if j in binaries:
            lines.append(_line("BV", "BND", xname(j)))
            continue
        if not np.isfinite(lo) and not np.isfinite(hi):
            lines.append(_line("FR", "BND", xname(j)))
        elif np.isfinite(lo) and np.isfinite(hi) and lo == hi:
            lines.append(_line("FX", "BND", xname(j), _fmt(lo)))
        else:
            if np.isfinite(lo):
                lines.append(_line("LO", "BND", xname(j), _fmt(lo)))
            else:
                lines.append(_line("MI", "BND", xname(j)))
            if np.isfinite(hi):
                lines.append(_line("UP", "BND", xname(j), _fmt(hi)))
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def read_mps(text: str) -> MilpProblem:
    """Parse MPS text produced by write_mps (or a compatible subset).

    Supports N/L/E rows (single objective), INTORG/INTEND markers, RHS,
    and LO/UP/FX/FR/MI/PL/BV bounds.  G rows and RANGES are rejected.
    """
    section = None
    row_kind: dict[str, str] = {}
    obj_row = None
    l_rows: list[str] = []
    e_rows: list[str] = []
    col_order: list[str] = []
    col_set: set[str] = set()
    entries: list[tuple[str, str, float]] = []
    rhs: dict[str, float] = {}
    bounds: list[tuple[str, str, float | None]] = []
    binaries_names: set[str] = set()
    in_int = False

    for raw in text.splitlines():
        if not raw.strip() or raw.lstrip().startswith("*"):
            continue
        head = raw[:1].strip()
        upper = raw.strip().upper()
        if head or upper in {"ROWS", "COLUMNS", "RHS", "BOUNDS", "RANGES", "ENDATA"} or upper.startswith("NAME"):
            word = raw.split()[0].upper()
            if word in {"NAME", "ROWS", "COLUMNS", "RHS", "BOUNDS", "RANGES", "ENDATA", "OBJSENSE"}:
                if word == "RANGES":
                    raise ConfigError("RANGES section not supported")
                section = word
                continue
        tok = raw.split()
        if section == "ROWS":
            kind, rowname = tok[0].upper(), tok[1]
            if kind == "N":
                if obj_row is not None:
                    raise ConfigError("multiple objective rows")
                obj_row = rowname
            elif kind == "L":
                l_rows.append(rowname)
            elif kind == "E":
                e_rows.append(rowname)
            else:
                raise ConfigError(f"unsupported row kind {kind}")
            row_kind[rowname] = kind
        elif section == "COLUMNS":
            if "'MARKER'" in raw.upper():
                flag = tok[-1].strip("'").upper()
                in_int = flag == "INTORG"
                continue
            colname = tok[0]
            if colname not in col_set:
                col_set.add(colname)
                col_order.append(colname)
                if in_int:
                    binaries_names.add(colname)
            pairs = tok[1:]
            for k in range(0, len(pairs), 2):
                entries.append((colname, pairs[k], float(pairs[k + 1])))
        elif section == "RHS":
            pairs = tok[1:]
            for k in range(0, len(pairs), 2):
                rhs[pairs[k]] = float(pairs[k + 1])
        elif section == "BOUNDS":
            btype = tok[0].upper()
            colname = tok[2]
            val = float(tok[3]) if len(tok) > 3 else None
            bounds.append((btype, colname, val))
            if colname not in col_set:
                col_set.add(colname)
                col_order.append(colname)

    if obj_row is None:
        raise ConfigError("no objective row")
    n = len(col_order)
    col_idx = {name: j for j, name in enumerate(col_order)}
    lrow_idx = {name: i for i, name in enumerate(l_rows)}
    erow_idx = {name: i for i, name in enumerate(e_rows)}
    c = np.zeros(n)
    a_ub = np.zeros((len(l_rows), n))
    a_eq = np.zeros((len(e_rows), n))
    for colname, rowname, val in entries:
        j = col_idx[colname]
        if rowname == obj_row:
            c[j] = val
        elif rowname in lrow_idx:
            a_ub[lrow_idx[rowname], j] = val
        elif rowname in erow_idx:
            a_eq[erow_idx[rowname], j] = val
        else:
            raise ConfigError(f"entry references unknown row {rowname}")
    b_ub = np.array([rhs.get(name, 0.0) for name in l_rows])
    b_eq = np.array([rhs.get(name, 0.0) for name in e_rows])

    # MPS default bounds are [0, inf); explicit FR/MI lines restore free variables
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    for btype, colname, val in bounds:
        j = col_idx[colname]
        if btype == "LO":
            lo[j] = val
        elif btype == "UP":
            hi[j] = val
        elif btype == "FX":
            lo[j] = hi[j] = val
        elif btype == "FR":
            lo[j], hi[j] = -np.inf, np.inf
        elif btype == "MI":
            lo[j] = -np.inf
        elif btype == "PL":
            hi[j] = np.inf
        elif btype == "BV":
            lo[j], hi[j] = 0.0, 1.0
            binaries_names.add(colname)
        else:
            raise ConfigError(f"unsupported bound type {btype}")

    binaries = sorted(col_idx[name] for name in binaries_names)
    lp = LpProblem(
        c,
        a_ub if len(l_rows) else None,
        b_ub if len(l_rows) else None,
        a_eq if len(e_rows) else None,
        b_eq if len(e_rows) else None,
        lo,
        hi,
        names=list(col_order),
    )
    return MilpProblem(lp, binaries)
