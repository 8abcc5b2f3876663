"""Shared test helpers.

The LP-text reader here is deliberately independent of the package: it
reconstructs matrices from the exported text alone and hands them to
scipy's HiGHS backend.  That gives a second route to an optimum that
shares no code with the model builder it checks.
"""

import math

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

_SENSES = ("<=", ">=", "=")


def _is_number(tok):
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _parse_terms(tokens):
    """[(coef, name), ...] from tokens like ['F_E_1_1_B', '-', '3', 'F_C']."""
    terms = []
    sign = 1.0
    k = 0
    while k < len(tokens):
        tok = tokens[k]
        if tok == "+":
            sign = 1.0
            k += 1
        elif tok == "-":
            sign = -1.0
            k += 1
        elif _is_number(tok):
            terms.append((sign * float(tok), tokens[k + 1]))
            sign = 1.0
            k += 2
        else:
            terms.append((sign, tok))
            sign = 1.0
            k += 1
    return terms


def parse_lp_text(text):
    """LP text -> (objective name, rows, bounds, binaries).

    rows: list of (terms, sense, rhs); bounds: {name: (lb, ub)}.
    """
    section = None
    objective = None
    rows = []
    bounds = {}
    binaries = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        if line in ("Minimize", "Subject To", "Bounds", "Binaries", "End"):
            section = line
            continue
        if section == "Minimize":
            objective = line.split(":", 1)[1].strip()
        elif section == "Subject To":
            _, body = line.split(":", 1)
            tokens = body.split()
            sense_at = next(i for i, t in enumerate(tokens) if t in _SENSES)
            rows.append((_parse_terms(tokens[:sense_at]), tokens[sense_at],
                         float(tokens[sense_at + 1])))
        elif section == "Bounds":
            lb, _, name, _, ub = line.split()
            bounds[name] = (float(lb), float(ub))
        elif section == "Binaries":
            binaries.append(line)
    if objective is None:
        raise ValueError("no objective in LP text")
    return objective, rows, bounds, binaries


def solve_lp_text(text):
    """Optimum of the LP text via HiGHS: (objective value, {name: value}).

    Returns None when HiGHS reports the model infeasible.
    """
    objective, rows, bounds, binaries = parse_lp_text(text)
    names = list(bounds) + binaries
    idx = {n: i for i, n in enumerate(names)}
    n = len(names)
    c = np.zeros(n)
    c[idx[objective]] = 1.0
    lo = np.zeros(n)
    hi = np.ones(n)
    integrality = np.zeros(n)
    for name, (lb, ub) in bounds.items():
        lo[idx[name]] = lb
        hi[idx[name]] = ub
    for name in binaries:
        integrality[idx[name]] = 1
    a = np.zeros((len(rows), n))
    row_lo = np.full(len(rows), -np.inf)
    row_hi = np.full(len(rows), np.inf)
    for r, (terms, sense, rhs) in enumerate(rows):
        for coef, name in terms:
            a[r, idx[name]] += coef
        if sense in (">=", "="):
            row_lo[r] = rhs
        if sense in ("<=", "="):
            row_hi[r] = rhs
    res = milp(c=c, constraints=LinearConstraint(a, row_lo, row_hi),
               integrality=integrality, bounds=Bounds(lo, hi))
    if res.status == 2:
        return None
    assert res.status == 0, f"HiGHS status {res.status}: {res.message}"
    return res.fun, {name: float(res.x[idx[name]]) for name in names}


def snap_int(value, tol=1e-5):
    """Nearest integer, asserting the value was already within tol of it."""
    nearest = round(value)
    assert abs(value - nearest) <= tol, f"{value} is not integral within {tol}"
    return int(nearest)


def highs_optimum(inst, opts=None):
    """Integer optimum of an instance's exported model, via the text route."""
    from pipesched import build_model, export_lp

    result = solve_lp_text(export_lp(build_model(inst, opts)))
    if result is None:
        return None
    return snap_int(result[0])
