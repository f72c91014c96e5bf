"""LP text format writer and reader (objective, constraints, bounds, binaries).

Numbers are written with repr() so a round trip is bit-exact; variables and
rows appear in id order so output is deterministic.
"""
from __future__ import annotations

import math
import re

from .model import Expr, MipError, MipModel

_NAME_OK = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


def _safe_names(model: MipModel):
    names, seen = [], set()
    for i, nm in enumerate(model.names):
        s = nm if _NAME_OK.match(nm or "") else f"x{i}"
        if s in seen or s.lower() in ("free", "inf", "infinity"):
            s = f"x{i}_"
        seen.add(s)
        names.append(s)
    return names


def _num(v: float) -> str:
    if v == math.inf:
        return "+inf"
    if v == -math.inf:
        return "-inf"
    return repr(float(v))


def _linear(terms, names):
    parts = []
    for k in sorted(terms):
        v = terms[k]
        if v == 0.0:
            continue
        parts.append(f"{'+' if v >= 0 else '-'} {_num(abs(v))} {names[k]}")
    return " ".join(parts)


def format_lp(model: MipModel) -> str:
    names = _safe_names(model)
    out = [f"\\ {model.name}"]
    for k in range(0, len(names), 16):
        out.append("\\ order: " + " ".join(names[k:k + 16]))
    out.append("Minimize" if model.sense == "min" else "Maximize")
    obj = _linear(model.c, names)
    if model.c0 != 0.0:
        obj = (obj + " " if obj else "") + f"{'+' if model.c0 >= 0 else '-'} {_num(abs(model.c0))}"
    q = []
    for (i, j) in sorted(model.Q):
        v = model.Q[(i, j)]
        if v == 0.0:
            continue
        if i == j:
            q.append(f"{'+' if v >= 0 else '-'} {_num(abs(v))} {names[i]} ^ 2")
        else:
            w = 2.0 * v
            q.append(f"{'+' if w >= 0 else '-'} {_num(abs(w))} {names[i]} * {names[j]}")
    if q:
        obj = (obj + " " if obj else "") + "+ [ " + " ".join(q) + " ] / 2"
    out.append(f" obj: {obj if obj else '0'}")
    out.append("Subject To")
    for r, (terms, sense, rhs, _) in enumerate(model.rows):
        op = {"<=": "<=", ">=": ">=", "==": "="}[sense]
        out.append(f" c{r}: {_linear(terms, names)} {op} {_num(rhs)}")
    out.append("Bounds")
    for i in range(model.n_vars):
        if model.kind[i] == "binary":
            continue
        lo, hi = model.lb[i], model.ub[i]
        if lo == -math.inf and hi == math.inf:
            out.append(f" {names[i]} free")
        else:
            out.append(f" {_num(lo)} <= {names[i]} <= {_num(hi)}")
    out.append("Binaries")
    bins = [names[i] for i in range(model.n_vars) if model.kind[i] == "binary"]
    for k in range(0, len(bins), 8):
        out.append(" " + " ".join(bins[k:k + 8]))
    out.append("End")
    return "\n".join(out) + "\n"


def export_model(model: MipModel, path) -> None:
    text = format_lp(model)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(text)


# ---------------------------------------------------------------- reader

_TOK = re.compile(r"\s*(<=|>=|=<|=>|=|\[|\]|\^|\*|/|[+-]|[A-Za-z_][A-Za-z0-9_.]*|"
                  r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|:)")


def _tokens(s):
    pos, out = 0, []
    s = s.rstrip()
    while pos < len(s):
        m = _TOK.match(s, pos)
        if not m:
            raise MipError(f"cannot parse LP text near {s[pos:pos + 20]!r}")
        out.append(m.group(1))
        pos = m.end()
    return out


def _is_num(t):
    return bool(re.match(r"^(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$", t)) or t in ("inf", "infinity")


def _parse_terms(toks, var):
    """Parse '+ 3 x - 2 y + [ ... ] / 2 + 5' into (lin, quad, const)."""
    lin, quad, const = {}, {}, 0.0
    i, sign = 0, 1.0
    while i < len(toks):
        t = toks[i]
        if t in "+-":
            sign = 1.0 if t == "+" else -1.0
            i += 1
            continue
        if t == "[":
            j = toks.index("]", i)
            inner = toks[i + 1:j]
            k, s2 = 0, 1.0
            while k < len(inner):
                u = inner[k]
                if u in "+-":
                    s2 = 1.0 if u == "+" else -1.0
                    k += 1
                    continue
                coef = 1.0
                if _is_num(u):
                    coef = float(u)
                    k += 1
                a = var(inner[k])
                if k + 1 < len(inner) and inner[k + 1] == "^":
                    quad[(a, a)] = quad.get((a, a), 0.0) + s2 * coef
                    k += 3
                else:
                    b = var(inner[k + 2])
                    key = (min(a, b), max(a, b))
                    quad[key] = quad.get(key, 0.0) + s2 * coef / 2.0
                    k += 3
                s2 = 1.0
            i = j + 1
            if i < len(toks) and toks[i] == "/":
                i += 2
            sign = 1.0
            continue
        coef = 1.0
        if _is_num(t):
            coef = float(t)
            if i + 1 < len(toks) and not _is_num(toks[i + 1]) and toks[i + 1] not in "+-[":
                i += 1
                t = toks[i]
            else:
                const += sign * coef
                i += 1
                sign = 1.0
                continue
        k = var(t)
        lin[k] = lin.get(k, 0.0) + sign * coef
        sign = 1.0
        i += 1
    return lin, quad, const


def parse_lp(text: str) -> MipModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    model = MipModel()
    if lines and lines[0].startswith("\\"):
        model.name = lines[0][1:].strip()
    section = None
    obj_text, rows, bounds, bins = [], [], [], []
    heads = {"minimize": "obj", "maximize": "obj", "subject to": "st", "bounds": "bounds",
             "binaries": "bin", "binary": "bin", "end": "end"}
    declared = []
    for ln in lines:
        if ln.startswith("\\ order:"):
            declared += ln.split(":", 1)[1].split()
            continue
        if ln.startswith("\\"):
            continue
        key = ln.strip().lower()
        if key in heads:
            section = heads[key]
            if key == "maximize":
                model.sense = "max"
            continue
        {"obj": obj_text, "st": rows, "bounds": bounds, "bin": bins}.get(section, []).append(ln)
    index = {}
    bin_names = [t for ln in bins for t in ln.split()]
    order = []

    def collect(name):
        if name not in index:
            index[name] = len(order)
            order.append(name)
        return index[name]

    # first pass: variable order by first appearance in bounds/binaries lines
    for ln in bounds:
        toks = _tokens(ln)
        for t in toks:
            if re.match(r"^[A-Za-z_]", t) and t.lower() not in ("free", "inf", "infinity"):
                collect(t)
    for nm in bin_names:
        collect(nm)
    # variable ids follow the x<k> naming where possible
    def sort_key(nm):
        m = re.match(r"^x(\d+)_?$", nm)
        return (0, int(m.group(1))) if m else (1, nm)

    final = declared + sorted((nm for nm in order if nm not in set(declared)), key=sort_key)
    index = {nm: k for k, nm in enumerate(final)}
    binset = set(bin_names)
    bspec = {}
    for ln in bounds:
        toks = _tokens(ln)
        if len(toks) == 2 and toks[1].lower() == "free":
            bspec[toks[0]] = (-math.inf, math.inf)
        elif len(toks) >= 5:
            # form: lo <= name <= hi, with signed numbers possibly split
            s = " ".join(toks)
            m = re.match(r"^(.*?)\s*<=\s*([A-Za-z_][A-Za-z0-9_.]*)\s*<=\s*(.*)$", s)
            if not m:
                raise MipError(f"cannot parse bound {ln!r}")
            bspec[m.group(2)] = (_bound_val(m.group(1)), _bound_val(m.group(3)))
        else:
            raise MipError(f"cannot parse bound {ln!r}")
    for nm in final:
        if nm in binset:
            model.add_var(0.0, 1.0, "binary", nm)
        else:
            lo, hi = bspec.get(nm, (0.0, math.inf))
            model.add_var(lo, hi, "continuous", nm)

    def var(nm):
        if nm not in index:
            raise MipError(f"undeclared variable {nm!r}")
        return index[nm]

    otoks = _tokens(" ".join(obj_text))
    if len(otoks) >= 2 and otoks[1] == ":":
        otoks = otoks[2:]
    lin, quad, const = _parse_terms(otoks, var)
    model.c = lin
    model.c0 = const
    model.Q = quad
    for ln in rows:
        toks = _tokens(ln)
        name = None
        if len(toks) >= 2 and toks[1] == ":":
            name, toks = toks[0], toks[2:]
        k = next(i for i, t in enumerate(toks) if t in ("<=", ">=", "=", "=<", "=>"))
        op = {"<=": "<=", "=<": "<=", ">=": ">=", "=>": ">=", "=": "=="}[toks[k]]
        lin, _, c = _parse_terms(toks[:k], var)
        rhs = _bound_val(" ".join(toks[k + 1:]))
        model.rows.append(({i: v for i, v in sorted(lin.items())}, op, rhs - c, name))
    return model


def _bound_val(s) -> float:
    s = s.replace(" ", "").lower()
    if s in ("+inf", "inf", "+infinity", "infinity"):
        return math.inf
    if s in ("-inf", "-infinity"):
        return -math.inf
    return float(s)


def read_model(path) -> MipModel:
    with open(path, encoding="ascii") as fh:
        return parse_lp(fh.read())
