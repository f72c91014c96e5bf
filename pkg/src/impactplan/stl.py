"""Signal temporal logic: formulas, a text parser, and exact monitors over
piecewise-linear position signals.

The quantitative monitor computes every sub-formula as an exact continuous
piecewise-linear (PWL) function of time. Sliding-window min/max of a PWL
function is again PWL with kinks at shifted breakpoints or line crossings,
so no sampling is involved. Until is evaluated exactly pointwise; when it is
nested under another temporal operator its trace is refined adaptively.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import HPolytope, PhasedPath

TIME_TOL = 1e-9


class STLError(ValueError):
    pass


class STLSyntaxError(STLError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{msg} (line {line}, column {col})")
        self.line = line
        self.col = col


class CoverageError(STLError):
    pass


class ContinuityError(STLError):
    pass


# ------------------------------------------------------------------ AST

class Formula:
    def __and__(self, other):
        return And((self, other))

    def __or__(self, other):
        return Or((self, other))

    def __invert__(self):
        return Not(self)

    def children(self) -> tuple:
        return ()

    def __str__(self):
        return format_formula(self)


@dataclass(frozen=True)
class TrueF(Formula):
    pass


@dataclass(frozen=True)
class FalseF(Formula):
    pass


@dataclass(frozen=True)
class Predicate(Formula):
    """a . pos(system) + b >= 0"""
    system: str
    a: tuple
    b: float

    def __post_init__(self):
        a = tuple(float(x) for x in self.a)
        if not any(x != 0.0 for x in a):
            raise STLError("predicate coefficient vector must be non-zero")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))


@dataclass(frozen=True)
class Region(Formula):
    """inside(system, region) / outside(system, region)."""
    system: str
    region: str
    inside: bool = True
    poly: HPolytope | None = field(default=None, compare=False, repr=False)

    def expand(self) -> Formula:
        """Lossless expansion into affine predicates."""
        if self.poly is None:
            raise STLError(f"region {self.region!r} is not bound to a polytope")
        preds = []
        for h, b in zip(self.poly.H, self.poly.b):
            if self.inside:
                preds.append(Predicate(self.system, tuple(-h), b))
            else:
                preds.append(Predicate(self.system, tuple(h), -b))
        if len(preds) == 1:
            return preds[0]
        return And(tuple(preds)) if self.inside else Or(tuple(preds))


@dataclass(frozen=True)
class Not(Formula):
    child: Formula

    def children(self):
        return (self.child,)


@dataclass(frozen=True)
class And(Formula):
    args: tuple

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if len(self.args) < 1:
            raise STLError("empty conjunction")

    def children(self):
        return self.args


@dataclass(frozen=True)
class Or(Formula):
    args: tuple

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if len(self.args) < 1:
            raise STLError("empty disjunction")

    def children(self):
        return self.args


def _check_interval(a, b):
    a, b = float(a), float(b)
    if not (math.isfinite(a) and math.isfinite(b)):
        raise STLError("time interval must be bounded")
    if a < 0:
        raise STLError(f"time interval must start at t >= 0, got {a}")
    if a > b:
        raise STLError(f"malformed interval [{a}, {b}]: lower bound exceeds upper bound")
    return a, b


@dataclass(frozen=True)
class Eventually(Formula):
    child: Formula
    a: float
    b: float

    def __post_init__(self):
        a, b = _check_interval(self.a, self.b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def children(self):
        return (self.child,)


@dataclass(frozen=True)
class Always(Formula):
    child: Formula
    a: float
    b: float

    def __post_init__(self):
        a, b = _check_interval(self.a, self.b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def children(self):
        return (self.child,)


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula
    a: float
    b: float

    def __post_init__(self):
        a, b = _check_interval(self.a, self.b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def children(self):
        return (self.left, self.right)


def horizon(f: Formula) -> float:
    if isinstance(f, (Always, Eventually)):
        return f.b + horizon(f.child)
    if isinstance(f, Until):
        return f.b + max(horizon(f.left), horizon(f.right))
    return max((horizon(c) for c in f.children()), default=0.0)


def systems_of(f: Formula) -> set:
    if isinstance(f, (Predicate, Region)):
        return {f.system}
    out = set()
    for c in f.children():
        out |= systems_of(c)
    return out


def regions_of(f: Formula) -> set:
    if isinstance(f, Region):
        return {f.region}
    out = set()
    for c in f.children():
        out |= regions_of(c)
    return out


def bind_regions(f: Formula, regions: Mapping[str, HPolytope]) -> Formula:
    if isinstance(f, Region):
        if f.region not in regions:
            raise STLError(f"unknown region {f.region!r}")
        return Region(f.system, f.region, f.inside, regions[f.region])
    if isinstance(f, Not):
        return Not(bind_regions(f.child, regions))
    if isinstance(f, And):
        return And(tuple(bind_regions(c, regions) for c in f.args))
    if isinstance(f, Or):
        return Or(tuple(bind_regions(c, regions) for c in f.args))
    if isinstance(f, Always):
        return Always(bind_regions(f.child, regions), f.a, f.b)
    if isinstance(f, Eventually):
        return Eventually(bind_regions(f.child, regions), f.a, f.b)
    if isinstance(f, Until):
        return Until(bind_regions(f.left, regions), bind_regions(f.right, regions), f.a, f.b)
    return f


# -------------------------------------------------------- pretty printer

def _num(x: float) -> str:
    return repr(float(x))


def format_formula(f: Formula) -> str:
    def wrap(g):
        s = format_formula(g)
        atomic = isinstance(g, (TrueF, FalseF, Predicate, Region))
        return s if atomic else f"({s})"

    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Predicate):
        vec = ", ".join(_num(x) for x in f.a)
        return f"[{vec}] . pos({f.system}) + {_num(f.b)} >= 0"
    if isinstance(f, Region):
        return f"{'inside' if f.inside else 'outside'}({f.system}, {f.region})"
    if isinstance(f, Not):
        return f"!{wrap(f.child)}"
    if isinstance(f, And):
        return " & ".join(wrap(c) for c in f.args)
    if isinstance(f, Or):
        return " | ".join(wrap(c) for c in f.args)
    if isinstance(f, Eventually):
        return f"F[{_num(f.a)}, {_num(f.b)}] {wrap(f.child)}"
    if isinstance(f, Always):
        return f"G[{_num(f.a)}, {_num(f.b)}] {wrap(f.child)}"
    if isinstance(f, Until):
        return f"{wrap(f.left)} U[{_num(f.a)}, {_num(f.b)}] {wrap(f.right)}"
    raise STLError(f"cannot format {type(f).__name__}")


# ---------------------------------------------------------------- parser

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)|(?P<nl>\n)|
    (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|
    (?P<ident>[A-Za-z_][A-Za-z0-9_]*)|
    (?P<op>>=|<=|[!&|()\[\],.+\-*·])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str):
    toks, pos, line, lstart = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise STLSyntaxError(f"unexpected character {text[pos]!r}", line, pos - lstart + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            lstart = m.end()
        elif kind != "ws":
            toks.append(_Tok(kind, m.group(), line, pos - lstart + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - lstart + 1))
    return toks


class _Parser:
    def __init__(self, text, regions, systems):
        self.toks = _tokenize(text)
        self.i = 0
        self.regions = regions
        self.systems = systems

    def peek(self, k=0):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def err(self, msg, tok=None):
        tok = tok or self.peek()
        return STLSyntaxError(msg, tok.line, tok.col)

    def take(self, text=None, kind=None):
        tok = self.peek()
        if (text is not None and tok.text != text) or (kind is not None and tok.kind != kind):
            want = text if text is not None else kind
            got = tok.text or "end of input"
            raise self.err(f"expected {want!r}, found {got!r}")
        self.i += 1
        return tok

    def is_temporal(self, name):
        t = self.peek()
        return t.kind == "ident" and t.text == name and self.peek(1).text == "["

    def parse(self):
        f = self.or_expr()
        if self.peek().kind != "eof":
            raise self.err(f"unexpected token {self.peek().text!r}")
        return f

    def or_expr(self):
        args = [self.and_expr()]
        while self.peek().text == "|":
            self.take("|")
            args.append(self.and_expr())
        return args[0] if len(args) == 1 else Or(tuple(args))

    def and_expr(self):
        args = [self.until_expr()]
        while self.peek().text == "&":
            self.take("&")
            args.append(self.until_expr())
        return args[0] if len(args) == 1 else And(tuple(args))

    def until_expr(self):
        left = self.unary()
        while self.is_temporal("U"):
            self.take("U")
            a, b = self.interval()
            right = self.unary()
            left = Until(left, right, a, b)
        return left

    def unary(self):
        t = self.peek()
        if t.text == "!":
            self.take("!")
            return Not(self.unary())
        for name, cls in (("F", Eventually), ("G", Always)):
            if self.is_temporal(name):
                self.take(name)
                a, b = self.interval()
                return cls(self.unary(), a, b)
        return self.atom()

    def number(self):
        sign = 1.0
        while self.peek().text in ("-", "+"):
            if self.take().text == "-":
                sign = -sign
        tok = self.take(kind="num")
        return sign * float(tok.text)

    def interval(self):
        start = self.take("[")
        a = self.number()
        self.take(",")
        b = self.number()
        self.take("]")
        if a > b:
            raise STLSyntaxError(f"malformed interval [{a}, {b}]: lower bound exceeds upper bound",
                                 start.line, start.col)
        if a < 0:
            raise STLSyntaxError("interval must start at a non-negative time", start.line, start.col)
        return a, b

    def system_name(self):
        tok = self.take(kind="ident")
        if self.systems is not None and tok.text not in self.systems:
            raise STLSyntaxError(f"unknown system {tok.text!r}", tok.line, tok.col)
        return tok.text

    def atom(self):
        t = self.peek()
        if t.text == "(":
            self.take("(")
            f = self.or_expr()
            self.take(")")
            return f
        if t.kind == "ident" and t.text in ("true", "false"):
            self.take()
            return TrueF() if t.text == "true" else FalseF()
        if t.kind == "ident" and t.text in ("inside", "outside"):
            self.take()
            self.take("(")
            sysname = self.system_name()
            self.take(",")
            rtok = self.take(kind="ident")
            self.take(")")
            poly = None
            if self.regions is not None:
                if rtok.text not in self.regions:
                    raise STLSyntaxError(f"unknown region {rtok.text!r}", rtok.line, rtok.col)
                poly = self.regions[rtok.text]
            return Region(sysname, rtok.text, t.text == "inside", poly)
        if t.text == "[":
            return self.affine()
        raise self.err(f"unexpected token {t.text or 'end of input'!r}")

    def affine(self):
        start = self.peek()
        self.take("[")
        a = [self.number()]
        while self.peek().text == ",":
            self.take(",")
            a.append(self.number())
        self.take("]")
        if self.peek().text in (".", "*", "·"):
            self.take()
        else:
            raise self.err("expected '.' between coefficient vector and pos(...)")
        p = self.take(kind="ident")
        if p.text != "pos":
            raise STLSyntaxError("expected pos(<system>)", p.line, p.col)
        self.take("(")
        sysname = self.system_name()
        self.take(")")
        const = 0.0
        while self.peek().text in ("+", "-"):
            sign = 1.0 if self.take().text == "+" else -1.0
            const += sign * self.number()
        op = self.peek()
        if op.text not in (">=", "<="):
            raise self.err("expected '>=' or '<='")
        self.take()
        rhs = self.number()
        if not any(x != 0 for x in a):
            raise STLSyntaxError("predicate coefficients must not all be zero", start.line, start.col)
        if op.text == ">=":
            return Predicate(sysname, tuple(a), const - rhs)
        return Predicate(sysname, tuple(-x for x in a), rhs - const)


def parse_formula(text: str, regions: Mapping[str, HPolytope] | None = None,
                  systems: Sequence[str] | None = None) -> Formula:
    """Parse formula text. With `regions`/`systems`, names are checked."""
    return _Parser(text, regions, set(systems) if systems is not None else None).parse()


# ---------------------------------------------------------------- signals

class Signal:
    """Per-system positions at common, strictly increasing breakpoints."""

    def __init__(self, times, traces: Mapping[str, np.ndarray],
                 velocities_left=None, velocities_right=None):
        t = np.asarray(times, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise STLError("signal needs at least one breakpoint")
        if np.any(np.diff(t) <= 0):
            raise STLError("signal times must be strictly increasing")
        self.times = t
        self.traces = {}
        for k, v in traces.items():
            arr = np.asarray(v, dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            if arr.shape[0] != t.size:
                raise STLError(f"trace {k!r} has {arr.shape[0]} samples for {t.size} times")
            self.traces[k] = arr
        self.velocities_left = velocities_left or {}
        self.velocities_right = velocities_right or {}

    @property
    def t0(self):
        return float(self.times[0])

    @property
    def tf(self):
        return float(self.times[-1])

    def position(self, system: str, t):
        tr = self._trace(system)
        t = np.asarray(t, float)
        return np.stack([np.interp(t, self.times, tr[:, i]) for i in range(tr.shape[1])], axis=-1)

    def _trace(self, system):
        if system not in self.traces:
            raise STLError(f"signal has no trace for system {system!r}")
        return self.traces[system]

    def translated(self, system: str, offset) -> "Signal":
        tr = dict(self.traces)
        tr[system] = tr[system] + np.asarray(offset, float)
        return Signal(self.times, tr)


# ------------------------------------------------------- PWL functions

class PWL:
    """Continuous piecewise-linear function given by breakpoints."""
    __slots__ = ("ts", "vs")

    def __init__(self, ts, vs):
        self.ts = np.asarray(ts, dtype=float)
        self.vs = np.asarray(vs, dtype=float)

    @property
    def lo(self):
        return float(self.ts[0])

    @property
    def hi(self):
        return float(self.ts[-1])

    def __call__(self, t):
        if self.ts.size == 1:
            return np.full(np.shape(t), self.vs[0]) if np.ndim(t) else float(self.vs[0])
        return np.interp(t, self.ts, self.vs)

    def __neg__(self):
        return PWL(self.ts, -self.vs)

    def restrict(self, lo, hi):
        inner = self.ts[(self.ts > lo) & (self.ts < hi)]
        ts = np.unique(np.concatenate([[lo], inner, [hi]]))
        return PWL(ts, self(ts))

    def shift(self, dt):
        return PWL(self.ts - dt, self.vs)


def _dedupe(ts, vs):
    keep = np.concatenate([[True], np.diff(ts) > 1e-13])
    return ts[keep], vs[keep]


def pwl_combine(f: PWL, g: PWL, op) -> PWL:
    """Pointwise min/max on the common domain, crossings inserted."""
    lo, hi = max(f.lo, g.lo), min(f.hi, g.hi)
    if hi < lo - TIME_TOL:
        raise CoverageError("operands have disjoint domains")
    hi = max(hi, lo)
    ts = np.concatenate([f.ts, g.ts, [lo, hi]])
    ts = np.unique(ts[(ts >= lo) & (ts <= hi)])
    fv, gv = f(ts), g(ts)
    d = fv - gv
    if ts.size > 1:
        idx = np.nonzero(d[:-1] * d[1:] < 0)[0]
        if idx.size:
            w = d[idx] / (d[idx] - d[idx + 1])
            tc = ts[idx] + w * (ts[idx + 1] - ts[idx])
            ts = np.sort(np.concatenate([ts, tc]))
            fv, gv = f(ts), g(ts)
    return PWL(*_dedupe(ts, op(fv, gv)))


class _RangeMax:
    """Sparse table for O(1) range maximum queries."""

    def __init__(self, v):
        self.levels = [np.asarray(v, float)]
        k = 1
        while 2 * k <= len(v):
            prev = self.levels[-1]
            self.levels.append(np.maximum(prev[:-k], prev[k:]))
            k *= 2

    def query(self, lo, hi):
        """max v[lo..hi] inclusive (vectorized); -inf where lo > hi."""
        lo = np.asarray(lo)
        hi = np.asarray(hi)
        out = np.full(lo.shape, -np.inf)
        ok = hi >= lo
        if np.any(ok):
            ln = hi[ok] - lo[ok] + 1
            j = np.floor(np.log2(ln)).astype(int)
            vals = np.empty(ln.shape)
            for lvl in np.unique(j):
                m = j == lvl
                arr = self.levels[lvl]
                l_ = lo[ok][m]
                h_ = hi[ok][m]
                vals[m] = np.maximum(arr[l_], arr[h_ - (1 << lvl) + 1])
            out[ok] = vals
        return out


def sliding_max(f: PWL, a: float, b: float, lo: float, hi: float) -> PWL:
    """g(t) = max over [t+a, t+b] of f, exact, for t in [lo, hi]."""
    if f.lo > lo + a + TIME_TOL or f.hi < hi + b - TIME_TOL:
        raise CoverageError(f"signal covers [{f.lo}, {f.hi}] but [{lo + a}, {hi + b}] is required")
    if b - a <= 0:
        g = f.restrict(max(lo + a, f.lo), min(hi + a, f.hi)).shift(a)
        return PWL(np.clip(g.ts, lo, hi), g.vs) if g.ts.size else g
    tau, fv = f.ts, f.vs
    cand = np.concatenate([[lo, hi], tau - a, tau - b])
    cand = np.unique(cand[(cand >= lo) & (cand <= hi)])
    if cand.size == 1:
        t = cand[0]
        inner = (tau >= t + a) & (tau <= t + b)
        v = max(f(t + a), f(t + b), fv[inner].max() if np.any(inner) else -np.inf)
        return PWL([t], [v])
    rmq = _RangeMax(fv)
    c0, c1 = cand[:-1], cand[1:]
    # breakpoints strictly inside the window throughout (c0, c1)
    i_lo = np.searchsorted(tau, c1 + a - 1e-12, side="left")
    i_hi = np.searchsorted(tau, c0 + b + 1e-12, side="right") - 1
    C = rmq.query(i_lo, i_hi)
    p0, p1 = f(c0 + a), f(c1 + a)
    q0, q1 = f(c0 + b), f(c1 + b)
    lines = [(np.where(np.isfinite(C), C, -1e300), np.where(np.isfinite(C), C, -1e300)), (p0, p1), (q0, q1)]
    pts_t = [c0]
    pts_k = [np.arange(c0.size)]
    for i in range(3):
        for j in range(i + 1, 3):
            d0 = lines[i][0] - lines[j][0]
            d1 = lines[i][1] - lines[j][1]
            m = np.sign(d0) * np.sign(d1) < 0
            if np.any(m):
                w = d0[m] / (d0[m] - d1[m])
                pts_t.append(c0[m] + w * (c1[m] - c0[m]))
                pts_k.append(np.nonzero(m)[0])
    ts = np.concatenate(pts_t + [[cand[-1]]])
    ks = np.concatenate(pts_k + [[c0.size - 1]])
    order = np.lexsort((ts, ks))
    ts, ks = ts[order], ks[order]
    vals = np.maximum(np.maximum(C[ks], f(ts + a)), f(ts + b))
    return PWL(*_dedupe(ts, vals))


def sliding_min(f: PWL, a, b, lo, hi) -> PWL:
    return -sliding_max(-f, a, b, lo, hi)


def _running_min_then(f1: PWL, f2: PWL, t: float, a: float, b: float) -> float:
    """max over tau in [t+a, t+b] of min(f2(tau), min_{s in [t, tau]} f1(s))."""
    # running minimum of f1 from t, exact as a PWL function
    inner = f1.ts[(f1.ts > t) & (f1.ts < t + b)]
    ts = np.concatenate([[t], inner, [t + b]])
    vs = f1(ts)
    if ts.size > 1 and ts[-1] <= ts[0]:
        ts, vs = ts[:1], vs[:1]
    M = np.minimum.accumulate(vs)
    # on [ts_i, ts_i+1]: m = min(M_i, f1), crossing where f1 hits M_i
    if ts.size > 1:
        prevM = M[:-1]
        dv = vs[1:] - vs[:-1]
        m = (vs[1:] < prevM) & (vs[:-1] > prevM) & (dv < 0)
        if np.any(m):
            idx = np.nonzero(m)[0]
            w = (prevM[idx] - vs[idx]) / dv[idx]
            tc = ts[idx] + w * (ts[idx + 1] - ts[idx])
            ts2 = np.concatenate([ts, tc])
            order = np.argsort(ts2, kind="stable")
            ts2 = ts2[order]
            v2 = f1(ts2)
            M2 = np.minimum.accumulate(v2)
            ts, vs, M = ts2, v2, M2
    run = PWL(*_dedupe(ts, M)) if ts.size > 1 else PWL(ts[:1], M[:1])
    h = pwl_combine(run, f2, np.minimum)
    if t + a > h.hi + TIME_TOL:
        return -np.inf
    hw = h.restrict(max(t + a, h.lo), h.hi) if h.ts.size > 1 else h
    return float(np.max(hw.vs))


def until_trace(f1: PWL, f2: PWL, a: float, b: float, lo: float, hi: float,
                tol: float = 1e-10, max_points: int = 200000) -> PWL:
    if f1.lo > lo + TIME_TOL or f1.hi < hi + b - TIME_TOL or f2.lo > lo + a + TIME_TOL \
            or f2.hi < hi + b - TIME_TOL:
        raise CoverageError("signal does not cover the Until horizon")
    ev = lambda t: _running_min_then(f1, f2, t, a, b)
    if hi - lo <= 0:
        return PWL([lo], [ev(lo)])
    cand = np.concatenate([[lo, hi], f1.ts, f2.ts - a, f2.ts - b, f1.ts - a, f1.ts - b])
    ts = list(np.unique(cand[(cand >= lo) & (cand <= hi)]))
    vals = {t: ev(t) for t in ts}
    stack = [(ts[i], ts[i + 1]) for i in range(len(ts) - 1)]
    while stack and len(vals) < max_points:
        t0, t1 = stack.pop()
        if t1 - t0 < 1e-9:
            continue
        tm = 0.5 * (t0 + t1)
        vm = ev(tm)
        vals[tm] = vm
        if abs(vm - 0.5 * (vals[t0] + vals[t1])) > tol:
            stack.append((t0, tm))
            stack.append((tm, t1))
    ts = np.array(sorted(vals))
    return PWL(ts, np.array([vals[t] for t in ts]))


# ------------------------------------------------------- quantitative

def _predicate_trace(sig: Signal, system: str, lo: float, hi: float, fn) -> PWL:
    if lo < sig.t0 - TIME_TOL or hi > sig.tf + TIME_TOL:
        raise CoverageError(f"signal covers [{sig.t0}, {sig.tf}] but [{lo}, {hi}] is required")
    lo, hi = max(lo, sig.t0), min(hi, sig.tf)
    t = sig.times
    ts = np.unique(np.concatenate([[lo], t[(t > lo) & (t < hi)], [hi]]))
    pos = sig.position(system, ts)
    return PWL(ts, fn(pos))


def _region_trace(f: Region, sig, lo, hi) -> PWL:
    if f.poly is None:
        raise STLError(f"region {f.region!r} is not bound to a polytope")
    poly = f.poly
    traces = [
        _predicate_trace(sig, f.system, lo, hi, lambda p, h=h, b=b: b - p @ h)
        for h, b in zip(poly.H, poly.b)
    ]
    if not f.inside:
        traces = [-tr for tr in traces]
    op = np.minimum if f.inside else np.maximum
    out = traces[0]
    for tr in traces[1:]:
        out = pwl_combine(out, tr, op)
    return out


def robustness_trace(f: Formula, sig: Signal, lo: float, hi: float) -> PWL:
    """Exact robustness of f as a PWL function of t on [lo, hi]."""
    if isinstance(f, TrueF):
        return PWL([lo, hi] if hi > lo else [lo], [np.inf] * (2 if hi > lo else 1))
    if isinstance(f, FalseF):
        return PWL([lo, hi] if hi > lo else [lo], [-np.inf] * (2 if hi > lo else 1))
    if isinstance(f, Predicate):
        a = np.asarray(f.a)
        return _predicate_trace(sig, f.system, lo, hi, lambda p: p[:, :a.size] @ a + f.b)
    if isinstance(f, Region):
        return _region_trace(f, sig, lo, hi)
    if isinstance(f, Not):
        return -robustness_trace(f.child, sig, lo, hi)
    if isinstance(f, (And, Or)):
        op = np.minimum if isinstance(f, And) else np.maximum
        out = robustness_trace(f.args[0], sig, lo, hi)
        for c in f.args[1:]:
            out = pwl_combine(out, robustness_trace(c, sig, lo, hi), op)
        return out
    if isinstance(f, Eventually):
        child = robustness_trace(f.child, sig, lo + f.a, hi + f.b)
        return sliding_max(child, f.a, f.b, lo, hi)
    if isinstance(f, Always):
        child = robustness_trace(f.child, sig, lo + f.a, hi + f.b)
        return sliding_min(child, f.a, f.b, lo, hi)
    if isinstance(f, Until):
        if isinstance(f.left, TrueF):
            return robustness_trace(Eventually(f.right, f.a, f.b), sig, lo, hi)
        f1 = robustness_trace(f.left, sig, lo, hi + f.b)
        f2 = robustness_trace(f.right, sig, lo + f.a, hi + f.b)
        return until_trace(f1, f2, f.a, f.b, lo, hi)
    raise STLError(f"unsupported formula node {type(f).__name__}")


def robustness(f: Formula, sig: Signal, t: float = None) -> float:
    t = sig.t0 if t is None else float(t)
    if t + horizon(f) > sig.tf + TIME_TOL or t < sig.t0 - TIME_TOL:
        raise CoverageError(
            f"formula horizon {horizon(f)} from t={t} exceeds signal coverage [{sig.t0}, {sig.tf}]")
    return float(robustness_trace(f, sig, t, t).vs[0])


# ------------------------------------------------------------- boolean

def _merge(iv):
    if len(iv) == 0:
        return np.zeros((0, 2))
    iv = np.asarray(iv, float)
    iv = iv[np.argsort(iv[:, 0], kind="stable")]
    out = [list(iv[0])]
    for l, u in iv[1:]:
        if l <= out[-1][1] + 1e-12:
            out[-1][1] = max(out[-1][1], u)
        else:
            out.append([l, u])
    return np.array(out)


def _intersect(A, B):
    out = []
    i = j = 0
    while i < len(A) and j < len(B):
        l = max(A[i][0], B[j][0])
        u = min(A[i][1], B[j][1])
        if l <= u:
            out.append([l, u])
        if A[i][1] < B[j][1]:
            i += 1
        else:
            j += 1
    return _merge(out)


def _complement(A, lo, hi):
    if len(A) == 0:
        return np.array([[lo, hi]])
    out, cur = [], lo
    for l, u in A:
        if l > cur:
            out.append([cur, l])
        cur = max(cur, u)
    if cur < hi:
        out.append([cur, hi])
    return _merge(out)


def _nonneg_set(tr: PWL):
    ts, vs = tr.ts, tr.vs
    if ts.size > 1:
        idx = np.nonzero(vs[:-1] * vs[1:] < 0)[0]
        if idx.size:
            w = vs[idx] / (vs[idx] - vs[idx + 1])
            tc = ts[idx] + w * (ts[idx + 1] - ts[idx])
            ts = np.concatenate([ts, tc])
            order = np.argsort(ts)
            ts = ts[order]
            vs = np.concatenate([vs, np.zeros(tc.size)])[order]
    ok = vs >= 0
    out, start = [], None
    for k in range(ts.size):
        if ok[k] and start is None:
            start = ts[k]
        if start is not None and (not ok[k] or k == ts.size - 1):
            end = ts[k] if ok[k] else ts[k - 1]
            out.append([start, end])
            start = None
    return _merge(out)


def satisfaction_set(f: Formula, sig: Signal, lo: float, hi: float):
    """Times in [lo, hi] where f holds, as merged closed intervals."""
    full = np.array([[lo, hi]])
    if isinstance(f, TrueF):
        return full
    if isinstance(f, FalseF):
        return np.zeros((0, 2))
    if isinstance(f, Predicate):
        a = np.asarray(f.a)
        return _nonneg_set(_predicate_trace(sig, f.system, lo, hi, lambda p: p[:, :a.size] @ a + f.b))
    if isinstance(f, Region):
        return satisfaction_set(f.expand(), sig, lo, hi)
    if isinstance(f, Not):
        return _complement(satisfaction_set(f.child, sig, lo, hi), lo, hi)
    if isinstance(f, And):
        out = full
        for c in f.args:
            out = _intersect(out, satisfaction_set(c, sig, lo, hi))
        return out
    if isinstance(f, Or):
        parts = [satisfaction_set(c, sig, lo, hi) for c in f.args]
        return _merge(np.vstack(parts)) if parts else np.zeros((0, 2))
    if isinstance(f, Eventually):
        S = satisfaction_set(f.child, sig, lo + f.a, hi + f.b)
        shifted = _merge([[l - f.b, u - f.a] for l, u in S])
        return _intersect(shifted, full)
    if isinstance(f, Always):
        return satisfaction_set(Not(Eventually(Not(f.child), f.a, f.b)), sig, lo, hi)
    if isinstance(f, Until):
        S1 = satisfaction_set(f.left, sig, lo, hi + f.b)
        S2 = satisfaction_set(f.right, sig, lo + f.a, hi + f.b)
        out = []
        for J in S1:
            JK = _intersect(np.array([J]), S2)
            for l, u in JK:
                cand = [max(J[0], l - f.b), min(J[1], u - f.a)]
                if cand[0] <= cand[1]:
                    out.append(cand)
        return _intersect(_merge(out), full)
    raise STLError(f"unsupported formula node {type(f).__name__}")


def satisfies(f: Formula, sig: Signal, t: float = None) -> bool:
    t = sig.t0 if t is None else float(t)
    S = satisfaction_set(f, sig, t, t)
    return bool(len(S) and S[0][0] <= t + 1e-12 and S[0][1] >= t - 1e-12)


# --------------------------------------------------------------- plans

def _path_lookup(paths: Sequence[PhasedPath], tol: float):
    for p, q in zip(paths[:-1], paths[1:]):
        if abs(p.t1 - q.t0) > tol:
            raise ContinuityError(f"gap between segments at t={p.t1} / t={q.t0}")
        if np.max(np.abs(p.spatial.control_points[-1] - q.spatial.control_points[0])) > 1e-6:
            raise ContinuityError(f"position jump between segments at t={p.t1}")
    return np.array([p.t0 for p in paths])


def sample_paths(paths: Sequence[PhasedPath], times, side: str = "right"):
    """Positions and velocities of a segment sequence at the given times.
    At a shared boundary, side='right' uses the later segment."""
    times = np.asarray(times, float)
    starts = np.array([p.t0 for p in paths])
    ends = np.array([p.t1 for p in paths])
    if side == "right":
        k = np.searchsorted(starts, times, side="right") - 1
    else:
        k = np.searchsorted(ends, times, side="left")
    k = np.clip(k, 0, len(paths) - 1)
    pos = np.empty((times.size, paths[0].spatial.dim))
    vel = np.empty_like(pos)
    for j in np.unique(k):
        m = k == j
        s = paths[j].s_at_time(times[m])
        pos[m] = paths[j].position(s)
        vel[m] = paths[j].velocity(s)
    return pos, vel


def signal_from_plan(plan, dt: float, tol: float = 1e-6) -> Signal:
    """Sample every system of a plan (anything with a `paths` mapping of
    segment lists) at uniform times plus all segment boundaries."""
    if not dt > 0:
        raise STLError("dt must be positive")
    paths = plan.paths if hasattr(plan, "paths") else plan
    knots = []
    t0 = min(ps[0].t0 for ps in paths.values())
    tf = max(ps[-1].t1 for ps in paths.values())
    for name, ps in paths.items():
        _path_lookup(ps, tol)
        if abs(ps[0].t0 - t0) > tol or abs(ps[-1].t1 - tf) > tol:
            raise ContinuityError(f"system {name!r} does not cover [{t0}, {tf}]")
        knots.extend(p.t0 for p in ps)
        knots.append(ps[-1].t1)
    n = int(math.floor((tf - t0) / dt + 1e-9))
    grid = t0 + dt * np.arange(n + 1)
    ts = np.unique(np.round(np.concatenate([grid, knots, [tf]]), 12))
    ts = ts[(ts >= t0) & (ts <= tf)]
    traces, vl, vr = {}, {}, {}
    for name, ps in paths.items():
        pos, vel_r = sample_paths(ps, ts, side="right")
        _, vel_l = sample_paths(ps, ts, side="left")
        traces[name] = pos
        vl[name] = vel_l
        vr[name] = vel_r
    return Signal(ts, traces, vl, vr)
