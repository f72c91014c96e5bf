"""Mixed-integer encoding of STL robustness over Bezier/knot trajectories.

Every encoded quantity is a lower bound on the true robustness: state
formulas are bounded over the convex hull of a segment's control points
(the curve lies inside it), so a feasible model value never overstates the
robustness of the extracted trajectories.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..mip import Expr, MipModel, add_implication, lin_sum
from ..stl import (Always, And, Eventually, FalseF, Formula, Not, Or, Predicate, Region, TrueF,
                   Until, systems_of)


class EncodingError(ValueError):
    pass


@dataclass
class TrajView:
    """What the encoder needs to know about one system.

    knot_times: N+1 floats (fixed) or Exprs; knot_points[k]: list of points
    (object arrays of Exprs) that exactly describe the system at knot k for
    every realization; seg_points[k]: points whose convex hull contains the
    system over segment k for every realization.
    """
    name: str
    knot_times: list
    knot_points: list
    seg_points: list
    fixed_times: bool
    # exact position at a fixed time (objects with linear segments), optional
    point_at: object = None

    @property
    def n_segments(self) -> int:
        return len(self.seg_points)


def to_nnf(f: Formula, neg: bool = False) -> Formula:
    if isinstance(f, TrueF):
        return FalseF() if neg else f
    if isinstance(f, FalseF):
        return TrueF() if neg else f
    if isinstance(f, Predicate):
        return Predicate(f.system, tuple(-a for a in f.a), -f.b) if neg else f
    if isinstance(f, Region):
        return Region(f.system, f.region, not f.inside, f.poly) if neg else f
    if isinstance(f, Not):
        return to_nnf(f.child, not neg)
    if isinstance(f, And):
        args = tuple(to_nnf(c, neg) for c in f.args)
        return Or(args) if neg else And(args)
    if isinstance(f, Or):
        args = tuple(to_nnf(c, neg) for c in f.args)
        return And(args) if neg else Or(args)
    if isinstance(f, Always):
        c = to_nnf(f.child, neg)
        return Eventually(c, f.a, f.b) if neg else Always(c, f.a, f.b)
    if isinstance(f, Eventually):
        c = to_nnf(f.child, neg)
        return Always(c, f.a, f.b) if neg else Eventually(c, f.a, f.b)
    if isinstance(f, Until):
        if neg:
            raise EncodingError("negated Until has no positive encoding")
        return Until(to_nnf(f.left), to_nnf(f.right), f.a, f.b)
    raise EncodingError(f"cannot encode {type(f).__name__}")


def _is_state(f) -> bool:
    if isinstance(f, (Always, Eventually, Until)):
        return False
    return all(_is_state(c) for c in f.children())


class StlEncoder:
    def __init__(self, model: MipModel, views: dict, t0: float, tf: float, rho_bound: float,
                 eps: float = 1e-3):
        self.m = model
        self.views = views
        self.t0, self.tf = t0, tf
        self.R = float(rho_bound)
        self.eps = eps
        self.n_binaries = 0

    # ---- helpers
    def _var(self, name=None):
        return self.m.add_var(-self.R, self.R, name=name)

    def _bin(self, name=None):
        self.n_binaries += 1
        return self.m.add_binary(name)

    def _le_gated(self, lhs, rhs, gate):
        """gate = 1 -> lhs <= rhs."""
        add_implication(self.m, gate, Expr.lift(lhs) <= rhs)

    def _max_of(self, exprs, name=None):
        """Variable r with r <= max(exprs) (binary selection)."""
        exprs = list(exprs)
        if len(exprs) == 1:
            return exprs[0]
        r = self._var(name)
        bs = []
        for e in exprs:
            b = self._bin()
            self._le_gated(r, e, b)
            bs.append(b)
        self.m.add(lin_sum(bs) >= 1)
        return r

    def _min_of(self, exprs, name=None):
        exprs = list(exprs)
        if len(exprs) == 1:
            return exprs[0]
        r = self._var(name)
        for e in exprs:
            self.m.add(r <= e)
        return r

    # ---- state formulas over a point set
    def state_lb(self, f: Formula, pts: list):
        """Expr bounded above by min over conv(pts) of the robustness of f."""
        if isinstance(f, TrueF):
            return Expr.lift(self.R)
        if isinstance(f, FalseF):
            return Expr.lift(-self.R)
        if isinstance(f, Predicate):
            a = np.asarray(f.a)
            vals = [lin_sum(a[i] * p[i] for i in range(len(a))) + f.b for p in pts]
            return self._min_of(vals)
        if isinstance(f, Region):
            poly = f.poly
            if poly is None:
                raise EncodingError(f"region {f.region!r} is not bound")
            if f.inside:
                vals = [lin_sum(-h[i] * p[i] for i in range(len(h))) + bb
                        for h, bb in zip(poly.H, poly.b) for p in pts]
                return self._min_of(vals)
            faces = []
            for h, bb in zip(poly.H, poly.b):
                faces.append(self._min_of([lin_sum(h[i] * p[i] for i in range(len(h))) - bb for p in pts]))
            return self._max_of(faces)
        if isinstance(f, And):
            return self._min_of([self.state_lb(c, pts) for c in f.args])
        if isinstance(f, Or):
            return self._max_of([self.state_lb(c, pts) for c in f.args])
        raise EncodingError(f"{type(f).__name__} is not a state formula")

    def _system_of(self, f):
        ss = systems_of(f)
        if len(ss) != 1:
            raise EncodingError("state formulas under a temporal operator must refer to exactly "
                                f"one system, got {sorted(ss) or 'none'}")
        name = next(iter(ss))
        if name not in self.views:
            raise EncodingError(f"unknown system {name!r}")
        return self.views[name]

    # ---- temporal structure
    def _static_overlap(self, v: TrajView, k, lo, hi):
        a, b = v.knot_times[k], v.knot_times[k + 1]
        return a <= hi + 1e-12 and b >= lo - 1e-12

    def _covers_all(self, lo, hi):
        return lo <= self.t0 + 1e-12 and hi >= self.tf - 1e-12

    def _force_overlap_flag(self, v: TrajView, k, lo, hi):
        """Binary o with o = 1 whenever segment k overlaps [lo, hi]."""
        if v.fixed_times or self._covers_all(lo, hi):
            return 1.0 if (v.fixed_times is False or self._static_overlap(v, k, lo, hi)) else 0.0
        Ta, Tb = v.knot_times[k], v.knot_times[k + 1]
        o, p, q = self._bin(), self._bin(), self._bin()
        # p: segment starts after the window, q: ends before it
        self._le_gated(Expr.lift(hi + self.eps) - Ta, 0.0, p)
        self._le_gated(Tb - (lo - self.eps), 0.0, q)
        self.m.add(o + p + q >= 1)
        return o

    def _witness_ok(self, v: TrajView, k, lo, hi, w, knot: bool):
        """w = 1 only if segment k (or knot k) lies in/overlaps the window."""
        if knot:
            T = v.knot_times[k]
            self._le_gated(T - hi, 0.0, w)
            self._le_gated(Expr.lift(lo) - T, 0.0, w)
        else:
            self._le_gated(v.knot_times[k] - hi, 0.0, w)
            self._le_gated(Expr.lift(lo) - v.knot_times[k + 1], 0.0, w)

    def _candidates(self, v: TrajView, lo, hi):
        """Witness candidates (kind, index) that can lie in [lo, hi]."""
        out = []
        for k in range(len(v.knot_points)):
            if v.fixed_times:
                if lo - 1e-12 <= v.knot_times[k] <= hi + 1e-12:
                    out.append(("knot", k))
            elif (k == 0 and lo <= self.t0 + 1e-12) or (k == len(v.knot_points) - 1 and hi >= self.tf - 1e-12) \
                    or 0 < k < len(v.knot_points) - 1:
                out.append(("knot", k))
        for k in range(v.n_segments):
            if not v.fixed_times or self._static_overlap(v, k, lo, hi):
                out.append(("seg", k))
        return out

    def _needs_gate(self, v, kind, k, lo, hi):
        if v.fixed_times:
            return False
        if kind == "knot" and (k == 0 or k == len(v.knot_points) - 1):
            return False
        return not (kind == "seg" and self._covers_all(lo, hi))

    def temporal(self, f: Formula, t: float):
        lo, hi = t + f.a, t + f.b
        if isinstance(f, Always):
            v = self._system_of(f.child)
            vals = []
            if abs(hi - lo) <= 1e-12:
                exact = self._exact_points(v, lo)
                if exact is not None:
                    return self.state_lb(f.child, exact)
            r = self._var()
            for k in range(v.n_segments):
                o = self._force_overlap_flag(v, k, lo, hi)
                if isinstance(o, float):
                    if o == 0.0:
                        continue
                    self.m.add(r <= self.state_lb(f.child, v.seg_points[k]))
                else:
                    self._le_gated(r, self.state_lb(f.child, v.seg_points[k]), o)
            return r
        if isinstance(f, Eventually):
            v = self._system_of(f.child)
            cands = []
            if v.fixed_times and v.point_at is not None:
                exact = self._exact_points(v, lo)
                if exact is not None:
                    cands.append((None, self.state_lb(f.child, exact)))
                if hi > lo:
                    exact = self._exact_points(v, hi)
                    if exact is not None:
                        cands.append((None, self.state_lb(f.child, exact)))
            for kind, k in self._candidates(v, lo, hi):
                pts = v.knot_points[k] if kind == "knot" else v.seg_points[k]
                cands.append(((kind, k) if self._needs_gate(v, kind, k, lo, hi) else None,
                              self.state_lb(f.child, pts)))
            if not cands:
                raise EncodingError(f"no trajectory part of {v.name} can lie in [{lo}, {hi}]")
            r = self._var()
            ws = []
            for gate, val in cands:
                w = self._bin()
                if gate is not None:
                    self._witness_ok(v, gate[1], lo, hi, w, gate[0] == "knot")
                self._le_gated(r, val, w)
                ws.append(w)
            self.m.add(lin_sum(ws) >= 1)
            return r
        if isinstance(f, Until):
            v1 = self._system_of(f.left) if systems_of(f.left) else None
            v = self._system_of(f.right)
            if v1 is not None and v1.name != v.name:
                raise EncodingError("Until operands must refer to the same system")
            r = self._var()
            ws = []
            phi1_seg = [self.state_lb(f.left, v.seg_points[k]) for k in range(v.n_segments)]
            for kind, k in self._candidates(v, lo, hi):
                pts = v.knot_points[k] if kind == "knot" else v.seg_points[k]
                w = self._bin()
                if self._needs_gate(v, kind, k, lo, hi):
                    self._witness_ok(v, k, lo, hi, w, kind == "knot")
                self._le_gated(r, self.state_lb(f.right, pts), w)
                upto = k if kind == "knot" else k + 1
                for l in range(upto):
                    self._le_gated(r, phi1_seg[l], w)
                if kind == "knot":
                    self._le_gated(r, self.state_lb(f.left, v.knot_points[k]), w)
                ws.append(w)
            if not ws:
                raise EncodingError(f"no trajectory part of {v.name} can lie in [{lo}, {hi}]")
            self.m.add(lin_sum(ws) >= 1)
            return r
        raise EncodingError(f"not a temporal operator: {type(f).__name__}")

    def _exact_points(self, v: TrajView, tau: float):
        """Exact description at a fixed time, if available."""
        if v.fixed_times:
            for k, T in enumerate(v.knot_times):
                if abs(T - tau) <= 1e-9:
                    return v.knot_points[k]
            if v.point_at is not None:
                return v.point_at(tau)
            return None
        if abs(tau - self.t0) <= 1e-12:
            return v.knot_points[0]
        if abs(tau - self.tf) <= 1e-12:
            return v.knot_points[-1]
        return None

    def encode(self, f: Formula, t: float | None = None):
        """Expr lower-bounding the robustness of f at time t (default t0)."""
        t = self.t0 if t is None else t
        f = to_nnf(f)
        return self._enc(f, t)

    def _enc(self, f, t):
        if isinstance(f, (Always, Eventually, Until)):
            for c in f.children():
                if not _is_state(c):
                    raise EncodingError("nested temporal operators are not supported by the encoder")
            return self.temporal(f, t)
        if _is_state(f):
            ss = systems_of(f)
            if not ss:
                return self.state_lb(f, [])
            if len(ss) == 1:
                v = self._system_of(f)
                pts = self._exact_points(v, t)
                if pts is None:
                    raise EncodingError(f"state of {v.name} at t={t} is not available")
                return self.state_lb(f, pts)
        if isinstance(f, And):
            return self._min_of([self._enc(c, t) for c in f.args])
        if isinstance(f, Or):
            return self._max_of([self._enc(c, t) for c in f.args])
        raise EncodingError(f"cannot encode {type(f).__name__} at top level")
