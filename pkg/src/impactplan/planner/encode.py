"""Trajectory variables, impact coupling and constraints for both planning modes.

Robots: N_R cubic spatial curves with quadratic temporal curves and free
knot times. Objects: N_O straight segments on a fixed uniform time grid, so
an object segment is described by its knot positions only. An impact
binary z[R, i, O, j] glues robot junction i to object knot j and applies
the linear impact law; without it both trajectories stay C1 there.

In impact-robust mode the object is a set: at every knot an interval hull
(C, W, U, Omega) of positions and velocities, and per segment four vertex
states, one for each corner sign pattern. Each robot carries four vertex
bundles sharing one temporal curve; bundle s hits corner C + s*W.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ..impact import mass_fractions, pair_restitution
from ..mip import Expr, MipModel, add_disjunction, add_implication, lin_sum
from .scenario import Scenario
from .stl_encode import EncodingError, StlEncoder, TrajView

SIGMAS = np.array(list(itertools.product((-1.0, 1.0), repeat=2)))
DEG_R, DEG_H = 3, 2


def _eq(m: MipModel, a, b):
    for x, y in zip(np.ravel(np.asarray(a, dtype=object)), np.ravel(np.asarray(b, dtype=object))):
        m.add(Expr.lift(x) == y)


def _gate_eq(m: MipModel, gate, a, b):
    for x, y in zip(np.ravel(np.asarray(a, dtype=object)), np.ravel(np.asarray(b, dtype=object))):
        c = Expr.lift(x) == y
        if c.expr.terms:
            add_implication(m, gate, c)


def _d_start(P, deg):
    return deg * (P[1] - P[0])


def _d_end(P, deg):
    return deg * (P[-1] - P[-2])


@dataclass
class RobotVars:
    name: str
    P: list                 # [bundle][curve] -> (4, 2) object array
    H: list                 # [curve] -> (3,) object array
    s: list = field(default_factory=list)   # junction impact indicator, index 0..N (0 and N unused)

    @property
    def n(self):
        return len(self.H)

    def knot_time(self, k):
        return self.H[k][0] if k < self.n else self.H[-1][-1]


@dataclass
class ObjectVars:
    name: str
    times: np.ndarray       # knot times, fixed
    X: list | None = None   # spatial mode: knot positions
    hull: list | None = None    # robust: per knot (C, W, U, Om)
    vert: list | None = None    # robust: per segment, per sigma (c, w, u, om)
    s: list = field(default_factory=list)

    @property
    def n(self):
        return len(self.times) - 1


class PlanEncoding:
    """Builds the mixed-integer model for a scenario."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.robust = sc.mode == "impact_robust"
        self.m = MipModel(sc.name)
        bb = sc.workspace.bounding_box()
        self.lo, self.hi = bb.lower.astype(float), bb.upper.astype(float)
        self.diam = float(np.linalg.norm(self.hi - self.lo))
        pl = sc.planner
        self.rho_bound = float(pl["rho_max"]) if pl.get("rho_max") else self.diam
        self.eps = float(pl["collision_eps"])
        self.hdot_min = float(pl["hdot_min"])
        self.nb = 4 if self.robust else 1
        self.robots: dict = {}
        self.objects: dict = {}
        self.z: dict = {}
        self.att_terms: list = []
        self.width_terms: list = []
        rv = sc.robot_velocity
        self.vcap = 2.0 * float(max(np.max(np.abs(rv.lower)), np.max(np.abs(rv.upper))))
        for o in sc.objects.values():
            self.vcap += float(np.max(np.abs(o.initial_velocity)))
        self.vcap += float(pl["delta_max"]) + 1.0
        nr = max(s.n_segments for s in sc.robots.values())
        # a modest phase rate keeps the pre-impact control polygon short
        self.H_imp = float(pl["impact_hdot"]) if pl.get("impact_hdot") else sc.duration / (4 * nr)
        self._build()

    # ---- variables
    def _pos_vars(self, shape, name):
        out = np.empty(shape, dtype=object)
        for idx in np.ndindex(shape):
            a = idx[-1]
            out[idx] = self.m.add_var(self.lo[a], self.hi[a], name=f"{name}{'_'.join(map(str, idx))}")
        return out

    def _robot(self, spec):
        sc, m = self.sc, self.m
        N = spec.n_segments
        H = [m.add_vars((DEG_H + 1,), sc.t0, sc.tf, name=f"{spec.name}_h{k}_") for k in range(N)]
        P = [[self._pos_vars((DEG_R + 1, 2), f"{spec.name}_b{b}_r{k}_") for k in range(N)]
             for b in range(self.nb)]
        m.add(H[0][0] == sc.t0)
        m.add(H[-1][-1] == sc.tf)
        for k in range(N):
            hd = [DEG_H * (H[k][j + 1] - H[k][j]) for j in range(DEG_H)]
            for e in hd:
                m.add(e >= self.hdot_min)
            if k + 1 < N:
                m.add(H[k][-1] == H[k + 1][0])
            # velocity bounds with hdot elevated to the degree of r'
            he = [hd[0], 0.5 * (hd[0] + hd[1]), hd[1]]
            for b in range(self.nb):
                for j in range(DEG_R):
                    d = DEG_R * (P[b][k][j + 1] - P[b][k][j])
                    for a in range(2):
                        m.add(d[a] >= sc.robot_velocity.lower[a] * he[j])
                        m.add(d[a] <= sc.robot_velocity.upper[a] * he[j])
            hh = H[k]
            self.att_terms.append(("h", [DEG_H * (DEG_H - 1) * (hh[2] - 2 * hh[1] + hh[0])]))
            for b in range(self.nb):
                Pk = P[b][k]
                for j in range(DEG_R - 1):
                    acc = DEG_R * (DEG_R - 1) * (Pk[j + 2] - 2 * Pk[j + 1] + Pk[j])
                    self.att_terms.append(("r", list(acc)))
        for b in range(self.nb):
            for k in range(N - 1):
                _eq(m, P[b][k][-1], P[b][k + 1][0])
            _eq(m, P[b][0][0], spec.initial)
            _eq(m, _d_start(P[b][0], DEG_R), _d_start(H[0], DEG_H) * spec.initial_velocity)
            if spec.final is not None:
                _eq(m, P[b][-1][-1], spec.final)
            if spec.final_velocity is not None:
                _eq(m, _d_end(P[b][-1], DEG_R), _d_end(H[-1], DEG_H) * spec.final_velocity)
        return RobotVars(spec.name, P, H)

    def _object(self, spec):
        sc, m = self.sc, self.m
        N = spec.n_segments
        times = sc.t0 + (sc.tf - sc.t0) * np.arange(N + 1) / N
        ov = ObjectVars(spec.name, times)
        dt = times[1] - times[0]
        if not self.robust:
            X = [np.array([m.add_var(spec.initial[a], spec.initial[a]) for a in range(2)], dtype=object)]
            X += [self._pos_vars((2,), f"{spec.name}_x{j}_") for j in range(1, N + 1)]
            _eq(m, X[1] - X[0], dt * spec.initial_velocity)
            if sc.object_velocity is not None:
                for j in range(N):
                    for a in range(2):
                        m.add(X[j + 1][a] - X[j][a] >= dt * sc.object_velocity.lower[a])
                        m.add(X[j + 1][a] - X[j][a] <= dt * sc.object_velocity.upper[a])
            if spec.final is not None:
                _eq(m, X[-1], spec.final)
            if spec.final_velocity is not None:
                _eq(m, X[-1] - X[-2], dt * spec.final_velocity)
            ov.X = X
            return ov
        V, half = self.vcap, 0.5 * (self.hi - self.lo)
        hull = []
        for j in range(N + 1):
            if j == 0:
                C = np.array([Expr.lift(v) for v in spec.initial], dtype=object)
                W = np.array([Expr.lift(v) for v in spec.initial_half_widths], dtype=object)
                U = np.array([Expr.lift(v) for v in spec.initial_velocity], dtype=object)
                Om = np.array([Expr.lift(0.0)] * 2, dtype=object)
            else:
                C = self._pos_vars((2,), f"{spec.name}_C{j}_")
                W = np.array([m.add_var(0.0, half[a], name=f"{spec.name}_W{j}_{a}") for a in range(2)], dtype=object)
                U = m.add_vars((2,), -V, V, name=f"{spec.name}_U{j}_")
                Om = m.add_vars((2,), 0.0, V, name=f"{spec.name}_Om{j}_")
                self.width_terms += list(W) + list(Om)
            hull.append((C, W, U, Om))
        vert = []
        for j in range(N):
            if j == 0:
                vs = [hull[0]] * 4
            else:
                vs = []
                for si in range(4):
                    c = self._pos_vars((2,), f"{spec.name}_c{j}_{si}_")
                    w = np.array([m.add_var(0.0, half[a]) for a in range(2)], dtype=object)
                    u = m.add_vars((2,), -V, V)
                    om = m.add_vars((2,), 0.0, V)
                    self.width_terms += list(w) + list(om)
                    vs.append((c, w, u, om))
            vert.append(vs)
            C1, W1, U1, Om1 = hull[j + 1]
            for (c, w, u, om) in vs:
                for a in range(2):
                    m.add(C1[a] - W1[a] <= c[a] + dt * u[a] - w[a] - dt * om[a])
                    m.add(C1[a] + W1[a] >= c[a] + dt * u[a] + w[a] + dt * om[a])
                    m.add(U1[a] - Om1[a] <= u[a] - om[a])
                    m.add(U1[a] + Om1[a] >= u[a] + om[a])
                    if sc.object_velocity is not None:
                        m.add(u[a] - om[a] >= sc.object_velocity.lower[a])
                        m.add(u[a] + om[a] <= sc.object_velocity.upper[a])
        if spec.final is not None:
            for a in range(2):
                m.add(hull[-1][0][a] - hull[-1][1][a] <= spec.final[a] + 1e-9)
                m.add(hull[-1][0][a] + hull[-1][1][a] >= spec.final[a] - 1e-9)
        ov.hull, ov.vert = hull, vert
        return ov

    # ---- model
    def _build(self):
        sc, m = self.sc, self.m
        self.delta = m.add_var(0.0, float(sc.planner["delta_max"]), name="delta") if self.robust else None
        for spec in sc.robots.values():
            self.robots[spec.name] = self._robot(spec)
        for spec in sc.objects.values():
            self.objects[spec.name] = self._object(spec)
        self._impacts()
        self._workspace_and_obstacles()
        self._collisions()
        views = self.views()
        self.stl = StlEncoder(m, views, sc.t0, sc.tf, self.rho_bound, self.eps)
        self.rho = m.add_var(-self.rho_bound, self.rho_bound, name="rho")
        top = self.stl.encode(sc.spec)
        m.add(self.rho <= top)
        if self.robust:
            m.add(self.rho >= 0.0)
            m.set_objective(self.delta, "max")
        else:
            m.set_objective(self.rho, "max")

    def _impacts(self):
        sc, m = self.sc, self.m
        for rv in self.robots.values():
            rv.s = [Expr.lift(0.0) for _ in range(rv.n + 1)]
        for ov in self.objects.values():
            ov.s = [Expr.lift(0.0) for _ in range(ov.n + 1)]
        for rv in self.robots.values():
            for i in range(1, rv.n):
                for ov in self.objects.values():
                    for j in range(1, ov.n):
                        z = m.add_binary(f"z_{rv.name}_{i}_{ov.name}_{j}")
                        self.z[(rv.name, i, ov.name, j)] = z
                        rv.s[i] = rv.s[i] + z
                        ov.s[j] = ov.s[j] + z
        for x in list(self.robots.values()) + list(self.objects.values()):
            for e in x.s:
                if e.terms:
                    m.add(e <= 1)
        Hi = self.H_imp
        for (rn, i, on, j), z in self.z.items():
            rv, ov = self.robots[rn], self.objects[on]
            pR, pO = sc.robots[rn].params, sc.objects[on].params
            m1, m2, m3, m4 = mass_fractions(pR.mass, pO.mass, pair_restitution(pR, pO))
            tj = float(ov.times[j])
            dt = float(ov.times[1] - ov.times[0])
            _gate_eq(m, z, rv.H[i][0], tj)
            _gate_eq(m, z, _d_end(rv.H[i - 1], DEG_H), Hi)
            _gate_eq(m, z, _d_start(rv.H[i], DEG_H), Hi)
            if not self.robust:
                X = ov.X
                dRm = _d_end(rv.P[0][i - 1], DEG_R)
                dOm = (Hi / dt) * (X[j] - X[j - 1])        # object velocity times Hi
                _gate_eq(m, z, rv.P[0][i - 1][-1], X[j])
                _gate_eq(m, z, _d_start(rv.P[0][i], DEG_R), m1 * dRm + m2 * dOm)
                _gate_eq(m, z, X[j + 1] - X[j], (dt / Hi) * (m3 * dRm + m4 * dOm))
            else:
                C, W, U, Om = ov.hull[j]
                for si, sg in enumerate(SIGMAS):
                    dRm = _d_end(rv.P[si][i - 1], DEG_R)
                    _gate_eq(m, z, rv.P[si][i - 1][-1], C + sg * W)
                    _gate_eq(m, z, _d_start(rv.P[si][i], DEG_R), m1 * dRm + (m2 * Hi) * U)
                    c, w, u, om = ov.vert[j][si]
                    _gate_eq(m, z, c, C + sg * W)
                    _gate_eq(m, z, w, [0.0, 0.0])
                    _gate_eq(m, z, u, (m3 / Hi) * dRm + m4 * U)
                    _gate_eq(m, z, om, [self.delta + abs(m4) * Om[a] for a in range(2)])
        # smoothness away from impacts
        for rv in self.robots.values():
            for i in range(1, rv.n):
                g = 1 - rv.s[i]
                _gate_eq(m, g, _d_start(rv.H[i], DEG_H), _d_end(rv.H[i - 1], DEG_H))
                for b in range(self.nb):
                    _gate_eq(m, g, _d_start(rv.P[b][i], DEG_R), _d_end(rv.P[b][i - 1], DEG_R))
            if self.robust:
                # bundles coincide on curves not adjacent to an impact
                for k in range(rv.n):
                    sa, sb = rv.s[k], rv.s[k + 1]
                    f = m.add_binary(f"free_{rv.name}_{k}")
                    m.add(f >= 1 - sa - sb)
                    m.add(f <= 1 - sa)
                    m.add(f <= 1 - sb)
                    for b in range(1, 4):
                        _gate_eq(m, f, rv.P[b][k], rv.P[0][k])
        for ov in self.objects.values():
            for j in range(1, ov.n):
                g = 1 - ov.s[j]
                if not self.robust:
                    X = ov.X
                    _gate_eq(m, g, X[j + 1] - X[j], X[j] - X[j - 1])
                else:
                    C, W, U, Om = ov.hull[j]
                    for (c, w, u, om) in ov.vert[j]:
                        _gate_eq(m, g, c, C)
                        _gate_eq(m, g, w, W)
                        _gate_eq(m, g, u, U)
                        _gate_eq(m, g, om, Om)

    # ---- point sets
    def robot_seg_points(self, rv, k):
        return [rv.P[b][k][j] for b in range(self.nb) for j in range(DEG_R + 1)]

    def robot_knot_points(self, rv, k):
        if k < rv.n:
            return [rv.P[b][k][0] for b in range(self.nb)]
        return [rv.P[b][-1][-1] for b in range(self.nb)]

    def object_knot_points(self, ov, j):
        if not self.robust:
            return [ov.X[j]]
        C, W, _, _ = ov.hull[j]
        return [C + sg * W for sg in SIGMAS]

    def object_seg_points(self, ov, j):
        return self.object_knot_points(ov, j) + self.object_knot_points(ov, j + 1)

    def views(self) -> dict:
        out = {}
        for rv in self.robots.values():
            out[rv.name] = TrajView(
                rv.name, [rv.knot_time(k) for k in range(rv.n + 1)],
                [self.robot_knot_points(rv, k) for k in range(rv.n + 1)],
                [self.robot_seg_points(rv, k) for k in range(rv.n)], fixed_times=False)
        for ov in self.objects.values():
            point_at = None
            if not self.robust:
                point_at = self._interp(ov)
            out[ov.name] = TrajView(
                ov.name, [float(t) for t in ov.times],
                [self.object_knot_points(ov, j) for j in range(ov.n + 1)],
                [self.object_seg_points(ov, j) for j in range(ov.n)], fixed_times=True,
                point_at=point_at)
        return out

    @staticmethod
    def _interp(ov):
        def at(tau):
            j = int(np.clip(np.searchsorted(ov.times, tau, side="right") - 1, 0, ov.n - 1))
            lam = (tau - ov.times[j]) / (ov.times[j + 1] - ov.times[j])
            return [(1 - lam) * ov.X[j] + lam * ov.X[j + 1]]
        return at

    def _workspace_and_obstacles(self):
        sc, m = self.sc, self.m
        Hw, bw = sc.workspace.H, sc.workspace.b
        groups = []
        for rv in self.robots.values():
            groups += [self.robot_seg_points(rv, k) for k in range(rv.n)]
        for ov in self.objects.values():
            groups += [self.object_seg_points(ov, j) for j in range(ov.n)]
        seen = set()
        for pts in groups:
            for p in pts:
                key = tuple(sorted(p[0].terms.items())) + tuple(sorted(p[1].terms.items())) + (p[0].const, p[1].const)
                if key in seen:
                    continue
                seen.add(key)
                for h, b in zip(Hw, bw):
                    c = h[0] * p[0] + h[1] * p[1] <= b
                    if c.expr.terms:
                        m.add(c)
            for name, poly in sc.obstacles.items():
                add_disjunction(m, [[h[0] * p[0] + h[1] * p[1] >= b for p in pts]
                                    for h, b in zip(poly.H, poly.b)], name=f"avoid_{name}")

    def _curve_box(self, pts):
        m = self.m
        lo = np.array([m.add_var(self.lo[a], self.hi[a]) for a in range(2)], dtype=object)
        hi = np.array([m.add_var(self.lo[a], self.hi[a]) for a in range(2)], dtype=object)
        for p in pts:
            for a in range(2):
                m.add(lo[a] <= p[a])
                m.add(hi[a] >= p[a])
        return lo, hi

    def _collisions(self):
        sc, m = self.sc, self.m
        rob = list(self.robots.values())
        boxes = {rv.name: [self._curve_box(self.robot_seg_points(rv, k)) for k in range(rv.n)]
                 for rv in rob} if len(rob) > 1 else {}
        for a_i in range(len(rob)):
            for b_i in range(a_i + 1, len(rob)):
                A, B = rob[a_i], rob[b_i]
                rs = sc.robots[A.name].params.radius + sc.robots[B.name].params.radius
                for k in range(A.n):
                    for l in range(B.n):
                        (la, ha), (lb, hb) = boxes[A.name][k], boxes[B.name][l]
                        groups = [[A.knot_time(k + 1) <= B.knot_time(l)],
                                  [B.knot_time(l + 1) <= A.knot_time(k)]]
                        for a in range(2):
                            groups.append([ha[a] + rs <= lb[a]])
                            groups.append([hb[a] + rs <= la[a]])
                        add_disjunction(m, groups, name=f"coll_{A.name}_{B.name}")
        if sc.planner.get("robot_object_clearance", True):
            self._robot_object_clearance()
        objs = list(self.objects.values())
        for a_i in range(len(objs)):
            for b_i in range(a_i + 1, len(objs)):
                A, B = objs[a_i], objs[b_i]
                rs = sc.objects[A.name].params.radius + sc.objects[B.name].params.radius
                for k in range(A.n):
                    for l in range(B.n):
                        if min(A.times[k + 1], B.times[l + 1]) <= max(A.times[k], B.times[l]) + 1e-12:
                            continue
                        la, ha = self._curve_box(self.object_seg_points(A, k))
                        lb, hb = self._curve_box(self.object_seg_points(B, l))
                        groups = []
                        for a in range(2):
                            groups.append([ha[a] + rs <= lb[a]])
                            groups.append([hb[a] + rs <= la[a]])
                        add_disjunction(m, groups, name=f"coll_{A.name}_{B.name}")

    def _robot_object_clearance(self):
        """Robot curves keep clear of object segments unless the curve ends or
        starts with an impact on that object."""
        sc, m = self.sc, self.m
        for rv in self.robots.values():
            rboxes = [self._curve_box(self.robot_seg_points(rv, k)) for k in range(rv.n)]
            for ov in self.objects.values():
                rs = sc.robots[rv.name].params.radius + sc.objects[ov.name].params.radius
                oboxes = [self._curve_box(self.object_seg_points(ov, j)) for j in range(ov.n)]
                for k in range(rv.n):
                    ex = lin_sum(z for (rn, i, on, _), z in self.z.items()
                                 if rn == rv.name and on == ov.name and i in (k, k + 1))
                    for j in range(ov.n):
                        (la, ha), (lb, hb) = rboxes[k], oboxes[j]
                        groups = [[rv.knot_time(k + 1) <= float(ov.times[j])],
                                  [rv.knot_time(k) >= float(ov.times[j + 1])]]
                        for a in range(2):
                            groups.append([ha[a] + rs <= lb[a]])
                            groups.append([hb[a] + rs <= la[a]])
                        if ex.terms:
                            groups.append([ex >= 1])
                        add_disjunction(m, groups, name=f"clear_{rv.name}_{ov.name}")
                if not sc.planner.get("knot_clearance", True):
                    continue
                # interior knots of exempt curves still keep clear unless the
                # knot itself is the impact with this object
                for k in range(1, rv.n):
                    ex = lin_sum(z for (rn, i, on, _), z in self.z.items()
                                 if rn == rv.name and on == ov.name and i == k)
                    pts = self.robot_knot_points(rv, k)
                    if len(pts) == 1:
                        la = ha = pts[0]
                    else:
                        la, ha = self._curve_box(pts)
                    for j in range(ov.n):
                        lb, hb = oboxes[j]
                        groups = [[rv.knot_time(k) <= float(ov.times[j])],
                                  [rv.knot_time(k) >= float(ov.times[j + 1])]]
                        for a in range(2):
                            groups.append([ha[a] + rs <= lb[a]])
                            groups.append([hb[a] + rs <= la[a]])
                        if ex.terms:
                            groups.append([ex >= 1])
                        add_disjunction(m, groups, name=f"knot_{rv.name}_{ov.name}")

    def attenuation_objective(self):
        """(exprs, weights) of the squared-acceleration cost."""
        w = self.sc.attenuation
        out = []
        for kind, exprs in self.att_terms:
            out.append((exprs, float(w["r_ddot"] if kind == "r" else w["h_ddot"])))
        return out
