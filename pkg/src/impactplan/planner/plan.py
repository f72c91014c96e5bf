"""Plans: extracted trajectories, impact events and the object uncertainty tube."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geometry import BezierCurve, Box, PhasedPath, linear_path
from ..impact import ImpactEvent, point_impact
from ..stl import STLError, robustness, signal_from_plan

PLAN_SCHEMA = "impactplan.plan/1"


class PlanError(ValueError):
    pass


def _seg_index(ps, t):
    starts = np.array([p.t0 for p in ps])
    return int(np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(ps) - 1))


@dataclass
class TubeSegment:
    """Object uncertainty over one segment: four vertex states at its start."""
    t0: float
    t1: float
    c: np.ndarray          # (4, 2) positions
    w: np.ndarray          # (4, 2) position half-widths
    u: np.ndarray          # (4, 2) velocities
    om: np.ndarray         # (4, 2) velocity half-widths

    def box_at(self, t: float) -> Box:
        tau = float(np.clip(t, self.t0, self.t1)) - self.t0
        lo = self.c + self.u * tau - self.w - self.om * tau
        hi = self.c + self.u * tau + self.w + self.om * tau
        return Box(lo.min(axis=0), hi.max(axis=0))

    def width_slope(self) -> np.ndarray:
        """d/dt of the per-vertex zonotope widths (2 * om)."""
        return 2.0 * self.om

    def to_dict(self):
        return {"t0": self.t0, "t1": self.t1, "c": self.c.tolist(), "w": self.w.tolist(),
                "u": self.u.tolist(), "om": self.om.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["t0"]), float(d["t1"]), *(np.asarray(d[k], float) for k in ("c", "w", "u", "om")))


@dataclass
class Plan:
    scenario: str
    mode: str
    t0: float
    tf: float
    robots: dict                 # name -> list[PhasedPath] (nominal)
    objects: dict                # name -> list[PhasedPath] (nominal)
    events: list                 # ImpactEvent, sorted by time
    objective: float
    rho: float = math.nan
    delta: float | None = None
    bundles: dict = field(default_factory=dict)    # robot -> 4 lists of PhasedPath
    tube: dict = field(default_factory=dict)       # object -> list[TubeSegment]
    hulls: dict = field(default_factory=dict)      # object -> list of (C, W, U, Om) per knot
    stats: dict = field(default_factory=dict)

    @property
    def paths(self) -> dict:
        return {**self.robots, **self.objects}

    def segment(self, name: str, t: float) -> PhasedPath:
        ps = self.paths[name]
        return ps[_seg_index(ps, t)]

    def state(self, name: str, t: float):
        p = self.segment(name, t)
        return p.state_at_time(t)

    def position(self, name: str, t: float) -> np.ndarray:
        return self.state(name, t)[0]

    def velocity(self, name: str, t: float) -> np.ndarray:
        return self.state(name, t)[1]

    def events_for(self, robot: str | None = None, obj: str | None = None) -> list:
        return [e for e in self.events
                if (robot is None or e.robot_id == robot) and (obj is None or e.object_id == obj)]

    def next_event(self, name: str, t: float):
        for e in self.events:
            if (e.robot_id == name or e.object_id == name) and e.t_impact > t + 1e-9:
                return e
        return None

    def tube_box(self, obj: str, t: float) -> Box:
        segs = self.tube[obj]
        k = int(np.clip(np.searchsorted([s.t0 for s in segs], t, side="right") - 1, 0, len(segs) - 1))
        return segs[k].box_at(t)

    def to_dict(self) -> dict:
        return {
            "schema": PLAN_SCHEMA, "scenario": self.scenario, "mode": self.mode,
            "t0": self.t0, "tf": self.tf, "objective": self.objective, "rho": self.rho,
            "delta": self.delta,
            "robots": {k: [p.to_dict() for p in v] for k, v in self.robots.items()},
            "objects": {k: [p.to_dict() for p in v] for k, v in self.objects.items()},
            "events": [e.to_dict() for e in self.events],
            "bundles": {k: [[p.to_dict() for p in b] for b in v] for k, v in self.bundles.items()},
            "tube": {k: [s.to_dict() for s in v] for k, v in self.tube.items()},
            "hulls": {k: [[np.asarray(a).tolist() for a in h] for h in v] for k, v in self.hulls.items()},
            "stats": self.stats,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Plan":
        if d.get("schema") != PLAN_SCHEMA:
            raise PlanError(f"unsupported plan schema {d.get('schema')!r}")
        P = PhasedPath.from_dict
        return cls(
            scenario=d["scenario"], mode=d["mode"], t0=float(d["t0"]), tf=float(d["tf"]),
            robots={k: [P(p) for p in v] for k, v in d["robots"].items()},
            objects={k: [P(p) for p in v] for k, v in d["objects"].items()},
            events=[ImpactEvent.from_dict(e) for e in d["events"]],
            objective=float(d["objective"]), rho=float(d.get("rho", math.nan)),
            delta=d.get("delta"),
            bundles={k: [[P(p) for p in b] for b in v] for k, v in d.get("bundles", {}).items()},
            tube={k: [TubeSegment.from_dict(s) for s in v] for k, v in d.get("tube", {}).items()},
            hulls={k: [tuple(np.asarray(a, float) for a in h) for h in v] for k, v in d.get("hulls", {}).items()},
            stats=d.get("stats", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Plan":
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"plan file not found: {p}")
        return cls.from_dict(json.loads(p.read_text()))


def nominal_from_vertices(bundles: list) -> list:
    """Average of vertex bundles (shared temporal curves) as a nominal path."""
    out = []
    for k in range(len(bundles[0])):
        cps = np.mean([b[k].spatial.control_points for b in bundles], axis=0)
        out.append(PhasedPath(BezierCurve(cps), bundles[0][k].temporal, bundles[0][k].label))
    return out


def propagate_object(x0, v0, times, impacts, dt_override=None):
    """Linear object path through knot times; impacts: {knot index: new velocity}."""
    X, v = [np.asarray(x0, float)], np.asarray(v0, float)
    vels = []
    for j in range(len(times) - 1):
        if j in impacts:
            v = np.asarray(impacts[j], float)
        vels.append(v)
        X.append(X[-1] + v * (times[j + 1] - times[j]))
    return X, vels


def monitored_robustness(plan: Plan, spec, dt: float = 0.05) -> float:
    return float(robustness(spec, signal_from_plan(plan, dt)))


def validate_plan(plan: Plan, scenario, dt: float = 0.05, tol: float = 1e-6) -> dict:
    """Independent checks of an extracted plan; returns a report dict."""
    rep = {"continuity": 0.0, "velocity_excess": 0.0, "law_residual": 0.0,
           "unexplained_jumps": 0, "hdot_min": math.inf}
    ev_times = {}
    for e in plan.events:
        ev_times.setdefault(e.robot_id, []).append(e.t_impact)
        ev_times.setdefault(e.object_id, []).append(e.t_impact)
        rep["law_residual"] = max(rep["law_residual"], e.law_residual())
    rv = scenario.robot_velocity
    for name, ps in plan.paths.items():
        for k in range(len(ps) - 1):
            a, b = ps[k], ps[k + 1]
            rep["continuity"] = max(rep["continuity"], abs(a.t1 - b.t0),
                                    float(np.max(np.abs(a.spatial.control_points[-1] - b.spatial.control_points[0]))))
            va, vb = a.velocity(1.0), b.velocity(0.0)
            if np.max(np.abs(va - vb)) > 1e-5 and not any(abs(t - a.t1) < 1e-6 for t in ev_times.get(name, [])):
                rep["unexplained_jumps"] += 1
        for p in ps:
            hd = np.diff(p.temporal.control_points[:, 0]) * p.temporal.degree
            rep["hdot_min"] = min(rep["hdot_min"], float(hd.min()))
            if name in plan.robots:
                v = p.velocity(np.linspace(0, 1, 21))
                ex = max(float(np.max(v - rv.upper)), float(np.max(rv.lower - v)), 0.0)
                rep["velocity_excess"] = max(rep["velocity_excess"], ex)
    # workspace margin over all control points (convex hull property)
    ws = scenario.workspace
    margin = math.inf
    for ps in plan.paths.values():
        for p in ps:
            cp = p.spatial.control_points
            margin = min(margin, float(np.min(ws.b[None, :] - cp @ ws.H.T)))
    rep["workspace_margin"] = margin
    # events must agree with the path velocities they sit between
    mismatch = 0.0
    for e in plan.events:
        for name, vm, vp in ((e.robot_id, e.vR_pre, e.vR_post), (e.object_id, e.vO_pre, e.vO_post)):
            ps = plan.paths.get(name)
            if not ps:
                continue
            k = _seg_index(ps, e.t_impact - 1e-9)
            if abs(ps[k].t1 - e.t_impact) > 1e-6 or k + 1 >= len(ps):
                mismatch = math.inf
                continue
            mismatch = max(mismatch, float(np.max(np.abs(ps[k].velocity(1.0) - vm))),
                           float(np.max(np.abs(ps[k + 1].velocity(0.0) - vp))))
    rep["event_mismatch"] = mismatch
    try:
        rep["monitored_rho"] = monitored_robustness(plan, scenario.spec, dt)
    except STLError as exc:
        rep["monitored_rho"] = math.nan
        rep["monitor_error"] = str(exc)
    rep["ok"] = bool("monitor_error" not in rep and rep["continuity"] <= tol and rep["law_residual"] <= 1e-6
                     and rep["unexplained_jumps"] == 0 and rep["velocity_excess"] <= 1e-6
                     and rep["workspace_margin"] >= -tol and rep["event_mismatch"] <= 1e-5)
    return rep


def point_event(robot, obj, t, x, vRm, vOm, pR, pO) -> ImpactEvent:
    vRp, vOp = point_impact(vRm, vOm, pR, pO)
    rel = np.asarray(vRm) - np.asarray(vOm)
    ang = math.atan2(rel[1], rel[0]) if np.linalg.norm(rel) > 0 else 0.0
    return ImpactEvent(robot, obj, float(t), np.asarray(x, float), ang, vRm, vOm, vRp, vOp,
                       pR.mass, pO.mass, min(pR.restitution, pO.restitution), "point")


def object_paths(X, times, labels) -> list:
    return [linear_path(X[j], X[j + 1], float(times[j]), float(times[j + 1]), labels[j])
            for j in range(len(times) - 1)]
