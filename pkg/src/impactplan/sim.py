"""Planar frictionless rigid-body world and the closed-loop executor.

Bodies are discs. Robots are force/torque actuated; objects drift freely
unless lab emulation turns on their velocity-keeping controller. Contacts
between any two discs are timed by bisection and resolved with the disc
impact law. Walls and obstacles are not physical: leaving the workspace or
entering an obstacle is logged as a violation.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .control import (ControllerState, ImpactPrediction, MpcConfig, RobotModel, VelocityKeeping, mpc_step,
                      velocity_keeping_step)
from .geometry import PhasedPath
from .impact import BodyParams, ContactGeometryError, ImpactError, cylinder_impact
from .replanner import (ReplanError, ReplanRequest, ReplanWeights, impact_target, replan, should_replan)
from .stl import CoverageError, Formula, Signal, horizon, robustness, systems_of

log = logging.getLogger("impactplan.sim")

POSE_COLS = ("x", "y", "psi", "vx", "vy", "omega")
INPUT_COLS = ("Fx", "Fy", "tau")


class SimulationError(RuntimeError):
    pass


class ResolutionError(SimulationError):
    pass


# ------------------------------------------------------------------ world

@dataclass
class WorldState:
    """Poses and twists of all bodies. X rows: [x, y, vx, vy, psi, omega]."""
    names: list
    params: list
    X: np.ndarray
    t: float = 0.0
    comp: np.ndarray | None = None       # Kahan compensation of x, y, psi
    actuated: np.ndarray | None = None   # bodies integrated with inputs

    def __post_init__(self):
        self.X = np.asarray(self.X, float).reshape(len(self.names), 6)
        if self.comp is None:
            self.comp = np.zeros((len(self.names), 3))
        if self.actuated is None:
            self.actuated = np.zeros(len(self.names), bool)
        self.radii = np.array([p.radius for p in self.params])
        self.masses = np.array([p.mass for p in self.params])
        self.inertias = np.array([0.5 * p.mass * max(p.radius, 0.15) ** 2 for p in self.params])

    @classmethod
    def create(cls, bodies: dict, t: float = 0.0, actuated=()) -> "WorldState":
        """bodies: name -> (BodyParams, position, velocity[, psi, omega])."""
        names = list(bodies)
        X = np.zeros((len(names), 6))
        for i, n in enumerate(names):
            b = bodies[n]
            X[i, 0:2] = b[1]
            X[i, 2:4] = b[2] if len(b) > 2 else 0.0
            if len(b) > 3:
                X[i, 4] = b[3]
            if len(b) > 4:
                X[i, 5] = b[4]
        act = np.array([n in actuated for n in names], bool)
        return cls(names, [bodies[n][0] for n in names], X, float(t), actuated=act)

    def copy(self) -> "WorldState":
        return WorldState(list(self.names), list(self.params), self.X.copy(), self.t, self.comp.copy(),
                          self.actuated.copy())

    def index(self, name: str) -> int:
        return self.names.index(name)

    def position(self, name):
        return self.X[self.index(name), 0:2].copy()

    def velocity(self, name):
        return self.X[self.index(name), 2:4].copy()

    def momentum(self) -> np.ndarray:
        return (self.masses[:, None] * self.X[:, 2:4]).sum(axis=0)


@njit(cache=True)
def _integrate(X, C, U, m, I, actuated, dt):
    n = X.shape[0]
    Xn = X.copy()
    Cn = C.copy()
    for i in range(n):
        x = X[i]
        if actuated[i] and (U[i, 0] != 0.0 or U[i, 1] != 0.0 or U[i, 2] != 0.0):
            # RK4 on [x, y, vx, vy, psi, omega] with body-frame force
            k = np.empty((4, 6))
            xs = x.copy()
            for s in range(4):
                if s == 1 or s == 2:
                    xs = x + 0.5 * dt * k[s - 1]
                elif s == 3:
                    xs = x + dt * k[2]
                c, sn = math.cos(xs[4]), math.sin(xs[4])
                k[s, 0] = xs[2]
                k[s, 1] = xs[3]
                k[s, 2] = (c * U[i, 0] - sn * U[i, 1]) / m[i]
                k[s, 3] = (sn * U[i, 0] + c * U[i, 1]) / m[i]
                k[s, 4] = xs[5]
                k[s, 5] = U[i, 2] / I[i]
            inc = dt / 6.0 * (k[0] + 2.0 * k[1] + 2.0 * k[2] + k[3])
            Xn[i, 2] = x[2] + inc[2]
            Xn[i, 3] = x[3] + inc[3]
            Xn[i, 5] = x[5] + inc[5]
            d = (inc[0], inc[1], inc[4])
        else:
            d = (x[2] * dt, x[3] * dt, x[5] * dt)
        # compensated accumulation of the pose
        for q, col in ((0, 0), (1, 1), (2, 4)):
            y = d[q] - Cn[i, q]
            tsum = Xn[i, col] + y
            Cn[i, q] = (tsum - Xn[i, col]) - y
            Xn[i, col] = tsum
    return Xn, Cn


@njit(cache=True)
def _gaps(X, radii):
    n = X.shape[0]
    G = np.full((n, n), np.inf)
    for i in range(n):
        for j in range(i + 1, n):
            dx = X[j, 0] - X[i, 0]
            dy = X[j, 1] - X[i, 1]
            G[i, j] = math.sqrt(dx * dx + dy * dy) - radii[i] - radii[j]
    return G


@njit(cache=True)
def _closest_gap(X0, X1, radii, i, j, dt):
    """Minimum gap of a pair over a step assuming straight relative motion;
    returns (gap, fraction)."""
    rx = X0[j, 0] - X0[i, 0]
    ry = X0[j, 1] - X0[i, 1]
    dx = (X1[j, 0] - X1[i, 0]) - rx
    dy = (X1[j, 1] - X1[i, 1]) - ry
    dd = dx * dx + dy * dy
    f = 0.0
    if dd > 0:
        f = min(1.0, max(0.0, -(rx * dx + ry * dy) / dd))
    px, py = rx + f * dx, ry + f * dy
    return math.sqrt(px * px + py * py) - radii[i] - radii[j], f


@njit(cache=True)
def _candidates(X0, X1, radii, G0, G1):
    """Pairs whose gap becomes negative within the step; the flag marks a
    pair that passes through contact between two separated samples."""
    n = X0.shape[0]
    out = []
    tunnel = False
    for i in range(n):
        for j in range(i + 1, n):
            if G0[i, j] >= 0 and G1[i, j] < 0:
                out.append((i, j))
            elif G0[i, j] >= 0 and G1[i, j] >= 0 and G1[i, j] < 1.0:
                g, f = _closest_gap(X0, X1, radii, i, j, 1.0)
                if g < 0:
                    out.append((i, j))
                    tunnel = True
    return out, tunnel


@dataclass
class DisturbanceModel:
    impact_bound: float = 0.0    # post-impact object velocity perturbation, m/s (per axis)
    drift_bound: float = 0.0     # per-step velocity drift, m/s^2 (per axis)
    seed: int = 0

    def __post_init__(self):
        if self.impact_bound < 0 or self.drift_bound < 0:
            raise ValueError("disturbance bounds must be nonnegative")

    @property
    def active(self) -> bool:
        return self.impact_bound > 0 or self.drift_bound > 0

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def world_step(world: WorldState, inputs, dt: float, disturbance: DisturbanceModel | None = None,
               rng: np.random.Generator | None = None, object_mask=None, contact_tol: float = 1e-6,
               max_contacts: int = 16):
    """Advance by dt; returns (new world, events). inputs: (n, 3) body-frame
    force/torque (rows of unactuated bodies are ignored)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    w = world.copy()
    U = np.zeros((len(w.names), 3)) if inputs is None else np.asarray(inputs, float).reshape(-1, 3)
    events = []
    remaining = float(dt)
    if object_mask is None:
        object_mask = ~w.actuated
    G0 = _gaps(w.X, w.radii)
    bad = np.argwhere(G0 < -1e-4)
    for i, j in bad:
        if _approach_rate(w.X, i, j) < -1e-9:
            raise ResolutionError(f"{w.names[i]} and {w.names[j]} overlap by {-G0[i, j]:.3g} m and approach")
    for _ in range(max_contacts):
        X1, C1 = _integrate(w.X, w.comp, U, w.masses, w.inertias, w.actuated, remaining)
        G1 = _gaps(X1, w.radii)
        pairs, tunnel = _candidates(w.X, X1, w.radii, G0, G1)
        cand = [(int(i), int(j)) for i, j in pairs]
        if not cand:
            w.X, w.comp = X1, C1
            break
        if tunnel:
            events.append({"type": "tunneling", "t": w.t})
        # earliest contact by bisection on the step fraction
        lo, hi = 0.0, remaining

        def first_gap(tau):
            Xt, _ = _integrate(w.X, w.comp, U, w.masses, w.inertias, w.actuated, tau)
            Gt = _gaps(Xt, w.radii)
            return min(Gt[i, j] for i, j in cand)

        if tunnel and first_gap(hi) >= 0:
            # the gap dips inside the step: find a negative sample first
            taus = np.linspace(0, remaining, 33)[1:]
            neg = [tau for tau in taus if first_gap(tau) < 0]
            if not neg:
                w.X, w.comp = X1, C1
                break
            hi = neg[0]
        while hi - lo > contact_tol:
            mid = 0.5 * (lo + hi)
            if first_gap(mid) < 0:
                hi = mid
            else:
                lo = mid
        if lo > 0:
            w.X, w.comp = _integrate(w.X, w.comp, U, w.masses, w.inertias, w.actuated, lo)
        w.t += lo
        remaining -= lo
        G = _gaps(w.X, w.radii)
        for i, j in sorted(cand, key=lambda p: G[p]):
            if G[i, j] > 10 * contact_tol * (1 + np.abs(w.X[[i, j], 2:4]).max()):
                continue
            ev = _resolve(w, i, j, disturbance, rng, object_mask)
            if ev is not None:
                events.append(ev)
        G0 = _gaps(w.X, w.radii)
        if remaining <= 0:
            break
    else:
        raise ResolutionError(f"more than {max_contacts} contacts within one step at t={w.t}")
    w.t = world.t + dt
    return w, events


def _approach_rate(X, i, j):
    d = X[j, 0:2] - X[i, 0:2]
    nrm = np.linalg.norm(d)
    if nrm == 0:
        return -1.0
    return float((X[j, 2:4] - X[i, 2:4]) @ (d / nrm))


def _resolve(w: WorldState, i, j, disturbance, rng, object_mask):
    if _approach_rate(w.X, i, j) >= 0:
        return None
    pi, pj = w.params[i], w.params[j]
    xi, xj = w.X[i, 0:2], w.X[j, 0:2]
    vi, vj = w.X[i, 2:4].copy(), w.X[j, 2:4].copy()
    try:
        vip, vjp, th = cylinder_impact(xi, xj, vi, vj, pi, pj, tol=1e-4)
    except ContactGeometryError as exc:
        raise ResolutionError(str(exc)) from exc
    pert = {}
    if disturbance is not None and disturbance.impact_bound > 0 and rng is not None:
        for k, v in ((i, vip), (j, vjp)):
            if object_mask[k]:
                dv = rng.uniform(-disturbance.impact_bound, disturbance.impact_bound, 2)
                v += dv
                pert[w.names[k]] = dv.tolist()
    w.X[i, 2:4], w.X[j, 2:4] = vip, vjp
    cp = xi + (xj - xi) * (pi.radius / max(pi.radius + pj.radius, 1e-300))
    return {"type": "impact", "t": w.t, "a": w.names[i], "b": w.names[j], "contact": cp.tolist(),
            "normal_angle": th, "va_pre": vi.tolist(), "vb_pre": vj.tolist(), "va_post": vip.tolist(),
            "vb_post": vjp.tolist(), "perturbation": pert}


# ---------------------------------------------------------------- run log

@dataclass
class RunLog:
    """Sampled trajectory plus events. Columns: t, then <body>.<x|y|psi|vx|vy|omega>
    for every body, then <robot>.<Fx|Fy|tau> for every actuated body."""
    columns: list
    data: np.ndarray
    events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)    # wall-clock; never written to files

    @property
    def times(self) -> np.ndarray:
        return self.data[:, 0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def bodies(self) -> list:
        return [c[:-2] for c in self.columns if c.endswith(".x")]

    def positions(self, body: str) -> np.ndarray:
        return np.stack([self.column(f"{body}.x"), self.column(f"{body}.y")], axis=1)

    def velocities(self, body: str) -> np.ndarray:
        return np.stack([self.column(f"{body}.vx"), self.column(f"{body}.vy")], axis=1)

    def impacts(self) -> list:
        return [e for e in self.events if e["type"] == "impact"]

    def signal(self) -> Signal:
        return Signal(self.times, {b: self.positions(b) for b in self.bodies()})

    def csv_text(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.columns)
        for row in self.data:
            wr.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def json_text(self) -> str:
        return json.dumps({"meta": self.meta, "events": self.events, "report": self.report},
                          indent=1, sort_keys=True, default=_jsonable)

    def save(self, out_dir, stem: str = "run") -> tuple:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pc, pj = out / f"{stem}.csv", out / f"{stem}.json"
        pc.write_text(self.csv_text(), encoding="utf-8")
        pj.write_text(self.json_text(), encoding="utf-8")
        return pc, pj

    @classmethod
    def load(cls, csv_path, json_path=None) -> "RunLog":
        pc = Path(csv_path)
        if not pc.exists():
            raise FileNotFoundError(f"log file not found: {pc}")
        with open(pc, encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise CoverageError(f"log {pc} is empty")
        cols = rows[0]
        data = np.array([[float(v) for v in r] for r in rows[1:]], float).reshape(-1, len(cols))
        pj = Path(json_path) if json_path else pc.with_suffix(".json")
        meta, events, report = {}, [], {}
        if pj.exists():
            d = json.loads(pj.read_text(encoding="utf-8"))
            meta, events, report = d.get("meta", {}), d.get("events", []), d.get("report", {})
        return cls(cols, data, events, meta, report)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialize {type(o)}")


def playback_log(plan, dt: float = 0.1) -> RunLog:
    """Log of ideal plan execution sampled every dt plus all segment knots."""
    paths = plan.paths
    ts = np.arange(plan.t0, plan.tf + 1e-9, dt)
    knots = [p.t0 for ps in paths.values() for p in ps] + [plan.tf]
    ts = np.unique(np.round(np.concatenate([ts, knots]), 12))
    ts = ts[(ts >= plan.t0) & (ts <= plan.tf)]
    cols = ["t"]
    blocks = [ts[:, None]]
    for name, ps in paths.items():
        P, V = _sample(ps, ts)
        cols += [f"{name}.{c}" for c in POSE_COLS]
        blocks.append(np.column_stack([P, np.zeros(ts.size), V, np.zeros(ts.size)]))
    events = [{"type": "impact", "t": e.t_impact, "a": e.robot_id, "b": e.object_id,
               "contact": e.contact_point.tolist(), "normal_angle": e.normal_angle,
               "va_pre": e.vR_pre.tolist(), "vb_pre": e.vO_pre.tolist(), "va_post": e.vR_post.tolist(),
               "vb_post": e.vO_post.tolist(), "perturbation": {}} for e in plan.events]
    return RunLog(cols, np.hstack(blocks), events,
                  {"scenario": plan.scenario, "t0": plan.t0, "tf": plan.tf, "source": "playback",
                   "planned_events": [e.to_dict() for e in plan.events]})


def _sample(ps, ts, side="right"):
    """Positions and velocities of a segment list at times ts."""
    ts = np.asarray(ts, float)
    starts = np.array([p.t0 for p in ps])
    # restricted segments start a rounding error after the query time
    if side == "right":
        idx = np.clip(np.searchsorted(starts, ts + 1e-9, side="right") - 1, 0, len(ps) - 1)
    else:
        idx = np.clip(np.searchsorted(starts, ts - 1e-9, side="left") - 1, 0, len(ps) - 1)
    P = np.zeros((ts.size, 2))
    V = np.zeros((ts.size, 2))
    for k in np.unique(idx):
        m = idx == k
        p = ps[k]
        tt = np.clip(ts[m], p.t0, p.t1)
        s = np.atleast_1d(p.s_at_time(tt))
        P[m] = p.position(s)
        V[m] = p.velocity(s)
        # past the end of the last segment: hold the final point at rest
        past = ts[m] > p.t1 + 1e-12
        if np.any(past) and k == len(ps) - 1:
            Vm = V[m]
            Vm[past] = 0.0
            V[m] = Vm
    return P, V


# --------------------------------------------------------- closed loop

@dataclass
class SimConfig:
    physics_dt: float = 1e-3
    control_dt: float = 0.1
    replan: bool = True
    lab_emulation: bool = False
    estimation_window_s: float = 1.0
    proximity_margin: float = 0.05
    brake_time: float = 0.1
    match_window: float = 5.0
    disturbance: DisturbanceModel = field(default_factory=DisturbanceModel)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    replan_weights: ReplanWeights = field(default_factory=ReplanWeights)
    robot_model: dict = field(default_factory=dict)
    radius: float | None = None          # override all body radii
    robust_execution: str = "bundle"     # bundle | replan (impact-robust plans)

    def __post_init__(self):
        if not (self.physics_dt > 0 and self.control_dt > 0):
            raise ValueError("time steps must be positive")
        ratio = self.control_dt / self.physics_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("control_dt must be a multiple of physics_dt")

    def to_dict(self) -> dict:
        return {"physics_dt": self.physics_dt, "control_dt": self.control_dt, "replan": self.replan,
                "lab_emulation": self.lab_emulation, "estimation_window_s": self.estimation_window_s,
                "proximity_margin": self.proximity_margin, "radius": self.radius,
                "disturbance": {"impact_bound": self.disturbance.impact_bound,
                                "drift_bound": self.disturbance.drift_bound, "seed": self.disturbance.seed},
                "robust_execution": self.robust_execution}


@dataclass
class _RobotRun:
    name: str
    paths: list
    events: list                  # planned ImpactEvents of this robot, time order
    model: RobotModel
    cstate: ControllerState
    next_ev: int = 0
    target: dict = field(default_factory=dict)     # event index -> replanner target vO
    hold: str | None = None                         # object that triggered the proximity guard
    selected: int = -1                              # event whose bundle combination is in use

    def reference(self, ts):
        return _sample(self.paths, ts)

    def segment_index(self, t):
        starts = np.array([p.t0 for p in self.paths])
        return int(np.clip(np.searchsorted(starts, t + 1e-9, side="right") - 1, 0, len(self.paths) - 1))

    def pending(self):
        return self.events[self.next_ev] if self.next_ev < len(self.events) else None


def _check_plan_matches(sc, plan):
    if set(plan.robots) != set(sc.robots) or set(plan.objects) != set(sc.objects):
        raise SimulationError("plan systems do not match the scenario")
    if abs(plan.t0 - sc.t0) > 1e-9 or abs(plan.tf - sc.tf) > 1e-9:
        raise SimulationError("plan horizon does not match the scenario")


def run_closed_loop(sc, plan, cfg: SimConfig | None = None) -> RunLog:
    """Execute a plan: replanning on pre-impact curves, one MPC per robot,
    1 ms physics. Returns the log with the monitoring report attached."""
    cfg = cfg or SimConfig()
    _check_plan_matches(sc, plan)
    wall0 = time.monotonic()
    dist = cfg.disturbance
    rng = dist.rng()

    def params_of(name):
        p = sc.systems[name].params
        return p if cfg.radius is None else BodyParams(p.mass, cfg.radius, p.restitution)

    rnames, onames = list(sc.robots), list(sc.objects)
    bodies = {}
    for n in rnames:
        p0, v0 = plan.state(n, plan.t0)
        bodies[n] = (params_of(n), p0, v0)
    for n in onames:
        bodies[n] = (params_of(n), np.asarray(sc.objects[n].initial, float),
                     np.asarray(sc.objects[n].initial_velocity, float))
    actuated = set(rnames) | (set(onames) if cfg.lab_emulation else set())
    world = WorldState.create(bodies, plan.t0, actuated)
    obj_mask = np.array([n in onames for n in world.names])
    mcfg = cfg.mpc
    runs = {}
    for n in rnames:
        runs[n] = _RobotRun(n, list(plan.robots[n]), sorted(plan.events_for(robot=n), key=lambda e: e.t_impact),
                            RobotModel.for_body(params_of(n), **cfg.robot_model), ControllerState())
    vk = {n: VelocityKeeping(window=cfg.estimation_window_s, duration=plan.tf - plan.t0)
          for n in onames} if cfg.lab_emulation else {}
    vk_state = {n: ControllerState() for n in vk}
    vk_model = {n: RobotModel.for_body(params_of(n), **cfg.robot_model) for n in vk}
    robust = plan.mode == "impact_robust" and bool(plan.bundles)
    use_bundles = robust and cfg.robust_execution == "bundle"
    obj_events = {n: sorted(plan.events_for(obj=n), key=lambda e: e.t_impact) for n in onames}

    cols = ["t"] + [f"{n}.{c}" for n in world.names for c in POSE_COLS] + \
           [f"{n}.{c}" for n in world.names if world.actuated[world.index(n)] for c in INPUT_COLS]
    rows, events = [], []
    n_ctrl = int(round((plan.tf - plan.t0) / cfg.control_dt))
    n_sub = int(round(cfg.control_dt / cfg.physics_dt))
    executed = set()
    violations = {}
    mpc_time = replan_time = 0.0
    replans = 0
    failure = None
    U = np.zeros((len(world.names), 3))

    def log_row(t, U):
        pose = np.column_stack([world.X[:, 0:2], world.X[:, 4], world.X[:, 2:4], world.X[:, 5]]).ravel()
        rows.append(np.concatenate([[t], pose, U[world.actuated].ravel()]))

    try:
        for k in range(n_ctrl):
            t = plan.t0 + k * cfg.control_dt
            U = np.zeros((len(world.names), 3))
            # reference adaptation ahead of impacts
            for n, rr in runs.items():
                ev = rr.pending()
                if ev is None:
                    continue
                seg = rr.segment_index(t)
                label = rr.paths[seg].label
                on = ev.object_id
                kk = _segment_ending_at(rr.paths, ev.t_impact)
                finite = params_of(n).radius + params_of(on).radius > 0
                if use_bundles and (not (cfg.replan and finite) or rr.selected != rr.next_ev):
                    # vertex-bundle combination for the predicted object position;
                    # with finite bodies it is chosen once and then replanned
                    if kk is not None and seg == kk:
                        _select_bundle(rr, plan, ev, world, on, t)
                        rr.selected = rr.next_ev
                    if not (cfg.replan and finite) or kk is None or seg != kk:
                        continue
                if not cfg.replan:
                    continue
                if kk is None or seg != kk:
                    continue
                if not should_replan(label, "free", t, ev.t_impact):
                    continue
                if ev.t_impact - t < cfg.replan_weights.dt_min:
                    continue
                nxt = [e for e in obj_events[on] if e.t_impact > ev.t_impact + 1e-9]
                P, V = _sample(rr.paths, [t])
                req = ReplanRequest(n, rr.paths[kk], rr.paths[kk + 1], t, world.position(on), world.velocity(on),
                                    ev.t_impact, object=on, robot_state=(P[0], V[0]))
                if nxt:
                    req.x_next_des, req.t_next = plan.position(on, nxt[0].t_impact), nxt[0].t_impact
                else:
                    req.vO_des = ev.vO_post
                t_r = time.monotonic()
                try:
                    pre, post, ach = replan(req, params_of(n), params_of(on), sc.workspace, cfg.replan_weights)
                except ReplanError as exc:
                    events.append({"type": "replan_failed", "t": t, "robot": n, "reason": str(exc)})
                    continue
                finally:
                    replan_time += time.monotonic() - t_r
                rr.paths[kk], rr.paths[kk + 1] = pre, post
                rr.target[rr.next_ev] = impact_target(req)[1]
                replans += 1
                events.append({"type": "replan", "t": t, "robot": n, "object": on, "t_impact": ev.t_impact,
                               "target_vO": rr.target[rr.next_ev].tolist(),
                               "achieved_vO": ach.vO_post.tolist()})
            # controllers
            t_m = time.monotonic()
            for n, rr in runs.items():
                i = world.index(n)
                ev = rr.pending()
                pend = None
                if ev is not None:
                    on = ev.object_id
                    pR, pO = params_of(n), params_of(on)
                    pend = ImpactPrediction.from_event(ev, world.velocity(on), pR, pO)
                    kk = _segment_ending_at(rr.paths, ev.t_impact)
                    if kk is not None:
                        pend.vR_des = rr.paths[kk].velocity(1.0)
                x = world.X[i].copy()
                xs = np.array([x[0], x[1], x[2], x[3], x[4], x[5]])
                if rr.hold is None:
                    guard = _proximity_guard(world, n, rr, onames, cfg.proximity_margin, t)
                    if guard is not None:
                        rr.hold = guard
                        rr.cstate.warm = None
                        events.append({"type": "guard", "t": t, "robot": n, "object": guard})
                elif _guard_clear(world, rr, t, cfg):
                    events.append({"type": "guard_release", "t": t, "robot": n, "object": rr.hold})
                    rr.hold = None
                if rr.hold is not None:
                    U[i] = _brake(xs, rr.model, cfg.brake_time)
                    continue
                U[i] = mpc_step(xs, rr.reference, t, pend, mcfg, rr.model, rr.cstate)
                if rr.cstate.warning:
                    log.debug("MPC for %s did not converge at t=%.2f", n, t)
            for n in vk:
                i = world.index(n)
                U[i] = velocity_keeping_step(world.X[i], vk[n], t, mcfg, vk_model[n], vk_state[n])
            mpc_time += time.monotonic() - t_m
            log_row(t, U)
            # physics
            drift = None
            if dist.drift_bound > 0:
                drift = rng.uniform(-dist.drift_bound, dist.drift_bound, (n_sub, int(obj_mask.sum()), 2))
            for s in range(n_sub):
                world, evs = world_step(world, U, cfg.physics_dt, dist, rng, obj_mask)
                if drift is not None:
                    world.X[obj_mask, 2:4] += drift[s] * cfg.physics_dt
                for e in evs:
                    _register(e, runs, executed, events, cfg.match_window, vk)
            _check_violations(world, sc, onames, violations, world.t)
            if not np.all(np.isfinite(world.X)):
                raise SimulationError(f"state diverged at t={world.t}")
    except (SimulationError, ImpactError) as exc:
        failure = str(exc)
        log.error("run aborted: %s", exc)
    if failure is None:
        log_row(plan.tf, U)
        # the final row sits exactly at tf
        rows[-1][0] = plan.tf
    data = np.array(rows)
    for name, v in sorted(violations.items()):
        events.append({"type": "violation", "body": name[0], "region": name[1], "t_first": v[0], "t_last": v[1]})
    meta = {"scenario": sc.name, "mode": plan.mode, "t0": plan.t0, "tf": plan.tf, "source": "simulation",
            "config": cfg.to_dict(), "planned_events": [e.to_dict() for e in plan.events],
            "planned_rho": plan.rho, "planned_delta": plan.delta, "failure": failure}
    runlog = RunLog(cols, data, events, meta)
    runlog.timing = {"wall": time.monotonic() - wall0, "mpc": mpc_time, "replan": replan_time}
    if failure is None:
        runlog.report = monitor_run(runlog, sc.spec, plan)
    else:
        runlog.report = {"failure": failure, "replans": replans}
    return runlog


def _segment_ending_at(paths, t_imp, tol=1e-6):
    for k, p in enumerate(paths[:-1]):
        if abs(p.t1 - t_imp) <= tol:
            return k
    return None


def _select_bundle(rr: _RobotRun, plan, ev, world, on, t):
    """Vertex-bundle execution: follow the vertex-bundle combination that matches
    the predicted object position at the impact."""
    from .planner.realize import bilinear_weights, combine
    kk = _segment_ending_at(plan.robots[rr.name], ev.t_impact)
    if kk is None or t > ev.t_impact:
        return
    j = None
    for jj, seg in enumerate(plan.tube[on]):
        if abs(seg.t0 - ev.t_impact) < 1e-6:
            j = jj
    if j is None:
        return
    C, W = plan.hulls[on][j][0], plan.hulls[on][j][1]
    xO = world.position(on) + world.velocity(on) * (ev.t_impact - t)
    lam = bilinear_weights(xO, C, W)
    b = plan.bundles[rr.name]
    rr.paths[kk] = combine(b, kk, lam)
    rr.paths[kk + 1] = combine(b, kk + 1, lam)


def _proximity_guard(world, n, rr, onames, margin, t):
    ev = rr.pending()
    i = world.index(n)
    for on in onames:
        if ev is not None and ev.object_id == on and rr.segment_index(t) >= _first_approach_segment(rr, ev):
            continue
        j = world.index(on)
        gap = float(np.linalg.norm(world.X[j, 0:2] - world.X[i, 0:2])) - world.radii[i] - world.radii[j]
        if gap < margin and _approach_rate(world.X, i, j) < 0:
            return on
    return None


def _guard_clear(world, rr, t, cfg: SimConfig) -> bool:
    """The hold ends when the robot starts its planned approach to the
    object or its reference over the next horizon stays clear of it."""
    on = rr.hold
    ev = rr.pending()
    if ev is not None and ev.object_id == on and rr.segment_index(t) >= _first_approach_segment(rr, ev):
        return True
    i, j = world.index(rr.name), world.index(on)
    need = world.radii[i] + world.radii[j] + 2 * cfg.proximity_margin
    ts = t + cfg.mpc.dt * np.arange(0, cfg.mpc.N + 1)
    P, _ = rr.reference(ts)
    O = world.X[j, 0:2][None, :] + (ts - t)[:, None] * world.X[j, 2:4][None, :]
    if np.any(np.linalg.norm(P - O, axis=1) < need):
        return False
    # the way from the held position to the reference must not cut past the object
    x = world.X[i, 0:2]
    d = P - x[None, :]
    rel = O - x[None, :]
    dd = np.maximum((d * d).sum(axis=1), 1e-300)
    f = np.clip((rel * d).sum(axis=1) / dd, 0.0, 1.0)
    closest = np.linalg.norm(rel - f[:, None] * d, axis=1)
    return bool(np.all(closest >= need - cfg.proximity_margin))


def _first_approach_segment(rr, ev):
    k = _segment_ending_at(rr.paths, ev.t_impact)
    return len(rr.paths) if k is None else k


def _brake(x, model: RobotModel, brake_time):
    c, s = math.cos(x[4]), math.sin(x[4])
    fw = -model.mass * x[2:4] / brake_time
    fb = np.array([c * fw[0] + s * fw[1], -s * fw[0] + c * fw[1]])
    return model.clamp(np.array([fb[0], fb[1], -model.inertia * x[5] / brake_time]))


def _register(e, runs, executed, events, window, vk):
    if e["type"] != "impact":
        events.append(e)
        return
    a, b = e["a"], e["b"]
    e = dict(e)
    e["planned"] = None
    for rn, on, flip in ((a, b, False), (b, a, True)):
        rr = runs.get(rn)
        if rr is None:
            continue
        ev = rr.pending()
        if ev is not None and ev.object_id == on and abs(e["t"] - ev.t_impact) <= window:
            e["planned"] = {"robot": rn, "object": on, "index": rr.next_ev, "t_plan": ev.t_impact,
                            "vO_plan": ev.vO_post.tolist()}
            tgt = rr.target.get(rr.next_ev)
            if tgt is not None:
                e["planned"]["vO_target"] = np.asarray(tgt).tolist()
            e["robot"], e["object"] = rn, on
            e["vO_post"] = e["va_post"] if flip else e["vb_post"]
            rr.next_ev += 1
            rr.cstate.warm = None
            executed.add((rn, ev.t_impact))
            break
    for n in (a, b):
        if n in vk:
            vk[n].on_impact(e["t"])
    events.append(e)


def _check_violations(world, sc, onames, violations, t):
    for idx, n in enumerate(world.names):
        p = world.X[idx, 0:2][None, :]
        if not sc.workspace.contains(p, tol=1e-9)[0]:
            key = (n, "workspace")
            violations[key] = (violations.get(key, (t, t))[0], t)
        for on, reg in sc.obstacles.items():
            if reg.contains(p, tol=-1e-9)[0]:
                key = (n, on)
                violations[key] = (violations.get(key, (t, t))[0], t)


# -------------------------------------------------------------- monitor

def monitor_run(log: RunLog, spec: Formula, plan=None) -> dict:
    """Executed robustness, impact timing/velocity errors and replan count."""
    ts = log.times
    if ts.size < 2:
        raise CoverageError("log has fewer than two samples")
    t0 = float(log.meta.get("t0", ts[0]))
    need = t0 + horizon(spec)
    if ts[0] > t0 + 1e-9 or ts[-1] < need - 1e-9:
        raise CoverageError(f"log covers [{ts[0]}, {ts[-1]}] but the specification needs [{t0}, {need}]")
    missing = systems_of(spec) - set(log.bodies())
    if missing:
        raise CoverageError(f"log has no trace for {sorted(missing)}")
    if not np.all(np.isfinite(log.data)):
        raise CoverageError("log contains non-finite samples")
    sig = log.signal()
    rho = float(robustness(spec, sig, t0))
    planned = log.meta.get("planned_events", [])
    if plan is not None:
        planned = [e.to_dict() for e in plan.events]
    impacts = []
    for e in log.impacts():
        rec = {"t": e["t"], "robot": e.get("robot", e["a"]), "object": e.get("object", e["b"]),
               "planned": e.get("planned") is not None}
        pl = e.get("planned")
        if pl:
            vO = np.asarray(e["vO_post"])
            rec["timing_error"] = e["t"] - pl["t_plan"]
            rec["velocity_error"] = float(np.linalg.norm(vO - np.asarray(pl["vO_plan"])))
            if "vO_target" in pl:
                rec["target_error"] = float(np.linalg.norm(vO - np.asarray(pl["vO_target"])))
            if np.linalg.norm(pl["vO_plan"]) > 1e-9:
                rec["direction_error"] = _angle_between(vO, np.asarray(pl["vO_plan"]))
        impacts.append(rec)
    unmatched = []
    hit = {(e["planned"]["robot"], e["planned"]["index"]) for e in log.impacts() if e.get("planned")}
    by_robot = {}
    for d in planned:
        by_robot.setdefault(d["robot_id"], []).append(d)
    for rn, evs in by_robot.items():
        for k, d in enumerate(sorted(evs, key=lambda z: z["t_impact"])):
            if (rn, k) not in hit:
                unmatched.append({"robot": rn, "object": d["object_id"], "t_plan": d["t_impact"]})
    rep = {"rho": rho, "impacts": impacts, "missed_impacts": unmatched,
           "replans": sum(1 for e in log.events if e["type"] == "replan"),
           "guards": sum(1 for e in log.events if e["type"] == "guard"),
           "unplanned_impacts": sum(1 for i in impacts if not i["planned"]),
           "violations": [e for e in log.events if e["type"] == "violation"],
           "t_end": float(ts[-1])}
    if plan is not None and plan.tube:
        rep["tube"] = tube_report(log, plan)
    return rep


def _angle_between(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0 if na < 1e-12 and nb < 1e-12 else math.pi
    c = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
    return math.acos(c)


def tube_report(log: RunLog, plan, inflate: float = 0.05) -> dict:
    out = {"inflate": inflate, "contained": True, "max_excess": 0.0}
    for on in plan.tube:
        P = log.positions(on)
        for t, p in zip(log.times, P):
            box = plan.tube_box(on, float(t))
            ex = float(np.max(np.maximum(box.lower - p, p - box.upper)))
            out["max_excess"] = max(out["max_excess"], ex)
    out["contained"] = bool(out["max_excess"] <= inflate)
    return out


def tube_trials(plan, sc, bound: float, n: int = 100, seed: int = 0, inflate: float = 0.05) -> dict:
    """Ideal bundle execution with post-impact perturbations uniform in
    [-bound, bound]^2 and initial positions uniform in the initial box.
    Counts runs that stay inside the tube inflated by `inflate`."""
    from .planner.realize import realize, tube_excess
    if not plan.tube:
        raise SimulationError("plan has no tube (not impact-robust)")
    rng = np.random.default_rng(seed)
    keys = [tuple(a) for a in plan.stats.get("impacts", [])]
    inside, worst = 0, []
    for _ in range(n):
        x0 = {}
        for on, spec in sc.objects.items():
            x0[on] = spec.initial + rng.uniform(-1, 1, 2) * spec.initial_half_widths
        pert = {(on, j): rng.uniform(-bound, bound, 2) for (_, _, on, j) in keys}
        r = realize(plan, sc, x0, pert, impacts=keys)
        ex = tube_excess(plan, r)
        worst.append(ex)
        inside += ex <= inflate
    return {"runs": n, "inside": int(inside), "max_excess": float(max(worst)), "bound": bound}
