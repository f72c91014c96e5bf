"""Two-stage planning: robustness-optimal MILP, then attenuation with the
discrete decisions fixed; extraction into a Plan."""
from __future__ import annotations

import logging
import math
import time

import numpy as np

from ..geometry import BezierCurve, PhasedPath
from ..mip import MipModel, MipSolution, export_model, solve, solve_qp
from .encode import DEG_H, DEG_R, SIGMAS, PlanEncoding
from .plan import Plan, TubeSegment, nominal_from_vertices, object_paths, point_event
from .scenario import Scenario

log = logging.getLogger("impactplan.planner")


class PlanningError(RuntimeError):
    pass


class PlanningInfeasible(PlanningError):
    pass


class PlanningTimeout(PlanningError):
    pass


class ExtractionError(PlanningError):
    pass


def encode_spatially_robust(sc: Scenario):
    """(model, encoding) maximizing spatial robustness."""
    if sc.mode != "spatially_robust":
        raise PlanningError(f"scenario mode is {sc.mode}, expected spatially_robust")
    enc = PlanEncoding(sc)
    return enc.m, enc


def encode_impact_robust(sc: Scenario):
    """(model, encoding) maximizing the tolerated post-impact velocity deviation."""
    if sc.mode != "impact_robust":
        raise PlanningError(f"scenario mode is {sc.mode}, expected impact_robust")
    enc = PlanEncoding(sc)
    return enc.m, enc


def _reduced_qp(model: MipModel, x0, tol=1e-9):
    """Solve the continuous QP left after fixing variables with lb == ub.
    Rows that cannot bind over the variable box are dropped first."""
    arr = model.arrays(dense=True)
    lb, ub = arr["lb"], arr["ub"]
    fixed = ub - lb <= 1e-12
    free = ~fixed
    xf = np.where(fixed, lb, 0.0)
    A, b = arr["A_ub"], arr["b_ub"] - arr["A_ub"][:, fixed] @ lb[fixed]
    Af = A[:, free]
    lo_f, hi_f = lb[free], ub[free]
    row_max = np.where(Af > 0, Af * hi_f, Af * lo_f).sum(axis=1)
    keep = row_max > b + 1e-9 * np.maximum(1.0, np.abs(b))
    keep &= np.any(Af != 0, axis=1)
    Ae = arr["A_eq"][:, free]
    be = arr["b_eq"] - arr["A_eq"][:, fixed] @ lb[fixed]
    nz = np.any(Ae != 0, axis=1)
    n = int(free.sum())
    I = np.eye(n)
    fin_u, fin_l = np.isfinite(hi_f), np.isfinite(lo_f)
    A_in = np.vstack([Af[keep], I[fin_u], -I[fin_l]])
    b_in = np.concatenate([b[keep], hi_f[fin_u], -lo_f[fin_l]])
    Q = arr["Q"]
    Qff = Q[np.ix_(free, free)]
    c = arr["c"][free] + Q[np.ix_(free, fixed)] @ lb[fixed]
    start = np.clip(np.asarray(x0, float)[free], lo_f, hi_f)
    r = solve_qp(Qff, c, Ae[nz], be[nz], A_in, b_in, x0=start, tol=tol)
    if r.x is None or r.status not in ("optimal", "iteration_limit"):
        return None
    x = xf.copy()
    x[free] = r.x
    return x


def plan_scenario(sc: Scenario, time_limit: float | None = None, backend: str = "highs",
                  attenuate: bool | None = None, export_lp=None) -> Plan:
    """Encode, solve and extract. Raises PlanningInfeasible / PlanningTimeout.
    export_lp: optional path receiving the stage-one model in LP format."""
    t_start = time.monotonic()
    enc = PlanEncoding(sc)
    m = enc.m
    if export_lp is not None:
        export_model(m, export_lp)
    tl = float(sc.planner["time_limit"] if time_limit is None else time_limit)
    log.info("model %s: %d vars (%d binary), %d rows", sc.name, m.n_vars, len(m.binaries), m.n_rows)
    sol = solve(m, time_limit=tl, gap=float(sc.planner["gap"]), backend=backend)
    t_stage1 = time.monotonic() - t_start
    if sol.status == "infeasible":
        raise PlanningInfeasible(f"{sc.name}: no plan satisfies the specification with the given budgets")
    if sol.x is None:
        if sol.status == "time_limit":
            raise PlanningTimeout(f"{sc.name}: no feasible plan found within {tl} s")
        raise PlanningError(f"{sc.name}: solver returned {sol.status}: {sol.message}")
    x = sol.x.copy()
    obj = float(sol.objective)
    stats = {"status": sol.status, "n_vars": m.n_vars, "n_binaries": len(m.binaries),
             "n_rows": m.n_rows, "nodes": sol.nodes, "stage1_time": t_stage1,
             "backend": backend, "objective": obj}
    bins = {i: round(float(x[i])) for i in m.binaries}
    attenuate = bool(sc.planner["attenuate"]) if attenuate is None else attenuate
    if enc.robust:
        # tighten the hull: minimal widths at the optimal delta
        m2 = m.fix(bins)
        m2.add(enc.delta >= obj - 1e-7)
        m2.set_objective(sum(enc.width_terms), "min")
        s2 = solve(m2, time_limit=tl, backend=backend)
        if s2.x is not None:
            x = s2.x
        else:
            log.warning("hull tightening failed (%s); keeping the stage-one hull", s2.status)
    elif attenuate:
        m2 = m.fix(bins)
        m2.add(enc.rho >= obj - 1e-7)
        m2.set_objective(0.0, "min")
        for exprs, w in enc.attenuation_objective():
            m2.add_squares(exprs, w)
        x2 = _reduced_qp(m2, x)
        if x2 is not None:
            x = x2
        else:
            log.warning("attenuation stage failed; keeping the stage-one solution")
    stats["total_time"] = time.monotonic() - t_start
    plan = extract_plan(enc, x, obj)
    plan.stats.update(stats)
    return plan


def _val(e, x):
    return np.vectorize(lambda z: float(z.value(x)) if hasattr(z, "value") else float(z), otypes=[float])(
        np.asarray(e, dtype=object))


def extract_plan(enc: PlanEncoding, x, objective: float | None = None, int_tol: float = 1e-5) -> Plan:
    """Plan from an assignment or a MipSolution of the encoding's model."""
    if isinstance(x, MipSolution):
        if x.x is None:
            raise ExtractionError(f"solution with status {x.status} has no assignment")
        objective = x.objective if objective is None else objective
        x = x.x
    sc = enc.sc
    x = np.asarray(x, float)
    if objective is None:
        objective = float(enc.delta.value(x) if enc.robust else enc.rho.value(x))
    bins = enc.m.binaries
    if bins:
        frac = np.abs(x[bins] - np.round(x[bins]))
        if frac.max() > int_tol:
            raise ExtractionError(f"binary variable off integrality by {frac.max():.3g}")
    active = sorted((k for k, z in enc.z.items() if z.value(x) > 0.5), key=lambda k: k[3])
    robot_curves = {}
    for rn, rv in enc.robots.items():
        Hs = [_val(rv.H[k], x)[:, None] for k in range(rv.n)]
        robot_curves[rn] = [[PhasedPath(BezierCurve(_val(rv.P[b][k], x)), BezierCurve(Hs[k]))
                             for k in range(rv.n)] for b in range(enc.nb)]
    rlabels = {rn: ["free"] * rv.n for rn, rv in enc.robots.items()}
    olabels = {on: ["free"] * ov.n for on, ov in enc.objects.items()}
    for (rn, i, on, j) in active:
        if rlabels[rn][i] == "free":
            rlabels[rn][i] = "post_impact"
        rlabels[rn][i - 1] = "pre_impact"
        if olabels[on][j] == "free":
            olabels[on][j] = "post_impact"
        olabels[on][j - 1] = "pre_impact"
    bundles, robots = {}, {}
    for rn, curves in robot_curves.items():
        curves = [[p.with_label(rlabels[rn][k]) for k, p in enumerate(c)] for c in curves]
        if enc.robust:
            bundles[rn] = curves
            robots[rn] = nominal_from_vertices(curves)
        else:
            robots[rn] = curves[0]
    plan = Plan(sc.name, sc.mode, sc.t0, sc.tf, robots, {}, [], objective,
                rho=float(enc.rho.value(x)), bundles=bundles)
    if not enc.robust:
        for on, ov in enc.objects.items():
            X = [_val(p, x) for p in ov.X]
            plan.objects[on] = object_paths(X, ov.times, olabels[on])
        for (rn, i, on, j) in active:
            ev = _event_from_paths(sc, plan.robots[rn], plan.objects[on], rn, on, i, j)
            if ev is not None:
                plan.events.append(ev)
    else:
        plan.delta = float(enc.delta.value(x))
        for on, ov in enc.objects.items():
            plan.hulls[on] = [tuple(_val(a, x) for a in h) for h in ov.hull]
            dt = ov.times[1] - ov.times[0]
            segs = []
            for j in range(ov.n):
                vs = [tuple(_val(a, x) for a in v) for v in ov.vert[j]]
                segs.append(TubeSegment(float(ov.times[j]), float(ov.times[j + 1]),
                                        *(np.array([v[q] for v in vs]) for q in range(4))))
            plan.tube[on] = segs
        from .realize import realize
        nominal = realize(plan, sc, {on: sc.objects[on].initial for on in sc.objects}, {},
                          impacts=[(rn, i, on, j) for (rn, i, on, j) in active], labels=olabels)
        plan.robots = nominal.robots
        plan.objects = nominal.objects
        plan.events = nominal.events
        plan.stats["impacts"] = [list(a) for a in active]
    plan.events.sort(key=lambda e: e.t_impact)
    return plan


def _event_from_paths(sc, rpaths, opaths, rn, on, i, j, min_dv=1e-6):
    pre, post = rpaths[i - 1], rpaths[i]
    vRm, vRp = pre.velocity(1.0), post.velocity(0.0)
    vOm, vOp = opaths[j - 1].velocity(1.0), opaths[j].velocity(0.0)
    if max(np.max(np.abs(vOp - vOm)), np.max(np.abs(vRp - vRm))) < min_dv:
        return None
    ev = point_event(rn, on, post.t0, post.spatial.control_points[0], vRm, vOm,
                     sc.robots[rn].params, sc.objects[on].params)
    return ev
