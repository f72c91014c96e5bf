"""Executing an impact-robust plan for one realization of the uncertainty.

The object's position at an impact knot has bilinear barycentric weights
lambda in the planned hull; the robot follows the same convex combination
of its vertex bundles, so it meets the object exactly and the object leaves
with the matching combination of the vertex velocities (plus whatever
perturbation the realization carries).
"""
from __future__ import annotations

import numpy as np

from ..geometry import BezierCurve, PhasedPath
from ..impact import ImpactEvent, point_impact
from .encode import SIGMAS
from .plan import Plan, object_paths


def bilinear_weights(x, C, W) -> np.ndarray:
    """Weights of the 4 box corners C + s*W reproducing x (clipped to the box)."""
    W = np.asarray(W, float)
    xi = np.where(W > 1e-12, (np.asarray(x, float) - C) / np.where(W > 1e-12, W, 1.0), 0.0)
    xi = np.clip(xi, -1.0, 1.0)
    return np.prod(0.5 * (1.0 + SIGMAS * xi[None, :]), axis=1)


def combine(bundles, k, lam) -> PhasedPath:
    cps = sum(l * b[k].spatial.control_points for l, b in zip(lam, bundles))
    return PhasedPath(BezierCurve(cps), bundles[0][k].temporal, bundles[0][k].label)


def realize(plan: Plan, sc, x0: dict, perturb: dict, impacts=None, labels=None) -> Plan:
    """Plan followed by one realization. x0: object -> initial position;
    perturb: (object, knot) -> added post-impact velocity."""
    impacts = impacts if impacts is not None else [tuple(a) for a in plan.stats.get("impacts", [])]
    by_obj = {}
    for (rn, i, on, j) in impacts:
        by_obj.setdefault(on, {})[j] = (rn, i)
    lam_pre, lam_post = {}, {}
    objects, events = {}, []
    for on, segs in plan.tube.items():
        spec = sc.objects[on]
        times = [s.t0 for s in segs] + [segs[-1].t1]
        X = [np.asarray(x0.get(on, spec.initial), float)]
        v = np.asarray(spec.initial_velocity, float)
        for j in range(len(segs)):
            if j in by_obj.get(on, {}):
                rn, i = by_obj[on][j]
                C, W = plan.hulls[on][j][0], plan.hulls[on][j][1]
                lam = bilinear_weights(X[-1], C, W)
                lam_pre[(rn, i - 1)] = lam
                lam_post[(rn, i)] = lam
                pre = combine(plan.bundles[rn], i - 1, lam)
                vRm = pre.velocity(1.0)
                pR, pO = sc.robots[rn].params, sc.objects[on].params
                vRp, _ = point_impact(vRm, v, pR, pO)
                vnew = lam @ segs[j].u + np.asarray(perturb.get((on, j), np.zeros(2)), float)
                events.append(ImpactEvent(rn, on, times[j], X[-1].copy(),
                                          float(np.arctan2(*(vRm - v)[::-1])), vRm, v, vRp, vnew,
                                          pR.mass, pO.mass, min(pR.restitution, pO.restitution), "point"))
                v = vnew
            X.append(X[-1] + v * (times[j + 1] - times[j]))
        lab = labels[on] if labels else [s.label for s in plan.objects[on]]
        objects[on] = object_paths(X, times, lab)
    robots = {}
    for rn, bundles in plan.bundles.items():
        out = []
        for k in range(len(bundles[0])):
            lam = lam_pre.get((rn, k), lam_post.get((rn, k), np.full(4, 0.25)))
            out.append(combine(bundles, k, lam))
        robots[rn] = out
    events.sort(key=lambda e: e.t_impact)
    return Plan(plan.scenario, plan.mode, plan.t0, plan.tf, robots, objects, events, plan.objective,
                rho=plan.rho, delta=plan.delta, bundles=plan.bundles, tube=plan.tube,
                hulls=plan.hulls, stats=dict(plan.stats))


def tube_excess(plan: Plan, realized: Plan, n: int = 400) -> float:
    """Largest distance (inf-norm) by which realized objects leave the planned tube."""
    worst = 0.0
    ts = np.linspace(plan.t0, plan.tf, n)
    for on in plan.tube:
        for t in ts:
            p = realized.position(on, t)
            box = plan.tube_box(on, t)
            ex = np.maximum(box.lower - p, p - box.upper).max()
            worst = max(worst, float(ex))
    return worst
