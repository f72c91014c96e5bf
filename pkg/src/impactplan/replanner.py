"""Online replanning of the curves around one impact for finite-size bodies.

The pre-impact curve is restricted to [t, t_impact] and the post-impact
curve keeps its time window; both keep their temporal curves, so the impact
time stays fixed. A small QP moves the free control points so that the robot
reaches the disc contact point with the velocity that sends the object
toward its next planned impact, while staying close (in acceleration) to
the offline curves.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import BezierCurve, HPolytope, PhasedPath
from .impact import (BodyParams, ImpactError, ImpactEvent, cylinder_impact, desired_next_object_velocity,
                     point_impact, predict_preimpact_object_state, solve_two_body_targets)
from .mip import solve_qp

log = logging.getLogger("impactplan.replanner")


class ReplanError(RuntimeError):
    pass


class ReplanInfeasible(ReplanError):
    def __init__(self, msg, constraints=()):
        super().__init__(msg)
        self.constraints = list(constraints)


class ReplanTooLate(ReplanError):
    pass


@dataclass
class ReplanRequest:
    robot: str
    pre: PhasedPath
    post: PhasedPath
    t: float
    object_position: np.ndarray
    object_velocity: np.ndarray
    t_impact: float
    x_next_des: np.ndarray | None = None
    t_next: float | None = None
    vO_des: np.ndarray | None = None     # used when there is no next impact
    robot_state: tuple | None = None     # planned (p, v) at t; default from pre
    object: str | None = None

    def __post_init__(self):
        if not self.t < self.t_impact:
            raise ReplanTooLate(f"replan time {self.t} is not before the impact at {self.t_impact}")
        self.object_position = np.asarray(self.object_position, float)
        self.object_velocity = np.asarray(self.object_velocity, float)
        if not (np.all(np.isfinite(self.object_position)) and np.all(np.isfinite(self.object_velocity))):
            raise ReplanError("object estimate is not finite")


def should_replan(robot_segment_label: str, object_phase: str, t: float, t_impact: float | None = None) -> bool:
    if robot_segment_label != "pre_impact" or object_phase != "free":
        return False
    return t_impact is None or t < t_impact


@dataclass
class ReplanWeights:
    position: float = 1e3
    velocity: float = 1e3
    attenuation: float = 1e-3
    dt_min: float = 0.05


def impact_target(req: ReplanRequest):
    """Predicted object position at the impact and the post-impact object
    velocity the replanner aims for."""
    xO_imp = predict_preimpact_object_state(req.object_position, req.object_velocity, req.t, req.t_impact)
    if req.x_next_des is not None and req.t_next is not None:
        vO_des = desired_next_object_velocity(xO_imp, req.x_next_des, req.t_impact, req.t_next)
    elif req.vO_des is not None:
        vO_des = np.asarray(req.vO_des, float)
    else:
        raise ReplanError("need a next impact or a desired post-impact object velocity")
    return xO_imp, vO_des


def _ddot_matrix(n_cp):
    """Rows map control points (per axis) to second-difference control points."""
    d = n_cp - 1
    D = np.zeros((n_cp - 2, n_cp))
    for j in range(n_cp - 2):
        D[j, j:j + 3] = [1.0, -2.0, 1.0]
    return d * (d - 1) * D


def replan(req: ReplanRequest, pR: BodyParams, pO: BodyParams, workspace: HPolytope | None = None,
           weights: ReplanWeights | None = None):
    """Returns (pre, post, achieved ImpactEvent)."""
    w = weights or ReplanWeights()
    if req.t_impact - req.t < w.dt_min:
        raise ReplanTooLate(f"only {req.t_impact - req.t:.3g} s left before the impact")
    if req.pre.spatial.degree < 3 or req.post.spatial.degree < 3:
        raise ReplanError("replanning needs curves of degree at least 3")
    pre = req.pre.restrict_time(req.t, req.t_impact) if req.t > req.pre.t0 + 1e-12 else req.pre
    post = req.post
    xO_imp, vO_des = impact_target(req)
    vO = req.object_velocity
    vR_prior = pre.velocity(1.0)
    try:
        tgt = solve_two_body_targets(vO_des, vR_prior, pR, pO, vO)
    except ImpactError as exc:
        raise ReplanError(str(exc)) from exc
    contact = xO_imp + tgt.robot_offset
    # curve data
    Pa = pre.spatial.control_points.copy()
    Pb = post.spatial.control_points.copy()
    da, db = pre.spatial.degree, post.spatial.degree
    ha = pre.temporal.control_points[:, 0]
    hb = post.temporal.control_points[:, 0]
    hd_a0 = (ha[1] - ha[0]) * pre.temporal.degree
    hd_a1 = (ha[-1] - ha[-2]) * pre.temporal.degree
    hd_b0 = (hb[1] - hb[0]) * post.temporal.degree
    if req.robot_state is not None:
        p0, v0 = (np.asarray(a, float) for a in req.robot_state)
    else:
        p0, v0 = pre.spatial.control_points[0], pre.velocity(0.0)
    # fixed control points
    A0 = p0
    A1 = p0 + hd_a0 * v0 / da
    B_end = Pb[-2:].copy()
    # free variables per axis: pre points 2..da, post point 1..db-2
    na_free = da - 1
    nb_free = db - 2
    nfree = na_free + nb_free
    # acceleration control points in physical units (r'' / T^2)
    Da = _ddot_matrix(da + 1) / max(pre.duration, 1e-9) ** 2
    Db = _ddot_matrix(db + 1) / max(post.duration, 1e-9) ** 2
    ref_a, ref_b = Da @ Pa, Db @ Pb
    X = np.zeros((nfree, 2))
    X[:na_free] = Pa[2:]
    X[na_free:] = Pb[1:db - 1]
    # build Q, c for one axis (identical structure), stack as block-diagonal
    n = nfree
    Hs, cs = [], []
    for ax in range(2):
        H = np.zeros((n, n))
        c = np.zeros(n)

        def add_sq(row, const, weight):
            # weight * (row . x + const)^2
            nonlocal H, c
            H += 2 * weight * np.outer(row, row)
            c += 2 * weight * const * row

        # attenuation: deviation of acceleration control points
        for j in range(Da.shape[0]):
            row = np.zeros(n)
            row[:na_free] = Da[j, 2:]
            const = Da[j, 0] * A0[ax] + Da[j, 1] * A1[ax] - ref_a[j, ax]
            add_sq(row, const, w.attenuation)
        for j in range(Db.shape[0]):
            row = np.zeros(n)
            # post P0 equals pre end (last free pre point)
            row[na_free - 1] += Db[j, 0]
            row[na_free:] += Db[j, 1:db - 1]
            const = Db[j, db - 1] * B_end[0, ax] + Db[j, db] * B_end[1, ax] - ref_b[j, ax]
            add_sq(row, const, w.attenuation)
        # impact position
        row = np.zeros(n)
        row[na_free - 1] = 1.0
        add_sq(row, -contact[ax], w.position)
        # pre end velocity: da (A_end - A_{end-1}) / hd_a1 = vR_des
        row = np.zeros(n)
        row[na_free - 1] = da / hd_a1
        if na_free >= 2:
            row[na_free - 2] = -da / hd_a1
            const = -tgt.vR_des[ax]
        else:
            const = -da / hd_a1 * A1[ax] - tgt.vR_des[ax]
        add_sq(row, const, w.velocity)
        # post start velocity: db (B1 - B0) / hd_b0 = vR_post
        row = np.zeros(n)
        if nb_free >= 1:
            row[na_free] = db / hd_b0
            row[na_free - 1] -= db / hd_b0
            const = -tgt.vR_post[ax]
        else:
            row[na_free - 1] = -db / hd_b0
            const = db / hd_b0 * B_end[0, ax] - tgt.vR_post[ax]
        add_sq(row, const, w.velocity)
        Hs.append(H)
        cs.append(c)
    Hfull = np.zeros((2 * n, 2 * n))
    Hfull[:n, :n], Hfull[n:, n:] = Hs
    cfull = np.concatenate(cs)
    x0 = np.concatenate([X[:, 0], X[:, 1]])
    A_in = b_in = None
    if workspace is not None:
        rows, rhs = [], []
        for h, b in zip(workspace.H, workspace.b):
            for k in range(n):
                r = np.zeros(2 * n)
                r[k], r[n + k] = h[0], h[1]
                rows.append(r)
                rhs.append(b)
        A_in, b_in = np.array(rows), np.array(rhs)
        viol = A_in @ x0 - b_in
        if np.any(viol > 1e-9):
            # start from the projection of the offline points onto the workspace box
            bb = workspace.bounding_box()
            x0 = np.concatenate([np.clip(X[:, 0], bb.lower[0], bb.upper[0]),
                                 np.clip(X[:, 1], bb.lower[1], bb.upper[1])])
    res = solve_qp(Hfull, cfull, None, None, A_in, b_in, x0=x0)
    if res.x is None or res.status != "optimal":
        raise ReplanInfeasible(f"replanning QP ended with status {res.status}",
                               ["workspace"] if workspace is not None else [])
    xs = np.stack([res.x[:n], res.x[n:]], axis=1)
    new_a = np.vstack([A0, A1, xs[:na_free]])
    new_b = np.vstack([xs[na_free - 1:na_free], xs[na_free:], B_end])
    pre_new = PhasedPath(BezierCurve(new_a), pre.temporal, pre.label)
    post_new = PhasedPath(BezierCurve(new_b), post.temporal, post.label)
    vRm = pre_new.velocity(1.0)
    xR = new_a[-1]
    rsum = pR.radius + pO.radius
    if rsum > 0:
        try:
            vRp, vOp, th = cylinder_impact(xR, xO_imp, vRm, vO, pR, pO, tol=1e-3)
        except ImpactError:
            log.warning("replanned contact misses the disc geometry; reporting the target velocities")
            vRp, vOp, th = tgt.vR_post, tgt.vO_achieved, tgt.theta
    else:
        vRp, vOp = point_impact(vRm, vO, pR, pO)
        th = float(np.arctan2(*(vRm - vO)[::-1]))
    # contact point on the object boundary along the center line
    cp = xO_imp + (xR - xO_imp) * (pO.radius / rsum) if rsum > 0 else xR.copy()
    ev = ImpactEvent(req.robot, req.object or "", req.t_impact, cp, th, vRm, vO, vRp, vOp,
                     pR.mass, pO.mass, min(pR.restitution, pO.restitution),
                     "cylinder" if rsum > 0 else "point")
    log.debug("replanned %s at t=%.3f: contact error %.3g, object velocity error %.3g", req.robot, req.t,
              float(np.linalg.norm(xR - contact)), float(np.linalg.norm(vOp - vO_des)))
    return pre_new, post_new, ev
