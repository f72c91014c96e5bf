import numpy as np
import pytest

from impactplan.impact import BodyParams, cylinder_impact, desired_next_object_velocity
from impactplan.replanner import (ReplanError, ReplanRequest, ReplanTooLate, impact_target, replan,
                                  should_replan)


def test_should_replan_cases():
    assert not should_replan("free", "free", 1.0, 5.0)
    assert should_replan("pre_impact", "free", 1.0, 5.0)
    assert not should_replan("pre_impact", "free", 6.0, 5.0)
    assert not should_replan("pre_impact", "contact", 1.0, 5.0)


def impact_setup(plan, k=0):
    """Pre/post robot curves around the k-th planned impact and the object's next target."""
    ev = plan.events[k]
    ps = plan.robots[ev.robot_id]
    i = next(n for n, p in enumerate(ps) if abs(p.t1 - ev.t_impact) < 1e-6)
    nxt = next((e for e in plan.events if e.object_id == ev.object_id and e.t_impact > ev.t_impact + 1e-9), None)
    return ev, ps[i], ps[i + 1], nxt


def make_request(plan, k=0, frac=0.3, shift=(0.0, 0.0)):
    ev, pre, post, nxt = impact_setup(plan, k)
    t = pre.t0 + frac * pre.duration
    on = ev.object_id
    kw = {"vO_des": ev.vO_post} if nxt is None else {
        "x_next_des": plan.position(on, nxt.t_impact), "t_next": nxt.t_impact}
    return ReplanRequest(ev.robot_id, pre, post, t, plan.position(on, t) + np.asarray(shift),
                         plan.velocity(on, t), ev.t_impact, object=on, **kw), ev, pre, post


def params(plan, ev, radius):
    return (BodyParams(ev.mR, radius, ev.restitution), BodyParams(ev.mO, radius, ev.restitution))


def test_fixed_point_for_point_masses(corridor):
    plan = corridor.plan
    req, ev, pre, post = make_request(plan)
    new_pre, new_post, ach = replan(req, *params(plan, ev, 0.0))
    ref_pre = pre.restrict_time(req.t, ev.t_impact)
    assert np.allclose(new_pre.spatial.control_points, ref_pre.spatial.control_points, atol=1e-6)
    assert np.allclose(new_post.spatial.control_points, post.spatial.control_points, atol=1e-6)
    assert np.allclose(ach.vO_post, ev.vO_post, atol=1e-6)


def test_endpoints_pinned(corridor):
    plan = corridor.plan
    req, ev, pre, post = make_request(plan, shift=(0.05, 0.0))
    new_pre, new_post, _ = replan(req, *params(plan, ev, 0.15))
    p0, v0 = pre.state_at_time(req.t)
    assert np.allclose(new_pre.state_at_time(req.t)[0], p0, atol=1e-8)
    assert np.allclose(new_pre.velocity(0.0), v0, atol=1e-8)
    assert np.allclose(new_post.spatial.control_points[-1], post.spatial.control_points[-1], atol=1e-8)
    assert np.allclose(new_post.velocity(1.0), post.velocity(1.0), atol=1e-8)
    assert abs(new_pre.t1 - ev.t_impact) < 1e-9 and abs(new_post.t0 - ev.t_impact) < 1e-9


@pytest.mark.parametrize("shift", [(0.1, 0.0), (-0.1, 0.0)])
def test_lateral_shift_reaches_desired_object_velocity(throw_catch, shift):
    plan = throw_catch.plan
    req, ev, pre, post = make_request(plan, shift=shift)
    pR, pO = params(plan, ev, 0.15)
    new_pre, _, ach = replan(req, pR, pO)
    xO_imp, vO_des = impact_target(req)
    if req.x_next_des is not None:
        assert np.allclose(vO_des, desired_next_object_velocity(xO_imp, req.x_next_des, req.t_impact, req.t_next))
    # run the achieved contact through the disc law as an independent check
    xR = new_pre.spatial.control_points[-1]
    _, vO_post, _ = cylinder_impact(xR, xO_imp, new_pre.velocity(1.0), req.object_velocity, pR, pO, tol=1e-3)
    assert np.linalg.norm(vO_post - vO_des) < 1e-3
    assert np.allclose(ach.vO_post, vO_post, atol=1e-9)
    # contact geometry: centers are one radii sum apart, contact point on the center line
    assert np.linalg.norm(xR - xO_imp) == pytest.approx(pR.radius + pO.radius, abs=1e-3)
    if req.x_next_des is not None:
        reach = xO_imp + vO_post * (req.t_next - req.t_impact)
        assert np.linalg.norm(reach - req.x_next_des) < 1e-2


def test_replan_is_idempotent(throw_catch):
    plan = throw_catch.plan
    req, ev, pre, post = make_request(plan, shift=(0.05, 0.0))
    pR, pO = params(plan, ev, 0.15)
    a_pre, a_post, _ = replan(req, pR, pO)
    req2 = ReplanRequest(req.robot, a_pre, a_post, req.t, req.object_position, req.object_velocity,
                         req.t_impact, req.x_next_des, req.t_next, req.vO_des, object=req.object)
    b_pre, b_post, _ = replan(req2, pR, pO)
    assert np.allclose(a_pre.spatial.control_points, b_pre.spatial.control_points, atol=1e-6)
    assert np.allclose(a_post.spatial.control_points, b_post.spatial.control_points, atol=1e-6)


def test_too_late_and_bad_estimates(corridor):
    plan = corridor.plan
    ev, pre, post, _ = impact_setup(plan)
    with pytest.raises(ReplanTooLate):
        ReplanRequest(ev.robot_id, pre, post, ev.t_impact, [0, 0], [0, 0], ev.t_impact, vO_des=[0, 0])
    req = ReplanRequest(ev.robot_id, pre, post, ev.t_impact - 0.01, plan.position(ev.object_id, ev.t_impact),
                        [0, 0], ev.t_impact, vO_des=ev.vO_post)
    with pytest.raises(ReplanTooLate):
        replan(req, *params(plan, ev, 0.0))
    with pytest.raises(ReplanError):
        ReplanRequest(ev.robot_id, pre, post, pre.t0, [np.nan, 0], [0, 0], ev.t_impact, vO_des=[0, 0])
