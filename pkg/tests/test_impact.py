import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from impactplan.impact import (BodyParams, ContactGeometryError, ImpactError, ImpactEvent, cylinder_impact,
                               desired_next_object_velocity, mass_fractions, point_impact,
                               predict_preimpact_object_state, solve_two_body_targets, wrap_angle)

vel = arrays(float, 2, elements=st.floats(-5, 5, allow_nan=False))
mass = st.floats(0.1, 50)
rest = st.floats(0, 1)


def rot(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------- point-mass law

def test_equal_mass_elastic_swaps():
    p = BodyParams(1.0)
    vRp, vOp = point_impact([1, 0], [0, 0], p, p)
    assert np.allclose(vRp, [0, 0]) and np.allclose(vOp, [1, 0])


def test_plastic_common_velocity():
    p = BodyParams(1.0, restitution=0.0)
    vRp, vOp = point_impact([2, 0], [0, 0], p, p)
    assert np.allclose(vRp, [1, 0]) and np.allclose(vOp, [1, 0])


@given(vel, mass, mass, rest)
def test_equal_velocities_unchanged(v, mR, mO, e):
    vRp, vOp = point_impact(v, v, BodyParams(mR, restitution=e), BodyParams(mO, restitution=e))
    assert np.allclose(vRp, v) and np.allclose(vOp, v)


@given(vel, vel, mass, mass, rest)
def test_point_impact_momentum_and_restitution(vR, vO, mR, mO, e):
    pR, pO = BodyParams(mR, restitution=e), BodyParams(mO, restitution=e)
    vRp, vOp = point_impact(vR, vO, pR, pO)
    scale = 1 + mR * np.abs(vR).max() + mO * np.abs(vO).max()
    assert np.allclose(mR * vRp + mO * vOp, mR * vR + mO * vO, atol=1e-12 * scale)
    assert np.allclose(vRp - vOp, -e * (vR - vO), atol=1e-12 * (1 + np.abs(vR - vO).max()))


@given(vel, vel, mass, mass, rest)
def test_point_impact_energy(vR, vO, mR, mO, e):
    pR, pO = BodyParams(mR, restitution=e), BodyParams(mO, restitution=e)
    vRp, vOp = point_impact(vR, vO, pR, pO)
    ke0 = 0.5 * (mR * vR @ vR + mO * vO @ vO)
    ke1 = 0.5 * (mR * vRp @ vRp + mO * vOp @ vOp)
    assert ke1 <= ke0 * (1 + 1e-12) + 1e-12
    if e == 1.0:
        assert abs(ke1 - ke0) <= 1e-10 * max(1.0, ke0)


@given(mass, mass, rest)
def test_mass_fractions_scale_invariant(mR, mO, e):
    a = np.array(mass_fractions(mR, mO, e))
    b = np.array(mass_fractions(3.7 * mR, 3.7 * mO, e))
    assert np.allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("kw", [{"mass": 0.0}, {"mass": 1.0, "radius": -0.1}, {"mass": 1.0, "restitution": 1.5}])
def test_body_params_validated(kw):
    with pytest.raises(ImpactError):
        BodyParams(**kw)


# ---------------------------------------------------------------- disc law

def test_head_on_disc_matches_point_law_in_x():
    pR, pO = BodyParams(2.0, 0.15), BodyParams(1.0, 0.15, 0.8)
    vR, vO = np.array([1.0, 0.3]), np.array([-0.2, -0.4])
    vRp, vOp, th = cylinder_impact([0, 0], [0.3, 0], vR, vO, pR, pO)
    pRx, pOx = point_impact(vR[:1], vO[:1], pR, pO)
    assert th == 0.0
    assert np.allclose([vRp[0], vOp[0]], [pRx[0], pOx[0]])
    assert np.allclose([vRp[1], vOp[1]], [vR[1], vO[1]])


def test_grazing_contact_leaves_velocities():
    p = BodyParams(1.0, 0.1)
    vRp, vOp, _ = cylinder_impact([0, 0], [0, 0.2], [1, 0], [-1, 0], p, p)
    assert np.allclose(vRp, [1, 0]) and np.allclose(vOp, [-1, 0])


def test_cylinder_requires_contact():
    p = BodyParams(1.0, 0.1)
    with pytest.raises(ContactGeometryError):
        cylinder_impact([0, 0], [0.5, 0], [1, 0], [0, 0], p, p)
    with pytest.raises(ContactGeometryError):
        cylinder_impact([0, 0], [0, 0], [1, 0], [0, 0], BodyParams(1.0), BodyParams(1.0))


@given(st.floats(-math.pi, math.pi), vel, vel, mass, mass, rest, st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_cylinder_impact_normal_tangent_decomposition(th, vR, vO, mR, mO, e, rR, rO):
    pR, pO = BodyParams(mR, rR, e), BodyParams(mO, rO, e)
    n = np.array([math.cos(th), math.sin(th)])
    tvec = np.array([-n[1], n[0]])
    xR = np.array([0.3, -0.2])
    xO = xR + (rR + rO) * n
    vRp, vOp, theta = cylinder_impact(xR, xO, vR, vO, pR, pO)
    assert abs(wrap_angle(theta - th)) < 1e-9
    scale = 1 + mR * np.abs(vR).max() + mO * np.abs(vO).max()
    assert np.allclose(mR * vRp + mO * vOp, mR * vR + mO * vO, atol=1e-10 * scale)
    assert abs(vRp @ tvec - vR @ tvec) < 1e-10 * (1 + np.abs(vR).max())
    assert abs(vOp @ tvec - vO @ tvec) < 1e-10 * (1 + np.abs(vO).max())
    assert abs((vRp - vOp) @ n + e * (vR - vO) @ n) < 1e-10 * (1 + np.abs(vR - vO).max())


@given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi), vel, vel, mass, mass)
def test_cylinder_impact_frame_covariant(th, alpha, vR, vO, mR, mO):
    pR, pO = BodyParams(mR, 0.15), BodyParams(mO, 0.2)
    n = np.array([math.cos(th), math.sin(th)])
    xR, xO = np.zeros(2), 0.35 * n
    a, b, _ = cylinder_impact(xR, xO, vR, vO, pR, pO)
    R = rot(alpha)
    ar, br, _ = cylinder_impact(R @ xR, R @ xO, R @ vR, R @ vO, pR, pO)
    assert np.allclose(ar, R @ a, atol=1e-9) and np.allclose(br, R @ b, atol=1e-9)


# ---------------------------------------------------------------- targets

def test_targets_point_limit_swap():
    p = BodyParams(1.0, 0.0)
    tgt = solve_two_body_targets([1, 0], [1, 0], p, p, [0, 0])
    assert np.allclose(tgt.vR_des, [1, 0], atol=1e-6)
    assert abs(tgt.theta) < 1e-6
    assert not tgt.approximate


def test_targets_45_degrees():
    p = BodyParams(14.0, 0.15)
    vdes = 0.2 * np.array([1, 1]) / math.sqrt(2)
    tgt = solve_two_body_targets(vdes, vdes, p, p, [0, 0])
    assert abs(tgt.theta - math.pi / 4) < 1e-6
    assert np.allclose(tgt.robot_offset, -0.3 * np.array([1, 1]) / math.sqrt(2), atol=1e-6)


def brute_force_cost(vdes, vprior, vO, pR, pO, Q2, n=180):
    """Min over a normal grid of the target cost, the robot velocity found by a
    derivative-free search with a push-only disc impulse as forward model."""
    from scipy.optimize import minimize
    m3 = mass_fractions(pR.mass, pO.mass, min(pR.restitution, pO.restitution))[2]
    best = math.inf
    for th in np.linspace(-math.pi, math.pi, n, endpoint=False):
        nn = np.array([math.cos(th), math.sin(th)])

        def cost(vR):
            k = m3 * max((vR - vO) @ nn, 0.0)
            r = vO + k * nn - vdes
            dv = vR - vprior
            return r @ r + dv @ Q2 @ dv

        res = minimize(cost, vprior + (vdes - vO), method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
        best = min(best, res.fun)
    return best


def test_targets_tradeoff_flagged_and_near_brute_force():
    # heavy penalty on deviating from a prior pointing away: demand not met exactly
    pR, pO = BodyParams(1.0, 0.1), BodyParams(3.0, 0.1)
    vO = np.array([0.2, 0.0])
    vdes = np.array([0.0, 0.6])
    Q2 = 5.0 * np.eye(2)
    tgt = solve_two_body_targets(vdes, [0.0, -0.5], pR, pO, vO, Q2=Q2)
    assert tgt.approximate and tgt.residual > 1e-3
    oracle = brute_force_cost(vdes, np.array([0.0, -0.5]), vO, pR, pO, Q2)
    assert tgt.cost <= oracle * 1.01 + 1e-12


@settings(max_examples=40, deadline=None)
@given(arrays(float, 2, elements=st.floats(-0.5, 0.5)), arrays(float, 2, elements=st.floats(-0.5, 0.5)),
       arrays(float, 2, elements=st.floats(-0.5, 0.5)), mass, mass, st.sampled_from([0.0, 0.05, 0.15, 0.3]))
def test_targets_reproduced_by_disc_law(vdes, vprior, vO, mR, mO, r):
    if np.linalg.norm(vdes - vO) < 1e-6:
        return
    pR, pO = BodyParams(mR, r), BodyParams(mO, r)
    tgt = solve_two_body_targets(vdes, vprior, pR, pO, vO)
    xO = np.array([1.0, 2.0])
    xR = xO + tgt.robot_offset
    if r > 0:
        vRp, vOp, th = cylinder_impact(xR, xO, tgt.vR_des, vO, pR, pO)
    else:
        n = np.array([math.cos(tgt.theta), math.sin(tgt.theta)])
        from impactplan.impact import normal_impact
        vRp, vOp = normal_impact(n, tgt.vR_des, vO, pR, pO)
    assert np.allclose(vOp, tgt.vO_achieved, atol=1e-8)
    assert np.allclose(vRp, tgt.vR_post, atol=1e-8)


def test_targets_reject_no_change():
    p = BodyParams(1.0, 0.1)
    with pytest.raises(ImpactError):
        solve_two_body_targets([1, 0], [0, 0], p, p, [1, 0])


# ---------------------------------------------------------------- prediction

def test_prediction_by_hand():
    assert np.allclose(predict_preimpact_object_state([0, 0], [1, 2], 1.0, 4.0), [3, 6])
    assert np.allclose(predict_preimpact_object_state([5, 5], [0, 0], 0.0, 9.0), [5, 5])
    with pytest.raises(ImpactError):
        predict_preimpact_object_state([0, 0], [1, 0], 5.0, 4.0)


def test_desired_next_velocity():
    assert np.allclose(desired_next_object_velocity([0, 0], [2, 0], 1.0, 5.0), [0.5, 0])
    assert np.allclose(desired_next_object_velocity([3, 1], [3, 1], 1.0, 5.0), [0, 0])
    with pytest.raises(ImpactError):
        desired_next_object_velocity([0, 0], [1, 0], 5.0, 5.0)


@given(arrays(float, 2, elements=st.floats(-1, 1)), st.floats(0.5, 10))
def test_desired_velocity_slope(dx, dt):
    a = desired_next_object_velocity([0, 0], [2, 1], 0.0, dt)
    b = desired_next_object_velocity(dx, [2, 1], 0.0, dt)
    assert np.allclose(b - a, -dx / dt)


# ---------------------------------------------------------------- events

def test_event_roundtrip_and_residual():
    pR, pO = BodyParams(14.0), BodyParams(14.0)
    vRp, vOp = point_impact([0.2, 0], [0, 0], pR, pO)
    ev = ImpactEvent("R1", "O1", 10.0, [1, 2], 4.0, [0.2, 0], [0, 0], vRp, vOp, 14.0, 14.0)
    assert -math.pi < ev.normal_angle <= math.pi
    assert ev.law_residual() < 1e-12
    ev2 = ImpactEvent.from_dict(ev.to_dict())
    assert np.allclose(ev2.vO_post, ev.vO_post) and ev2.t_impact == 10.0
    bad = ImpactEvent("R1", "O1", 10.0, [1, 2], 0.0, [0.2, 0], [0, 0], vRp, vOp + 0.1, 14.0, 14.0)
    assert bad.law_residual() > 0.05
