import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from impactplan.control import (ControllerState, ImpactPrediction, MpcConfig, RobotModel, VelocityKeeping,
                                dynamics_step, impact_detector, mpc_step, velocity_keeping_step)

MODEL = RobotModel()
vals = st.floats(-2, 2)


def hold(p):
    p = np.asarray(p, float)
    return lambda ts: (np.repeat(p[None], len(ts), 0), np.zeros((len(ts), 2)))


# ---------------------------------------------------------------- dynamics

@given(vals, vals, vals, vals, st.floats(-3, 3), st.floats(-1, 1), st.floats(0.001, 0.5))
def test_ballistic_step(px, py, vx, vy, psi, om, dt):
    x = np.array([px, py, vx, vy, psi, om])
    y = dynamics_step(x, np.zeros(3), dt, MODEL)
    assert np.allclose(y[:2], x[:2] + dt * x[2:4], atol=1e-12)
    assert np.array_equal(y[2:4], x[2:4])
    assert y[5] == x[5]
    # kinetic energy and momentum unchanged
    assert 0.5 * MODEL.mass * (y[2:4] @ y[2:4]) == pytest.approx(0.5 * MODEL.mass * (x[2:4] @ x[2:4]), rel=1e-15)


def test_constant_body_force_matches_closed_form():
    F = np.array([3.0, -1.5, 0.0])
    x = np.array([0.0, 0.0, 0.2, 0.1, 0.0, 0.0])
    dt = 0.1
    y = dynamics_step(x, F, dt, MODEL)
    a = F[:2] / MODEL.mass
    assert np.allclose(y[2:4], x[2:4] + a * dt, atol=1e-10)
    assert np.allclose(y[:2], x[:2] + x[2:4] * dt + 0.5 * a * dt ** 2, atol=1e-10)


def test_pure_torque_rotates_in_place():
    tau = 0.5
    x = np.zeros(6)
    y = dynamics_step(x, [0.0, 0.0, tau], 0.2, MODEL)
    assert np.allclose(y[:4], 0)
    assert y[4] == pytest.approx(0.5 * tau / MODEL.inertia * 0.2 ** 2, rel=1e-12)
    assert y[5] == pytest.approx(tau / MODEL.inertia * 0.2, rel=1e-12)


def test_body_frame_force_is_rotated():
    x = np.array([0, 0, 0, 0, math.pi / 2, 0])
    y = dynamics_step(x, [1.0, 0.0, 0.0], 0.1, MODEL)
    assert y[2] == pytest.approx(0.0, abs=1e-12) and y[3] == pytest.approx(0.1 / MODEL.mass)


def test_model_validation():
    with pytest.raises(ValueError):
        RobotModel(mass=0.0)
    with pytest.raises(ValueError):
        RobotModel(u_lower=[1.0, -1, -1])
    assert np.array_equal(MODEL.clamp([50, -50, 0.5]), [10, -10, 0.5])


# ---------------------------------------------------------------- MPC

def test_on_reference_gives_zero_input():
    u = mpc_step(np.array([1.0, 2.0, 0, 0, 0, 0]), hold([1.0, 2.0]), 0.0, None, MpcConfig(), MODEL)
    assert np.linalg.norm(u) < 1e-6


def test_heading_error_is_sign_invariant():
    u = mpc_step(np.array([1.0, 2.0, 0, 0, math.pi, 0]), hold([1.0, 2.0]), 0.0, None, MpcConfig(), MODEL)
    assert np.linalg.norm(u) < 1e-6


def closed_loop(x, ref, steps, cfg=MpcConfig(), substeps=10, t0=0.0):
    cs = ControllerState()
    errs, t = [], t0
    for _ in range(steps):
        u = mpc_step(x, ref, t, None, cfg, MODEL, cs)
        for _ in range(substeps):
            x = dynamics_step(x, u, cfg.dt / substeps, MODEL)
        t += cfg.dt
        errs.append(float(np.linalg.norm(x[:2] - ref(np.array([t]))[0][0])))
    return x, np.array(errs)


def test_step_reference_converges_monotonically():
    x, errs = closed_loop(np.zeros(6), hold([0.1, 0.0]), 30)
    assert errs[-1] < 0.01
    # monotone until the error enters a 1 mm band, then it stays there
    k = int(np.argmax(errs < 1e-3))
    assert k > 0 and np.all(np.diff(errs[:k + 1]) <= 1e-9)
    assert np.all(errs[k:] < 1e-3)


def test_ramp_tracking():
    v = np.array([0.2, -0.1])
    ref = lambda ts: (np.asarray(ts)[:, None] * v[None], np.repeat(v[None], len(ts), 0))
    x, errs = closed_loop(np.zeros(6), ref, 40)
    assert errs[-1] < 0.01
    assert np.allclose(x[2:4], v, atol=0.02)


def test_weight_schedule_switches_and_returns():
    cfg = MpcConfig()
    x = np.array([0.0, 0.0, 0.1, 0.0, 0, 0])
    ref = lambda ts: (np.asarray(ts)[:, None] * np.array([0.1, 0.0]), np.repeat([[0.1, 0.0]], len(ts), 0))
    pend = ImpactPrediction(0.5, np.zeros(2), 0.0, 1.0, np.array([0.1, 0.0]))
    _, far = mpc_step(x, ref, -5.0, pend, cfg, MODEL, return_info=True)
    _, near = mpc_step(x, ref, 0.0, pend, cfg, MODEL, return_info=True)
    _, after = mpc_step(x, ref, 1.0, pend, cfg, MODEL, return_info=True)
    assert not far["impact_in_horizon"] and near["impact_in_horizon"]
    assert far["weights"][2] == 0.8 and near["weights"][2] == 8e3
    assert np.array_equal(after["weights"], far["weights"])


@settings(max_examples=15, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(-0.2, 0.2), st.floats(-0.2, 0.2))
def test_solver_cost_non_increasing(dx, dy, vx, vy):
    x = np.array([dx, dy, vx, vy, 0.1, 0.0])
    _, info = mpc_step(x, hold([0.0, 0.0]), 0.0, None, MpcConfig(), MODEL, return_info=True)
    assert np.all(np.diff(info["costs"]) <= 1e-12)


def test_reference_gap_rejected():
    bad = lambda ts: (np.full((len(ts), 2), np.nan), np.zeros((len(ts), 2)))
    with pytest.raises(ValueError):
        mpc_step(np.zeros(6), bad, 0.0, None, MpcConfig(), MODEL)


def test_config_validation():
    with pytest.raises(ValueError):
        MpcConfig(N=0)
    with pytest.raises(ValueError):
        MpcConfig(r=(0.0, 1.0))


# ---------------------------------------------------------------- impact detector

def test_detector_cases():
    assert impact_detector(([0, 0], [5, 0]), ([0, 0], [4, 0]), 0.3, 0.0, 0.1) is None
    t = impact_detector(([0, 0], [0.5, 0]), ([0, 0], [0.1, 0]), 0.3, 1.0, 1.1)
    assert t == pytest.approx(1.05)
    # tangency without crossing
    assert impact_detector(([0, 0], [0.5, 0]), ([0, 0], [0.3, 0]), 0.3, 0.0, 0.1) is None


@given(st.floats(0.35, 2.0), st.floats(0.1, 2.0), st.floats(0.01, 0.2))
def test_detector_time_within_one_step(d0, speed, dt):
    rsum = 0.3
    t_true = (d0 - rsum) / speed
    k = int(t_true // dt)
    a, b = k * dt, (k + 1) * dt
    pa, pb = d0 - speed * a, d0 - speed * b
    if not (pa > rsum > pb):
        return
    t = impact_detector(([0, 0], [pa, 0]), ([0, 0], [pb, 0]), rsum, a, b)
    assert t is not None and abs(t - t_true) < dt
    assert t == pytest.approx(t_true, abs=1e-9)   # linear motion: interpolation is exact


# ---------------------------------------------------------------- velocity keeping

def test_velocity_keeping_holds_then_follows_average():
    vk = VelocityKeeping(window=1.0)
    cfg = MpcConfig()
    x = np.array([1.0, 1.0, 0, 0, 0, 0])
    assert np.linalg.norm(velocity_keeping_step(x, vk, 0.0, cfg, MODEL)) < 1e-6
    vk.on_impact(0.0)
    x = np.array([1.0, 1.0, 1.0, 0.0, 0, 0])
    t = 0.0
    while vk.phase == "estimating":
        u = velocity_keeping_step(x, vk, t, cfg, MODEL)
        if vk.phase == "estimating":
            assert np.array_equal(u, np.zeros(3))
        x = dynamics_step(x, np.zeros(3), cfg.dt, MODEL)
        t += cfg.dt
    assert 1.0 < t < 1.0 + 3 * cfg.dt
    p, v = vk.reference(np.array([5.0, 6.0]))
    assert np.allclose(v, [[1.0, 0.0]] * 2)
    assert np.allclose(p[1] - p[0], [1.0, 0.0])


def test_velocity_keeping_tracks_line():
    vk = VelocityKeeping(window=1.0)
    cfg = MpcConfig()
    cs = ControllerState()
    x = np.array([0.0, 0.0, 0.3, 0.1, 0, 0])
    vk.hold_point = x[:2].copy()
    vk.on_impact(0.0)
    t, worst = 0.0, 0.0
    while t < 11.0:
        u = velocity_keeping_step(x, vk, t, cfg, MODEL, cs)
        for _ in range(10):
            x = dynamics_step(x, u, cfg.dt / 10, MODEL)
        t += cfg.dt
        if vk.phase == "keeping":
            worst = max(worst, float(np.linalg.norm(x[:2] - vk.reference(np.array([t]))[0][0])))
    assert worst < 0.02
