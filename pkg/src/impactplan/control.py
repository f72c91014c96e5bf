"""Impact-aware nonlinear MPC for planar rigid bodies.

State x = [px, py, vx, vy, psi, omega], input u = [Fx, Fy, tau] with the
force given in the body frame. The predictor switches the robot velocity
through the point impact law at the planned impact time.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .impact import BodyParams, ImpactEvent, mass_fractions, pair_restitution

log = logging.getLogger("impactplan.control")

NX, NU = 6, 3


@dataclass
class RobotModel:
    mass: float = 14.0
    inertia: float = 0.1575
    u_lower: np.ndarray = field(default_factory=lambda: np.array([-10.0, -10.0, -2.0]))
    u_upper: np.ndarray = field(default_factory=lambda: np.array([10.0, 10.0, 2.0]))

    def __post_init__(self):
        self.u_lower = np.asarray(self.u_lower, float)
        self.u_upper = np.asarray(self.u_upper, float)
        if not (self.mass > 0 and self.inertia > 0):
            raise ValueError("mass and inertia must be positive")
        if np.any(self.u_lower > 0) or np.any(self.u_upper < 0):
            raise ValueError("input box must contain the origin")

    @classmethod
    def for_body(cls, p: BodyParams, **kw) -> "RobotModel":
        return cls(mass=p.mass, inertia=0.5 * p.mass * p.radius ** 2 if p.radius > 0 else 0.5 * p.mass * 0.15 ** 2, **kw)

    def clamp(self, u):
        return np.clip(u, self.u_lower, self.u_upper)


# weights: [pos, vel, heading]
NOMINAL_Q = (5.0, 0.8, 8e3)
IMPACT_Q = (1e-3, 8e3, 8e3)
INPUT_R = (1e-3, 2.0)


@dataclass
class MpcConfig:
    N: int = 10
    dt: float = 0.1
    q_nominal: tuple = NOMINAL_Q
    q_impact: tuple = IMPACT_Q
    r: tuple = INPUT_R
    terminal_factor: float = 10.0
    max_iter: int = 15
    tol: float = 1e-10
    heading_ref: float = 0.0

    def __post_init__(self):
        if self.N < 1 or not self.dt > 0:
            raise ValueError("horizon must have N >= 1 and dt > 0")
        if min(self.q_nominal) <= 0 or min(self.q_impact) <= 0 or min(self.r) <= 0:
            raise ValueError("weights must be positive")

    @classmethod
    def from_dict(cls, d: dict | None) -> "MpcConfig":
        d = dict(d or {})
        for k in ("q_nominal", "q_impact", "r"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def weights(self, impact_in_horizon: bool) -> np.ndarray:
        q = self.q_impact if impact_in_horizon else self.q_nominal
        return np.array([q[0], q[0], q[1], q[1], q[2]], float)


@dataclass
class ControllerState:
    phase: str = "tracking"          # tracking | pre_impact | post_impact
    pending: ImpactEvent | None = None
    warm: np.ndarray | None = None
    last_cost: float = math.nan
    warning: bool = False


# ------------------------------------------------------------ dynamics

@njit(cache=True)
def _deriv(x, u, m, I):
    c, s = math.cos(x[4]), math.sin(x[4])
    d = np.empty(6)
    d[0] = x[2]
    d[1] = x[3]
    d[2] = (c * u[0] - s * u[1]) / m
    d[3] = (s * u[0] + c * u[1]) / m
    d[4] = x[5]
    d[5] = u[2] / I
    return d


@njit(cache=True)
def _rk4(x, u, dt, m, I):
    k1 = _deriv(x, u, m, I)
    k2 = _deriv(x + 0.5 * dt * k1, u, m, I)
    k3 = _deriv(x + 0.5 * dt * k2, u, m, I)
    k4 = _deriv(x + dt * k3, u, m, I)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def dynamics_step(x, u, dt: float, model: RobotModel) -> np.ndarray:
    """One RK4 step of the planar rigid-body model."""
    return _rk4(np.asarray(x, float), np.asarray(u, float), float(dt), model.mass, model.inertia)


@njit(cache=True)
def _residuals(U, x0, dt, m, I, pref, vref, psiref, sw, swN, sr, k_imp, m1, m2, vO, vpre):
    N = pref.shape[0]
    r = np.zeros(N * 5 + N * 3 + 2)
    x = x0.copy()
    for k in range(N):
        x = _rk4(x, U[k], dt, m, I)
        if k == k_imp:
            # pre-impact velocity is tracked before the map erases it
            r[8 * N] = sw[2] * (x[2] - vpre[0])
            r[8 * N + 1] = sw[3] * (x[3] - vpre[1])
            x[2] = m1 * x[2] + m2 * vO[0]
            x[3] = m1 * x[3] + m2 * vO[1]
        w = sw if k < N - 1 else swN
        r[5 * k + 0] = w[0] * (x[0] - pref[k, 0])
        r[5 * k + 1] = w[1] * (x[1] - pref[k, 1])
        r[5 * k + 2] = w[2] * (x[2] - vref[k, 0])
        r[5 * k + 3] = w[3] * (x[3] - vref[k, 1])
        # 1 - cos^2 = sin^2, so the residual is sin of the heading error
        r[5 * k + 4] = w[4] * math.sin(psiref - x[4])
        for j in range(3):
            r[5 * N + 3 * k + j] = sr[j] * U[k, j]
    return r


@njit(cache=True)
def _jacobian(U, x0, dt, m, I, pref, vref, psiref, sw, swN, sr, k_imp, m1, m2, vO, vpre, r0):
    N = U.shape[0]
    J = np.empty((r0.size, N * 3))
    for k in range(N):
        for j in range(3):
            h = 1e-6 * max(1.0, abs(U[k, j]))
            Up = U.copy()
            Up[k, j] += h
            rp = _residuals(Up, x0, dt, m, I, pref, vref, psiref, sw, swN, sr, k_imp, m1, m2, vO, vpre)
            J[:, 3 * k + j] = (rp - r0) / h
    return J


@dataclass
class ImpactPrediction:
    t_impact: float
    vO_pred: np.ndarray
    m1: float
    m2: float
    vR_des: np.ndarray | None = None    # desired robot velocity just before the impact

    @classmethod
    def from_event(cls, ev: ImpactEvent, vO_pred=None, pR: BodyParams | None = None,
                   pO: BodyParams | None = None):
        if pR is not None and pO is not None:
            m1, m2, _, _ = mass_fractions(pR.mass, pO.mass, pair_restitution(pR, pO))
        else:
            m1, m2, _, _ = mass_fractions(ev.mR, ev.mO, ev.restitution)
        v = ev.vO_pre if vO_pred is None else vO_pred
        return cls(float(ev.t_impact), np.asarray(v, float), m1, m2, np.asarray(ev.vR_pre, float))


def mpc_step(x, reference, t: float, pending: ImpactPrediction | None, cfg: MpcConfig,
             model: RobotModel, cstate: ControllerState | None = None, return_info: bool = False):
    """First input of the horizon-optimal sequence (Gauss-Newton single shooting).

    reference(ts) -> (positions (N, 2), velocities (N, 2)) at ts = t + k dt.
    """
    N, dt = cfg.N, cfg.dt
    ts = t + dt * np.arange(1, N + 1)
    pref, vref = reference(ts)
    pref = np.ascontiguousarray(pref, float)
    vref = np.ascontiguousarray(vref, float)
    if pref.shape != (N, 2) or vref.shape != (N, 2) or not np.all(np.isfinite(pref)):
        raise ValueError("reference does not cover the horizon")
    k_imp, m1, m2, vO, vpre = -1, 1.0, 0.0, np.zeros(2), np.zeros(2)
    impact_in = False
    if pending is not None and t <= pending.t_impact <= t + N * dt:
        impact_in = True
        k_imp = int(min(N - 1, max(0, math.ceil((pending.t_impact - t) / dt - 1e-9) - 1)))
        m1, m2, vO = pending.m1, pending.m2, np.asarray(pending.vO_pred, float)
        if pending.vR_des is not None:
            vpre = np.asarray(pending.vR_des, float)
        else:
            # without a target the pre-impact node follows the reference itself
            vpre = vref[k_imp].copy()
    w = cfg.weights(impact_in)
    sw = np.sqrt(w)
    swN = np.sqrt(cfg.terminal_factor * w)
    r = cfg.r
    sr = np.sqrt(np.array([r[0], r[0], r[1]], float))
    x0 = np.asarray(x, float)
    if cstate is not None and cstate.warm is not None and cstate.warm.shape == (N, 3):
        U = np.vstack([cstate.warm[1:], cstate.warm[-1:]])
    else:
        U = np.zeros((N, 3))
    lo, hi = model.u_lower, model.u_upper
    U = np.clip(U, lo, hi)
    args = (x0, dt, model.mass, model.inertia, pref, vref, cfg.heading_ref, sw, swN, sr,
            k_imp, m1, m2, vO, vpre)
    res = _residuals(U, *args)
    cost = 0.5 * float(res @ res)
    costs = [cost]
    converged = False
    for _ in range(cfg.max_iter):
        J = _jacobian(U, *args, res)
        g = J.T @ res
        H = J.T @ J + 1e-9 * np.eye(J.shape[1])
        step = -np.linalg.solve(H, g).reshape(N, 3)
        alpha, accepted = 1.0, False
        while alpha > 1e-6:
            Un = np.clip(U + alpha * step, lo, hi)
            rn = _residuals(Un, *args)
            cn = 0.5 * float(rn @ rn)
            pred = float(g @ (Un - U).ravel())
            if cn <= cost + 1e-4 * min(pred, 0.0):
                accepted = True
                break
            alpha *= 0.5
        if not accepted or cn > cost:
            converged = True
            break
        dc = cost - cn
        U, res, cost = Un, rn, cn
        costs.append(cost)
        if dc <= cfg.tol * max(1.0, cost):
            converged = True
            break
    if cstate is not None:
        cstate.warm = U.copy()
        cstate.last_cost = cost
        cstate.warning = not converged
    u = model.clamp(U[0])
    if return_info:
        return u, {"cost": cost, "costs": costs, "converged": converged, "impact_in_horizon": impact_in,
                   "weights": w}
    return u


def impact_detector(prev_pair, pair, radii_sum: float, t_prev: float, t: float):
    """Time at which the center distance crosses radii_sum downward between
    two samples (linear interpolation), else None. pair = (xR, xO)."""
    d0 = float(np.linalg.norm(np.asarray(prev_pair[1]) - np.asarray(prev_pair[0])))
    d1 = float(np.linalg.norm(np.asarray(pair[1]) - np.asarray(pair[0])))
    if d0 > radii_sum and d1 < radii_sum:
        return t_prev + (t - t_prev) * (d0 - radii_sum) / (d0 - d1)
    return None


# ---------------------------------------------------------- velocity keeping

@dataclass
class VelocityKeeping:
    """Object-side controller: hold position before the first impact, stay
    passive for the estimation window after an impact, then follow a
    straight line with the averaged velocity."""
    window: float = 1.0
    duration: float = 1e3
    phase: str = "hold"              # hold | estimating | keeping
    hold_point: np.ndarray | None = None
    t_impact: float = math.nan
    samples: list = field(default_factory=list)
    line: tuple | None = None        # (t_start, p_start, v_bar)

    def on_impact(self, t: float):
        self.phase = "estimating"
        self.t_impact = t
        self.samples = []

    def reference(self, ts):
        ts = np.asarray(ts, float)
        if self.phase == "hold" or self.line is None:
            p = np.repeat(self.hold_point[None, :], ts.size, axis=0)
            return p, np.zeros_like(p)
        t0, p0, v = self.line
        lam = (ts - t0) / self.duration
        p = p0[None, :] * (1 - lam[:, None]) + (p0 + self.duration * v)[None, :] * lam[:, None]
        return p, np.repeat(v[None, :], ts.size, axis=0)


def velocity_keeping_step(x, vk: VelocityKeeping, t: float, cfg: MpcConfig, model: RobotModel,
                          cstate: ControllerState | None = None):
    """Object input (zero while estimating)."""
    x = np.asarray(x, float)
    if vk.hold_point is None:
        vk.hold_point = x[:2].copy()
    if vk.phase == "estimating":
        vk.samples.append(x[2:4].copy())
        if t - vk.t_impact >= vk.window:
            vbar = np.mean(vk.samples, axis=0)
            vk.line = (t, x[:2].copy(), vbar)
            vk.phase = "keeping"
        else:
            return np.zeros(3)
    return mpc_step(x, vk.reference, t, None, cfg, model, cstate)
