"""Two-body impact laws (point mass and non-rotating discs) and the
desired-pre-impact-state problem used when replanning an impact."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.optimize import minimize_scalar

from .geometry import NUMERIC


class ImpactError(ValueError):
    pass


class ContactGeometryError(ImpactError):
    pass


@dataclass(frozen=True)
class BodyParams:
    mass: float
    radius: float = 0.0
    restitution: float = 1.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ImpactError(f"mass must be positive, got {self.mass}")
        if not self.radius >= 0:
            raise ImpactError(f"radius must be non-negative, got {self.radius}")
        if not 0.0 <= self.restitution <= 1.0:
            raise ImpactError(f"restitution must lie in [0, 1], got {self.restitution}")

    def scaled(self, mass_factor: float = 1.0, radius=None) -> "BodyParams":
        return BodyParams(self.mass * mass_factor, self.radius if radius is None else radius,
                          self.restitution)


def pair_restitution(pR: BodyParams, pO: BodyParams) -> float:
    # the softer body dominates
    return min(pR.restitution, pO.restitution)


def mass_fractions(mR: float, mO: float, e: float):
    """(m1, m2, m3, m4) with v_R+ = m1 v_R + m2 v_O and v_O+ = m3 v_R + m4 v_O."""
    M = mR + mO
    return (mR - e * mO) / M, (1 + e) * mO / M, (1 + e) * mR / M, (mO - e * mR) / M


def impact_matrix(pR: BodyParams, pO: BodyParams) -> np.ndarray:
    m1, m2, m3, m4 = mass_fractions(pR.mass, pO.mass, pair_restitution(pR, pO))
    return np.array([[m1, m2], [m3, m4]])


def point_impact(vR, vO, pR: BodyParams, pO: BodyParams):
    vR = np.asarray(vR, float)
    vO = np.asarray(vO, float)
    m1, m2, m3, m4 = mass_fractions(pR.mass, pO.mass, pair_restitution(pR, pO))
    return m1 * vR + m2 * vO, m3 * vR + m4 * vO


def wrap_angle(theta: float) -> float:
    """Map to (-pi, pi]."""
    a = math.fmod(theta + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def rotation(theta: float) -> np.ndarray:
    """Global-to-local rotation R(theta); local x' is the contact normal."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def normal_impact(n, vR, vO, pR: BodyParams, pO: BodyParams):
    """1D restitution law along unit normal n, tangential parts untouched."""
    n = np.asarray(n, float)
    vR = np.asarray(vR, float)
    vO = np.asarray(vO, float)
    e = pair_restitution(pR, pO)
    m1, m2, m3, m4 = mass_fractions(pR.mass, pO.mass, e)
    aR, aO = vR @ n, vO @ n
    bR, bO = m1 * aR + m2 * aO, m3 * aR + m4 * aO
    return vR + (bR - aR) * n, vO + (bO - aO) * n


def cylinder_impact(xR, xO, vR, vO, pR: BodyParams, pO: BodyParams, tol: float | None = None):
    """Disc-disc impact; returns (vR+, vO+, theta) with theta the angle of the
    normal from the robot center to the object center."""
    tol = NUMERIC.contact_tol if tol is None else tol
    pRp = np.asarray(xR, float)[:2]
    pOp = np.asarray(xO, float)[:2]
    d = pOp - pRp
    dist = float(np.hypot(d[0], d[1]))
    if dist <= 1e-12:
        raise ContactGeometryError("coincident centers leave the contact normal undefined")
    rsum = pR.radius + pO.radius
    if abs(dist - rsum) > tol:
        raise ContactGeometryError(f"bodies not in contact: distance {dist:.9g} vs radii sum {rsum:.9g}")
    theta = wrap_angle(math.atan2(d[1], d[0]))
    # local frame: rotate, apply the 1D law on x', keep y', rotate back
    Rm = rotation(theta)
    lR = Rm @ np.asarray(vR, float)
    lO = Rm @ np.asarray(vO, float)
    m1, m2, m3, m4 = mass_fractions(pR.mass, pO.mass, pair_restitution(pR, pO))
    lRp = np.array([m1 * lR[0] + m2 * lO[0], lR[1]])
    lOp = np.array([m3 * lR[0] + m4 * lO[0], lO[1]])
    return Rm.T @ lRp, Rm.T @ lOp, theta


# ------------------------------------------------------------ events

@dataclass
class ImpactEvent:
    robot_id: str
    object_id: str
    t_impact: float
    contact_point: np.ndarray
    normal_angle: float
    vR_pre: np.ndarray
    vO_pre: np.ndarray
    vR_post: np.ndarray
    vO_post: np.ndarray
    mR: float = 1.0
    mO: float = 1.0
    restitution: float = 1.0
    model: str = "point"

    def __post_init__(self):
        for k in ("contact_point", "vR_pre", "vO_pre", "vR_post", "vO_post"):
            setattr(self, k, np.asarray(getattr(self, k), dtype=float))
        self.normal_angle = wrap_angle(float(self.normal_angle))
        if self.model not in ("point", "cylinder"):
            raise ImpactError(f"unknown impact model {self.model!r}")

    def law_residual(self) -> float:
        """Max deviation of the recorded post velocities from the impact law."""
        pR = BodyParams(self.mR, 0.0, self.restitution)
        pO = BodyParams(self.mO, 0.0, self.restitution)
        if self.model == "point":
            r, o = point_impact(self.vR_pre, self.vO_pre, pR, pO)
        else:
            n = np.array([math.cos(self.normal_angle), math.sin(self.normal_angle)])
            r, o = normal_impact(n, self.vR_pre, self.vO_pre, pR, pO)
        return float(max(np.max(np.abs(r - self.vR_post)), np.max(np.abs(o - self.vO_post))))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ImpactEvent":
        return cls(**d)


# ------------------------------------------------ desired pre-impact state

@dataclass
class TwoBodyTarget:
    robot_offset: np.ndarray    # robot center minus object center at contact
    vR_des: np.ndarray
    theta: float
    vO_achieved: np.ndarray
    vR_post: np.ndarray
    residual: float             # ||vO+ - vO_des||
    cost: float
    approximate: bool


def _targets_for_theta(theta, vO_des, vR_prior, vO, m1, m3, Q1, Q2):
    """Closed-form optimum over vR for a fixed normal angle."""
    n = np.array([math.cos(theta), math.sin(theta)])
    A = m3 * np.outer(n, n)
    b = vO_des - vO + A @ vO
    H = A.T @ Q1 @ A + Q2
    vR = np.linalg.solve(H, A.T @ Q1 @ b + Q2 @ vR_prior)
    if (vR - vO) @ n <= 0.0:
        # the robot would not approach the object along n: no impulse at all
        # (vR restricted to n.(vR - vO) = 0, closest to the prior)
        q = np.linalg.solve(Q2, n)
        lam = (n @ vR_prior - n @ vO) / (n @ q)
        vR = vR_prior - lam * q
    vOp = vO + m3 * ((vR - vO) @ n) * n
    r = vOp - vO_des
    dv = vR - vR_prior
    cost = float(r @ Q1 @ r + dv @ Q2 @ dv)
    return cost, vR, vOp


def solve_two_body_targets(vO_des, vR_prior, pR: BodyParams, pO: BodyParams, vO_pred,
                           Q1=None, Q2=None, theta_seed=None, n_grid: int = 256,
                           residual_tol: float = 1e-6) -> TwoBodyTarget:
    """Minimize ||vO+ - vO_des||_Q1 + ||vR- - vR_prior||_Q2 over the contact
    angle and the robot pre-impact velocity (disc impact law)."""
    vO_des = np.asarray(vO_des, float)
    vR_prior = np.asarray(vR_prior, float)
    vO = np.asarray(vO_pred, float)
    Q1 = np.eye(2) if Q1 is None else np.asarray(Q1, float)
    Q2 = 1e-3 * np.eye(2) if Q2 is None else np.asarray(Q2, float)
    for Q in (Q1, Q2):
        if np.any(np.linalg.eigvalsh(0.5 * (Q + Q.T)) <= 0):
            raise ImpactError("weights must be positive definite")
    if np.allclose(vO_des, vO, atol=1e-12, rtol=0):
        raise ImpactError("desired object velocity equals the predicted one; no impact needed")
    m1, m2, m3, m4 = mass_fractions(pR.mass, pO.mass, pair_restitution(pR, pO))

    def f(th):
        return _targets_for_theta(th, vO_des, vR_prior, vO, m1, m3, Q1, Q2)[0]

    grid = -math.pi + 2 * math.pi * (np.arange(n_grid) + 1) / n_grid
    if theta_seed is not None:
        grid = np.append(grid, wrap_angle(theta_seed))
    costs = np.array([f(th) for th in grid])
    k = int(np.argmin(costs))
    th0, h = float(grid[k]), 2 * math.pi / n_grid
    res = minimize_scalar(f, bounds=(th0 - h, th0 + h), method="bounded",
                          options={"xatol": 1e-12, "maxiter": 500})
    th = float(res.x) if res.fun <= costs[k] else th0
    if not np.isfinite(f(th)):
        raise ImpactError(f"two-body solve did not converge (cost {f(th)})")
    cost, vR, vOp = _targets_for_theta(th, vO_des, vR_prior, vO, m1, m3, Q1, Q2)
    n = np.array([math.cos(th), math.sin(th)])
    vRp, _ = normal_impact(n, vR, vO, pR, pO)
    resid = float(np.linalg.norm(vOp - vO_des))
    return TwoBodyTarget(
        robot_offset=-(pR.radius + pO.radius) * n,
        vR_des=vR, theta=wrap_angle(th), vO_achieved=vOp, vR_post=vRp,
        residual=resid, cost=cost,
        approximate=resid > residual_tol * max(1.0, float(np.linalg.norm(vO_des))))


def predict_preimpact_object_state(xO, vO, t: float, t_impact: float):
    if t > t_impact:
        raise ImpactError(f"prediction time {t} lies after the impact time {t_impact}")
    return np.asarray(xO, float) + np.asarray(vO, float) * (t_impact - t)


def desired_next_object_velocity(xO_at_impact, x_next_des, t_impact_i: float, t_impact_next: float):
    if not t_impact_next > t_impact_i:
        raise ImpactError("impact times must be strictly increasing")
    return (np.asarray(x_next_des, float) - np.asarray(xO_at_impact, float)) / (t_impact_next - t_impact_i)
