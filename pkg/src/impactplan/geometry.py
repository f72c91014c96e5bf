"""Bezier curves, phased paths, boxes, polytopes and zonotopes.

Everything here is a small immutable value type backed by numpy arrays.
Curves are evaluated in Bernstein form; time-parameterized motion is the
pair (r, h) where r is the spatial curve and h the monotone temporal curve.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Sequence

import numpy as np

SCHEMA = "impactplan/geometry/1"


class GeometryError(ValueError):
    pass


class SingularPhaseError(GeometryError):
    pass


@dataclass(frozen=True)
class NumericConfig:
    eval_tol: float = 1e-9
    containment_tol: float = 1e-7
    hdot_min: float = 1e-3
    contact_tol: float = 1e-6


NUMERIC = NumericConfig()


# ---------------------------------------------------------------- Bezier

def bernstein_matrix(degree: int, s) -> np.ndarray:
    """Rows are the Bernstein basis values B_{b,d}(s) for each s."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    b = np.arange(degree + 1)
    coef = np.array([comb(degree, k) for k in b], dtype=float)
    # 0**0 == 1 in numpy, which is what the endpoints need
    return coef * (1.0 - s)[:, None] ** (degree - b) * s[:, None] ** b


def de_casteljau(control_points, s: float):
    """Point at s plus the two halves of the control polygon."""
    pts = np.array(control_points, dtype=float)
    left, right = [pts[0].copy()], [pts[-1].copy()]
    while len(pts) > 1:
        pts = (1.0 - s) * pts[:-1] + s * pts[1:]
        left.append(pts[0].copy())
        right.append(pts[-1].copy())
    return pts[0], np.array(left), np.array(right[::-1])


class BezierCurve:
    """Bezier curve of degree d in R^dim with (d+1) control points."""

    __slots__ = ("_cp",)

    def __init__(self, control_points):
        cp = np.array(control_points, dtype=float)
        if cp.ndim == 1:
            cp = cp[:, None]
        if cp.ndim != 2 or cp.shape[0] < 1 or cp.shape[1] < 1:
            raise GeometryError(f"control points must be (d+1, dim), got {cp.shape}")
        cp.setflags(write=False)
        self._cp = cp

    @property
    def control_points(self) -> np.ndarray:
        return self._cp

    @property
    def degree(self) -> int:
        return self._cp.shape[0] - 1

    @property
    def dim(self) -> int:
        return self._cp.shape[1]

    def __call__(self, s):
        return bezier_eval(self, s)

    def __repr__(self):
        return f"BezierCurve(degree={self.degree}, dim={self.dim}, cp={self._cp.tolist()})"

    def __eq__(self, other):
        return isinstance(other, BezierCurve) and self._cp.shape == other._cp.shape \
            and bool(np.all(self._cp == other._cp))

    def __hash__(self):
        return hash(self._cp.tobytes())

    def derivative(self) -> "BezierCurve":
        return bezier_derivative(self)

    def elevate(self, times: int = 1) -> "BezierCurve":
        return degree_elevate(self, times)

    def split(self, s: float):
        _, left, right = de_casteljau(self._cp, s)
        return BezierCurve(left), BezierCurve(right)

    def restrict(self, s0: float, s1: float) -> "BezierCurve":
        """Sub-curve on [s0, s1], re-parameterized to [0, 1]."""
        if not 0.0 <= s0 <= s1 <= 1.0:
            raise GeometryError(f"bad restriction [{s0}, {s1}]")
        _, _, right = de_casteljau(self._cp, s0)
        if s0 >= 1.0:
            return BezierCurve(right)
        u = (s1 - s0) / (1.0 - s0)
        _, left, _ = de_casteljau(right, u)
        return BezierCurve(left)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "degree": self.degree, "control_points": self._cp.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BezierCurve":
        cp = np.array(d["control_points"], dtype=float).reshape(-1, int(d["dim"]))
        if cp.shape[0] != int(d["degree"]) + 1:
            raise GeometryError("control point count does not match degree")
        return cls(cp)


def bezier_eval(curve: BezierCurve, s):
    """Evaluate the curve; scalar s gives a point, array s gives rows."""
    arr = np.asarray(s, dtype=float)
    tol = NUMERIC.eval_tol
    if np.any(arr < -tol) or np.any(arr > 1.0 + tol) or np.any(~np.isfinite(arr)):
        raise GeometryError(f"Bezier parameter outside [0, 1]: {s}")
    arr = np.clip(arr, 0.0, 1.0)
    out = bernstein_matrix(curve.degree, arr) @ curve.control_points
    return out[0] if arr.ndim == 0 else out


def bezier_derivative(curve: BezierCurve) -> BezierCurve:
    d = curve.degree
    if d < 1:
        raise GeometryError("degree-0 curve has no derivative curve")
    cp = curve.control_points
    return BezierCurve(d * (cp[1:] - cp[:-1]))


def degree_elevate(curve: BezierCurve, times: int = 1) -> BezierCurve:
    cp = curve.control_points
    for _ in range(times):
        d = cp.shape[0] - 1
        a = np.arange(1, d + 1)[:, None] / (d + 1)
        mid = a * cp[:-1] + (1 - a) * cp[1:]
        cp = np.vstack([cp[:1], mid, cp[-1:]])
    return BezierCurve(cp)


def elevation_matrix(degree: int, target: int) -> np.ndarray:
    """Matrix E with elevated_cp = E @ cp (target >= degree)."""
    E = np.eye(degree + 1)
    for d in range(degree, target):
        a = np.arange(1, d + 1) / (d + 1)
        step = np.zeros((d + 2, d + 1))
        step[0, 0] = 1.0
        step[-1, -1] = 1.0
        for i, ai in enumerate(a, start=1):
            step[i, i - 1] = ai
            step[i, i] = 1 - ai
        E = step @ E
    return E


# ----------------------------------------------------------- Box / polytope

@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.shape != hi.shape:
            raise GeometryError("box bounds differ in shape")
        if np.any(lo > hi):
            raise GeometryError(f"box lower > upper: {lo} {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_center(cls, center, half_widths) -> "Box":
        c = np.asarray(center, float)
        w = np.asarray(half_widths, float)
        return cls(c - w, c + w)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def vertices(self) -> np.ndarray:
        """All 2^n corners, ordered like itertools.product over (lower, upper)."""
        return np.array(list(itertools.product(*zip(self.lower, self.upper))), dtype=float)

    def contains(self, pts, tol: float = NUMERIC.containment_tol):
        pts = np.asarray(pts, float)
        ok = np.all((pts >= self.lower - tol) & (pts <= self.upper + tol), axis=-1)
        return ok

    def to_hpolytope(self) -> "HPolytope":
        n = self.dim
        H = np.vstack([np.eye(n), -np.eye(n)])
        b = np.concatenate([self.upper, -self.lower])
        return HPolytope(H, b)

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "type": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class HPolytope:
    """{x : H x <= b}; rows are scaled to unit norm so b - Hx is a distance."""
    H: np.ndarray
    b: np.ndarray
    name: str = ""

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if H.shape[0] < 1 or H.shape[0] != b.size:
            raise GeometryError("polytope needs m >= 1 rows with matching b")
        norms = np.linalg.norm(H, axis=1)
        if np.any(norms <= 0):
            raise GeometryError("polytope has a zero row")
        H = H / norms[:, None]
        b = b / norms
        H.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def n_faces(self) -> int:
        return self.H.shape[0]

    def margins(self, pts) -> np.ndarray:
        """b_f - H_f x for every face; last axis indexes faces."""
        pts = np.asarray(pts, float)
        return self.b - pts @ self.H.T

    def inside_margin(self, pts):
        return np.min(self.margins(pts), axis=-1)

    def outside_margin(self, pts):
        return np.max(-self.margins(pts), axis=-1)

    def contains(self, pts, tol: float = NUMERIC.containment_tol):
        return self.inside_margin(pts) >= -tol

    def bounding_box(self) -> Box:
        from scipy.optimize import linprog

        n = self.dim
        lo, hi = np.empty(n), np.empty(n)
        for i in range(n):
            c = np.zeros(n)
            c[i] = 1.0
            r1 = linprog(c, A_ub=self.H, b_ub=self.b, bounds=[(None, None)] * n, method="highs")
            r2 = linprog(-c, A_ub=self.H, b_ub=self.b, bounds=[(None, None)] * n, method="highs")
            if r1.status != 0 or r2.status != 0:
                raise GeometryError("polytope is empty or unbounded")
            lo[i], hi[i] = r1.x[i], r2.x[i]
        return Box(lo, hi)

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "type": "hpolytope", "H": self.H.tolist(), "b": self.b.tolist()}


# ----------------------------------------------------------------- Zonotope

@dataclass(frozen=True)
class Zonotope:
    center: np.ndarray
    generators: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float)).copy()
        G = np.asarray(self.generators, dtype=float)
        if G.size == 0:
            G = np.zeros((c.size, 0))
        G = np.array(G.reshape(c.size, -1))
        c.setflags(write=False)
        G.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", G)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def order(self) -> int:
        return self.generators.shape[1]

    def sample(self, n: int, rng=None) -> np.ndarray:
        rng = np.random.default_rng(rng)
        xi = rng.uniform(-1.0, 1.0, size=(n, self.order))
        return self.center + xi @ self.generators.T

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "type": "zonotope", "center": self.center.tolist(),
                "generators": self.generators.tolist()}


def interval_hull(z: Zonotope) -> Box:
    r = np.sum(np.abs(z.generators), axis=1)
    return Box(z.center - r, z.center + r)


def zonotope_linear_map(M, z: Zonotope) -> Zonotope:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != z.dim:
        raise GeometryError(f"map of shape {M.shape} cannot act on dimension {z.dim}")
    return Zonotope(M @ z.center, M @ z.generators)


def double_integrator_transition(dt: float, n: int = 2) -> np.ndarray:
    """I + A dt for the state [p; v] with p, v in R^n (exact for this A)."""
    M = np.eye(2 * n)
    M[:n, n:] = dt * np.eye(n)
    return M


# -------------------------------------------------------------- PhasedPath

LABELS = ("free", "pre_impact", "post_impact")


@dataclass(frozen=True)
class PhasedPath:
    """Spatial curve r(s) with temporal curve h(s); p(h(s)) = r(s)."""
    spatial: BezierCurve
    temporal: BezierCurve
    label: str = "free"

    def __post_init__(self):
        if self.temporal.dim != 1:
            raise GeometryError("temporal curve must be one-dimensional")
        if self.label not in LABELS:
            raise GeometryError(f"unknown segment label {self.label!r}")

    @property
    def t0(self) -> float:
        return float(self.temporal.control_points[0, 0])

    @property
    def t1(self) -> float:
        return float(self.temporal.control_points[-1, 0])

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    def with_label(self, label: str) -> "PhasedPath":
        return PhasedPath(self.spatial, self.temporal, label)

    def is_monotone(self, hdot_min: float = 0.0) -> bool:
        if self.temporal.degree == 0:
            return False
        return bool(np.all(bezier_derivative(self.temporal).control_points > hdot_min))

    def s_at_time(self, t):
        """Invert h by safeguarded Newton iterations (h is increasing)."""
        t = np.asarray(t, dtype=float)
        tt = np.clip(np.atleast_1d(t), self.t0, self.t1)
        hcp = self.temporal.control_points[:, 0]
        d = hcp.size - 1
        if d == 1:
            s = (tt - hcp[0]) / (hcp[1] - hcp[0])
        else:
            dcp = d * np.diff(hcp)
            lo = np.zeros_like(tt)
            hi = np.ones_like(tt)
            s = (tt - self.t0) / max(self.duration, 1e-300)
            for _ in range(60):
                B = bernstein_matrix(d, s)
                f = B @ hcp - tt
                lo = np.where(f < 0, s, lo)
                hi = np.where(f > 0, s, hi)
                fp = bernstein_matrix(d - 1, s) @ dcp
                step = np.where(fp > 0, f / np.where(fp > 0, fp, 1.0), 0.0)
                s_new = s - step
                bad = (s_new <= lo) | (s_new >= hi) | (fp <= 0)
                s_new = np.where(bad, 0.5 * (lo + hi), s_new)
                if np.max(np.abs(s_new - s)) < 1e-15:
                    s = s_new
                    break
                s = s_new
        s = np.clip(s, 0.0, 1.0)
        return s[0] if t.ndim == 0 else s

    def position(self, s):
        return bezier_eval(self.spatial, s)

    def velocity(self, s):
        return phased_velocity(self, s)

    def acceleration(self, s):
        """p'' = (r'' h' - r' h'') / h'^3."""
        s_arr = np.atleast_1d(np.asarray(s, float))
        rd = _deriv_eval(self.spatial, 1, s_arr)
        rdd = _deriv_eval(self.spatial, 2, s_arr)
        hd = _deriv_eval(self.temporal, 1, s_arr)[:, 0]
        hdd = _deriv_eval(self.temporal, 2, s_arr)[:, 0]
        if np.any(hd <= NUMERIC.hdot_min * 1e-3):
            raise SingularPhaseError("temporal derivative vanishes")
        out = (rdd * hd[:, None] - rd * hdd[:, None]) / hd[:, None] ** 3
        return out[0] if np.ndim(s) == 0 else out

    def state_at_time(self, t):
        s = self.s_at_time(t)
        return self.position(s), self.velocity(s)

    def to_dict(self) -> dict:
        return {"spatial": self.spatial.to_dict(), "temporal": self.temporal.to_dict(), "label": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> "PhasedPath":
        return cls(BezierCurve.from_dict(d["spatial"]), BezierCurve.from_dict(d["temporal"]),
                   d.get("label", "free"))

    def restrict_time(self, ta: float, tb: float) -> "PhasedPath":
        sa, sb = float(self.s_at_time(ta)), float(self.s_at_time(tb))
        return PhasedPath(self.spatial.restrict(sa, sb), self.temporal.restrict(sa, sb), self.label)


def _deriv_eval(curve: BezierCurve, order: int, s: np.ndarray) -> np.ndarray:
    c = curve
    for _ in range(order):
        if c.degree == 0:
            return np.zeros((s.size, curve.dim))
        c = bezier_derivative(c)
    return bernstein_matrix(c.degree, s) @ c.control_points


def phased_velocity(path: PhasedPath, s):
    """Physical velocity r'(s) / h'(s)."""
    s_arr = np.atleast_1d(np.asarray(s, float))
    if np.any(s_arr < -NUMERIC.eval_tol) or np.any(s_arr > 1 + NUMERIC.eval_tol):
        raise GeometryError(f"phase outside [0, 1]: {s}")
    s_arr = np.clip(s_arr, 0.0, 1.0)
    rd = _deriv_eval(path.spatial, 1, s_arr)
    hd = _deriv_eval(path.temporal, 1, s_arr)[:, 0]
    if np.any(hd <= NUMERIC.eval_tol):
        raise SingularPhaseError(f"h'(s) <= tolerance at s={s}")
    v = rd / hd[:, None]
    return v[0] if np.ndim(s) == 0 else v


def endpoint_derivatives(curve: BezierCurve):
    """(r'(0), r'(1)) from the first and last control point differences."""
    cp = curve.control_points
    d = curve.degree
    return d * (cp[1] - cp[0]), d * (cp[-1] - cp[-2])


def linear_path(p0, p1, t0: float, t1: float, label: str = "free") -> PhasedPath:
    return PhasedPath(BezierCurve([p0, p1]), BezierCurve([[t0], [t1]]), label)


# ------------------------------------------------------------ serialization

def geometry_to_json(obj) -> dict:
    if isinstance(obj, BezierCurve):
        return {"schema": SCHEMA, "type": "bezier", **obj.to_dict()}
    if isinstance(obj, PhasedPath):
        return {"schema": SCHEMA, "type": "phased_path", **obj.to_dict()}
    if isinstance(obj, (Box, HPolytope, Zonotope)):
        return obj.to_dict()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def geometry_from_json(d: dict):
    if d.get("schema") != SCHEMA:
        raise GeometryError(f"unsupported schema {d.get('schema')!r}")
    kind = d.get("type")
    if kind == "bezier":
        return BezierCurve.from_dict(d)
    if kind == "phased_path":
        return PhasedPath.from_dict(d)
    if kind == "box":
        return Box(d["lower"], d["upper"])
    if kind == "hpolytope":
        return HPolytope(d["H"], d["b"])
    if kind == "zonotope":
        return Zonotope(d["center"], np.array(d["generators"], float))
    raise GeometryError(f"unknown geometry type {kind!r}")


def region_from_spec(spec) -> HPolytope:
    """Scenario region: {"box": [[lo...], [hi...]]} or {"H": ..., "b": ...}."""
    if isinstance(spec, HPolytope):
        return spec
    if isinstance(spec, Box):
        return spec.to_hpolytope()
    if "box" in spec:
        lo, hi = spec["box"]
        return Box(lo, hi).to_hpolytope()
    return HPolytope(spec["H"], spec["b"])


def bezier_bounding_box(curve: BezierCurve) -> Box:
    cp = curve.control_points
    return Box(cp.min(axis=0), cp.max(axis=0))


def hull_of_boxes(boxes: Iterable[Box]) -> Box:
    boxes = list(boxes)
    return Box(np.min([b.lower for b in boxes], axis=0), np.max([b.upper for b in boxes], axis=0))
