"""Dense bounded-variable revised simplex (two phases)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INF = math.inf


@dataclass
class LPResult:
    status: str          # optimal | infeasible | unbounded | iteration_limit
    x: np.ndarray | None
    objective: float
    iterations: int = 0


class _Tableau:
    def __init__(self, A, b, lb, ub, tol):
        self.A, self.b, self.lb, self.ub, self.tol = A, b, lb, ub, tol
        m, n = A.shape
        self.m, self.n = m, n
        self.x = np.zeros(n)
        self.basis = np.zeros(m, dtype=int)
        self.is_basic = np.zeros(n, dtype=bool)
        self.degenerate = 0
        self.bland = False
        self.iterations = 0

    def _nonbasic_start(self, j):
        if math.isfinite(self.lb[j]):
            return self.lb[j]
        if math.isfinite(self.ub[j]):
            return self.ub[j]
        return 0.0

    def recompute_basic(self):
        B = self.A[:, self.basis]
        xN = self.x.copy()
        xN[self.basis] = 0.0
        self.x[self.basis] = np.linalg.solve(B, self.b - self.A @ xN)

    def run(self, c, max_iter):
        A, lb, ub, tol = self.A, self.lb, self.ub, self.tol
        while self.iterations < max_iter:
            self.iterations += 1
            B = A[:, self.basis]
            try:
                y = np.linalg.solve(B.T, c[self.basis])
            except np.linalg.LinAlgError:
                return "singular"
            d = c - A.T @ y
            d[self.is_basic] = 0.0
            at_lb = np.isclose(self.x, lb, atol=tol, rtol=0) & np.isfinite(lb)
            at_ub = np.isclose(self.x, ub, atol=tol, rtol=0) & np.isfinite(ub)
            fixed = at_lb & at_ub
            up = (d < -tol) & ~at_ub & ~fixed
            down = (d > tol) & ~at_lb & ~fixed
            cand = np.nonzero((up | down) & ~self.is_basic)[0]
            if cand.size == 0:
                return "optimal"
            j = int(cand[0]) if self.bland else int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if up[j] else -1.0
            w = np.linalg.solve(B, A[:, j])
            # basic variables change by -direction * w * theta
            delta = -direction * w
            theta, leave, leave_to = ub[j] - lb[j], -1, None
            xb = self.x[self.basis]
            lbb, ubb = lb[self.basis], ub[self.basis]
            with np.errstate(divide="ignore", invalid="ignore"):
                dec = delta < -tol
                inc = delta > tol
                lim = np.full(self.m, INF)
                lim[dec] = (xb[dec] - lbb[dec]) / -delta[dec]
                lim[inc] = (ubb[inc] - xb[inc]) / delta[inc]
            lim = np.maximum(lim, 0.0)
            if lim.size:
                best = np.min(lim)
                if best < theta:
                    ties = np.nonzero(lim <= best + tol)[0]
                    if self.bland:
                        r = int(ties[np.argmin(self.basis[ties])])
                    else:
                        r = int(ties[np.argmax(np.abs(delta[ties]))])
                    theta, leave = float(lim[r]), r
                    leave_to = lbb[r] if delta[r] < 0 else ubb[r]
            if not math.isfinite(theta):
                return "unbounded"
            if theta <= tol:
                self.degenerate += 1
                if self.degenerate > 1000:
                    self.bland = True
            self.x[j] += direction * theta
            self.x[self.basis] = xb + delta * theta
            if leave >= 0:
                out = self.basis[leave]
                self.x[out] = leave_to
                self.is_basic[out] = False
                self.basis[leave] = j
                self.is_basic[j] = True
                if self.iterations % 50 == 0:
                    self.recompute_basic()
        return "iteration_limit"


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, lb=None, ub=None,
             tol: float = 1e-9, max_iter: int | None = None) -> LPResult:
    """min c.x s.t. A_ub x <= b_ub, A_eq x = b_eq, lb <= x <= ub."""
    c = np.asarray(c, float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, float).reshape(-1, n)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, float)
    lb = np.full(n, 0.0) if lb is None else np.asarray(lb, float)
    ub = np.full(n, INF) if ub is None else np.asarray(ub, float)
    if np.any(lb > ub + tol):
        return LPResult("infeasible", None, INF)
    mu, me = A_ub.shape[0], A_eq.shape[0]
    m = mu + me
    # equality form: [A_ub I; A_eq 0] [x; s] = b, s >= 0
    A = np.zeros((m, n + mu))
    A[:mu, :n] = A_ub
    A[:mu, n:] = np.eye(mu)
    A[mu:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    L = np.concatenate([lb, np.zeros(mu)])
    U = np.concatenate([ub, np.full(mu, INF)])
    nn = n + mu
    if m == 0:
        x = np.where(c > 0, lb, np.where(c < 0, ub, np.where(np.isfinite(lb), lb, np.where(np.isfinite(ub), ub, 0.0))))
        if np.any(~np.isfinite(x)):
            return LPResult("unbounded", None, -INF)
        return LPResult("optimal", x, float(c @ x))
    max_iter = max_iter or 50 * (m + nn) + 1000
    # phase 1 with one artificial per row
    T = _Tableau(np.hstack([A, np.zeros((m, m))]), b,
                 np.concatenate([L, np.zeros(m)]), np.concatenate([U, np.full(m, INF)]), tol)
    for j in range(nn):
        T.x[j] = T._nonbasic_start(j)
    r = b - A @ T.x[:nn]
    sgn = np.where(r >= 0, 1.0, -1.0)
    T.A[:, nn:] = np.diag(sgn)
    T.x[nn:] = np.abs(r)
    T.basis = np.arange(nn, nn + m)
    T.is_basic[nn:] = True
    c1 = np.concatenate([np.zeros(nn), np.ones(m)])
    st = T.run(c1, max_iter)
    if st in ("singular", "iteration_limit"):
        return LPResult("iteration_limit", None, math.nan, T.iterations)
    scale = max(1.0, float(np.max(np.abs(b))) if b.size else 1.0)
    if np.sum(T.x[nn:]) > 1e-7 * scale:
        return LPResult("infeasible", None, INF, T.iterations)
    # artificials stay but are pinned to zero
    T.x[nn:] = 0.0
    T.ub[nn:] = 0.0
    T.recompute_basic()
    c2 = np.concatenate([c, np.zeros(mu + m)])
    T.degenerate, T.bland = 0, False
    st = T.run(c2, max_iter + T.iterations)
    if st == "unbounded":
        return LPResult("unbounded", None, -INF, T.iterations)
    if st != "optimal":
        return LPResult("iteration_limit", None, math.nan, T.iterations)
    x = T.x[:n].copy()
    return LPResult("optimal", x, float(c @ x), T.iterations)


def feasible_point(A_ub, b_ub, A_eq, b_eq, lb, ub, tol=1e-9):
    """Any vertex of the feasible set (phase 1 only), or None."""
    n = np.asarray(lb).size
    res = solve_lp(np.zeros(n), A_ub, b_ub, A_eq, b_eq, lb, ub, tol)
    return res.x if res.status == "optimal" else None
