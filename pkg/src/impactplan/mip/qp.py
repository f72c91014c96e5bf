"""Primal active-set method for convex QPs, null-space formulation.

    min 1/2 x.Q.x + c.x   s.t.  A_eq x = b_eq,  A_in x <= b_in

Q must be positive semidefinite. Zero-curvature directions inside the
working set's null space are followed to the next blocking constraint,
which is what makes LP-like faces (Q singular) work.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from .simplex import feasible_point


@dataclass
class QPResult:
    status: str                 # optimal | infeasible | unbounded | iteration_limit
    x: np.ndarray | None
    objective: float
    iterations: int = 0


def _independent(rows, tol=1e-10):
    """Greedy selection of linearly independent rows (kept order)."""
    keep, basis = [], None
    for k, r in enumerate(rows):
        if basis is None:
            if np.linalg.norm(r) > tol:
                keep.append(k)
                basis = r[None, :]
            continue
        cand = np.vstack([basis, r])
        if np.linalg.matrix_rank(cand, tol=tol * max(1.0, np.abs(cand).max())) > basis.shape[0]:
            keep.append(k)
            basis = cand
    return keep


def solve_qp(Q, c, A_eq=None, b_eq=None, A_in=None, b_in=None, x0=None,
             tol: float = 1e-9, max_iter: int = 5000) -> QPResult:
    Q = np.asarray(Q, float)
    c = np.asarray(c, float)
    n = c.size
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, float)
    A_in = np.zeros((0, n)) if A_in is None else np.asarray(A_in, float).reshape(-1, n)
    b_in = np.zeros(0) if b_in is None else np.asarray(b_in, float)
    me, mi = A_eq.shape[0], A_in.shape[0]

    if x0 is None:
        x0 = feasible_point(A_in, b_in, A_eq, b_eq, np.full(n, -math.inf), np.full(n, math.inf), tol)
        if x0 is None:
            return QPResult("infeasible", None, math.inf)
    x = np.asarray(x0, float).copy()
    feas_tol = 1e-7
    if me and np.max(np.abs(A_eq @ x - b_eq)) > feas_tol * max(1.0, np.abs(b_eq).max()):
        return QPResult("infeasible", None, math.inf)

    def obj(z):
        return float(0.5 * z @ Q @ z + c @ z)

    eq_keep = _independent(list(A_eq)) if me else []
    A_eq = A_eq[eq_keep]
    me = A_eq.shape[0]
    active = []
    if mi:
        slack = b_in - A_in @ x
        on = [int(i) for i in np.nonzero(np.abs(slack) <= 1e-9 * np.maximum(1.0, np.abs(b_in)))[0]]
        rows = [*A_eq, *A_in[on]]
        keep = _independent(rows)
        active = [on[k - me] for k in keep if k >= me]

    for it in range(1, max_iter + 1):
        W = np.vstack([A_eq, A_in[active]]) if (me or active) else np.zeros((0, n))
        g = Q @ x + c
        Z = null_space(W) if W.shape[0] else np.eye(n)
        p = np.zeros(n)
        zero_curv = False
        if Z.shape[1]:
            H = Z.T @ Q @ Z
            gz = Z.T @ g
            w, V = np.linalg.eigh(0.5 * (H + H.T))
            scale = max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
            pos = w > 1e-10 * scale
            gv = V.T @ gz
            flat = ~pos
            if np.any(flat) and np.linalg.norm(gv[flat]) > 1e-11 * max(1.0, np.linalg.norm(g)):
                # descent along a direction of zero curvature
                p = -Z @ (V[:, flat] @ gv[flat])
                zero_curv = True
            else:
                p = -Z @ (V[:, pos] @ (gv[pos] / w[pos]))
        if np.linalg.norm(p) <= 1e-12 * max(1.0, np.linalg.norm(x)):
            if not active:
                return QPResult("optimal", x, obj(x), it)
            # multipliers: g + W^T lam = 0
            lam = np.linalg.lstsq(W.T, -g, rcond=None)[0]
            lam_in = lam[me:]
            k = int(np.argmin(lam_in))
            if lam_in[k] >= -1e-9 * max(1.0, np.linalg.norm(g)):
                return QPResult("optimal", x, obj(x), it)
            active.pop(k)
            continue
        alpha = math.inf if zero_curv else 1.0
        block = -1
        if mi:
            Ap = A_in @ p
            mask = Ap > 1e-12 * max(1.0, np.linalg.norm(p))
            if active:
                mask[active] = False
            if np.any(mask):
                idx = np.nonzero(mask)[0]
                steps = np.maximum((b_in[idx] - A_in[idx] @ x) / Ap[idx], 0.0)
                j = int(np.argmin(steps))
                if steps[j] < alpha:
                    alpha, block = float(steps[j]), int(idx[j])
        if not math.isfinite(alpha):
            return QPResult("unbounded", None, -math.inf, it)
        x = x + alpha * p
        if block >= 0:
            active.append(block)
    return QPResult("iteration_limit", x, obj(x), max_iter)
