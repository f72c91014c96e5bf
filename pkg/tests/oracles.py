"""Independent reference implementations used by the tests."""
from __future__ import annotations

import itertools
import math

import numpy as np

from impactplan.geometry import Box
from impactplan.stl import (Always, And, Eventually, Not, Or, Predicate, Region, Signal, TrueF, FalseF,
                            Until)


# ---------------------------------------------------------------- STL on a grid

def grid_robustness(f, sig: Signal, t_end: float, n: int = 10_000) -> float:
    """Robustness at the signal start from n uniform samples on [t0, t_end].
    Windows are index offsets, so interval bounds should be multiples of the step."""
    ts = np.linspace(sig.t0, t_end, n + 1)
    dt = ts[1] - ts[0]

    def off(x):
        k = x / dt
        return int(round(k))

    def ev(g):
        if isinstance(g, TrueF):
            return np.full(ts.size, math.inf)
        if isinstance(g, FalseF):
            return np.full(ts.size, -math.inf)
        if isinstance(g, Predicate):
            P = sig.position(g.system, ts)
            return P @ np.asarray(g.a) + g.b
        if isinstance(g, Region):
            P = sig.position(g.system, ts)
            d = g.poly.b[None, :] - P @ g.poly.H.T
            return d.min(axis=1) if g.inside else (-d).max(axis=1)
        if isinstance(g, Not):
            return -ev(g.child)
        if isinstance(g, And):
            return np.min([ev(c) for c in g.args], axis=0)
        if isinstance(g, Or):
            return np.max([ev(c) for c in g.args], axis=0)
        if isinstance(g, (Eventually, Always)):
            x = ev(g.child)
            op = np.maximum if isinstance(g, Eventually) else np.minimum
            fill = -math.inf if isinstance(g, Eventually) else math.inf
            out = np.full(ts.size, fill)
            for k in range(off(g.a), off(g.b) + 1):
                sh = np.full(ts.size, fill)
                sh[:ts.size - k] = x[k:]
                out = op(out, sh)
            return out
        if isinstance(g, Until):
            x1, x2 = ev(g.left), ev(g.right)
            run = np.full(ts.size, math.inf)
            out = np.full(ts.size, -math.inf)
            for k in range(0, off(g.b) + 1):
                valid = ts.size - k
                s1 = np.full(ts.size, math.inf)
                s1[:valid] = x1[k:]
                run = np.minimum(run, s1)
                if k >= off(g.a):
                    s2 = np.full(ts.size, -math.inf)
                    s2[:valid] = x2[k:]
                    out = np.maximum(out, np.minimum(s2, run))
            return out
        raise TypeError(type(g))

    return float(ev(f)[0])


def random_signal(rng, systems=("A", "B"), t_end=4.0, step=0.5, amp=0.1):
    ts = np.arange(0.0, t_end + 1e-12, step)
    traces = {s: rng.uniform(-amp, amp, (ts.size, 2)) for s in systems}
    return Signal(ts, traces)


def random_formula(rng, depth, systems=("A", "B"), max_b=0.75, step=0.25):
    """Random formula of nesting depth <= depth with grid-aligned intervals."""
    def interval():
        a = step * rng.integers(0, int(max_b / step) + 1)
        b = a + step * rng.integers(0, int((max_b - a) / step) + 1)
        return float(a), float(b)

    def leaf():
        s = str(rng.choice(systems))
        if rng.random() < 0.6:
            th = rng.uniform(0, 2 * math.pi)
            return Predicate(s, (math.cos(th), math.sin(th)), float(rng.uniform(-0.2, 0.2)))
        c = rng.uniform(-0.2, 0.2, 2)
        w = rng.uniform(0.05, 0.3, 2)
        box = Box(c - w, c + w)
        return Region(s, "r", bool(rng.random() < 0.5), box.to_hpolytope())

    def build(d):
        if d == 0 or rng.random() < 0.15:
            return leaf()
        k = rng.integers(0, 6)
        if k == 0:
            return Not(build(d - 1))
        if k == 1:
            return And((build(d - 1), build(d - 1)))
        if k == 2:
            return Or((build(d - 1), build(d - 1)))
        if k == 3:
            return Eventually(build(d - 1), *interval())
        if k == 4:
            return Always(build(d - 1), *interval())
        return Until(build(d - 1), build(d - 1), *interval())

    return build(depth)


# ---------------------------------------------------------------- MIP enumeration

def enumerate_mip(model) -> float:
    """Optimal (minimization) objective by fixing every binary assignment and
    solving the remaining LP (scipy HiGHS) or QP (cvxopt). inf if infeasible."""
    from scipy.optimize import linprog
    arr = model.arrays(dense=True)
    bins = np.nonzero(arr["integrality"])[0]
    cont = np.nonzero(~arr["integrality"])[0]
    Q = arr["Q"]
    quad = bool(np.any(Q != 0))
    best = math.inf
    for bits in itertools.product((0.0, 1.0), repeat=len(bins)):
        xb = np.array(bits)
        c = arr["c"][cont] + (Q[np.ix_(cont, bins)] @ xb if quad else 0.0)
        const = arr["c"][bins] @ xb + (0.5 * xb @ Q[np.ix_(bins, bins)] @ xb if quad else 0.0) + arr["c0"]
        A_ub, b_ub = arr["A_ub"][:, cont], arr["b_ub"] - arr["A_ub"][:, bins] @ xb
        A_eq, b_eq = arr["A_eq"][:, cont], arr["b_eq"] - arr["A_eq"][:, bins] @ xb
        lb, ub = arr["lb"][cont], arr["ub"][cont]
        if cont.size == 0:
            ok = np.all(b_ub >= -1e-9) and np.all(np.abs(b_eq) <= 1e-9)
            if ok:
                best = min(best, const)
            continue
        if not quad:
            r = linprog(c, A_ub=A_ub if A_ub.size else None, b_ub=b_ub if A_ub.size else None,
                        A_eq=A_eq if A_eq.size else None, b_eq=b_eq if A_eq.size else None,
                        bounds=list(zip(lb, ub)), method="highs")
            if r.status == 0:
                best = min(best, r.fun + const)
            continue
        val = _cvxopt_qp(Q[np.ix_(cont, cont)], c, A_ub, b_ub, A_eq, b_eq, lb, ub)
        if val is not None:
            best = min(best, val + const)
    return best


def _cvxopt_qp(P, q, A_ub, b_ub, A_eq, b_eq, lb, ub):
    from cvxopt import matrix, solvers
    solvers.options["show_progress"] = False
    n = len(q)
    G, h = [A_ub], [b_ub]
    fin_u, fin_l = np.isfinite(ub), np.isfinite(lb)
    G += [np.eye(n)[fin_u], -np.eye(n)[fin_l]]
    h += [ub[fin_u], -lb[fin_l]]
    G, h = np.vstack(G), np.concatenate(h)
    kw = {}
    if A_eq.shape[0]:
        kw = {"A": matrix(A_eq), "b": matrix(b_eq)}
    # tight tolerances first; the interior point method sometimes stalls
    # there, so retry looser before declaring the subproblem infeasible
    for tol in (1e-11, 1e-9):
        solvers.options.update(abstol=tol, reltol=tol, feastol=tol)
        try:
            r = solvers.qp(matrix(P), matrix(q), matrix(G), matrix(h), **kw)
        except (ValueError, ArithmeticError):
            continue
        if r["status"] != "optimal":
            continue
        x = np.array(r["x"]).ravel()
        if np.max(G @ x - h, initial=0) > 1e-6:
            continue
        return float(0.5 * x @ P @ x + q @ x)
    return None


# ---------------------------------------------------------------- contact time

def analytic_contact_time(p1, v1, p2, v2, rsum):
    """First t >= 0 with |(p2 - p1) + (v2 - v1) t| = rsum, or None."""
    d = np.asarray(p2, float) - np.asarray(p1, float)
    w = np.asarray(v2, float) - np.asarray(v1, float)
    a, b, c = w @ w, 2 * d @ w, d @ d - rsum ** 2
    disc = b * b - 4 * a * c
    if a == 0 or disc < 0:
        return None
    t = (-b - math.sqrt(disc)) / (2 * a)
    return t if t >= 0 else None


# ---------------------------------------------------------------- random MIPs

def random_mip(rng, n_bin, n_cont=3, n_rows=6, quadratic=False):
    """Bounded random MILP/MIQP; binaries gate continuous variables via big-M rows."""
    from impactplan.mip import MipModel
    m = MipModel("rand")
    z = [m.add_binary(f"z{i}") for i in range(n_bin)]
    x = [m.add_var(-5.0, 5.0, name=f"x{i}") for i in range(n_cont)]
    allv = z + x
    for _ in range(n_rows):
        a = rng.integers(-4, 5, len(allv)).astype(float)
        rhs = float(rng.uniform(0, 6))
        m.add(sum(float(c) * v for c, v in zip(a, allv)) <= rhs)
    # couple each continuous variable to a binary
    for i, xi in enumerate(x):
        zi = z[i % n_bin]
        m.add(xi <= 2.0 + 3.0 * zi)
    c = rng.normal(size=len(allv))
    obj = sum(float(ci) * v for ci, v in zip(c, allv))
    m.set_objective(obj, "min" if rng.random() < 0.5 else "max")
    if quadratic:
        m.sense = "min"
        L = rng.normal(size=(len(allv), len(allv))) * 0.5
        for k in range(len(allv)):
            m.add_squares([sum(float(L[k, j]) * allv[j] for j in range(len(allv)))], 1.0)
    return m
