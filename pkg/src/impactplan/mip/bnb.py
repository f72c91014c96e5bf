"""Best-bound branch and bound over LP/QP relaxations, plus a HiGHS backend."""
from __future__ import annotations

import heapq
import logging
import math
import time

import numpy as np

from .model import MipError, MipModel, MipSolution
from .qp import solve_qp
from .simplex import solve_lp

log = logging.getLogger("impactplan.mip")

INT_TOL = 1e-6


def _relax(arr, lb, ub, quadratic, tol):
    """Solve the continuous relaxation with node bounds. Returns (status, x, obj)."""
    if np.any(lb > ub + 1e-12):
        return "infeasible", None, math.inf
    if not quadratic:
        r = solve_lp(arr["c"], arr["A_ub"], arr["b_ub"], arr["A_eq"], arr["b_eq"], lb, ub, tol)
        return r.status, r.x, r.objective
    n = lb.size
    # bounds become inequality rows for the active-set method
    I = np.eye(n)
    fin_u = np.isfinite(ub)
    fin_l = np.isfinite(lb)
    fixed = fin_u & fin_l & (ub - lb <= 1e-12)
    A_in = np.vstack([arr["A_ub"], I[fin_u & ~fixed], -I[fin_l & ~fixed]])
    b_in = np.concatenate([arr["b_ub"], ub[fin_u & ~fixed], -lb[fin_l & ~fixed]])
    A_eq = np.vstack([arr["A_eq"], I[fixed]])
    b_eq = np.concatenate([arr["b_eq"], lb[fixed]])
    start = solve_lp(np.zeros(n), arr["A_ub"], arr["b_ub"], arr["A_eq"], arr["b_eq"], lb, ub, tol)
    if start.status != "optimal":
        return ("infeasible" if start.status == "infeasible" else start.status), None, math.inf
    r = solve_qp(arr["Q"], arr["c"], A_eq, b_eq, A_in, b_in, x0=start.x, tol=tol)
    return r.status, r.x, r.objective


def branch_and_bound(model: MipModel, time_limit: float = math.inf, gap: float = 1e-6,
                     tol: float = 1e-9, record_nodes: bool = False) -> MipSolution:
    model.check_psd()
    arr = model.arrays(dense=True)
    quadratic = model.is_quadratic
    sgn, c0 = arr["sign"], arr["c0"]
    binaries = np.array(model.binaries, dtype=int)
    t_start = time.monotonic()
    counter = 0
    heap = [(-math.inf, counter, arr["lb"].copy(), arr["ub"].copy())]
    best_x, best_obj = None, math.inf
    nodes = warnings = 0
    node_log = []
    status = "optimal"
    unbounded = False
    while heap:
        if time.monotonic() - t_start > time_limit:
            status = "time_limit"
            break
        bound, _, lb, ub = heapq.heappop(heap)
        if bound >= best_obj - gap:
            continue
        nodes += 1
        try:
            st, x, obj = _relax(arr, lb, ub, quadratic, tol)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            log.warning("node relaxation failed: %s", exc)
            warnings += 1
            continue
        if record_nodes:
            node_log.append((lb[binaries].copy(), ub[binaries].copy(), st, obj))
        if st == "infeasible":
            continue
        if st == "unbounded":
            unbounded = True
            break
        if st != "optimal":
            warnings += 1
            continue
        if obj >= best_obj - gap:
            continue
        if binaries.size:
            xb = x[binaries]
            frac = np.minimum(xb - np.floor(xb), np.ceil(xb) - xb)
            k = int(np.argmax(frac))           # first index wins ties
        if binaries.size == 0 or frac[k] <= INT_TOL:
            xr = x.copy()
            if binaries.size:
                xr[binaries] = np.round(xr[binaries])
            best_x, best_obj = xr, obj
            continue
        j = binaries[k]
        for val in (0.0, 1.0):
            lb2, ub2 = lb.copy(), ub.copy()
            lb2[j] = ub2[j] = val
            counter += 1
            heapq.heappush(heap, (obj, counter, lb2, ub2))
    if unbounded:
        return MipSolution("unbounded", None, nodes=nodes, warnings=warnings, node_log=node_log)
    open_bound = min((h[0] for h in heap), default=math.inf)
    if best_x is None:
        st = "time_limit" if status == "time_limit" else "infeasible"
        return MipSolution(st, None, nodes=nodes, warnings=warnings, node_log=node_log,
                           bound=sgn * (open_bound + c0) if math.isfinite(open_bound) else math.nan)
    bound = min(open_bound, best_obj) if status == "time_limit" else best_obj
    obj = sgn * (best_obj + c0)
    return MipSolution(status, best_x, objective=obj, bound=sgn * (bound + c0),
                       gap=abs(best_obj - bound), nodes=nodes, warnings=warnings, node_log=node_log)


def solve_highs(model: MipModel, time_limit: float = math.inf, gap: float = 1e-6) -> MipSolution:
    """Solve a MILP (linear objective) with scipy's HiGHS interface."""
    from scipy.optimize import Bounds, LinearConstraint, milp

    if model.is_quadratic:
        raise MipError("the HiGHS backend only handles linear objectives")
    arr = model.arrays(dense=False)
    cons = []
    if arr["A_ub"].shape[0]:
        cons.append(LinearConstraint(arr["A_ub"], -np.inf, arr["b_ub"]))
    if arr["A_eq"].shape[0]:
        cons.append(LinearConstraint(arr["A_eq"], arr["b_eq"], arr["b_eq"]))
    opts = {"mip_rel_gap": 0.0, "presolve": True}
    if math.isfinite(time_limit):
        opts["time_limit"] = float(time_limit)
    res = milp(arr["c"], constraints=cons, integrality=arr["integrality"].astype(int),
               bounds=Bounds(arr["lb"], arr["ub"]), options=opts)
    sgn, c0 = arr["sign"], arr["c0"]
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    if res.status == 0 and res.x is not None:
        x = np.asarray(res.x, float)
        b = arr["integrality"]
        x[b] = np.round(x[b])
        obj = sgn * (float(arr["c"] @ res.x) + c0)
        return MipSolution("optimal", x, objective=obj, bound=obj,
                           gap=float(getattr(res, "mip_gap", 0.0) or 0.0), nodes=nodes)
    if res.status == 1:
        if res.x is not None:
            x = np.asarray(res.x, float)
            x[arr["integrality"]] = np.round(x[arr["integrality"]])
            obj = sgn * (float(arr["c"] @ res.x) + c0)
            return MipSolution("time_limit", x, objective=obj, gap=float(res.mip_gap or math.nan),
                               nodes=nodes, message=res.message)
        return MipSolution("time_limit", None, nodes=nodes, message=res.message)
    if res.status == 2:
        return MipSolution("infeasible", None, nodes=nodes, message=res.message)
    if res.status == 3:
        return MipSolution("unbounded", None, nodes=nodes, message=res.message)
    return MipSolution("error", None, nodes=nodes, message=str(res.message))


def solve(model: MipModel, time_limit: float = math.inf, gap: float = 1e-6,
          backend: str = "builtin", **kw) -> MipSolution:
    """Solve a model. backend: 'builtin' (branch and bound over the built-in
    simplex / active-set QP) or 'highs' (MILPs only)."""
    if backend == "builtin":
        return branch_and_bound(model, time_limit, gap, **kw)
    if backend == "highs":
        return solve_highs(model, time_limit, gap)
    raise MipError(f"unknown backend {backend!r}")
