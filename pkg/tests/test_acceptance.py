"""End-to-end acceptance checks. Each test prints one PASS/FAIL line and the
full list is repeated in the terminal summary."""
import hashlib
import time

import numpy as np
import pytest

from impactplan.cli import RunConfig, cmd_simulate
from impactplan.impact import BodyParams, cylinder_impact, point_impact
from impactplan.mip import solve
from impactplan.planner import SIGMAS, monitored_robustness
from impactplan.sim import SimConfig, run_closed_loop, tube_trials
from impactplan.stl import robustness

from conftest import SCENARIOS
from oracles import enumerate_mip, grid_robustness, random_formula, random_mip, random_signal

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]


def failed(checks):
    bad = [k for k, v in checks.items() if not v]
    return f"; failed: {', '.join(bad)}" if bad else ""


def test_criterion_1_impact_law_suite(verdict):
    rng = np.random.default_rng(2024)
    n = 10_000
    mR, mO = rng.uniform(0.5, 30, n), rng.uniform(0.5, 30, n)
    e = rng.choice([1.0, 0.0, 0.3, 0.8], n)
    vR, vO = rng.uniform(-2, 2, (n, 2)), rng.uniform(-2, 2, (n, 2))
    th = rng.uniform(-np.pi, np.pi, n)
    t0 = time.perf_counter()
    worst = {"momentum": 0.0, "restitution": 0.0, "energy": 0.0}
    for k in range(n):
        pR, pO = BodyParams(mR[k], 0.15, e[k]), BodyParams(mO[k], 0.15, e[k])
        # point law along the relative velocity, disc law along the center line
        a, b = point_impact(vR[k], vO[k], pR, pO)
        nrm = np.array([np.cos(th[k]), np.sin(th[k])])
        c, d, _ = cylinder_impact(np.zeros(2), 0.3 * nrm, vR[k], vO[k], pR, pO)
        for (ra, rb), axis in (((a, b), None), ((c, d), nrm)):
            p0 = mR[k] * vR[k] + mO[k] * vO[k]
            worst["momentum"] = max(worst["momentum"], float(np.abs(mR[k] * ra + mO[k] * rb - p0).max()))
            rel0, rel1 = vR[k] - vO[k], ra - rb
            if axis is not None:
                rel0, rel1 = rel0 @ axis, rel1 @ axis
            worst["restitution"] = max(worst["restitution"], float(np.abs(rel1 + e[k] * rel0).max()))
            if e[k] == 1.0:
                ke0 = mR[k] * vR[k] @ vR[k] + mO[k] * vO[k] @ vO[k]
                ke1 = mR[k] * ra @ ra + mO[k] * rb @ rb
                worst["energy"] = max(worst["energy"], abs(0.5 * (ke1 - ke0)))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-10 and dt < 1.0
    verdict(1, ok, f"{2 * n} impacts, worst residuals "
            + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {dt:.2f} s (< 1 s)")
    assert ok


def test_criterion_2_stl_monitor_vs_dense_oracle(verdict):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    gaps = []
    for _ in range(200):
        sig, f = random_signal(rng), random_formula(rng, 4)
        gaps.append(abs(robustness(f, sig) - grid_robustness(f, sig, 4.0)))
    dt = time.perf_counter() - t0
    ok = max(gaps) <= 1e-4 and dt < 30
    verdict(2, ok, f"200 signal/formula pairs, max gap {max(gaps):.2e} (<= 1e-4), {dt:.1f} s (< 30 s)")
    assert ok


def test_criterion_3_mip_vs_enumeration(verdict):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst, solver_time, counts = 0.0, 0.0, [0, 0]
    for k in range(50):
        quad = k % 2 == 1
        m = random_mip(rng, int(rng.integers(4, 13)), quadratic=quad)
        ts = time.perf_counter()
        s = solve(m)
        solver_time += time.perf_counter() - ts
        ref = enumerate_mip(m)
        got = (-1.0 if m.sense == "max" else 1.0) * s.objective if s.status == "optimal" else np.inf
        err = abs(got - ref) if np.isfinite(ref) or np.isfinite(got) else 0.0
        worst = max(worst, err)
        counts[quad] += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 300
    verdict(3, ok, f"{counts[0]} MILP + {counts[1]} MIQP, max objective gap {worst:.1e} (<= 1e-6), "
            f"solver {solver_time:.1f} s, total with enumeration {dt:.0f} s (< 300 s)")
    assert ok


def test_criterion_4_corridor_spatial(corridor, verdict):
    plan, sc = corridor.plan, corridor.sc
    rho_mon = monitored_robustness(plan, sc.spec)
    checks = {
        "objective = monitored rho": abs(plan.objective - rho_mon) <= 1e-5,
        "rho > 0": plan.rho > 0,
        ">= 2 impacts": len(plan.events) >= 2,
        "rho in [0.2, 0.6]": 0.2 <= plan.rho <= 0.6,
        "solve < 120 s": corridor.seconds < 120,
    }
    ok = all(checks.values())
    verdict(4, ok, f"rho {plan.rho:.4f} m, monitored {rho_mon:.4f} m, {len(plan.events)} impacts, "
            f"{corridor.seconds:.1f} s" + failed(checks))
    assert ok, checks


def test_criterion_5_impact_robust_corridor(corridor_robust, verdict):
    plan = corridor_robust.plan
    end_err = 0.0
    slope_err = 0.0
    for rn, i, on, j in plan.stats["impacts"]:
        C, W, _, _ = plan.hulls[on][j]
        for b, sg in enumerate(SIGMAS):
            end = plan.bundles[rn][b][i - 1].spatial.control_points[-1]
            end_err = max(end_err, float(np.abs(end - (C + np.asarray(sg) * W)).max()))
        seg = plan.tube[on][j]
        # velocity spread is zero before the first impact, so the slope is exactly 2 delta
        slope_err = max(slope_err, float(np.abs(seg.width_slope() - 2 * plan.delta).max()))
    checks = {
        "delta > 0": plan.delta > 0,
        "has impacts": bool(plan.stats["impacts"]),
        "endpoints": end_err <= 1e-6,
        "width slope": slope_err <= 1e-6,
        "delta within x/3 of 0.019": 0.019 / 3 <= plan.delta <= 0.019 * 3,
        "solve < 600 s": corridor_robust.seconds < 600,
    }
    ok = all(checks.values())
    verdict(5, ok, f"delta {plan.delta:.4f} m/s, endpoint error {end_err:.1e}, slope error {slope_err:.1e}, "
            f"{corridor_robust.seconds:.0f} s" + failed(checks))
    assert ok, checks


def test_criterion_6_closed_loop_corridor(corridor, verdict):
    sc, plan = corridor.sc, corridor.plan
    t0 = time.perf_counter()
    log = run_closed_loop(sc, plan, SimConfig())
    dt = time.perf_counter() - t0
    rep = log.report
    goal = sc.regions["goal"]
    entered = bool(np.any(goal.contains(log.positions("O1"), tol=0.0)))
    errs = [i["target_error"] for i in rep["impacts"] if "target_error" in i]
    checks = {
        "object enters goal": entered,
        "executed rho >= 0": rep["rho"] >= 0,
        "impacts with targets": len(errs) == len(plan.events),
        "target error <= 0.05": bool(errs) and max(errs) <= 0.05,
        "runtime < 60 s": dt < 60,
    }
    ok = all(checks.values())
    verdict(6, ok, f"executed rho {rep['rho']:.4f} m, target errors "
            + ", ".join(f"{x:.4f}" for x in errs) + f" m/s, {dt:.1f} s" + failed(checks))
    assert ok, checks


def test_criterion_7_tube_property(corridor_robust, verdict):
    plan, sc = corridor_robust.plan, corridor_robust.sc
    at = tube_trials(plan, sc, plan.delta, n=100, seed=11)
    over = tube_trials(plan, sc, 3 * plan.delta, n=100, seed=11)
    ok = at["inside"] >= 99 and over["inside"] < over["runs"]
    verdict(7, ok, f"inside at delta: {at['inside']}/100 (>= 99), inside at 3 delta: {over['inside']}/100 (< 100)")
    assert ok


def test_criterion_8_replanning_corrects_finite_size(throw_catch, verdict):
    sc, plan = throw_catch.sc, throw_catch.plan

    def first_direction_error(replan):
        rep = run_closed_loop(sc, plan, SimConfig(radius=0.15, replan=replan)).report
        planned = [i for i in rep["impacts"] if "direction_error" in i]
        return planned[0]["direction_error"] if planned else np.pi

    with_rp, without = first_direction_error(True), first_direction_error(False)
    ratio = without / max(with_rp, 1e-12)
    ok = ratio >= 10
    verdict(8, ok, f"first-impact direction error {without:.4f} rad without replanning, "
            f"{with_rp:.4f} rad with, reduction x{ratio:.0f} (>= 10)")
    assert ok


def test_criterion_9_simulate_determinism(throw_catch, tmp_path, verdict, capsys):
    plan_path = tmp_path / "plan.json"
    throw_catch.plan.save(plan_path)
    digests = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        cfg = RunConfig(SCENARIOS / "throw_and_catch.json", out, seed=7, disturbance=0.01,
                        extra={"radius": 0.15, "replan": True})
        assert cmd_simulate(cfg, plan_path) == 0
        digests.append(tuple(hashlib.sha256((out / f).read_bytes()).hexdigest() for f in ("run.csv", "run.json")))
    capsys.readouterr()
    ok = digests[0] == digests[1]
    verdict(9, ok, f"two seeded runs, csv/json sha256 {'identical' if ok else 'differ'} ({digests[0][0][:12]})")
    assert ok
