import copy
import math

import numpy as np
import pytest

from impactplan.geometry import BezierCurve, PhasedPath
from impactplan.impact import mass_fractions, pair_restitution
from impactplan.mip import solve
from impactplan.planner import (SIGMAS, ExtractionError, Plan, PlanningError, PlanningInfeasible, ScenarioError,
                                encode_impact_robust, encode_spatially_robust, extract_plan,
                                monitored_robustness, nominal_from_vertices, plan_scenario,
                                scenario_from_dict, validate_plan)

TINY = {"name": "tiny", "horizon": [0, 10], "budgets": {"robots": 2, "objects": 2},
        "systems": {"robots": {"R1": {"initial": [0.5, 0.5], "final": [0.5, 0.5]}},
                    "objects": {"O1": {"initial": [2.0, 2.0]}}},
        "workspace": {"box": [[0, 0], [4, 4]]},
        "regions": {"goal": {"box": [[1.5, 1.5], [3.0, 3.0]]}},
        "spec": "G[0,10] inside(O1, goal)"}


def tiny(**over):
    d = copy.deepcopy(TINY)
    d.update(over)
    return scenario_from_dict(d)


# ---------------------------------------------------------------- scenarios

def test_scenario_rejects_bad_input():
    with pytest.raises(ScenarioError):
        scenario_from_dict({k: v for k, v in TINY.items() if k != "spec"})
    with pytest.raises(ScenarioError):
        tiny(horizon=[5, 5])
    with pytest.raises(ScenarioError):
        tiny(spec="G[0,20] inside(O1, goal)")
    with pytest.raises(ScenarioError):
        tiny(spec="G[0,1] inside(O1, nowhere)")
    bad = copy.deepcopy(TINY)
    bad["systems"]["objects"]["O1"]["initial"] = [9.0, 9.0]
    with pytest.raises(ScenarioError):
        scenario_from_dict(bad)


def test_encoders_check_mode():
    sc = tiny()
    m, enc = encode_spatially_robust(sc)
    assert enc.m is m and not enc.robust
    with pytest.raises(PlanningError):
        encode_impact_robust(sc)


# ---------------------------------------------------------------- small plans

def test_object_already_in_goal_needs_no_impact():
    plan = plan_scenario(tiny())
    assert plan.events == []
    # rho is the distance of the resting object to the nearest goal face
    assert plan.objective == pytest.approx(0.5, abs=1e-6)
    assert plan.objective == pytest.approx(monitored_robustness(plan, tiny().spec), abs=1e-5)


def test_unreachable_final_state_is_infeasible():
    d = copy.deepcopy(TINY)
    d["budgets"]["robots"] = 1
    d["systems"]["objects"]["O1"] = {"initial": [0.5, 3.5], "final": [3.5, 3.5]}
    with pytest.raises(PlanningInfeasible):
        plan_scenario(scenario_from_dict(d))


def test_extraction_rejects_fractional_binaries():
    sc = tiny()
    m, enc = encode_spatially_robust(sc)
    sol = solve(m)
    x = sol.x.copy()
    x[m.binaries[0]] = 0.5
    with pytest.raises(ExtractionError):
        extract_plan(enc, x)
    plan = extract_plan(enc, sol)
    assert plan.objective == pytest.approx(sol.objective)


def test_nominal_is_vertex_average():
    H = BezierCurve([[0.0], [1.0], [2.0]])
    bundles = [[PhasedPath(BezierCurve(np.full((4, 2), float(b))), H)] for b in range(4)]
    (p,) = nominal_from_vertices(bundles)
    assert np.allclose(p.spatial.control_points, 1.5)
    assert p.temporal is H


# ---------------------------------------------------------------- corridor, spatial mode

def test_corridor_objective_is_monitored_robustness(corridor):
    plan, sc = corridor.plan, corridor.sc
    assert abs(plan.objective - monitored_robustness(plan, sc.spec)) < 1e-5
    assert plan.rho > 0 and len(plan.events) >= 2


def test_corridor_plan_validates(corridor):
    rep = validate_plan(corridor.plan, corridor.sc)
    assert rep["ok"], rep
    assert rep["hdot_min"] > 0


def test_corridor_events_follow_impact_law(corridor):
    for e in corridor.plan.events:
        assert e.law_residual() < 1e-6
        p_pre = e.mR * e.vR_pre + e.mO * e.vO_pre
        p_post = e.mR * e.vR_post + e.mO * e.vO_post
        assert np.allclose(p_pre, p_post, atol=1e-6)


def test_plan_json_round_trip(corridor, tmp_path):
    plan = corridor.plan
    plan.save(tmp_path / "p.json")
    back = Plan.load(tmp_path / "p.json")
    assert back.objective == plan.objective and len(back.events) == len(plan.events)
    for t in np.linspace(plan.t0, plan.tf, 17):
        assert np.allclose(back.position("O1", t), plan.position("O1", t))


def test_validation_catches_injected_faults(corridor):
    plan = Plan.from_dict(corridor.plan.to_dict())
    p = plan.robots["R1"][1]
    cps = p.spatial.control_points.copy()
    cps[0] += 0.01
    plan.robots["R1"][1] = PhasedPath(BezierCurve(cps), p.temporal, p.label)
    rep = validate_plan(plan, corridor.sc)
    assert not rep["ok"] and rep["continuity"] == pytest.approx(0.01, abs=1e-9)

    plan = Plan.from_dict(corridor.plan.to_dict())
    plan.events[0].vO_post = plan.events[0].vO_post + 0.1
    rep = validate_plan(plan, corridor.sc)
    assert not rep["ok"] and rep["law_residual"] > 1e-3


def test_mass_scaling_leaves_plan_unchanged(corridor):
    sc = corridor.sc.with_bodies(mass_factor=3.0)
    plan = plan_scenario(sc)
    assert plan.objective == pytest.approx(corridor.plan.objective, abs=1e-6)


# ---------------------------------------------------------------- corridor, impact-robust mode

def test_robust_plan_satisfies_formula_with_margin(corridor_robust):
    plan = corridor_robust.plan
    assert plan.delta > 0
    assert plan.rho >= -1e-9
    assert validate_plan(plan, corridor_robust.sc)["ok"]


def test_bundle_endpoints_are_hull_vertices(corridor_robust):
    plan = corridor_robust.plan
    assert plan.stats["impacts"]
    for rn, i, on, j in plan.stats["impacts"]:
        C, W, U, Om = plan.hulls[on][j]
        for b, sg in enumerate(SIGMAS):
            end = plan.bundles[rn][b][i - 1].spatial.control_points[-1]
            assert np.allclose(end, C + np.asarray(sg) * W, atol=1e-6)


def test_post_impact_tube_width_grows_at_twice_delta(corridor_robust):
    plan, sc = corridor_robust.plan, corridor_robust.sc
    for rn, i, on, j in plan.stats["impacts"]:
        seg = plan.tube[on][j]
        _, _, _, Om = plan.hulls[on][j]
        pR, pO = sc.body(rn), sc.body(on)
        m4 = mass_fractions(pR.mass, pO.mass, pair_restitution(pR, pO))[3]
        # per-vertex full widths 2 (w + om tau) grow at 2 om = 2 (delta + |m4| Om)
        tau = 0.5 * (seg.t1 - seg.t0)
        rate = (2 * (seg.w + seg.om * tau) - 2 * seg.w) / tau
        assert np.allclose(rate, seg.width_slope())
        assert np.allclose(seg.width_slope(), 2 * (plan.delta + abs(m4) * Om), atol=1e-6)
        assert np.all(seg.width_slope() >= 2 * plan.delta - 1e-6)
