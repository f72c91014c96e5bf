import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from impactplan.mip import (MipError, MipModel, add_disjunction, add_implication, check_solution,
                            export_model, format_lp, lin_sum, parse_lp, read_model, solve, solve_lp,
                            solve_qp)

from oracles import enumerate_mip, random_mip

seeds = st.integers(0, 2 ** 32 - 1)


def min_form(model, sol):
    return (-1.0 if model.sense == "max" else 1.0) * sol.objective


# ---------------------------------------------------------------- basic solves

def test_lp_vertex_optimum():
    m = MipModel()
    x, y = m.add_var(0, 1), m.add_var(0, 2)
    m.set_objective(x + y, "max")
    s = solve(m)
    assert s.status == "optimal"
    assert s.objective == pytest.approx(3.0, abs=1e-9)
    assert np.allclose(s.x, [1, 2])


def test_lp_with_rows_instead_of_bounds():
    m = MipModel()
    x, y = m.add_var(), m.add_var()
    m.add(x <= 1)
    m.add(y <= 2)
    m.set_objective(x + y, "max")
    assert solve(m).objective == pytest.approx(3.0, abs=1e-9)


def test_binary_infeasible():
    m = MipModel()
    x = m.add_binary()
    m.add(x >= 0.5)
    m.add(x <= 0.4)
    assert solve(m).status == "infeasible"


def test_unbounded_lp_reported():
    m = MipModel()
    x = m.add_var(0.0)
    m.set_objective(x, "max")
    assert solve(m).status == "unbounded"


def knapsack(rng, n=10):
    w = rng.integers(1, 20, n).astype(float)
    v = rng.integers(1, 30, n).astype(float)
    cap = float(w.sum() // 2)
    m = MipModel("knap")
    z = [m.add_binary(f"z{i}") for i in range(n)]
    m.add(lin_sum(float(wi) * zi for wi, zi in zip(w, z)) <= cap)
    m.set_objective(lin_sum(float(vi) * zi for vi, zi in zip(v, z)), "max")
    return m, w, v, cap


@pytest.mark.parametrize("seed", range(5))
def test_knapsack_matches_exhaustive_enumeration(seed):
    m, w, v, cap = knapsack(np.random.default_rng(seed))
    best = max(np.dot(bits, v) for bits in itertools.product((0, 1), repeat=len(w)) if np.dot(bits, w) <= cap)
    s = solve(m)
    assert s.status == "optimal"
    assert s.objective == pytest.approx(best, abs=1e-6)
    assert not check_solution(m, s.x)


@pytest.mark.parametrize("seed", range(6))
def test_random_milp_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    m = random_mip(rng, int(rng.integers(3, 8)))
    s = solve(m)
    ref = enumerate_mip(m)
    if not np.isfinite(ref):
        assert s.status == "infeasible"
        return
    assert s.status == "optimal"
    assert min_form(m, s) == pytest.approx(ref, abs=1e-6)
    assert not check_solution(m, s.x)


@pytest.mark.parametrize("seed", range(6))
def test_random_miqp_matches_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    m = random_mip(rng, int(rng.integers(3, 7)), quadratic=True)
    s = solve(m)
    ref = enumerate_mip(m)
    assert s.status == "optimal"
    assert min_form(m, s) == pytest.approx(ref, abs=1e-6)
    assert not check_solution(m, s.x)


def test_highs_backend_agrees():
    m, *_ = knapsack(np.random.default_rng(3))
    assert solve(m, backend="highs").objective == pytest.approx(solve(m).objective, abs=1e-6)


def test_non_psd_objective_rejected():
    m = MipModel()
    x = m.add_var(-1, 1)
    m.set_objective(x)
    m.add_quadratic(0, 0, -2.0)
    with pytest.raises(MipError):
        solve(m)


def test_solve_is_deterministic():
    m = random_mip(np.random.default_rng(7), 9)
    a, b = solve(m), solve(m.copy())
    assert a.nodes == b.nodes
    assert np.array_equal(a.x, b.x)


# ---------------------------------------------------------------- relaxation solvers

@settings(max_examples=30, deadline=None)
@given(seeds)
def test_simplex_matches_highs(seed):
    from scipy.optimize import linprog
    rng = np.random.default_rng(seed)
    n, k = 4, 6
    A = rng.normal(size=(k, n))
    b = rng.uniform(0.5, 2.0, k)
    c = rng.normal(size=n)
    ref = linprog(c, A_ub=A, b_ub=b, bounds=[(-3, 3)] * n, method="highs")
    r = solve_lp(c, A_ub=A, b_ub=b, lb=-3 * np.ones(n), ub=3 * np.ones(n))
    assert r.status == "optimal"
    assert r.objective == pytest.approx(ref.fun, abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_active_set_qp_matches_cvxopt(seed):
    from oracles import _cvxopt_qp
    rng = np.random.default_rng(seed)
    n = 4
    L = rng.normal(size=(n, n))
    Q = L @ L.T + 0.1 * np.eye(n)
    c = rng.normal(size=n)
    A = rng.normal(size=(3, n))
    b = rng.uniform(0.1, 1.0, 3)
    ref = _cvxopt_qp(Q, c, A, b, np.zeros((0, n)), np.zeros(0), -2 * np.ones(n), 2 * np.ones(n))
    G = np.vstack([A, np.eye(n), -np.eye(n)])
    h = np.concatenate([b, 2 * np.ones(n), 2 * np.ones(n)])
    r = solve_qp(Q, c, A_in=G, b_in=h)
    assert r.objective == pytest.approx(ref, abs=1e-6)


# ---------------------------------------------------------------- big-M helpers

def box_model():
    m = MipModel()
    x, y = m.add_var(-2, 3), m.add_var(-1, 4)
    return m, x, y


def test_implication_with_gate_on_is_the_constraint():
    m, x, y = box_model()
    z = m.add_binary()
    add_implication(m, z, x + 2 * y <= 1)
    m.add(z == 1)
    m.set_objective(x + 2 * y, "max")
    assert solve(m).objective == pytest.approx(1.0, abs=1e-9)


def test_default_big_m_is_interval_bound():
    m, x, y = box_model()
    z = m.add_binary()
    add_implication(m, z, x - 2 * y <= 1)
    # M = max of x - 2y - 1 over the box = 3 - 2*(-1) - 1 = 4; row: x - 2y + M z <= 1 + M
    terms, sense, rhs, _ = m.rows[-1]
    assert terms[2] == pytest.approx(4.0) and rhs == pytest.approx(5.0)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_big_m_valid_at_every_box_corner(seed):
    rng = np.random.default_rng(seed)
    m = MipModel()
    lo = rng.uniform(-5, 0, 3)
    hi = lo + rng.uniform(0.1, 5, 3)
    xs = [m.add_var(float(a), float(b)) for a, b in zip(lo, hi)]
    a = rng.normal(size=3)
    rhs = float(rng.normal())
    z = m.add_binary()
    add_implication(m, z, lin_sum(float(ai) * xi for ai, xi in zip(a, xs)) <= rhs)
    terms, _, r, _ = m.rows[-1]
    for corner in itertools.product(*zip(lo, hi)):
        x = np.array(list(corner) + [0.0])
        assert sum(v * x[k] for k, v in terms.items()) <= r + 1e-9


def test_nonpositive_big_m_rejected():
    m, x, y = box_model()
    z = m.add_binary()
    with pytest.raises(MipError):
        add_implication(m, z, x <= 0, M=0.0)
    with pytest.raises(MipError):
        add_implication(m, z, x <= 0, M=-1.0)


def test_unbounded_variable_needs_explicit_m():
    m = MipModel()
    x = m.add_var(0.0)
    with pytest.raises(MipError):
        add_implication(m, m.add_binary(), x <= 1)
    add_implication(m, m.add_binary(), x <= 1, M=100.0)


def test_empty_disjunction_rejected():
    with pytest.raises(MipError):
        add_disjunction(MipModel(), [])


def test_single_group_disjunction_forces_binary():
    m, x, y = box_model()
    (z,) = add_disjunction(m, [[x <= 0]])
    m.set_objective(x, "max")
    s = solve(m)
    assert s.x[2] == pytest.approx(1.0) and s.objective == pytest.approx(0.0, abs=1e-9)


def box_avoidance(p):
    m = MipModel()
    x, y = m.add_var(-5, 5), m.add_var(-5, 5)
    m.add([x == p[0], y == p[1]])
    # unit box [0,1]^2: left, right, below, above
    zs = add_disjunction(m, [[x <= 0], [x >= 1], [y <= 0], [y >= 1]])
    return m, zs


@settings(max_examples=50, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4))
def test_box_avoidance_disjunction(px, py):
    assume(min(abs(px), abs(px - 1), abs(py), abs(py - 1)) > 1e-6)
    m, zs = box_avoidance((px, py))
    s = solve(m)
    inside = 0 < px < 1 and 0 < py < 1
    assert (s.status == "infeasible") == inside
    if not inside:
        slacks = [-px, px - 1, -py, py - 1]
        k = int(np.argmax(slacks))
        assert slacks[k] >= 0
        assert not check_solution(m, s.x)


# ---------------------------------------------------------------- LP format

def test_empty_model_exports_sections(tmp_path):
    p = tmp_path / "empty.lp"
    export_model(MipModel(), p)
    text = p.read_text()
    for sec in ("Minimize", "Subject To", "Bounds", "End"):
        assert sec in text
    back = read_model(p)
    assert back.n_vars == 0 and back.n_rows == 0


@pytest.mark.parametrize("quad", [False, True])
def test_lp_round_trip(quad):
    m = random_mip(np.random.default_rng(11), 5, quadratic=quad)
    back = parse_lp(format_lp(m))
    assert back.n_vars == m.n_vars and back.n_rows == m.n_rows
    assert back.binaries == m.binaries
    assert format_lp(back) == format_lp(m)
    assert solve(back).objective == pytest.approx(solve(m).objective, abs=1e-9)


def test_export_is_byte_deterministic(tmp_path):
    m, *_ = knapsack(np.random.default_rng(2))
    export_model(m, tmp_path / "a.lp")
    export_model(m.copy(), tmp_path / "b.lp")
    assert (tmp_path / "a.lp").read_bytes() == (tmp_path / "b.lp").read_bytes()


def test_export_to_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        export_model(MipModel(), tmp_path / "missing" / "x.lp")


def test_knapsack_export_matches_highs_on_reparsed_file(tmp_path):
    m, *_ = knapsack(np.random.default_rng(4))
    export_model(m, tmp_path / "k.lp")
    back = read_model(tmp_path / "k.lp")
    assert solve(back, backend="highs").objective == pytest.approx(solve(m).objective, abs=1e-6)


# ---------------------------------------------------------------- certificates

def test_check_solution_flags_violations():
    m = MipModel()
    x, z = m.add_var(0, 1), m.add_binary()
    m.add(x + z <= 1.5)
    assert check_solution(m, [0.5, 1.0]) == []
    names = [w for w, _ in check_solution(m, [1.0, 0.7])]
    assert any("integrality" in n for n in names) and any("row" in n for n in names)
    assert any("bound" in w for w, _ in check_solution(m, [2.0, 0.0]))
