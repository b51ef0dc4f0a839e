import numpy as np
import pytest

from triplan.linmodel import (
    EQ, GE, LE, KktReport, LinearModel, ModelError, SolveStatus,
    check_kkt, enumerate_binary_optimum, solve_lp, solve_milp,
)


def test_single_active_bound():
    m = LinearModel()
    x = m.add_var("x", 0, 10)
    m.add_constr({x: 1.0}, GE, 3.0)
    m.set_objective({x: 1.0})
    res = solve_lp(m)
    assert res.status is SolveStatus.OPTIMAL
    assert res.x[x] == pytest.approx(3.0, abs=1e-9)
    assert res.objective == pytest.approx(3.0, abs=1e-9)


def test_two_var_facet_optimum():
    # min -x-y over x+y <= 1, box [0,1]^2; vertex enumeration of the triangle
    # {(0,0),(1,0),(0,1)} plus the facet gives the optimum -1 on x+y=1.
    m = LinearModel()
    x = m.add_var("x", 0, 1)
    y = m.add_var("y", 0, 1)
    m.add_constr({x: 1.0, y: 1.0}, LE, 1.0)
    m.set_objective({x: -1.0, y: -1.0})
    res = solve_lp(m)
    assert res.status is SolveStatus.OPTIMAL
    assert res.objective == pytest.approx(-1.0, abs=1e-9)
    assert res.x[x] + res.x[y] == pytest.approx(1.0, abs=1e-9)


def test_unbounded():
    m = LinearModel()
    x = m.add_var("x", 0, np.inf)
    m.set_objective({x: -1.0})
    assert solve_lp(m).status is SolveStatus.UNBOUNDED


def test_infeasible_lp():
    m = LinearModel()
    x = m.add_var("x", 0, 1)
    m.add_constr({x: 1.0}, GE, 2.0)
    m.set_objective({x: 1.0})
    assert solve_lp(m).status is SolveStatus.INFEASIBLE


def test_solve_lp_rejects_binaries():
    m = LinearModel()
    m.add_var("b", binary=True)
    m.set_objective({0: 1.0})
    with pytest.raises(ModelError):
        solve_lp(m)


def test_kkt_on_optimal_lp():
    m = LinearModel()
    x = m.add_var("x", 0, 4)
    y = m.add_var("y", 0, 4)
    m.add_constr({x: 1.0, y: 2.0}, LE, 5.0)
    m.add_constr({x: 1.0, y: -1.0}, GE, -1.0)
    m.add_constr({x: 1.0, y: 1.0}, EQ, 3.0)
    m.set_objective({x: 1.0, y: -2.0}, constant=0.5)
    res = solve_lp(m)
    assert res.status is SolveStatus.OPTIMAL
    rep = check_kkt(m, res)
    assert rep.max_residual() <= 1e-8


def test_kkt_flags_perturbed_primal():
    m = LinearModel()
    x = m.add_var("x", 0, 10)
    m.add_constr({x: 1.0}, GE, 3.0)
    m.set_objective({x: 1.0})
    res = solve_lp(m)
    res.x = res.x - 0.5  # violates the >= row
    rep = check_kkt(m, res)
    assert rep.primal_residual > 1e-6


def test_kkt_rejects_milp_result():
    m = LinearModel()
    b = m.add_var("b", binary=True)
    m.set_objective({b: 1.0})
    res = solve_milp(m)
    with pytest.raises(ModelError):
        check_kkt(m, res)


def test_knapsack_optimum():
    # items: values (3,2,2), weights (2,1,1), capacity 2 -> take items 2+3
    m = LinearModel()
    xs = [m.add_var(f"x{i}", binary=True) for i in range(3)]
    m.add_constr({xs[0]: 2.0, xs[1]: 1.0, xs[2]: 1.0}, LE, 2.0)
    m.set_objective({xs[0]: -3.0, xs[1]: -2.0, xs[2]: -2.0})
    res = solve_milp(m)
    assert res.status is SolveStatus.OPTIMAL
    assert res.objective == pytest.approx(-4.0, abs=1e-9)
    oracle = enumerate_binary_optimum(m)
    assert oracle.objective == pytest.approx(res.objective, abs=1e-9)


def test_integral_relaxation_shortcut():
    # LP relaxation already integral: MILP optimum equals LP optimum.
    m = LinearModel()
    x = m.add_var("x", 0, 1, binary=True)
    y = m.add_var("y", 0, 3)
    m.add_constr({x: 1.0, y: 1.0}, GE, 2.0)
    m.set_objective({x: 1.0, y: 1.0})
    res = solve_milp(m)
    relaxed = LinearModel()
    xr = relaxed.add_var("x", 0, 1)
    yr = relaxed.add_var("y", 0, 3)
    relaxed.add_constr({xr: 1.0, yr: 1.0}, GE, 2.0)
    relaxed.set_objective({xr: 1.0, yr: 1.0})
    assert res.objective == pytest.approx(solve_lp(relaxed).objective, abs=1e-9)


def test_fractional_equality_infeasible():
    m = LinearModel()
    x = m.add_var("x", binary=True)
    m.add_constr({x: 1.0}, EQ, 0.5)
    m.set_objective({x: 1.0})
    assert solve_milp(m).status is SolveStatus.INFEASIBLE


def _random_lp(rng, n_max=50):
    n = int(rng.integers(2, n_max + 1))
    mrows = int(rng.integers(1, 2 * n))
    m = LinearModel("rand")
    for j in range(n):
        m.add_var(f"x{j}", 0.0, float(rng.uniform(1.0, 10.0)))
    x0 = rng.uniform(0.0, 1.0, n)
    A = rng.normal(size=(mrows, n)) * (rng.random((mrows, n)) < 0.35)
    for k in range(mrows):
        coeffs = {j: A[k, j] for j in range(n) if A[k, j] != 0.0}
        if not coeffs:
            continue
        row = float(A[k] @ x0)
        kind = int(rng.integers(0, 3))
        if kind == 0:
            m.add_constr(coeffs, LE, row + float(rng.uniform(0.0, 1.0)))
        elif kind == 1:
            m.add_constr(coeffs, GE, row - float(rng.uniform(0.0, 1.0)))
        else:
            m.add_constr(coeffs, EQ, row)
    m.set_objective({j: float(rng.normal()) for j in range(n)})
    return m


def test_random_lps_kkt_certificates():
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 60:
        m = _random_lp(rng)
        res = solve_lp(m)
        if res.status is not SolveStatus.OPTIMAL:
            continue
        rep = check_kkt(m, res)
        assert rep.max_residual() <= 1e-8
        checked += 1


def _random_milp(rng, include_continuous):
    nb = int(rng.integers(1, 13))
    nc = int(rng.integers(1, 6)) if include_continuous else 0
    m = LinearModel("randmilp")
    for j in range(nb):
        m.add_var(f"b{j}", binary=True)
    for j in range(nc):
        m.add_var(f"y{j}", 0.0, float(rng.uniform(1.0, 5.0)))
    n = nb + nc
    for _ in range(int(rng.integers(1, 6))):
        row = rng.normal(size=n) * (rng.random(n) < 0.5)
        coeffs = {j: row[j] for j in range(n) if row[j] != 0.0}
        if not coeffs:
            continue
        rel = (LE, GE)[int(rng.integers(0, 2))]
        m.add_constr(coeffs, rel, float(rng.normal() * 2))
    m.set_objective({j: float(rng.normal()) for j in range(n)})
    return m


@pytest.mark.parametrize("include_continuous", [False, True])
def test_random_milps_match_enumeration(include_continuous):
    rng = np.random.default_rng(7 if include_continuous else 8)
    done = 0
    while done < 15:
        m = _random_milp(rng, include_continuous)
        res = solve_milp(m)
        oracle = enumerate_binary_optimum(m)
        assert res.status == oracle.status
        if res.status is SolveStatus.OPTIMAL:
            assert res.objective == pytest.approx(oracle.objective, abs=1e-6)
        done += 1


def test_deterministic_repeat_solve():
    rng = np.random.default_rng(5)
    m = _random_lp(rng, n_max=30)
    r1, r2 = solve_lp(m), solve_lp(m)
    assert r1.status == r2.status
    if r1.status is SolveStatus.OPTIMAL:
        assert np.array_equal(r1.x, r2.x)
        assert r1.objective == r2.objective
        assert np.array_equal(r1.duals, r2.duals)
    mm = _random_milp(np.random.default_rng(6), True)
    m1, m2 = solve_milp(mm), solve_milp(mm)
    assert m1.status == m2.status
    if m1.x is not None:
        assert np.array_equal(m1.x, m2.x)


def test_node_limit_reports_iteration_limit():
    # a knapsack family that needs branching; node_limit=0 stops at the root
    rng = np.random.default_rng(11)
    m = LinearModel()
    xs = [m.add_var(f"x{i}", binary=True) for i in range(30)]
    w = rng.uniform(1, 10, 30)
    v = rng.uniform(1, 10, 30)
    m.add_constr({xs[i]: w[i] for i in range(30)}, LE, float(w.sum() / 3))
    m.set_objective({xs[i]: -v[i] for i in range(30)})
    res = solve_milp(m, gap=1e-9, node_limit=0)
    assert res.status in (SolveStatus.ITERATION_LIMIT, SolveStatus.OPTIMAL)


def test_lp_text_dump_roundtrip_content():
    m = LinearModel("demo")
    x = m.add_var("x", 0, 2)
    y = m.add_var("y", binary=True)
    m.add_constr({x: 1.0, y: -3.0}, LE, 1.5, name="cap")
    m.set_objective({x: 1.0}, constant=2.0)
    text = m.to_lp_text()
    assert "cap:" in text and "<= 1.5" in text
    assert "binary" in text and "y" in text.split("binary")[1]


def test_invariant_validation():
    m = LinearModel()
    with pytest.raises(ModelError):
        m.add_var("x", lb=2.0, ub=1.0)
    m.add_var("x", 0, 1)
    with pytest.raises(ModelError):
        m.add_constr({5: 1.0}, LE, 0.0)
    with pytest.raises(ModelError):
        m.add_var("x", 0, 1)  # duplicate name
