import numpy as np
import pytest

from triplan.control import (
    ControlInfeasible, ControlInstance, brute_force_control,
    integrate_dynamics, max_achievable_batch, solve_optimal_control,
)


def toy_instance(k1=0.02, k2=0.01, **over):
    base = dict(
        products=["P"], k1={"P": k1}, k2={"P": k2},
        V=1.0, VB=2.0, VC=3.0, n_intervals=10, steps=100,
    )
    base.update(over)
    return ControlInstance(**base)


def test_zero_time_freezes_everything():
    inst = toy_instance()
    traj = integrate_dynamics(inst, "P", np.full(10, 5.0), 0.0)
    assert np.allclose(traj.cA, 17.0)
    assert np.allclose(traj.cB, 0.0)
    assert np.allclose(traj.cC, 0.0)
    assert np.allclose(traj.E, 0.0)


def test_first_state_closed_form():
    # constant u: cA(1) = cA0 * exp(-t_f k1 u)
    inst = toy_instance()
    u, tf = 4.0, 30.0
    traj = integrate_dynamics(inst, "P", np.full(10, u), tf, steps=400)
    assert traj.cA[-1] == pytest.approx(17.0 * np.exp(-tf * 0.02 * u), rel=1e-7)


def test_energy_exact_for_constant_u():
    inst = toy_instance(V=1.7)
    u, tf = 3.0, 25.0
    traj = integrate_dynamics(inst, "P", np.full(10, u), tf)
    assert traj.E[-1] == pytest.approx(tf * 1.7 ** 2 * u, rel=1e-12)


def test_fourth_order_step_halving():
    inst = toy_instance(k1=0.05, k2=0.03)
    u, tf = 6.0, 40.0
    prof = np.full(1, u)          # single interval keeps u smooth everywhere

    def terminal(steps):
        t = integrate_dynamics(inst, "P", prof, tf, steps=steps)
        return np.array(t.terminal())

    ref = terminal(1600)
    err_h = np.linalg.norm(terminal(100) - ref)
    err_h2 = np.linalg.norm(terminal(200) - ref)
    assert err_h / err_h2 >= 8.0


def test_mass_is_conserved():
    inst = toy_instance(k1=0.08, k2=0.04)
    rng = np.random.default_rng(0)
    prof = rng.uniform(1, 9, 10)
    traj = integrate_dynamics(inst, "P", prof, 80.0, steps=300)
    total = traj.cA + traj.cB + traj.cC
    assert np.allclose(total, 17.0, atol=1e-8)


def test_input_validation():
    inst = toy_instance()
    with pytest.raises(ValueError):
        integrate_dynamics(inst, "P", np.full(10, 0.5), 10.0)  # u below range
    with pytest.raises(ValueError):
        integrate_dynamics(inst, "P", np.full(10, 2.0), -1.0)
    with pytest.raises(ValueError):
        integrate_dynamics(inst, "P", np.full(10, 2.0), 1.0, steps=0)


def test_max_achievable_zero_kinetics():
    inst = toy_instance(k1=0.0, k2=0.0)
    assert max_achievable_batch(inst, "P") == pytest.approx(0.0, abs=1e-12)


def test_max_achievable_scales_with_volumes():
    inst = toy_instance()
    base = max_achievable_batch(inst, "P")
    doubled = toy_instance(VB=4.0, VC=6.0)
    assert max_achievable_batch(doubled, "P") == pytest.approx(2 * base, rel=1e-9)


def test_zero_target_trivial_solution():
    inst = toy_instance()
    sol = solve_optimal_control(inst, "P", 0.0)
    assert sol.t_f == 0.0
    assert sol.cost == 0.0
    assert sol.feasible


def test_infeasible_target_raises():
    inst = toy_instance()
    mab = max_achievable_batch(inst, "P")
    with pytest.raises(ControlInfeasible):
        solve_optimal_control(inst, "P", 1.01 * mab)


def test_solver_beats_or_matches_grid():
    inst = toy_instance()
    mab = max_achievable_batch(inst, "P")
    for frac in (0.2, 0.5, 0.8):
        target = frac * mab
        sol = solve_optimal_control(inst, "P", target)
        assert sol.feasible
        grid = brute_force_control(inst, "P", target)
        assert grid is not None
        assert sol.cost <= grid[2] * 1.01 + 1e-9
        assert sol.cost == pytest.approx(
            inst.w_tf * sol.t_f + inst.w_energy * sol.E_final, abs=1e-9)


def test_cost_monotone_in_target():
    inst = toy_instance()
    mab = max_achievable_batch(inst, "P")
    targets = np.linspace(0.1, 0.85, 6) * mab
    costs = [solve_optimal_control(inst, "P", t).cost for t in targets]
    for a, b in zip(costs, costs[1:]):
        assert a <= b + 1e-6


def test_solver_determinism():
    inst = toy_instance()
    mab = max_achievable_batch(inst, "P")
    a = solve_optimal_control(inst, "P", 0.6 * mab)
    b = solve_optimal_control(inst, "P", 0.6 * mab)
    assert a.cost == b.cost
    assert a.t_f == b.t_f
    assert np.array_equal(a.u, b.u)
