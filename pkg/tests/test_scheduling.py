import numpy as np
import pytest

from triplan.linmodel import SolveStatus, enumerate_binary_optimum, solve_milp
from triplan.mlp import Dataset, train_mlp
from triplan.scheduling import (
    NOMINAL, SURROGATE, ExtractionError, SchedulingInstance,
    build_scheduling_milp, empty_schedule, extract_schedule,
    solve_stage_lp_with_durations, stage_possibly_feasible, verify_schedule,
)


def single_task_instance(alpha=1.0, beta=0.5, bmin=0.0, bmax=10.0, events=2):
    return SchedulingInstance(
        machines=["M1"], products=["PA"], events=events, materials=["PA"],
        alpha={("PA", "M1"): alpha}, beta={("PA", "M1"): beta},
        kappa={}, Bmin={("PA", "M1"): bmin}, Bmax={("PA", "M1"): bmax},
        xi_in={}, xi_out={"PA": {"PA": 1.0}}, S0={"PA": 0.0},
        rho_changeover=10.0, M_big=1e3,
    )


def two_task_instance(events=3, kappa_ab=0.0, seed=0):
    rng = np.random.default_rng(seed)
    alpha = {("PA", "M1"): float(rng.uniform(0.5, 2)),
             ("PB", "M1"): float(rng.uniform(0.5, 2))}
    beta = {k: float(rng.uniform(0.1, 0.5)) for k in alpha}
    bmax = {k: float(rng.uniform(4, 8)) for k in alpha}
    bmin = {k: 0.0 for k in alpha}
    kappa = {}
    if kappa_ab > 0:
        kappa[("M1", "PA", "PB")] = kappa_ab
        kappa[("M1", "PB", "PA")] = kappa_ab / 2
    return SchedulingInstance(
        machines=["M1"], products=["PA", "PB"], events=events,
        materials=["PA", "PB"],
        alpha=alpha, beta=beta, kappa=kappa, Bmin=bmin, Bmax=bmax,
        xi_in={}, xi_out={"PA": {"PA": 1.0}, "PB": {"PB": 1.0}},
        S0={"PA": 0.0, "PB": 0.0}, rho_changeover=10.0, M_big=1e3,
    )


def solve_and_extract(inst, targets, **kw):
    model = build_scheduling_milp(inst, targets, **kw)
    res = solve_milp(model)
    assert res.status is SolveStatus.OPTIMAL
    return extract_schedule(res, inst, model), res, model


def test_zero_targets_empty_schedule():
    inst = two_task_instance()
    sched, res, _ = solve_and_extract(inst, {"PA": 0.0, "PB": 0.0})
    assert res.objective == pytest.approx(0.0, abs=1e-7)
    assert sched.makespan == pytest.approx(0.0, abs=1e-7)
    assert sched.changeover_cost == 0.0
    assert not verify_schedule(inst, sched, {"PA": 0.0, "PB": 0.0})


def test_single_batch_closed_form():
    inst = single_task_instance(alpha=1.5, beta=0.25, bmax=10.0)
    target = 6.0
    sched, res, _ = solve_and_extract(inst, {"PA": target})
    assert res.objective == pytest.approx(1.5 + 0.25 * target, abs=1e-6)
    assert sched.makespan == pytest.approx(1.5 + 0.25 * target, abs=1e-6)
    assert not verify_schedule(inst, sched, {"PA": target})


def test_infeasible_when_target_exceeds_capacity():
    inst = single_task_instance(bmax=5.0, events=2)  # one batch possible
    model = build_scheduling_milp(inst, {"PA": 10.0})
    assert solve_milp(model).status is SolveStatus.INFEASIBLE
    assert not stage_possibly_feasible(inst, {"PA": 10.0})


def test_prescreen_accepts_feasible_targets():
    inst = two_task_instance()
    assert stage_possibly_feasible(inst, {"PA": 3.0, "PB": 2.0})


def test_oracle_equivalence_micro_instances():
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(seed + 100)
        if seed % 2:
            inst = single_task_instance(alpha=float(rng.uniform(0.5, 2)),
                                        beta=float(rng.uniform(0.1, 0.5)),
                                        bmax=float(rng.uniform(4, 8)))
            targets = {"PA": float(rng.uniform(0, inst.Bmax[("PA", "M1")]))}
        else:
            inst = two_task_instance(events=2, seed=seed)
            # one machine and two events fit a single batch; zero one target
            targets = {"PA": float(rng.uniform(0, inst.Bmax[("PA", "M1")])),
                       "PB": 0.0}
        model = build_scheduling_milp(inst, targets)
        res = solve_milp(model)
        oracle = enumerate_binary_optimum(model)
        assert res.status == oracle.status
        if res.status is SolveStatus.OPTIMAL:
            assert res.objective == pytest.approx(oracle.objective, abs=1e-5)
            sched = extract_schedule(res, inst, model)
            assert not verify_schedule(inst, sched, targets)
            hits += 1
    assert hits >= 5


def test_changeover_charged_and_recomputed():
    inst = two_task_instance(events=3, kappa_ab=0.8, seed=3)
    targets = {"PA": 3.0, "PB": 3.0}
    sched, res, _ = solve_and_extract(inst, targets)
    assert not verify_schedule(inst, sched, targets)
    recomputed = sum(inst.kappa[(r, p1, p2)] * v
                     for (r, p1, p2, n), v in sched.Y.items())
    assert sched.changeover_cost == pytest.approx(recomputed, abs=1e-6)
    if sum(sched.Y.values()) > 0:
        assert res.objective == pytest.approx(
            sched.makespan + inst.rho_changeover * sum(sched.Y.values()),
            abs=1e-5)


def test_tightening_preserves_objective():
    for seed in range(6):
        inst = two_task_instance(events=3, kappa_ab=0.5 if seed % 2 else 0.0,
                                 seed=seed)
        rng = np.random.default_rng(seed)
        targets = {"PA": float(rng.uniform(0, 6)), "PB": float(rng.uniform(0, 6))}
        m_on = build_scheduling_milp(inst, targets, include_tightening=True)
        m_off = build_scheduling_milp(inst, targets, include_tightening=False)
        r_on, r_off = solve_milp(m_on), solve_milp(m_off)
        assert r_on.status == r_off.status
        if r_on.status is SolveStatus.OPTIMAL:
            assert r_on.objective == pytest.approx(r_off.objective, abs=1e-5)


def test_target_monotone_objective():
    inst = two_task_instance(events=3, seed=4)
    prev = -np.inf
    for scale in (0.0, 0.3, 0.6, 0.9):
        targets = {"PA": 4.0 * scale, "PB": 4.0 * scale}
        model = build_scheduling_milp(inst, targets)
        res = solve_milp(model)
        assert res.status is SolveStatus.OPTIMAL
        assert res.objective >= prev - 1e-6
        prev = res.objective


def test_extract_rejects_fractional():
    inst = single_task_instance()
    model = build_scheduling_milp(inst, {"PA": 2.0})
    res = solve_milp(model)
    res.x[model.meta["index"][("Ws", 0, 0)]] = 0.4
    with pytest.raises(ExtractionError):
        extract_schedule(res, inst, model)


def test_verifier_flags_batch_bound_and_shortfall():
    inst = single_task_instance(bmin=1.0, bmax=5.0)
    targets = {"PA": 4.0}
    sched, _, _ = solve_and_extract(inst, targets)
    low = sched.Bs.copy()
    started = np.argwhere(sched.Ws == 1)[0]
    sched.Bs[tuple(started)] = 0.5  # below Bmin
    out = verify_schedule(inst, sched, targets)
    assert any(v.family == "batch" for v in out)
    sched.Bs = low
    out = verify_schedule(inst, sched, {"PA": 4.0 / 0.9})
    assert any(v.family == "target" for v in out)
    shortfall = [v for v in out if v.family == "target"][0]
    assert shortfall.amount == pytest.approx(4.0 / 0.9 - 4.0, abs=1e-6)


def test_empty_schedule_helper_verifies():
    inst = two_task_instance()
    inst.S0 = {"PA": 2.0, "PB": 1.0}
    sched = empty_schedule(inst)
    assert not verify_schedule(inst, sched, {"PA": 2.0, "PB": 1.0})
    assert verify_schedule(inst, sched, {"PA": 3.0})


def test_fixed_mode_retimes_schedule():
    inst = single_task_instance(alpha=1.0, beta=0.5)
    targets = {"PA": 4.0}
    sched, res, _ = solve_and_extract(inst, targets)
    # replace the nominal duration of the executed batch with a true time
    durations = {(a, n): 7.0 for a, n, _ in sched.executed()}
    lp_res, lp_model = solve_stage_lp_with_durations(inst, sched, durations,
                                                     targets)
    assert lp_res.status is SolveStatus.OPTIMAL
    corrected = extract_schedule(lp_res, inst, lp_model)
    assert corrected.makespan == pytest.approx(7.0, abs=1e-6)


def test_surrogate_mode_matches_nominal_when_net_mimics_rule():
    # network trained on the exact alpha-free nominal rule: duration beta*B
    inst = single_task_instance(alpha=0.8, beta=0.4, bmax=8.0)
    rng = np.random.default_rng(11)
    b = rng.uniform(0, 8, size=(40, 1))
    y = np.column_stack([0.4 * b[:, 0], np.zeros(40)])
    net = train_mlp(Dataset(b, y, np.ones(40, dtype=bool)), hidden=(4,),
                    epochs=800, seed=0, input_box=(np.array([0.0]),
                                                   np.array([8.0])))
    targets = {"PA": 5.0}
    m_sur = build_scheduling_milp(inst, targets, mode=SURROGATE,
                                  surrogates={("PA", "M1"): net})
    m_nom = build_scheduling_milp(inst, targets, mode=NOMINAL)
    r_sur, r_nom = solve_milp(m_sur), solve_milp(m_nom)
    assert r_sur.status is SolveStatus.OPTIMAL
    assert r_sur.objective == pytest.approx(r_nom.objective, abs=0.05)
    sched = extract_schedule(r_sur, inst, m_sur)
    assert not verify_schedule(inst, sched, targets,
                               durations=sched.D)


def test_surrogate_mode_requires_all_nets():
    inst = two_task_instance()
    with pytest.raises(Exception):
        build_scheduling_milp(inst, {"PA": 1.0}, mode=SURROGATE, surrogates={})
