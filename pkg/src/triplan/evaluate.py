"""Solution-quality metrics for a planning decision, at four fidelities.

``upper`` scores the planning simulation alone (objective plus a quadratic
penalty on constraint violations).  ``bi`` adds the optimal cost of one
scheduling stage per planning month, solved independently and in parallel.
``approx_tri`` swaps the stage model for one with embedded control
surrogates and adds their predicted control costs.  ``tri`` solves nominal
stages, then the assigned batch control problems, re-times each schedule
with the true processing times, and adds the true control costs.

Stage and control solves are memoized on their inputs, so repeated
evaluations of nearby decisions (the derivative-free loop) pay only for
what changed.  All aggregation is index-ordered: results do not depend on
the worker count.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .control import ControlInfeasible, solve_optimal_control
from .instance import InstanceBundle
from .linmodel import SolveStatus, solve_milp
from .mlp import Mlp, predict
from .planning import PlanningDecision, simulate_planning, stage_targets
from .scheduling import (FIXED, NOMINAL, SURROGATE, Schedule,
                         build_scheduling_milp, empty_schedule,
                         extract_schedule, solve_stage_lp_with_durations,
                         stage_possibly_feasible)

LEVELS = ("upper", "bi", "approx_tri", "tri")


def penalty(g_viol: np.ndarray, rho: float) -> float:
    """Quadratic violation penalty: rho * || max(0, g) ||^2."""
    if rho <= 0:
        raise ValueError("penalty weight must be positive")
    g = np.maximum(np.asarray(g_viol, dtype=float), 0.0)
    return float(rho * (g @ g))


def stage_cost_upper_bound(bundle: InstanceBundle) -> float:
    """Crude upper bound on any feasible stage objective (for penalties)."""
    inst = bundle.scheduling
    ms = 0.0
    for r in inst.machines:
        dur = max(inst.alpha[key] + inst.beta[key] * inst.Bmax[key]
                  for key in inst.machine_tasks(r))
        cch = max((inst.kappa.get((r, p1, p2), 0.0)
                   for (rr, p1, p2) in inst.changeover_pairs() if rr == r),
                  default=0.0)
        ms += inst.n_last * (dur + cch)
    y_cap = inst.rho_changeover * inst.n_last * len(inst.machines)
    return ms + y_cap


def default_infeasible_cost(bundle: InstanceBundle) -> float:
    return 10.0 * stage_cost_upper_bound(bundle)


@dataclass
class EvalConfig:
    rho: float = 100.0
    infeasible_cost: float | None = None
    workers: int = 1
    mip_gap: float = 1e-4
    node_limit: int | None = 50000
    control_surrogates: dict[tuple[str, str], Mlp] | None = None
    target_round: int = 9
    control_steps: int | None = None

    def resolved_infeasible_cost(self, bundle: InstanceBundle) -> float:
        if self.infeasible_cost is not None:
            return float(self.infeasible_cost)
        return default_infeasible_cost(bundle)


@dataclass
class StageOutcome:
    feasible: bool
    c_s: float
    c_c: float
    schedule: Schedule | None = None


@dataclass
class MetricReport:
    level: str
    f_p: float
    penalty: float
    stage_costs: list[float]
    control_costs: list[float]
    stage_feasible: list[bool]
    total: float
    wall_time: float = 0.0

    def values_equal(self, other: "MetricReport") -> bool:
        """Bit-level equality of every value field; wall time excluded."""
        return (self.level == other.level
                and self.f_p == other.f_p
                and self.penalty == other.penalty
                and self.stage_costs == other.stage_costs
                and self.control_costs == other.control_costs
                and self.stage_feasible == other.stage_feasible
                and self.total == other.total)

    def to_json(self) -> str:
        return json.dumps({
            "level": self.level, "f_p": self.f_p, "penalty": self.penalty,
            "stage_costs": self.stage_costs,
            "control_costs": self.control_costs,
            "stage_feasible": self.stage_feasible,
            "total": self.total, "wall_time": self.wall_time,
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        doc = json.loads(text)
        return cls(level=doc["level"], f_p=doc["f_p"], penalty=doc["penalty"],
                   stage_costs=list(doc["stage_costs"]),
                   control_costs=list(doc["control_costs"]),
                   stage_feasible=[bool(b) for b in doc["stage_feasible"]],
                   total=doc["total"], wall_time=doc["wall_time"])


class Evaluator:
    """Caching metric engine bound to one instance bundle and config."""

    def __init__(self, bundle: InstanceBundle, config: EvalConfig | None = None):
        self.bundle = bundle
        self.config = config or EvalConfig()
        self._stage_cache: dict = {}
        self._control_cache: dict = {}
        self.stage_solves = 0
        self.control_solves = 0

    # -- stage machinery -----------------------------------------------------

    def _targets_key(self, targets: dict[str, float]) -> tuple:
        inst = self.bundle.scheduling
        r = self.config.target_round
        return tuple(round(float(targets.get(s, 0.0)), r)
                     for s in inst.materials)

    def _control_cost(self, product: str, target: float):
        """(t_f, cost) of the assigned batch problem, memoized."""
        key = (product, round(float(target), self.config.target_round))
        hit = self._control_cache.get(key)
        if hit is not None:
            return hit
        self.control_solves += 1
        try:
            sol = solve_optimal_control(self.bundle.control, product,
                                        max(0.0, float(target)),
                                        steps=self.config.control_steps)
            out = (sol.t_f, sol.cost, True)
        except ControlInfeasible:
            out = (np.nan, np.nan, False)
        self._control_cache[key] = out
        return out

    def _solve_stage(self, targets: dict[str, float], mode: str) -> StageOutcome:
        key = (mode, self._targets_key(targets))
        hit = self._stage_cache.get(key)
        if hit is not None:
            return hit
        out = self._solve_stage_uncached(targets, mode)
        self._stage_cache[key] = out
        return out

    def _solve_stage_uncached(self, targets, mode) -> StageOutcome:
        inst = self.bundle.scheduling
        bad = StageOutcome(False, np.nan, np.nan)
        if all(targets.get(s, 0.0) <= inst.S0.get(s, 0.0)
               for s in inst.materials):
            return StageOutcome(True, 0.0, 0.0, empty_schedule(inst))
        if not stage_possibly_feasible(inst, targets):
            return bad
        self.stage_solves += 1
        kwargs = {}
        if mode == SURROGATE:
            kwargs["surrogates"] = self.config.control_surrogates
        model = build_scheduling_milp(inst, targets, mode=mode, **kwargs)
        res = solve_milp(model, gap=self.config.mip_gap,
                         node_limit=self.config.node_limit)
        if res.status is SolveStatus.INFEASIBLE or res.x is None:
            return bad
        sched = extract_schedule(res, inst, model)
        c_c = 0.0
        if mode == SURROGATE:
            ctrl = self.bundle.control
            for a, n, bs in sched.executed():
                p, r = inst.tasks[a]
                t_hat, e_hat = predict(self.config.control_surrogates[(p, r)],
                                       np.array([bs]))
                c_c += ctrl.w_tf * float(t_hat) + ctrl.w_energy * float(e_hat)
        return StageOutcome(True, float(res.objective), float(c_c), sched)

    def _batch_control_targets(self, sched: Schedule):
        """Pair each started batch with its finish and produced amount."""
        inst = self.bundle.scheduling
        out = []
        for a in range(len(inst.tasks)):
            starts = [n for n in range(inst.events) if sched.Ws[a, n] == 1]
            finishes = [n for n in range(inst.events) if sched.Wf[a, n] == 1]
            p = inst.tasks[a][0]
            xi = inst.xi_out.get(p, {})
            for n_start, n_fin in zip(starts, finishes):
                produced = max((coef * float(sched.Bf[a, n_fin])
                                for coef in xi.values()), default=0.0)
                out.append((a, n_start, p, produced))
        return out

    def _solve_stage_tri(self, targets: dict[str, float]) -> StageOutcome:
        key = ("tri", self._targets_key(targets))
        hit = self._stage_cache.get(key)
        if hit is not None:
            return hit
        out = self._solve_stage_tri_uncached(targets)
        self._stage_cache[key] = out
        return out

    def _solve_stage_tri_uncached(self, targets) -> StageOutcome:
        inst = self.bundle.scheduling
        nominal = self._solve_stage(targets, NOMINAL)
        if not nominal.feasible:
            return StageOutcome(False, np.nan, np.nan)
        sched = nominal.schedule
        batches = self._batch_control_targets(sched)
        if not batches:
            return StageOutcome(True, nominal.c_s, 0.0, sched)
        durations = {}
        c_c = 0.0
        for a, n_start, product, produced in batches:
            t_f, cost, ok = self._control_cost(product, produced)
            if not ok:
                return StageOutcome(False, np.nan, np.nan, sched)
            durations[(a, n_start)] = inst.alpha[inst.tasks[a]] + t_f
            c_c += cost
        lp_res, lp_model = solve_stage_lp_with_durations(
            inst, sched, durations, targets)
        if lp_res.status is not SolveStatus.OPTIMAL:
            return StageOutcome(False, np.nan, np.nan, sched)
        return StageOutcome(True, float(lp_res.objective), float(c_c), sched)

    def _stage_outcomes(self, decision: PlanningDecision, mode: str):
        bundle = self.bundle
        months = range(1, bundle.planning.T + 1)
        tg = [stage_targets(bundle.planning, decision.x_prod,
                            bundle.stage_site, bundle.stage_products, t)
              for t in months]
        solver = self._solve_stage_tri if mode == "tri" else \
            lambda targets: self._solve_stage(targets, mode)
        if self.config.workers > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                return list(pool.map(solver, tg))
        return [solver(t) for t in tg]

    # -- public API ------------------------------------------------------------

    def evaluate(self, level: str, decision: PlanningDecision) -> MetricReport:
        if level not in LEVELS:
            raise ValueError(f"unknown level {level!r}; expected one of {LEVELS}")
        t0 = time.perf_counter()
        sim = simulate_planning(self.bundle.planning, decision.x_prod,
                                decision.x_transp, decision.x_sales)
        pen = penalty(sim.g_viol, self.config.rho)
        stage_costs: list[float] = []
        control_costs: list[float] = []
        flags: list[bool] = []
        if level != "upper":
            mode = {"bi": NOMINAL, "approx_tri": SURROGATE, "tri": "tri"}[level]
            if mode == SURROGATE and not self.config.control_surrogates:
                raise ValueError("approx_tri needs trained control surrogates")
            bad_cost = self.config.resolved_infeasible_cost(self.bundle)
            for out in self._stage_outcomes(decision, mode):
                flags.append(out.feasible)
                if out.feasible:
                    stage_costs.append(out.c_s)
                    control_costs.append(out.c_c if level != "bi" else 0.0)
                else:
                    stage_costs.append(bad_cost)
                    control_costs.append(0.0)
        total = sim.f_p + pen + sum(stage_costs) + sum(control_costs)
        return MetricReport(
            level=level, f_p=sim.f_p, penalty=pen,
            stage_costs=stage_costs, control_costs=control_costs,
            stage_feasible=flags, total=float(total),
            wall_time=time.perf_counter() - t0,
        )


def evaluate(level: str, bundle: InstanceBundle, decision: PlanningDecision,
             config: EvalConfig | None = None) -> MetricReport:
    """One-shot evaluation (no cache reuse across calls)."""
    return Evaluator(bundle, config).evaluate(level, decision)
