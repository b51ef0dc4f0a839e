"""Continuous-time state-task-network scheduling of one site's batches.

Tasks are (production, machine) pairs sharing a common event grid.  Start
and finish flags place batches on events, batch sizes flow through
start/processing/finish states, and sequence-dependent changeovers are
charged between a finishing and a starting task at the same event.  The
objective is makespan plus a changeover penalty.  Three duration modes:

* nominal: duration = alpha * start + beta * batch size,
* surrogate: duration = alpha * start + predicted processing time from an
  embedded per-(machine, production) network of the batch size,
* fixed: binaries, batch sizes, and per-assignment durations are pinned
  (used to re-time a schedule once true processing times are known).

``verify_schedule`` re-checks every constraint family by direct arithmetic,
independent of the solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .linmodel import (EQ, GE, LE, LinearModel, ModelError, SolveResult,
                       SolveStatus, solve_lp)
from .mlp import Mlp, encode_mlp, predict

NOMINAL = "nominal"
SURROGATE = "surrogate"
FIXED = "fixed"


@dataclass
class SchedulingInstance:
    machines: list[str]
    products: list[str]
    events: int                      # number of event time points
    materials: list[str]
    alpha: dict[tuple[str, str], float]    # (product, machine)
    beta: dict[tuple[str, str], float]
    kappa: dict[tuple[str, str, str], float]  # (machine, from, to)
    Bmin: dict[tuple[str, str], float]
    Bmax: dict[tuple[str, str], float]
    xi_in: dict[str, dict[str, float]]     # production -> consumed material
    xi_out: dict[str, dict[str, float]]    # production -> produced material
    S0: dict[str, float]
    rho_changeover: float = 10.0
    M_big: float = 1e4

    def __post_init__(self):
        self.tasks = [(p, r) for r in self.machines for p in self.products]

    def validate(self) -> None:
        if self.events < 1:
            raise ValueError("need at least one event")
        for key in self.tasks:
            if self.alpha[key] < 0 or self.beta[key] < 0:
                raise ValueError(f"negative duration data for {key}")
            if not 0 <= self.Bmin[key] <= self.Bmax[key]:
                raise ValueError(f"batch bounds out of order for {key}")
        for (r, a, b), v in self.kappa.items():
            if a == b and v != 0.0:
                raise ValueError("self-changeover must be zero")
            if v < 0:
                raise ValueError("negative changeover time")

    @property
    def n_last(self) -> int:
        return self.events - 1

    def machine_tasks(self, r: str) -> list[tuple[str, str]]:
        return [(p, rr) for (p, rr) in self.tasks if rr == r]

    def changeover_pairs(self):
        """Same-machine ordered pairs with a positive changeover time."""
        pairs = []
        for r in self.machines:
            for p1, _ in self.machine_tasks(r):
                for p2, _ in self.machine_tasks(r):
                    if p1 != p2 and self.kappa.get((r, p1, p2), 0.0) > 0.0:
                        pairs.append((r, p1, p2))
        return pairs

    def task_upper_bounds(self) -> dict[str, float]:
        """Sound cap on producible amount per material over the horizon."""
        cap: dict[str, float] = {s: self.S0.get(s, 0.0) for s in self.materials}
        starts = self.n_last                       # start slots per machine
        for s in self.materials:
            for p, r in self.tasks:
                if self.xi_out.get(p, {}).get(s, 0.0) > 0.0:
                    cap[s] += self.xi_out[p][s] * self.Bmax[(p, r)] * starts
        return cap


@dataclass
class Schedule:
    """Extracted solution of one stage problem."""

    instance: SchedulingInstance
    Ws: np.ndarray                 # (tasks, events) ints
    Wf: np.ndarray
    Bs: np.ndarray
    Bp: np.ndarray
    Bf: np.ndarray
    T: np.ndarray                  # event times
    Tf: np.ndarray                 # finish-time trackers (tasks, events)
    D: np.ndarray                  # per-assignment durations
    Y: dict[tuple[str, str, str, int], int]
    S: np.ndarray                  # (materials, events)
    makespan: float
    changeover_cost: float
    objective: float

    def executed(self):
        """(task index, event, batch size at start) of every started batch."""
        rows = []
        for a in range(self.Ws.shape[0]):
            for n in range(self.Ws.shape[1]):
                if self.Ws[a, n] == 1:
                    rows.append((a, n, float(self.Bs[a, n])))
        return rows

    def gantt(self):
        inst = self.instance
        bars = []
        for a, n, _ in self.executed():
            p, r = inst.tasks[a]
            start = float(self.T[n])
            bars.append({"task": p, "machine": r, "start": start,
                         "end": start + float(self.D[a, n])})
        return bars

    def to_json(self) -> str:
        doc = {
            "Ws": self.Ws.tolist(), "Wf": self.Wf.tolist(),
            "Bs": self.Bs.tolist(), "Bp": self.Bp.tolist(),
            "Bf": self.Bf.tolist(),
            "T": self.T.tolist(), "Tf": self.Tf.tolist(),
            "D": self.D.tolist(),
            "Y": [[r, p1, p2, n, v] for (r, p1, p2, n), v in sorted(self.Y.items())],
            "S": self.S.tolist(),
            "makespan": self.makespan,
            "changeover_cost": self.changeover_cost,
            "objective": self.objective,
            "gantt": self.gantt(),
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str, instance: SchedulingInstance) -> "Schedule":
        doc = json.loads(text)
        return cls(
            instance=instance,
            Ws=np.array(doc["Ws"], dtype=int), Wf=np.array(doc["Wf"], dtype=int),
            Bs=np.array(doc["Bs"]), Bp=np.array(doc["Bp"]), Bf=np.array(doc["Bf"]),
            T=np.array(doc["T"]), Tf=np.array(doc["Tf"]), D=np.array(doc["D"]),
            Y={(r, p1, p2, int(n)): int(v) for r, p1, p2, n, v in doc["Y"]},
            S=np.array(doc["S"]),
            makespan=float(doc["makespan"]),
            changeover_cost=float(doc["changeover_cost"]),
            objective=float(doc["objective"]),
        )


def build_scheduling_milp(
        inst: SchedulingInstance, targets: dict[str, float],
        mode: str = NOMINAL,
        surrogates: dict[tuple[str, str], Mlp] | None = None,
        include_tightening: bool = True,
        fixed: "Schedule | None" = None,
        fixed_durations: dict[tuple[int, int], float] | None = None,
        control_weights: tuple[float, float] | None = None) -> LinearModel:
    """Assemble the stage MILP for the given per-material targets.

    ``surrogate`` mode needs one network per (production, machine) task
    mapping the start batch size to (processing time, energy); the time
    output gates into the duration through big-M activation on the start
    flag.  ``fixed`` mode pins all binaries and batch variables of a given
    schedule and swaps in externally computed durations, leaving only the
    timing LP.
    """
    inst.validate()
    if any(v < 0 for v in targets.values()):
        raise ModelError("negative production target")
    if mode == SURROGATE:
        if surrogates is None:
            raise ModelError("surrogate mode needs control surrogates")
        for p, r in inst.tasks:
            if (p, r) not in surrogates:
                raise ModelError(f"missing control surrogate for ({p}, {r})")
    if mode == FIXED and (fixed is None or fixed_durations is None):
        raise ModelError("fixed mode needs a schedule and durations")

    N = inst.events
    n_last = inst.n_last
    M = inst.M_big
    tasks = inst.tasks
    m = LinearModel(f"sched_{mode}", m_big=M)
    idx: dict = {}

    for a, (p, r) in enumerate(tasks):
        for n in range(N):
            ws = m.add_var(f"Ws[{p},{r},{n}]", 0.0,
                           0.0 if n == n_last else 1.0, binary=True)
            wf = m.add_var(f"Wf[{p},{r},{n}]", 0.0,
                           0.0 if n == 0 else 1.0, binary=True)
            idx[("Ws", a, n)] = ws
            idx[("Wf", a, n)] = wf
    for a, (p, r) in enumerate(tasks):
        cap = inst.Bmax[(p, r)]
        for n in range(N):
            idx[("Bs", a, n)] = m.add_var(f"Bs[{p},{r},{n}]", 0.0, cap)
            idx[("Bp", a, n)] = m.add_var(f"Bp[{p},{r},{n}]", 0.0, cap)
            idx[("Bf", a, n)] = m.add_var(f"Bf[{p},{r},{n}]", 0.0, cap)
    for n in range(N):
        idx[("T", n)] = m.add_var(f"T[{n}]", 0.0, 0.0 if n == 0 else np.inf)
    for a, (p, r) in enumerate(tasks):
        for n in range(N):
            idx[("Tf", a, n)] = m.add_var(f"Tf[{p},{r},{n}]", 0.0, np.inf)
    idx[("MS",)] = m.add_var("MS", 0.0, np.inf)
    pairs = inst.changeover_pairs()
    for (r, p1, p2) in pairs:
        for n in range(1, n_last + 1):
            idx[("Y", r, p1, p2, n)] = m.add_var(f"Y[{r},{p1},{p2},{n}]", 0.0, 1.0)
    for s in inst.materials:
        for n in range(N):
            idx[("S", s, n)] = m.add_var(f"St[{s},{n}]", 0.0, np.inf)

    def a_of(p, r):
        return tasks.index((p, r))

    def tcch_terms(a, n, sign=1.0):
        """Changeover time charged to task a at event n: kappa * Y[.., n+1]."""
        p, r = tasks[a]
        row = {}
        if n + 1 <= n_last:
            for (rr, p1, p2) in pairs:
                if rr == r and p1 == p:
                    key = ("Y", rr, p1, p2, n + 1)
                    row[idx[key]] = sign * inst.kappa[(rr, p1, p2)]
        return row

    # per-assignment durations
    dur_expr: dict[tuple[int, int], dict[int, float]] = {}
    if mode == SURROGATE:
        surr_meta = []
        for a, (p, r) in enumerate(tasks):
            net = surrogates[(p, r)]
            for n in range(N):
                d = m.add_var(f"D[{p},{r},{n}]", 0.0, M)
                y_tf = m.add_var(f"tfhat[{p},{r},{n}]", -np.inf, np.inf)
                y_en = m.add_var(f"enhat[{p},{r},{n}]", -np.inf, np.inf)
                encode_mlp(m, net, [idx[("Bs", a, n)]], [y_tf, y_en],
                           prefix=f"ctrl_{p}_{r}_{n}")
                ws = idx[("Ws", a, n)]
                # D >= alpha*Ws + tfhat - M(1-Ws); optimality pins D down
                m.add_constr({d: 1.0, ws: -(inst.alpha[(p, r)] + M),
                              y_tf: -1.0}, GE, -M, name=f"gate_lo[{p},{r},{n}]")
                m.add_constr({d: 1.0, ws: -M}, LE, 0.0,
                             name=f"gate_off[{p},{r},{n}]")
                dur_expr[(a, n)] = {d: 1.0}
                surr_meta.append((a, n, y_tf, y_en))
        m.meta["surrogate_outputs"] = surr_meta
    elif mode == FIXED:
        for a, (p, r) in enumerate(tasks):
            for n in range(N):
                dur_expr[(a, n)] = {}
        m.meta["fixed_durations"] = dict(fixed_durations)
    else:
        for a, (p, r) in enumerate(tasks):
            for n in range(N):
                dur_expr[(a, n)] = {idx[("Ws", a, n)]: inst.alpha[(p, r)],
                                    idx[("Bs", a, n)]: inst.beta[(p, r)]}

    def dur_const(a, n) -> float:
        if mode == FIXED:
            return float(fixed_durations.get((a, n), 0.0))
        return 0.0

    def add_row(base: dict[int, float], extra: dict[int, float]):
        for j, c in extra.items():
            base[j] = base.get(j, 0.0) + c
        return base

    # assignment rows
    for r in inst.machines:
        rts = [a_of(p, rr) for (p, rr) in inst.machine_tasks(r)]
        for n in range(N):
            m.add_constr({idx[("Ws", a, n)]: 1.0 for a in rts}, LE, 1.0,
                         name=f"one_start[{r},{n}]")
            m.add_constr({idx[("Wf", a, n)]: 1.0 for a in rts}, LE, 1.0,
                         name=f"one_finish[{r},{n}]")
            row: dict[int, float] = {}
            for a in rts:
                for n2 in range(n + 1):
                    add_row(row, {idx[("Ws", a, n2)]: 1.0,
                                  idx[("Wf", a, n2)]: -1.0})
            m.add_constr(row, LE, 1.0, name=f"one_running[{r},{n}]")
        for a in rts:
            for n in range(n_last):
                row = {idx[("Wf", a, n)]: -1.0}
                for a2 in rts:
                    row[idx[("Ws", a2, n)]] = row.get(idx[("Ws", a2, n)], 0.0) + 1.0
                m.add_constr(row, GE, 0.0, name=f"chain[{r},{a},{n}]")
    for a in range(len(tasks)):
        row = {}
        for n in range(N):
            add_row(row, {idx[("Ws", a, n)]: 1.0, idx[("Wf", a, n)]: -1.0})
        m.add_constr(row, EQ, 0.0, name=f"start_finish[{a}]")

    # duration, finish time, and time matching
    for a in range(len(tasks)):
        for n in range(N):
            # Tf >= T + D + TCCH - M(1 - Ws)
            row = {idx[("Tf", a, n)]: 1.0, idx[("T", n)]: -1.0,
                   idx[("Ws", a, n)]: -M}
            add_row(row, {j: -c for j, c in dur_expr[(a, n)].items()})
            add_row(row, tcch_terms(a, n, sign=-1.0))
            m.add_constr(row, GE, -M + dur_const(a, n), name=f"tf_lo[{a},{n}]")
            if n >= 1:
                m.add_constr({idx[("Tf", a, n)]: 1.0, idx[("Tf", a, n - 1)]: -1.0,
                              idx[("Ws", a, n)]: -M}, LE, 0.0,
                             name=f"tf_step[{a},{n}]")
                row = {idx[("Tf", a, n)]: 1.0, idx[("Tf", a, n - 1)]: -1.0}
                add_row(row, {j: -c for j, c in dur_expr[(a, n)].items()})
                add_row(row, tcch_terms(a, n, sign=-1.0))
                m.add_constr(row, LE, dur_const(a, n), name=f"tf_incr[{a},{n}]")
                m.add_constr({idx[("Tf", a, n - 1)]: 1.0, idx[("T", n)]: -1.0,
                              idx[("Wf", a, n)]: M}, LE, M,
                             name=f"match_hi[{a},{n}]")
                m.add_constr({idx[("Tf", a, n - 1)]: 1.0, idx[("T", n)]: -1.0,
                              idx[("Wf", a, n)]: -M}, GE, -M,
                             name=f"match_lo[{a},{n}]")
    for n in range(N - 1):
        m.add_constr({idx[("T", n + 1)]: 1.0, idx[("T", n)]: -1.0}, GE, 0.0,
                     name=f"t_mono[{n}]")
    m.add_constr({idx[("T", n_last)]: 1.0, idx[("MS",)]: -1.0}, EQ, 0.0,
                 name="makespan")

    # batch rows
    for a, (p, r) in enumerate(tasks):
        bmin, bmax = inst.Bmin[(p, r)], inst.Bmax[(p, r)]
        for n in range(N):
            m.add_constr({idx[("Bs", a, n)]: 1.0, idx[("Ws", a, n)]: -bmin},
                         GE, 0.0, name=f"bs_lo[{a},{n}]")
            m.add_constr({idx[("Bs", a, n)]: 1.0, idx[("Ws", a, n)]: -bmax},
                         LE, 0.0, name=f"bs_hi[{a},{n}]")
            m.add_constr({idx[("Bf", a, n)]: 1.0, idx[("Wf", a, n)]: -bmin},
                         GE, 0.0, name=f"bf_lo[{a},{n}]")
            m.add_constr({idx[("Bf", a, n)]: 1.0, idx[("Wf", a, n)]: -bmax},
                         LE, 0.0, name=f"bf_hi[{a},{n}]")
            lo_row = {idx[("Bp", a, n)]: 1.0}
            hi_row = {idx[("Bp", a, n)]: 1.0}
            for n2 in range(n):
                lo_row[idx[("Ws", a, n2)]] = -bmin
                hi_row[idx[("Ws", a, n2)]] = -bmax
            for n2 in range(n + 1):
                lo_row[idx[("Wf", a, n2)]] = lo_row.get(idx[("Wf", a, n2)], 0.0) + bmin
                hi_row[idx[("Wf", a, n2)]] = hi_row.get(idx[("Wf", a, n2)], 0.0) + bmax
            m.add_constr(lo_row, GE, 0.0, name=f"bp_lo[{a},{n}]")
            m.add_constr(hi_row, LE, 0.0, name=f"bp_hi[{a},{n}]")
            if n >= 1:
                m.add_constr({idx[("Bs", a, n - 1)]: 1.0, idx[("Bp", a, n - 1)]: 1.0,
                              idx[("Bp", a, n)]: -1.0, idx[("Bf", a, n)]: -1.0},
                             EQ, 0.0, name=f"bflow[{a},{n}]")

    # material balances and targets
    for s in inst.materials:
        for n in range(N):
            row = {idx[("S", s, n)]: 1.0}
            if n >= 1:
                row[idx[("S", s, n - 1)]] = -1.0
            for a, (p, r) in enumerate(tasks):
                xo = inst.xi_out.get(p, {}).get(s, 0.0)
                if xo > 0.0 and n >= 1:
                    row[idx[("Bf", a, n)]] = row.get(idx[("Bf", a, n)], 0.0) - xo
                xi = inst.xi_in.get(p, {}).get(s, 0.0)
                if xi > 0.0:
                    row[idx[("Bs", a, n)]] = row.get(idx[("Bs", a, n)], 0.0) + xi
            rhs = inst.S0.get(s, 0.0) if n == 0 else 0.0
            m.add_constr(row, EQ, rhs, name=f"sbal[{s},{n}]")
        m.add_constr({idx[("S", s, n_last)]: 1.0}, GE,
                     float(targets.get(s, 0.0)), name=f"target[{s}]")

    # changeover coupling (defines Y; always present)
    for (r, p1, p2) in pairs:
        a1, a2 = a_of(p1, r), a_of(p2, r)
        for n in range(1, n_last):
            m.add_constr({idx[("Y", r, p1, p2, n)]: 1.0,
                          idx[("Wf", a1, n)]: -1.0, idx[("Ws", a2, n)]: -1.0},
                         GE, -1.0, name=f"y_def[{r},{p1},{p2},{n}]")

    # minimum batch counts per produced material: each batch yields at most
    # xi_out * Bmax, so meeting the net requirement forces an integral
    # number of starts; this tightens the relaxation and never cuts an
    # integer-feasible schedule
    for s, need in _min_production(inst, targets).items():
        producers = [(a, inst.xi_out[p][s] * inst.Bmax[(p, r)])
                     for a, (p, r) in enumerate(tasks)
                     if inst.xi_out.get(p, {}).get(s, 0.0) > 0.0]
        caps = [c for _, c in producers if c > 0.0]
        if not caps or need <= 0.0:
            continue
        min_batches = int(np.ceil(need / max(caps) - 1e-9))
        if min_batches >= 1:
            row = {}
            for a, _ in producers:
                for n in range(n_last):
                    row[idx[("Ws", a, n)]] = 1.0
            m.add_constr(row, GE, float(min_batches), name=f"min_batches[{s}]")

    if include_tightening:
        for r in inst.machines:
            rts = [a_of(p, rr) for (p, rr) in inst.machine_tasks(r)]
            row = {idx[("MS",)]: -1.0}
            for a in rts:
                for n in range(N):
                    add_row(row, dur_expr[(a, n)])
                    add_row(row, tcch_terms(a, n))
            m.add_constr(row, LE, -sum(dur_const(a, n) for a in rts
                                       for n in range(N)),
                         name=f"tight_total[{r}]")
            for n in range(N):
                row = {idx[("MS",)]: -1.0, idx[("T", n)]: 1.0}
                const = 0.0
                for a in rts:
                    for n2 in range(n, N):
                        add_row(row, dur_expr[(a, n2)])
                        add_row(row, tcch_terms(a, n2))
                        const += dur_const(a, n2)
                m.add_constr(row, LE, -const, name=f"tight_tail[{r},{n}]")
            if mode == NOMINAL:
                for n in range(N):
                    row = {idx[("T", n)]: -1.0}
                    for a in rts:
                        p, rr = tasks[a]
                        for n2 in range(n):
                            add_row(row, {idx[("Wf", a, n2)]: inst.alpha[(p, rr)],
                                          idx[("Bf", a, n2)]: inst.beta[(p, rr)]})
                            add_row(row, tcch_terms(a, n2))
                    m.add_constr(row, LE, 0.0, name=f"tight_done[{r},{n}]")

    if mode == FIXED:
        for a in range(len(tasks)):
            for n in range(N):
                m.fix_var(idx[("Ws", a, n)], round(float(fixed.Ws[a, n])))
                m.fix_var(idx[("Wf", a, n)], round(float(fixed.Wf[a, n])))
                m.fix_var(idx[("Bs", a, n)], float(fixed.Bs[a, n]))
                m.fix_var(idx[("Bp", a, n)], float(fixed.Bp[a, n]))
                m.fix_var(idx[("Bf", a, n)], float(fixed.Bf[a, n]))
        for key, j in idx.items():
            if key[0] == "Ws" or key[0] == "Wf":
                m._vars[j].binary = False
        for (r, p1, p2) in pairs:
            for n in range(1, n_last + 1):
                m.fix_var(idx[("Y", r, p1, p2, n)],
                          float(fixed.Y.get((r, p1, p2, n), 0)))

    obj = {idx[("MS",)]: 1.0}
    for (r, p1, p2) in pairs:
        for n in range(1, n_last + 1):
            obj[idx[("Y", r, p1, p2, n)]] = inst.rho_changeover
    m.set_objective(obj)
    m.meta["index"] = idx
    m.meta["mode"] = mode
    m.meta["targets"] = dict(targets)
    return m


class ExtractionError(ValueError):
    """Solver values inconsistent with an integral schedule."""


def extract_schedule(result: SolveResult, inst: SchedulingInstance,
                     model: LinearModel, int_tol: float = 1e-5) -> Schedule:
    """Round binaries, rebuild all schedule fields, recompute the totals."""
    if result.status not in (SolveStatus.OPTIMAL, SolveStatus.ITERATION_LIMIT) \
            or result.x is None:
        raise ExtractionError("no incumbent to extract")
    idx = model.meta["index"]
    x = result.x
    N = inst.events
    nt = len(inst.tasks)

    def grab(kind):
        arr = np.zeros((nt, N))
        for a in range(nt):
            for n in range(N):
                arr[a, n] = x[idx[(kind, a, n)]]
        return arr

    Ws_raw, Wf_raw = grab("Ws"), grab("Wf")
    for name, arr in (("Ws", Ws_raw), ("Wf", Wf_raw)):
        off = np.abs(arr - np.round(arr))
        if off.max() > int_tol:
            raise ExtractionError(f"{name} fractional by {off.max():.3g}")
    Ws = np.round(Ws_raw).astype(int)
    Wf = np.round(Wf_raw).astype(int)
    Bs, Bp, Bf = grab("Bs"), grab("Bp"), grab("Bf")
    T = np.array([x[idx[("T", n)]] for n in range(N)])
    Tf = grab("Tf")
    Y = {}
    for (r, p1, p2) in inst.changeover_pairs():
        for n in range(1, inst.n_last + 1):
            v = x[idx[("Y", r, p1, p2, n)]]
            if abs(v - round(v)) > int_tol:
                raise ExtractionError("changeover indicator fractional")
            Y[(r, p1, p2, n)] = int(round(v))
    S = np.zeros((len(inst.materials), N))
    for b, s in enumerate(inst.materials):
        for n in range(N):
            S[b, n] = x[idx[("S", s, n)]]
    mode = model.meta["mode"]
    D = np.zeros((nt, N))
    for a, (p, r) in enumerate(inst.tasks):
        for n in range(N):
            if mode == SURROGATE:
                D[a, n] = x[model.var_index(f"D[{p},{r},{n}]")]
            elif mode == FIXED:
                D[a, n] = model.meta["fixed_durations"].get((a, n), 0.0) * Ws[a, n]
            else:
                D[a, n] = inst.alpha[(p, r)] * Ws[a, n] + inst.beta[(p, r)] * Bs[a, n]
    makespan = float(T[inst.n_last])
    cch = float(sum(inst.kappa[(r, p1, p2)] * v
                    for (r, p1, p2, n), v in Y.items()))
    objective = makespan + inst.rho_changeover * sum(Y.values())
    if abs(objective - result.objective) > 1e-4 * max(1.0, abs(objective)):
        raise ExtractionError("recomputed objective disagrees with solver")
    return Schedule(inst, Ws, Wf, Bs, Bp, Bf, T, Tf, D, Y, S,
                    makespan, cch, float(objective))


@dataclass
class Violation:
    family: str
    where: str
    amount: float

    def __str__(self):
        return f"{self.family} at {self.where}: {self.amount:.3g}"


def verify_schedule(inst: SchedulingInstance, sched: Schedule,
                    targets: dict[str, float], tol: float = 1e-6,
                    durations: np.ndarray | None = None) -> list[Violation]:
    """Re-check every constraint family by direct arithmetic.

    Accepts any time assignment satisfying the written inequalities (the
    finish-time trackers are free to float while a task is idle).  Pass
    ``durations`` to verify against externally supplied processing times
    instead of the nominal alpha/beta rule.
    """
    out: list[Violation] = []
    N = inst.events
    n_last = inst.n_last
    tasks = inst.tasks
    Ws, Wf = sched.Ws, sched.Wf
    M = inst.M_big

    def flag(family, where, amount):
        if amount > tol:
            out.append(Violation(family, where, float(amount)))

    # assignment family
    for r in inst.machines:
        rts = [tasks.index((p, rr)) for (p, rr) in inst.machine_tasks(r)]
        for n in range(N):
            flag("assignment", f"one_start[{r},{n}]",
                 sum(Ws[a, n] for a in rts) - 1.0)
            flag("assignment", f"one_finish[{r},{n}]",
                 sum(Wf[a, n] for a in rts) - 1.0)
            running = sum(Ws[a, n2] - Wf[a, n2] for a in rts
                          for n2 in range(n + 1))
            flag("assignment", f"one_running[{r},{n}]", running - 1.0)
        for a in rts:
            for n in range(n_last):
                flag("assignment", f"chain[{r},{a},{n}]",
                     Wf[a, n] - sum(Ws[a2, n] for a2 in rts))
    for a in range(len(tasks)):
        flag("assignment", f"start_finish[{a}]",
             abs(Ws[a].sum() - Wf[a].sum()))
        flag("assignment", f"no_finish_first[{a}]", Wf[a, 0])
        flag("assignment", f"no_start_last[{a}]", Ws[a, n_last])

    # changeover consistency
    for (r, p1, p2) in inst.changeover_pairs():
        a1 = tasks.index((p1, r))
        a2 = tasks.index((p2, r))
        for n in range(1, n_last):
            y = sched.Y.get((r, p1, p2, n), 0)
            flag("changeover", f"y_def[{r},{p1},{p2},{n}]",
                 Wf[a1, n] + Ws[a2, n] - 1.0 - y)
    cch = sum(inst.kappa[(r, p1, p2)] * v
              for (r, p1, p2, n), v in sched.Y.items())
    flag("changeover", "cost", abs(cch - sched.changeover_cost))

    def tcch(a, n):
        p, r = tasks[a]
        if n + 1 > n_last:
            return 0.0
        return sum(inst.kappa[(r, p, p2)] * sched.Y.get((r, p, p2, n + 1), 0)
                   for (rr, pp, p2) in inst.changeover_pairs()
                   if rr == r and pp == p)

    # duration and time matching
    T, Tf = sched.T, sched.Tf
    flag("time", "t_origin", abs(T[0]))
    flag("time", "makespan", abs(T[n_last] - sched.makespan))
    for n in range(N - 1):
        flag("time", f"t_mono[{n}]", T[n] - T[n + 1])
    for a, (p, r) in enumerate(tasks):
        for n in range(N):
            d = sched.D[a, n] if durations is None else durations[a, n]
            if durations is None:
                nominal = inst.alpha[(p, r)] * Ws[a, n] \
                    + inst.beta[(p, r)] * sched.Bs[a, n]
                flag("duration", f"d_rule[{a},{n}]",
                     abs(sched.D[a, n] - nominal))
            flag("duration", f"tf_lo[{a},{n}]",
                 T[n] + d + tcch(a, n) - M * (1 - Ws[a, n]) - Tf[a, n])
            if n >= 1:
                flag("duration", f"tf_step[{a},{n}]",
                     Tf[a, n] - Tf[a, n - 1] - M * Ws[a, n])
                flag("duration", f"tf_incr[{a},{n}]",
                     Tf[a, n] - Tf[a, n - 1] - d - tcch(a, n))
                flag("time", f"match_hi[{a},{n}]",
                     Tf[a, n - 1] - T[n] - M * (1 - Wf[a, n]))
                flag("time", f"match_lo[{a},{n}]",
                     T[n] - Tf[a, n - 1] - M * (1 - Wf[a, n]))

    # batch family
    for a, (p, r) in enumerate(tasks):
        bmin, bmax = inst.Bmin[(p, r)], inst.Bmax[(p, r)]
        for n in range(N):
            flag("batch", f"bs_lo[{a},{n}]", bmin * Ws[a, n] - sched.Bs[a, n])
            flag("batch", f"bs_hi[{a},{n}]", sched.Bs[a, n] - bmax * Ws[a, n])
            flag("batch", f"bf_lo[{a},{n}]", bmin * Wf[a, n] - sched.Bf[a, n])
            flag("batch", f"bf_hi[{a},{n}]", sched.Bf[a, n] - bmax * Wf[a, n])
            inflight = sum(Ws[a, :n]) - sum(Wf[a, :n + 1])
            flag("batch", f"bp_lo[{a},{n}]",
                 bmin * inflight - sched.Bp[a, n])
            flag("batch", f"bp_hi[{a},{n}]",
                 sched.Bp[a, n] - bmax * inflight)
            if n >= 1:
                flag("batch", f"bflow[{a},{n}]",
                     abs(sched.Bs[a, n - 1] + sched.Bp[a, n - 1]
                         - sched.Bp[a, n] - sched.Bf[a, n]))

    # mass balance and targets
    for b, s in enumerate(inst.materials):
        prev = inst.S0.get(s, 0.0)
        for n in range(N):
            produced = sum(inst.xi_out.get(p, {}).get(s, 0.0) * sched.Bf[a, n]
                           for a, (p, r) in enumerate(tasks)) if n >= 1 else 0.0
            consumed = sum(inst.xi_in.get(p, {}).get(s, 0.0) * sched.Bs[a, n]
                           for a, (p, r) in enumerate(tasks))
            expect = prev + produced - consumed
            flag("mass", f"sbal[{s},{n}]", abs(sched.S[b, n] - expect))
            flag("mass", f"snonneg[{s},{n}]", -sched.S[b, n])
            prev = sched.S[b, n]
        flag("target", f"target[{s}]",
             float(targets.get(s, 0.0)) - sched.S[b, n_last])
    return out


def _min_production(inst: SchedulingInstance,
                    targets: dict[str, float]) -> dict[str, float]:
    """Sound lower bound on the amount of each material that must be made:
    the target shortfall plus consumption pulled by products that must
    themselves be produced (one level of the recipe chain)."""
    need0 = {s: max(0.0, targets.get(s, 0.0) - inst.S0.get(s, 0.0))
             for s in inst.materials}
    producers: dict[str, set[str]] = {}
    for p in inst.products:
        for s in inst.xi_out.get(p, {}):
            producers.setdefault(s, set()).add(p)
    pull: dict[str, float] = {s: 0.0 for s in inst.materials}
    for p in inst.products:
        outs = inst.xi_out.get(p, {})
        if not outs:
            continue
        out_s = max(outs, key=outs.get)
        if len(producers.get(out_s, set())) != 1:
            continue        # shared outputs: attribution would double count
        batch_mass = need0.get(out_s, 0.0) / outs[out_s]
        for s, coef in inst.xi_in.get(p, {}).items():
            pull[s] = pull.get(s, 0.0) + coef * batch_mass
    return {s: max(0.0, targets.get(s, 0.0) - inst.S0.get(s, 0.0) + pull[s])
            for s in inst.materials}


def stage_possibly_feasible(inst: SchedulingInstance,
                            targets: dict[str, float]) -> bool:
    """Cheap sound screen: can aggregate capacity possibly meet the targets?

    Relaxes the stage to total processed amounts per task with per-machine
    batch-count capacity (one finish per machine and event).  Infeasibility
    here certifies the stage MILP is infeasible; feasibility proves nothing.
    """
    if all(targets.get(s, 0.0) <= inst.S0.get(s, 0.0) for s in inst.materials):
        return True
    cap = inst.task_upper_bounds()
    if any(targets.get(s, 0.0) > cap.get(s, 0.0) + 1e-9 for s in inst.materials):
        return False
    m = LinearModel("prescreen")
    q = {key: m.add_var(f"q[{key[0]},{key[1]}]", 0.0,
                        inst.Bmax[key] * inst.n_last)
         for key in inst.tasks}
    for r in inst.machines:
        row = {q[key]: 1.0 / inst.Bmax[key]
               for key in inst.machine_tasks(r) if inst.Bmax[key] > 0}
        if row:
            m.add_constr(row, LE, float(inst.n_last), name=f"slots[{r}]")
    for s in inst.materials:
        row = {}
        for key in inst.tasks:
            p = key[0]
            net = inst.xi_out.get(p, {}).get(s, 0.0) \
                - inst.xi_in.get(p, {}).get(s, 0.0)
            if net != 0.0:
                row[q[key]] = net
        m.add_constr(row, GE,
                     float(targets.get(s, 0.0)) - inst.S0.get(s, 0.0),
                     name=f"net[{s}]")
    m.set_objective({})
    return solve_lp(m).status is SolveStatus.OPTIMAL


def empty_schedule(inst: SchedulingInstance) -> Schedule:
    """The do-nothing schedule (optimal whenever stock covers the targets)."""
    nt, N = len(inst.tasks), inst.events
    S = np.zeros((len(inst.materials), N))
    for b, s in enumerate(inst.materials):
        S[b, :] = inst.S0.get(s, 0.0)
    z = np.zeros((nt, N))
    return Schedule(inst, z.astype(int), z.astype(int), z.copy(), z.copy(),
                    z.copy(), np.zeros(N), z.copy(), z.copy(), {}, S,
                    0.0, 0.0, 0.0)


def solve_stage_lp_with_durations(
        inst: SchedulingInstance, sched: Schedule,
        durations: dict[tuple[int, int], float],
        targets: dict[str, float]):
    """Re-time a fixed schedule under externally supplied durations.

    Returns the timing LP's solve result (objective = corrected makespan
    plus the unchanged changeover penalty).
    """
    model = build_scheduling_milp(inst, targets, mode=FIXED, fixed=sched,
                                  fixed_durations=durations,
                                  include_tightening=False)
    return solve_lp(model), model
