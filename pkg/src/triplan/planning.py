"""Multi-site production planning: LP builder, simulator, surrogate embedding.

The planning level decides monthly production, inter-site transport of the
shared intermediate, and sales against demand, minimizing production,
storage, and transport cost net of revenue.  Inventory follows a forward
mass balance with consumption overhead pulled by successor production and a
lead-time-lagged transport inflow.  ``simulate_planning`` evaluates the same
physics for arbitrary (not necessarily feasible) decisions and reports
aggregated constraint violations, which is what the derivative-free layer
optimizes against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linmodel import EQ, GE, LE, LinearModel, ModelError
from .mlp import Mlp, encode_mlp


@dataclass
class PlanningInstance:
    sites: list[str]
    materials: list[str]
    products: list[str]
    T: int
    Tc: int
    to_tc: list[int]                      # 1-based bucket per timestep
    CP: dict[str, float]
    CS: dict[str, float]
    CT: dict[str, float]                  # per destination site
    SP: dict[str, float]
    Q: dict[str, dict[str, float]]        # yield factor per (material, site)
    X: dict[str, list[str]]               # producible materials per site
    successors: dict[str, list[str]]
    overhead: float
    resources: list[str]
    U: dict[str, dict[str, float]]
    A: dict[str, dict[str, float]]
    D: dict[str, list[float]]
    LT: dict[str, int]
    S0: dict[str, dict[str, float]]       # material -> site -> amount
    Sstar: dict[str, dict[str, float]]    # material -> site -> safe level
    transport_source: tuple[str, str]     # (material, origin site)
    transport_dest_material: dict[str, str]
    sale_site: dict[str, str]
    safe_relax_factor: float = 0.25
    safe_relax_until: int = 4
    M_big: float = 1e4

    def __post_init__(self):
        self.dests = sorted(self.transport_dest_material)

    def validate(self) -> None:
        if len(self.to_tc) != self.T:
            raise ValueError("to_tc must map every timestep")
        if any(b2 < b1 for b1, b2 in zip(self.to_tc, self.to_tc[1:])):
            raise ValueError("to_tc must be nondecreasing")
        if sorted(set(self.to_tc)) != list(range(1, self.Tc + 1)):
            raise ValueError("to_tc must be surjective onto the transport steps")
        for d, rows in self.D.items():
            if len(rows) != self.T:
                raise ValueError(f"demand series for {d} has wrong length")
            for t, v in enumerate(rows):
                if v < 0:
                    raise ValueError(f"negative demand D[{d},{t + 1}]")
        for name, table in (("CP", self.CP), ("CS", self.CS), ("CT", self.CT),
                            ("SP", self.SP)):
            for k, v in table.items():
                if v < 0:
                    raise ValueError(f"negative cost {name}[{k}]")
        for mat, per_site in self.S0.items():
            for site, v in per_site.items():
                if v < 0:
                    raise ValueError(f"negative initial inventory S0[{mat},{site}]")
        for l, mats in self.X.items():
            for i in mats:
                if self.Q.get(i, {}).get(l, 0.0) <= 0:
                    raise ValueError(f"production of {i} at {l} needs Q > 0")

    # -- index helpers -------------------------------------------------------

    def produced_pairs(self) -> list[tuple[str, str]]:
        """(material, site) pairs the mask allows, in canonical order."""
        return [(i, l) for l in self.sites for i in self.materials
                if i in self.X.get(l, [])]

    def s0(self, i: str, l: str) -> float:
        return self.S0.get(i, {}).get(l, 0.0)

    def sstar(self, i: str, l: str) -> float:
        return self.Sstar.get(i, {}).get(l, 0.0)

    def safe_level(self, i: str, l: str, t: int) -> float:
        """Safe-storage floor at 1-based timestep t (early steps relaxed)."""
        s = self.sstar(i, l)
        return self.safe_relax_factor * s if t <= self.safe_relax_until else s

    def bucket(self, t: int) -> int:
        return self.to_tc[t - 1]

    def resource_cap_per_product(self, p: str, l: str) -> float:
        """Largest single-product monthly production the resources allow."""
        cap = np.inf
        for r in self.resources:
            u = self.U.get(l, {}).get(r, 0.0) * self.Q.get(p, {}).get(l, 0.0)
            if u > 0:
                cap = min(cap, self.A[l][r] / u)
        return cap


@dataclass
class PlanningDecision:
    """Raw decision arrays shaped by the instance index sets."""

    x_prod: np.ndarray    # (materials, sites, T)
    x_transp: np.ndarray  # (dests, Tc)
    x_sales: np.ndarray   # (products, T)
    x_store: np.ndarray | None = None

    def copy(self) -> "PlanningDecision":
        return PlanningDecision(
            self.x_prod.copy(), self.x_transp.copy(), self.x_sales.copy(),
            None if self.x_store is None else self.x_store.copy())


@dataclass
class PlanningSim:
    x_store: np.ndarray
    f_p: float
    g_viol: np.ndarray
    g_labels: list[str]


def _consumption(inst: PlanningInstance, x_prod, i_idx, l_idx, mats, t0):
    """Overhead-scaled pull of material i at site l by successor production."""
    total = 0.0
    i = mats[i_idx]
    l = inst.sites[l_idx]
    for succ in inst.successors.get(i, []):
        q = inst.Q.get(succ, {}).get(l, 0.0)
        if q > 0.0 and succ in inst.X.get(l, []):
            total += q * x_prod[mats.index(succ), l_idx, t0]
    return inst.overhead * total


def build_planning_lp(inst: PlanningInstance) -> LinearModel:
    """The planning LP: mass balances and resource rows over masked bounds.

    Production masks, demand caps, and safe-storage floors are expressed as
    variable bounds; the rows are the inventory balances (equalities) and
    per-site resource limits.
    """
    inst.validate()
    m = LinearModel("planning", m_big=inst.M_big)
    idx: dict = {}
    mats = inst.materials
    for i in mats:
        for l in inst.sites:
            produced = i in inst.X.get(l, [])
            cap = inst.M_big if produced else 0.0
            if produced:
                cap = min(cap, inst.resource_cap_per_product(i, l))
            for t in range(1, inst.T + 1):
                idx[("P", i, l, t)] = m.add_var(f"P[{i},{l},{t}]", 0.0, cap)
    for i in mats:
        for l in inst.sites:
            for t in range(1, inst.T + 1):
                idx[("S", i, l, t)] = m.add_var(
                    f"S[{i},{l},{t}]", inst.safe_level(i, l, t), np.inf)
    for l in inst.dests:
        for tc in range(1, inst.Tc + 1):
            idx[("TP", l, tc)] = m.add_var(f"TP[{l},{tc}]", 0.0, inst.M_big)
    for p in inst.products:
        for t in range(1, inst.T + 1):
            idx[("SA", p, t)] = m.add_var(f"SA[{p},{t}]", 0.0,
                                          float(inst.D[p][t - 1]))

    src_mat, src_site = inst.transport_source
    for i in mats:
        for l in inst.sites:
            for t in range(1, inst.T + 1):
                row = {idx[("S", i, l, t)]: 1.0, idx[("P", i, l, t)]: -1.0}
                rhs = inst.s0(i, l) if t == 1 else 0.0
                if t > 1:
                    row[idx[("S", i, l, t - 1)]] = -1.0
                for succ in inst.successors.get(i, []):
                    if succ in inst.X.get(l, []):
                        q = inst.overhead * inst.Q[succ][l]
                        row[idx[("P", succ, l, t)]] = row.get(
                            idx[("P", succ, l, t)], 0.0) + q
                if i == src_mat and l == src_site:
                    for dest in inst.dests:
                        j = idx[("TP", dest, inst.bucket(t))]
                        row[j] = row.get(j, 0.0) + 1.0
                if l in inst.dests and i == inst.transport_dest_material[l]:
                    lag = t - inst.LT[l]
                    if t > 1 and lag >= 1:
                        j = idx[("TP", l, inst.bucket(lag))]
                        row[j] = row.get(j, 0.0) - 1.0
                if i in inst.products and inst.sale_site[i] == l:
                    row[idx[("SA", i, t)]] = row.get(idx[("SA", i, t)], 0.0) + 1.0
                m.add_constr(row, EQ, rhs, name=f"bal[{i},{l},{t}]")

    for l in inst.sites:
        for r in inst.resources:
            u = inst.U.get(l, {}).get(r, 0.0)
            if u <= 0.0:
                continue
            for t in range(1, inst.T + 1):
                row = {}
                for p in inst.X.get(l, []):
                    row[idx[("P", p, l, t)]] = u * inst.Q[p][l]
                if row:
                    m.add_constr(row, LE, float(inst.A[l][r]),
                                 name=f"res[{l},{r},{t}]")

    obj: dict[int, float] = {}
    for i in mats:
        for l in inst.sites:
            for t in range(1, inst.T + 1):
                obj[idx[("P", i, l, t)]] = obj.get(idx[("P", i, l, t)], 0.0) \
                    + inst.CP.get(i, 0.0)
                obj[idx[("S", i, l, t)]] = obj.get(idx[("S", i, l, t)], 0.0) \
                    + inst.CS.get(i, 0.0)
    for l in inst.dests:
        for tc in range(1, inst.Tc + 1):
            obj[idx[("TP", l, tc)]] = inst.CT[l]
    for p in inst.products:
        for t in range(1, inst.T + 1):
            obj[idx[("SA", p, t)]] = -inst.SP[p]
    m.set_objective(obj)
    m.meta["index"] = idx
    m.meta["instance_kind"] = "planning"
    return m


def decision_from_result(inst: PlanningInstance, x: np.ndarray,
                         model: LinearModel) -> PlanningDecision:
    idx = model.meta["index"]
    mats = inst.materials
    prod = np.zeros((len(mats), len(inst.sites), inst.T))
    store = np.zeros_like(prod)
    transp = np.zeros((len(inst.dests), inst.Tc))
    sales = np.zeros((len(inst.products), inst.T))
    for a, i in enumerate(mats):
        for b, l in enumerate(inst.sites):
            for t in range(1, inst.T + 1):
                prod[a, b, t - 1] = x[idx[("P", i, l, t)]]
                store[a, b, t - 1] = x[idx[("S", i, l, t)]]
    for b, l in enumerate(inst.dests):
        for tc in range(1, inst.Tc + 1):
            transp[b, tc - 1] = x[idx[("TP", l, tc)]]
    for a, p in enumerate(inst.products):
        for t in range(1, inst.T + 1):
            sales[a, t - 1] = x[idx[("SA", p, t)]]
    return PlanningDecision(prod, transp, sales, store)


def simulate_planning(inst: PlanningInstance, x_prod: np.ndarray,
                      x_transp: np.ndarray, x_sales: np.ndarray) -> PlanningSim:
    """Forward-recurse inventories and collect inequality violations.

    Works for any decision arrays; nothing is clamped, all violations are
    reported (never raised): production mask, resource limits, demand caps,
    safe storage, and inventory nonnegativity.
    """
    mats = inst.materials
    nI, nL, T = len(mats), len(inst.sites), inst.T
    if x_prod.shape != (nI, nL, T):
        raise ValueError("x_prod has wrong shape")
    if x_transp.shape != (len(inst.dests), inst.Tc):
        raise ValueError("x_transp has wrong shape")
    if x_sales.shape != (len(inst.products), T):
        raise ValueError("x_sales has wrong shape")
    store = np.zeros((nI, nL, T))
    src_mat, src_site = inst.transport_source
    viol: list[float] = []
    labels: list[str] = []

    for a, i in enumerate(mats):
        for b, l in enumerate(inst.sites):
            prev = inst.s0(i, l)
            for t in range(1, T + 1):
                s = prev + x_prod[a, b, t - 1]
                s -= _consumption(inst, x_prod, a, b, mats, t - 1)
                if i == src_mat and l == src_site:
                    s -= float(x_transp[:, inst.bucket(t) - 1].sum())
                if l in inst.dests and i == inst.transport_dest_material[l]:
                    lag = t - inst.LT[l]
                    if t > 1 and lag >= 1:
                        s += float(x_transp[inst.dests.index(l),
                                            inst.bucket(lag) - 1])
                if i in inst.products and inst.sale_site[i] == l:
                    s -= float(x_sales[inst.products.index(i), t - 1])
                store[a, b, t - 1] = s
                prev = s

    # production mask
    for a, i in enumerate(mats):
        for b, l in enumerate(inst.sites):
            if i not in inst.X.get(l, []):
                amount = float(np.maximum(x_prod[a, b], 0.0).sum())
                viol.append(amount)
                labels.append(f"mask[{i},{l}]")
    # resource limits
    for b, l in enumerate(inst.sites):
        for r in inst.resources:
            u = inst.U.get(l, {}).get(r, 0.0)
            if u <= 0.0:
                continue
            for t in range(T):
                used = sum(u * inst.Q[p][l] * x_prod[mats.index(p), b, t]
                           for p in inst.X.get(l, []))
                viol.append(max(0.0, used - inst.A[l][r]))
                labels.append(f"res[{l},{r},{t + 1}]")
    # demand caps
    for a, p in enumerate(inst.products):
        for t in range(T):
            viol.append(max(0.0, float(x_sales[a, t]) - inst.D[p][t]))
            labels.append(f"demand[{p},{t + 1}]")
    # safe storage and nonnegativity
    for a, i in enumerate(mats):
        for b, l in enumerate(inst.sites):
            for t in range(1, T + 1):
                level = inst.safe_level(i, l, t)
                if level > 0.0:
                    viol.append(max(0.0, level - store[a, b, t - 1]))
                    labels.append(f"safe[{i},{l},{t}]")
                viol.append(max(0.0, -store[a, b, t - 1]))
                labels.append(f"nonneg[{i},{l},{t}]")
    # negative decision entries
    for name, arr in (("prod", x_prod), ("transp", x_transp), ("sales", x_sales)):
        viol.append(float(np.maximum(-arr, 0.0).sum()))
        labels.append(f"nonneg_{name}")

    f_p = float(
        sum(inst.CP.get(i, 0.0) * x_prod[a, b].sum()
            for a, i in enumerate(mats) for b in range(nL))
        + sum(inst.CS.get(i, 0.0) * store[a, b].sum()
              for a, i in enumerate(mats) for b in range(nL))
        + sum(inst.CT[l] * x_transp[inst.dests.index(l)].sum()
              for l in inst.dests)
        - sum(inst.SP[p] * x_sales[a].sum()
              for a, p in enumerate(inst.products))
    )
    return PlanningSim(store, f_p, np.array(viol), labels)


def stage_targets(inst: PlanningInstance, x_prod: np.ndarray, site: str,
                  products: list[str], t: int) -> dict[str, float]:
    """Production targets handed to the stage problem of 1-based month t."""
    b = inst.sites.index(site)
    return {p: float(x_prod[inst.materials.index(p), b, t - 1])
            for p in products}


def build_planning_with_surrogates(
        inst: PlanningInstance, surrogates: list[Mlp], site: str,
        target_products: list[str]) -> LinearModel:
    """Planning LP plus one embedded stage-response network per timestep.

    Each network maps the month's production targets at the scheduling site
    to predicted (stage cost, control cost); both predictions join the
    objective.  The result is a MILP.
    """
    if len(surrogates) != inst.T:
        raise ModelError(f"need {inst.T} surrogates, got {len(surrogates)}")
    m = build_planning_lp(inst)
    idx = m.meta["index"]
    outs = []
    for t in range(1, inst.T + 1):
        net = surrogates[t - 1]
        if net.n_inputs != len(target_products) or net.n_outputs != 2:
            raise ModelError("surrogate shape must map targets to (c_s, c_c)")
        ins = [idx[("P", p, site, t)] for p in target_products]
        c_s = m.add_var(f"chat_s[{t}]", -np.inf, np.inf)
        c_c = m.add_var(f"chat_c[{t}]", -np.inf, np.inf)
        encode_mlp(m, net, ins, [c_s, c_c], prefix=f"stage{t}")
        m.add_objective_term(c_s, 1.0)
        m.add_objective_term(c_c, 1.0)
        outs.append((c_s, c_c))
    m.meta["stage_outputs"] = outs
    return m
