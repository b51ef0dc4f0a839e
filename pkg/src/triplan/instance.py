"""Instance schema: one JSON document with planning/scheduling/control data.

Symbol names in the file mirror the model notation (CP, CS, CT, SP, Q, X, U,
A, D, LT, S0, Sstar, alpha, beta, kappa, Bmin, Bmax, xi, rho, k1, k2, V, VB,
VC, Mbig).  The bundled desk instance is synthetic: index sets are
full-scale (3 sites, 12 months, 7 events, 2 machines, 5 scheduled
productions) but every numeric value is invented and sized for desk
runtimes.
"""

from __future__ import annotations

import importlib.resources
import json
from dataclasses import dataclass

import numpy as np

from .control import ControlInstance
from .planning import PlanningInstance
from .scheduling import SchedulingInstance


class InstanceError(ValueError):
    """Schema or invariant violation in an instance file."""


@dataclass
class InstanceBundle:
    planning: PlanningInstance
    scheduling: SchedulingInstance
    control: ControlInstance
    meta: dict

    @property
    def stage_site(self) -> str:
        return self.meta["stage_site"]

    @property
    def stage_products(self) -> list[str]:
        return self.meta["stage_products"]


def default_to_tc(T: int, Tc: int) -> list[int]:
    width = max(1, T // Tc)
    return [min(Tc, 1 + (t - 1) // width) for t in range(1, T + 1)]


def _require(cond, msg):
    if not cond:
        raise InstanceError(msg)


def _check_keys(doc: dict, allowed: set[str], where: str):
    for key in doc:
        if key not in allowed:
            raise InstanceError(f"unknown field {key!r} in {where}")


_PLANNING_KEYS = {
    "sites", "materials", "products", "T", "Tc", "to_tc", "CP", "CS", "CT",
    "SP", "Q", "X", "successors", "overhead", "resources", "U", "A", "D",
    "LT", "S0", "Sstar", "transport_source", "transport_dest_material",
    "sale_site", "safe_relax_factor", "safe_relax_until",
}
_SCHEDULING_KEYS = {
    "machines", "products", "events", "materials", "alpha", "beta", "kappa",
    "Bmin", "Bmax", "xi", "S0", "rho", "site", "planning_products",
}
_CONTROL_KEYS = {
    "products", "k1", "k2", "V", "VB", "VC", "cA0", "cB0", "cC0", "u_min",
    "u_max", "tf_max", "state_max", "weights", "n_intervals", "steps",
}


def parse_instance(doc: dict) -> InstanceBundle:
    _check_keys(doc, {"meta", "planning", "scheduling", "control"},
                "the top level")
    for section in ("planning", "scheduling", "control"):
        _require(section in doc, f"missing section {section!r}")
    meta = dict(doc.get("meta", {}))
    m_big = float(meta.get("Mbig", 1e4))

    p = dict(doc["planning"])
    _check_keys(p, _PLANNING_KEYS, "planning")
    T = int(p.get("T", 12))
    Tc = int(p.get("Tc", 5))
    planning = PlanningInstance(
        sites=list(p["sites"]),
        materials=list(p["materials"]),
        products=list(p["products"]),
        T=T, Tc=Tc,
        to_tc=[int(v) for v in p.get("to_tc", default_to_tc(T, Tc))],
        CP={k: float(v) for k, v in p["CP"].items()},
        CS={k: float(v) for k, v in p["CS"].items()},
        CT={k: float(v) for k, v in p["CT"].items()},
        SP={k: float(v) for k, v in p["SP"].items()},
        Q={k: {l: float(x) for l, x in v.items()} for k, v in p["Q"].items()},
        X={k: list(v) for k, v in p["X"].items()},
        successors={k: list(v) for k, v in p.get("successors", {}).items()},
        overhead=float(p.get("overhead", 1.1)),
        resources=list(p["resources"]),
        U={k: {r: float(x) for r, x in v.items()} for k, v in p["U"].items()},
        A={k: {r: float(x) for r, x in v.items()} for k, v in p["A"].items()},
        D={k: [float(x) for x in v] for k, v in p["D"].items()},
        LT={k: int(v) for k, v in p["LT"].items()},
        S0={k: {l: float(x) for l, x in v.items()}
            for k, v in p.get("S0", {}).items()},
        Sstar={k: {l: float(x) for l, x in v.items()}
               for k, v in p.get("Sstar", {}).items()},
        transport_source=tuple(p["transport_source"]),
        transport_dest_material=dict(p["transport_dest_material"]),
        sale_site=dict(p["sale_site"]),
        safe_relax_factor=float(p.get("safe_relax_factor", 0.25)),
        safe_relax_until=int(p.get("safe_relax_until", 4)),
        M_big=m_big,
    )
    try:
        planning.validate()
    except ValueError as exc:
        raise InstanceError(f"planning: {exc}") from exc

    s = dict(doc["scheduling"])
    _check_keys(s, _SCHEDULING_KEYS, "scheduling")
    machines = list(s["machines"])
    sched_products = list(s["products"])

    def per_task(table, name):
        out = {}
        for prod, row in table.items():
            _require(prod in sched_products, f"{name} keys unknown production {prod!r}")
            for mach, v in row.items():
                _require(mach in machines, f"{name}[{prod}] unknown machine {mach!r}")
                out[(prod, mach)] = float(v)
        for prod in sched_products:
            for mach in machines:
                _require((prod, mach) in out, f"{name} missing ({prod}, {mach})")
        return out

    kappa = {}
    for mach, table in s.get("kappa", {}).items():
        _require(mach in machines, f"kappa unknown machine {mach!r}")
        for p1, row in table.items():
            for p2, v in row.items():
                kappa[(mach, p1, p2)] = float(v)
    xi = s.get("xi", {})
    _check_keys(xi, {"in", "out"}, "scheduling.xi")
    scheduling = SchedulingInstance(
        machines=machines,
        products=sched_products,
        events=int(s.get("events", 7)),
        materials=list(s["materials"]),
        alpha=per_task(s["alpha"], "alpha"),
        beta=per_task(s["beta"], "beta"),
        kappa=kappa,
        Bmin=per_task(s["Bmin"], "Bmin"),
        Bmax=per_task(s["Bmax"], "Bmax"),
        xi_in={k: {m: float(x) for m, x in v.items()}
               for k, v in xi.get("in", {}).items()},
        xi_out={k: {m: float(x) for m, x in v.items()}
                for k, v in xi.get("out", {}).items()},
        S0={k: float(v) for k, v in s.get("S0", {}).items()},
        rho_changeover=float(s.get("rho", 10.0)),
        M_big=m_big,
    )
    try:
        scheduling.validate()
    except ValueError as exc:
        raise InstanceError(f"scheduling: {exc}") from exc

    c = dict(doc["control"])
    _check_keys(c, _CONTROL_KEYS, "control")
    weights = dict(c.get("weights", {}))
    _check_keys(weights, {"tf", "energy"}, "control.weights")
    control = ControlInstance(
        products=list(c["products"]),
        k1={k: float(v) for k, v in c["k1"].items()},
        k2={k: float(v) for k, v in c["k2"].items()},
        V=float(c.get("V", 1.0)),
        VB=float(c.get("VB", 1.0)),
        VC=float(c.get("VC", 1.0)),
        cA0=float(c.get("cA0", 17.0)),
        cB0=float(c.get("cB0", 0.0)),
        cC0=float(c.get("cC0", 0.0)),
        u_min=float(c.get("u_min", 1.0)),
        u_max=float(c.get("u_max", 9.0)),
        tf_max=float(c.get("tf_max", 500.0)),
        state_max=float(c.get("state_max", 100.0)),
        w_tf=float(weights.get("tf", 2.0)),
        w_energy=float(weights.get("energy", 0.5)),
        n_intervals=int(c.get("n_intervals", 10)),
        steps=int(c.get("steps", 100)),
    )
    try:
        control.validate()
    except ValueError as exc:
        raise InstanceError(f"control: {exc}") from exc
    for prod in scheduling.products:
        _require(prod in control.k1 and prod in control.k2,
                 f"control kinetics missing production {prod!r}")

    stage_site = s.get("site", "S2")
    stage_products = list(s.get("planning_products",
                                [q for q in sched_products if q in
                                 planning.materials]))
    _require(stage_site in planning.sites, f"unknown stage site {stage_site!r}")
    for q in stage_products:
        _require(q in planning.materials,
                 f"stage product {q!r} is not a planning material")
        _require(q in sched_products,
                 f"stage product {q!r} is not a scheduled production")
    meta["stage_site"] = stage_site
    meta["stage_products"] = stage_products
    return InstanceBundle(planning, scheduling, control, meta)


def load_instance(path) -> InstanceBundle:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"not valid JSON: {exc}") from exc
    return parse_instance(doc)


def bundled_instance_path() -> str:
    ref = importlib.resources.files("triplan").joinpath("data/desk.json")
    return str(ref)


def load_bundled_instance() -> InstanceBundle:
    return load_instance(bundled_instance_path())
