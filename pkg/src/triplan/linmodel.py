"""Generic LP/MILP container with desk-scale solve and verification helpers.

Models are built incrementally (variables, then constraint rows, then the
objective) and solved through the HiGHS backends shipped with scipy.  The
scale target is small: a couple thousand variables and a couple hundred
binaries.  Everything is deterministic: the same model solved twice returns
the same result, bit for bit.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

DEFAULT_FEAS_TOL = 1e-7
DEFAULT_INT_TOL = 1e-6
DEFAULT_MIP_GAP = 1e-4
DEFAULT_M_BIG = 1e4

LE, EQ, GE = "<=", "==", ">="
_RELATIONS = (LE, EQ, GE)


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


class ModelError(ValueError):
    """Raised for malformed models or invalid solver inputs."""


@dataclass
class _Var:
    name: str
    lb: float
    ub: float
    binary: bool


class LinearModel:
    """Sparse minimization model: variables, linear rows, linear objective."""

    def __init__(self, name: str = "model", m_big: float = DEFAULT_M_BIG):
        self.name = name
        self.m_big = float(m_big)
        self._vars: list[_Var] = []
        self._by_name: dict[str, int] = {}
        self._rows: list[tuple[list[int], list[float], str, float, str]] = []
        self._obj: dict[int, float] = {}
        self.obj_const = 0.0
        # caller scratch space (variable registries etc.), never touched here
        self.meta: dict = {}

    # -- construction -------------------------------------------------------

    def add_var(self, name: str, lb: float = 0.0, ub: float = np.inf,
                binary: bool = False) -> int:
        if name in self._by_name:
            raise ModelError(f"duplicate variable name {name!r}")
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if lb > ub:
            raise ModelError(f"variable {name!r} has lb={lb} > ub={ub}")
        self._vars.append(_Var(name, float(lb), float(ub), binary))
        idx = len(self._vars) - 1
        self._by_name[name] = idx
        return idx

    def add_constr(self, coeffs: dict[int, float], relation: str, rhs: float,
                   name: str = "") -> int:
        if relation not in _RELATIONS:
            raise ModelError(f"unknown relation {relation!r}")
        cols, vals = [], []
        for j, a in coeffs.items():
            if not 0 <= j < len(self._vars):
                raise ModelError(f"constraint {name!r} references unknown variable {j}")
            if a != 0.0:
                cols.append(j)
                vals.append(float(a))
        self._rows.append((cols, vals, relation, float(rhs), name))
        return len(self._rows) - 1

    def set_objective(self, coeffs: dict[int, float], constant: float = 0.0) -> None:
        for j in coeffs:
            if not 0 <= j < len(self._vars):
                raise ModelError(f"objective references unknown variable {j}")
        self._obj = {j: float(c) for j, c in coeffs.items() if c != 0.0}
        self.obj_const = float(constant)

    def add_objective_term(self, j: int, coeff: float) -> None:
        self._obj[j] = self._obj.get(j, 0.0) + float(coeff)

    def fix_var(self, j: int, value: float) -> None:
        v = self._vars[j]
        v.lb = v.ub = float(value)

    def set_bounds(self, j: int, lb: float | None = None, ub: float | None = None) -> None:
        v = self._vars[j]
        if lb is not None:
            v.lb = float(lb)
        if ub is not None:
            v.ub = float(ub)
        if v.lb > v.ub:
            raise ModelError(f"variable {v.name!r} has lb={v.lb} > ub={v.ub}")

    # -- inspection ---------------------------------------------------------

    @property
    def n_vars(self) -> int:
        return len(self._vars)

    @property
    def n_constrs(self) -> int:
        return len(self._rows)

    def var_index(self, name: str) -> int:
        return self._by_name[name]

    def var_name(self, j: int) -> str:
        return self._vars[j].name

    def var_bounds(self, j: int) -> tuple[float, float]:
        v = self._vars[j]
        return v.lb, v.ub

    def is_binary(self, j: int) -> bool:
        return self._vars[j].binary

    @property
    def binary_indices(self) -> list[int]:
        return [j for j, v in enumerate(self._vars) if v.binary]

    def lower_bounds(self) -> np.ndarray:
        return np.array([v.lb for v in self._vars])

    def upper_bounds(self) -> np.ndarray:
        return np.array([v.ub for v in self._vars])

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for j, v in self._obj.items():
            c[j] = v
        return c

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.objective_vector() @ x + self.obj_const)

    def constraint_matrix(self) -> tuple[sp.csr_matrix, np.ndarray, list[str]]:
        """Rows as a CSR matrix, the rhs vector, and per-row relations."""
        data, indices, indptr = [], [], [0]
        rhs, rels = [], []
        for cols, vals, rel, b, _ in self._rows:
            indices.extend(cols)
            data.extend(vals)
            indptr.append(len(indices))
            rhs.append(b)
            rels.append(rel)
        A = sp.csr_matrix((data, indices, indptr), shape=(self.n_constrs, self.n_vars))
        return A, np.array(rhs), rels

    def validate(self) -> None:
        """Check structural invariants (bounds ordered, binaries in [0,1])."""
        for v in self._vars:
            if v.lb > v.ub:
                raise ModelError(f"variable {v.name!r} has lb > ub")
            if v.binary and (v.lb < -0.0 or v.ub > 1.0):
                raise ModelError(f"binary variable {v.name!r} has bounds outside [0,1]")

    def to_lp_text(self) -> str:
        """Dump in a plain LP-style text format, one constraint per line."""
        out = [f"\\ model {self.name}", "minimize"]
        terms = [f"{c:+g} {self._vars[j].name}" for j, c in sorted(self._obj.items())]
        if self.obj_const:
            terms.append(f"{self.obj_const:+g}")
        out.append("  obj: " + (" ".join(terms) if terms else "0"))
        out.append("subject to")
        for k, (cols, vals, rel, b, name) in enumerate(self._rows):
            lhs = " ".join(
                f"{a:+g} {self._vars[j].name}" for j, a in zip(cols, vals)
            ) or "0"
            label = name or f"c{k}"
            out.append(f"  {label}: {lhs} {rel.replace('==', '=')} {b:g}")
        out.append("bounds")
        for v in self._vars:
            out.append(f"  {v.lb:g} <= {v.name} <= {v.ub:g}")
        bins = [v.name for v in self._vars if v.binary]
        if bins:
            out.append("binary")
            out.append("  " + " ".join(bins))
        out.append("end")
        return "\n".join(out) + "\n"


@dataclass
class SolveResult:
    status: SolveStatus
    x: np.ndarray | None = None
    objective: float = np.nan
    duals: np.ndarray | None = None          # LP only, per constraint row
    reduced_costs: np.ndarray | None = None  # LP only, per variable
    gap: float = np.nan                      # MILP only
    is_milp: bool = False
    message: str = ""

    def value(self, j: int) -> float:
        if self.x is None:
            raise ModelError("result carries no primal point")
        return float(self.x[j])


def _split_rows(model: LinearModel):
    """Split model rows into <= and == systems for the HiGHS wrappers."""
    A, b, rels = model.constraint_matrix()
    le_rows = [k for k, r in enumerate(rels) if r == LE]
    ge_rows = [k for k, r in enumerate(rels) if r == GE]
    eq_rows = [k for k, r in enumerate(rels) if r == EQ]
    parts = []
    if le_rows:
        parts.append((A[le_rows], b[le_rows], le_rows, 1.0))
    if ge_rows:
        parts.append((-A[ge_rows], -b[ge_rows], ge_rows, -1.0))
    A_ub = sp.vstack([p[0] for p in parts], format="csr") if parts else None
    b_ub = np.concatenate([p[1] for p in parts]) if parts else None
    ub_map = list(itertools.chain.from_iterable((p[2] for p in parts)))
    ub_sign = np.concatenate([np.full(len(p[2]), p[3]) for p in parts]) if parts else np.array([])
    A_eq = A[eq_rows] if eq_rows else None
    b_eq = b[eq_rows] if eq_rows else None
    return A_ub, b_ub, ub_map, ub_sign, A_eq, b_eq, eq_rows


def solve_lp(model: LinearModel, tol: float = DEFAULT_FEAS_TOL) -> SolveResult:
    """Solve a pure LP; duals and reduced costs come back with the primal.

    The returned duals follow the sensitivity convention (derivative of the
    optimal objective with respect to the row rhs), stated for the row as
    written in the model.
    """
    model.validate()
    if model.binary_indices:
        raise ModelError("solve_lp is for continuous models; use solve_milp")
    c = model.objective_vector()
    A_ub, b_ub, ub_map, ub_sign, A_eq, b_eq, eq_rows = _split_rows(model)
    bounds = np.stack([model.lower_bounds(), model.upper_bounds()], axis=1)
    res = linprog(
        c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
        method="highs",
        options={"primal_feasibility_tolerance": min(tol, 1e-7),
                 "dual_feasibility_tolerance": min(tol, 1e-7)},
    )
    if res.status == 2:
        return SolveResult(SolveStatus.INFEASIBLE, message=res.message)
    if res.status == 3:
        return SolveResult(SolveStatus.UNBOUNDED, message=res.message)
    if res.status != 0:
        return SolveResult(SolveStatus.ITERATION_LIMIT, message=res.message)
    duals = np.zeros(model.n_constrs)
    if ub_map:
        duals[ub_map] = res.ineqlin.marginals * ub_sign
    if eq_rows:
        duals[eq_rows] = res.eqlin.marginals
    reduced = res.lower.marginals + res.upper.marginals
    return SolveResult(
        SolveStatus.OPTIMAL,
        x=res.x,
        objective=float(res.fun) + model.obj_const,
        duals=duals,
        reduced_costs=reduced,
    )


def solve_milp(model: LinearModel, gap: float = DEFAULT_MIP_GAP,
               node_limit: int | None = None) -> SolveResult:
    """Solve a MILP by branch and bound on LP relaxations (HiGHS backend).

    Hitting ``node_limit`` returns the best incumbent with
    ``SolveStatus.ITERATION_LIMIT``.
    """
    model.validate()
    c = model.objective_vector()
    A, b, rels = model.constraint_matrix()
    lo = np.array([-np.inf if r == LE else bb for r, bb in zip(rels, b)])
    hi = np.array([np.inf if r == GE else bb for r, bb in zip(rels, b)])
    integrality = np.zeros(model.n_vars)
    integrality[model.binary_indices] = 1
    options: dict = {"mip_rel_gap": float(gap), "presolve": True}
    if node_limit is not None:
        options["node_limit"] = int(node_limit)
    constraints = [LinearConstraint(A, lo, hi)] if model.n_constrs else []
    res = milp(
        c=c,
        constraints=constraints,
        integrality=integrality,
        bounds=Bounds(model.lower_bounds(), model.upper_bounds()),
        options=options,
    )
    if res.status == 2:
        return SolveResult(SolveStatus.INFEASIBLE, is_milp=True, message=res.message)
    if res.status == 3:
        return SolveResult(SolveStatus.UNBOUNDED, is_milp=True, message=res.message)
    if res.x is None:
        return SolveResult(SolveStatus.ITERATION_LIMIT, is_milp=True,
                           objective=np.inf, message=res.message)
    status = SolveStatus.OPTIMAL if res.status == 0 else SolveStatus.ITERATION_LIMIT
    achieved = float(res.mip_gap) if res.mip_gap is not None else np.nan
    return SolveResult(
        status,
        x=res.x,
        objective=float(res.fun) + model.obj_const,
        gap=achieved,
        is_milp=True,
        message=res.message,
    )


@dataclass
class KktReport:
    primal_residual: float
    dual_residual: float
    complementarity_residual: float

    def max_residual(self) -> float:
        return max(self.primal_residual, self.dual_residual,
                   self.complementarity_residual)


def check_kkt(model: LinearModel, result: SolveResult) -> KktReport:
    """Recompute the three KKT residual norms for an optimal LP result.

    Stationarity is checked as ``c - A^T y - mu = 0`` with ``y`` the row
    duals and ``mu`` the reduced costs; complementarity pairs each dual with
    its slack. Works only on LP results that carry duals.
    """
    if result.is_milp or model.binary_indices:
        raise ModelError("check_kkt applies to LP results only")
    if result.status is not SolveStatus.OPTIMAL:
        raise ModelError("check_kkt needs an optimal result")
    if result.x is None or result.duals is None or result.reduced_costs is None:
        raise ModelError("result lacks primal or dual information")
    x = result.x
    A, b, rels = model.constraint_matrix()
    ax = A @ x if model.n_constrs else np.zeros(0)
    primal = 0.0
    comp = 0.0
    dual_sign = 0.0
    for k, rel in enumerate(rels):
        slack = b[k] - ax[k]
        y = result.duals[k]
        if rel == LE:
            primal = max(primal, -slack)
            comp = max(comp, abs(y * slack))
            dual_sign = max(dual_sign, y)          # must be <= 0
        elif rel == GE:
            primal = max(primal, slack)
            comp = max(comp, abs(y * slack))
            dual_sign = max(dual_sign, -y)         # must be >= 0
        else:
            primal = max(primal, abs(slack))
    lb, ub = model.lower_bounds(), model.upper_bounds()
    primal = max(primal, float(np.max(np.maximum(lb - x, 0.0), initial=0.0)))
    primal = max(primal, float(np.max(np.maximum(x - ub, 0.0), initial=0.0)))
    mu = result.reduced_costs
    active_lo = np.isfinite(lb)
    active_hi = np.isfinite(ub)
    if active_lo.any():
        comp = max(comp, float(np.max(np.abs(mu * np.where(
            active_lo & (mu > 0), x - lb, 0.0)))))
    if active_hi.any():
        comp = max(comp, float(np.max(np.abs(mu * np.where(
            active_hi & (mu < 0), ub - x, 0.0)))))
    c = model.objective_vector()
    station = c - (A.T @ result.duals if model.n_constrs else 0.0) - mu
    dual = max(float(np.max(np.abs(station), initial=0.0)), dual_sign)
    return KktReport(primal, dual, comp)


def enumerate_binary_optimum(model: LinearModel,
                             tol: float = DEFAULT_FEAS_TOL) -> SolveResult:
    """Exhaustive oracle: try every binary assignment, LP-solve the rest.

    Pure-binary models are screened arithmetically (no LP per assignment).
    Intended for testing ``solve_milp`` on models with few binaries.
    """
    bins = model.binary_indices
    if len(bins) > 20:
        raise ModelError("enumeration oracle limited to 20 binaries")
    nb = len(bins)
    lb, ub = model.lower_bounds(), model.upper_bounds()
    patterns = np.array(list(itertools.product((0.0, 1.0), repeat=nb)))
    ok = np.all((patterns >= lb[bins] - 1e-12) & (patterns <= ub[bins] + 1e-12), axis=1)
    patterns = patterns[ok]

    if nb == model.n_vars:
        A, b, rels = model.constraint_matrix()
        X = np.zeros((len(patterns), model.n_vars))
        X[:, bins] = patterns
        feas = np.ones(len(patterns), dtype=bool)
        if model.n_constrs:
            ax = X @ A.T.toarray()
            for k, rel in enumerate(rels):
                if rel == LE:
                    feas &= ax[:, k] <= b[k] + tol
                elif rel == GE:
                    feas &= ax[:, k] >= b[k] - tol
                else:
                    feas &= np.abs(ax[:, k] - b[k]) <= tol
        if not feas.any():
            return SolveResult(SolveStatus.INFEASIBLE, is_milp=True)
        objs = X @ model.objective_vector() + model.obj_const
        objs[~feas] = np.inf
        k = int(np.argmin(objs))
        return SolveResult(SolveStatus.OPTIMAL, x=X[k], objective=float(objs[k]),
                           gap=0.0, is_milp=True)

    relaxed = _relaxed_copy(model)
    best: SolveResult | None = None
    for bits in patterns:
        for j, v in zip(bins, bits):
            relaxed._vars[j].lb = relaxed._vars[j].ub = float(v)
        r = solve_lp(relaxed, tol)
        if r.status is SolveStatus.OPTIMAL:
            if best is None or r.objective < best.objective:
                best = r
    if best is None:
        return SolveResult(SolveStatus.INFEASIBLE, is_milp=True)
    best.is_milp = True
    best.duals = None
    best.reduced_costs = None
    best.gap = 0.0
    return best


def _relaxed_copy(model: LinearModel) -> LinearModel:
    out = LinearModel(model.name + "_relaxed", m_big=model.m_big)
    for v in model._vars:
        out.add_var(v.name, v.lb, v.ub, binary=False)
    out._rows = [(list(c), list(v), r, b, n) for c, v, r, b, n in model._rows]
    out._obj = dict(model._obj)
    out.obj_const = model.obj_const
    return out
