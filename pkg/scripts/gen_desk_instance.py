#!/usr/bin/env python3
"""Generate the bundled synthetic desk instance (src/triplan/data/desk.json).

All numbers are invented.  The scheduling duration rule (alpha, beta) is
calibrated against the control level: beta is the fitted slope of optimal
processing time versus batch target, so the nominal stage durations are a
sane linear estimate of the true control response.  Batch caps are set to
80% of the grid-certified achievable batch, keeping every scheduled batch
control-feasible.
"""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from triplan.control import (ControlInstance, max_achievable_batch,
                             solve_optimal_control)

OUT = os.path.join(os.path.dirname(__file__), "..", "src", "triplan", "data",
                   "desk.json")

SCHED_PRODUCTS = ["I23", "P1", "P2", "P3", "P4"]
PLAN_PRODUCTS = ["P1", "P2", "P3", "P4", "P5", "P6"]
MATERIALS = ["I1", "I2", "I21", "I22", "P1", "P2", "P3", "P4", "P5", "P6"]


def control_section():
    k1 = {"I23": 0.0105, "P1": 0.0078, "P2": 0.0070, "P3": 0.0090,
          "P4": 0.0062}
    k2 = {p: round(0.5 * v, 6) for p, v in k1.items()}
    return {
        "products": SCHED_PRODUCTS,
        "k1": k1, "k2": k2,
        "V": 0.25, "VB": 6.0, "VC": 6.0,
        "cA0": 17.0, "cB0": 0.0, "cC0": 0.0,
        "u_min": 1.0, "u_max": 9.0, "tf_max": 500.0, "state_max": 100.0,
        "weights": {"tf": 2.0, "energy": 0.5},
        "n_intervals": 10, "steps": 100,
    }


def calibrate_scheduling(ctrl_doc):
    inst = ControlInstance(
        products=ctrl_doc["products"], k1=ctrl_doc["k1"], k2=ctrl_doc["k2"],
        V=ctrl_doc["V"], VB=ctrl_doc["VB"], VC=ctrl_doc["VC"],
        steps=ctrl_doc["steps"],
    )
    alpha, beta, bmax, bmin = {}, {}, {}, {}
    for p in SCHED_PRODUCTS:
        mab = max_achievable_batch(inst, p)
        cap = 0.8 * mab
        targets = np.linspace(0.12, 1.0, 8) * cap
        tfs = [solve_optimal_control(inst, p, t).t_f for t in targets]
        slope, intercept = np.polyfit(targets, tfs, 1)
        alpha[p] = {"M1": round(max(1.0, intercept) + 2.0, 3),
                    "M2": round(max(1.0, intercept) + 3.0, 3)}
        beta[p] = {"M1": round(slope, 4), "M2": round(slope * 1.08, 4)}
        bmax[p] = {"M1": round(cap, 3), "M2": round(0.9 * cap, 3)}
        bmin[p] = {"M1": 0.0, "M2": 0.0}
        print(f"{p}: achievable={mab:.2f} cap={cap:.2f} "
              f"tf≈{intercept:.2f}+{slope:.3f}·B")
    kappa = {"M1": {}, "M2": {}}
    for m in kappa:
        for a in SCHED_PRODUCTS:
            row = {}
            for b in SCHED_PRODUCTS:
                if a == b:
                    continue
                if a == "I23" or b == "I23":
                    row[b] = 1.0
                else:
                    row[b] = 2.0
            kappa[m][a] = row
    return {
        "machines": ["M1", "M2"],
        "products": SCHED_PRODUCTS,
        "events": 7,
        "materials": SCHED_PRODUCTS,
        "alpha": alpha, "beta": beta, "kappa": kappa,
        "Bmin": bmin, "Bmax": bmax,
        "xi": {
            "in": {"P1": {"I23": 0.5}, "P2": {"I23": 0.4}},
            "out": {p: {p: 1.0} for p in SCHED_PRODUCTS},
        },
        "S0": {p: 0.0 for p in SCHED_PRODUCTS},
        "rho": 10.0,
        "site": "S2",
        "planning_products": ["P1", "P2", "P3", "P4"],
    }


def planning_section():
    # seasonal demand peaking mid-year; P3/P4 margins are thin once true
    # stage and control costs are counted, which is what the tri metric sees
    base = {"P1": 44.0, "P2": 36.0, "P3": 28.0, "P4": 24.0,
            "P5": 18.0, "P6": 15.0}
    season = [0.55, 0.7, 0.85, 1.0, 1.15, 1.25, 1.25, 1.15, 1.0, 0.85,
              0.7, 0.6]
    D = {p: [round(base[p] * s, 3) for s in season] for p in PLAN_PRODUCTS}
    Q = {"I1": {"S1": 1.0}, "I2": {"S1": 1.0},
         "P1": {"S2": 1.0}, "P2": {"S2": 0.9}, "P3": {"S2": 1.1},
         "P4": {"S2": 0.8}, "P5": {"S3": 1.0}, "P6": {"S3": 1.2}}
    return {
        "sites": ["S1", "S2", "S3"],
        "materials": MATERIALS,
        "products": PLAN_PRODUCTS,
        "T": 12, "Tc": 5,
        "to_tc": [1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 5, 5],
        "CP": {"I1": 0.2, "I2": 0.25, "I21": 0.0, "I22": 0.0,
               "P1": 0.8, "P2": 0.7, "P3": 0.6, "P4": 0.55,
               "P5": 0.6, "P6": 0.5},
        "CS": {m: 0.02 for m in MATERIALS},
        "CT": {"S2": 0.3, "S3": 0.35},
        "SP": {"P1": 8.5, "P2": 7.8, "P3": 4.2, "P4": 3.8,
               "P5": 4.6, "P6": 4.1},
        "Q": Q,
        "X": {"S1": ["I1", "I2"], "S2": ["P1", "P2", "P3", "P4"],
              "S3": ["P5", "P6"]},
        "successors": {"I1": ["I2"], "I22": ["P1", "P2", "P3", "P4"],
                       "I21": ["P5", "P6"]},
        "overhead": 1.1,
        "resources": ["cap"],
        "U": {"S1": {"cap": 1.0}, "S2": {"cap": 1.0}, "S3": {"cap": 1.0}},
        "A": {"S1": {"cap": 800.0}, "S2": {"cap": 180.0}, "S3": {"cap": 60.0}},
        "D": D,
        "LT": {"S2": 1, "S3": 2},
        "S0": {"I1": {"S1": 60.0}, "I2": {"S1": 120.0},
               "I22": {"S2": 260.0}, "I21": {"S3": 90.0},
               "P1": {"S2": 14.0}, "P2": {"S2": 12.0}, "P3": {"S2": 9.0},
               "P4": {"S2": 8.0}, "P5": {"S3": 6.0}, "P6": {"S3": 5.0}},
        "Sstar": {"I22": {"S2": 60.0}, "I21": {"S3": 25.0},
                  "P1": {"S2": 4.0}, "P2": {"S2": 3.0}, "P3": {"S2": 2.5},
                  "P4": {"S2": 2.5}, "P5": {"S3": 2.0}, "P6": {"S3": 2.0}},
        "transport_source": ["I2", "S1"],
        "transport_dest_material": {"S2": "I22", "S3": "I21"},
        "sale_site": {"P1": "S2", "P2": "S2", "P3": "S2", "P4": "S2",
                      "P5": "S3", "P6": "S3"},
        "safe_relax_factor": 0.25,
        "safe_relax_until": 4,
    }


def main():
    ctrl = control_section()
    doc = {
        "meta": {
            "name": "desk-synthetic",
            "synthetic": True,
            "description": "Synthetic desk-scale instance; index sets follow "
                           "the full case shape (3 sites, 12 months, 2 "
                           "machines, 7 events, 5 scheduled productions) but "
                           "all numeric values are invented.",
            "Mbig": 1e4,
        },
        "planning": planning_section(),
        "scheduling": calibrate_scheduling(ctrl),
        "control": ctrl,
    }
    os.makedirs(os.path.dirname(OUT), exist_ok=True)
    with open(OUT, "w") as fh:
        json.dump(doc, fh, indent=1)
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
