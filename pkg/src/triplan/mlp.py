"""Feed-forward ReLU networks used as optimality surrogates.

Covers training (momentum SGD on standardized data), exact forward passes,
JSON persistence with bit-exact floats, and the exact mixed-integer encoding
of a trained network into a :class:`~triplan.linmodel.LinearModel`.  The
encoding uses one binary per unstable hidden node with big-M constants from
interval bound propagation, so a network embedded with its inputs fixed
reproduces the forward pass.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .linmodel import EQ, GE, LE, LinearModel, ModelError


@dataclass
class Mlp:
    """ReLU network with affine input/output standardization baked in.

    ``weights[k]`` has shape (sizes[k+1], sizes[k]); hidden layers apply
    ReLU, the last layer is affine.  Raw inputs are standardized with
    ``(x - x_offset) / x_scale`` and raw outputs recovered with
    ``y_std * y_scale + y_offset``.  ``input_lo``/``input_hi`` record the
    raw-unit box the network was built for (finite; needed to derive big-M
    constants when embedding).
    """

    sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_offset: np.ndarray
    x_scale: np.ndarray
    y_offset: np.ndarray
    y_scale: np.ndarray
    input_lo: np.ndarray
    input_hi: np.ndarray
    loss: float = np.nan

    def __post_init__(self):
        if len(self.weights) != len(self.sizes) - 1:
            raise ValueError("weight count inconsistent with layer sizes")
        for k, w in enumerate(self.weights):
            if w.shape != (self.sizes[k + 1], self.sizes[k]):
                raise ValueError(f"layer {k} weight shape {w.shape} != "
                                 f"({self.sizes[k + 1]}, {self.sizes[k]})")
            if self.biases[k].shape != (self.sizes[k + 1],):
                raise ValueError(f"layer {k} bias shape mismatch")
        if not (np.all(np.isfinite(self.input_lo)) and np.all(np.isfinite(self.input_hi))):
            raise ValueError("input box bounds must be finite")

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.sizes[-1]

    def in_box(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.input_lo - 1e-9) and np.all(x <= self.input_hi + 1e-9))

    def raw_layers(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Equivalent weights/biases acting on raw (unstandardized) units."""
        ws = [w.copy() for w in self.weights]
        bs = [b.copy() for b in self.biases]
        ws[0] = ws[0] / self.x_scale[None, :]
        bs[0] = bs[0] - (self.weights[0] @ (self.x_offset / self.x_scale))
        ws[-1] = self.y_scale[:, None] * ws[-1]
        bs[-1] = self.y_scale * bs[-1] + self.y_offset
        return ws, bs

    def to_json(self) -> str:
        doc = {
            "sizes": self.sizes,
            "weights": [w.flatten().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "x_offset": self.x_offset.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_offset": self.y_offset.tolist(),
            "y_scale": self.y_scale.tolist(),
            "input_lo": self.input_lo.tolist(),
            "input_hi": self.input_hi.tolist(),
            "loss": None if np.isnan(self.loss) else self.loss,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Mlp":
        doc = json.loads(text)
        sizes = [int(s) for s in doc["sizes"]]
        weights = [np.array(w).reshape(sizes[k + 1], sizes[k])
                   for k, w in enumerate(doc["weights"])]
        return cls(
            sizes=sizes,
            weights=weights,
            biases=[np.array(b) for b in doc["biases"]],
            x_offset=np.array(doc["x_offset"]),
            x_scale=np.array(doc["x_scale"]),
            y_offset=np.array(doc["y_offset"]),
            y_scale=np.array(doc["y_scale"]),
            input_lo=np.array(doc["input_lo"]),
            input_hi=np.array(doc["input_hi"]),
            loss=np.nan if doc.get("loss") is None else float(doc["loss"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path) as fh:
            return cls.from_json(fh.read())


def predict(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Exact forward pass in raw units; accepts a single point or a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    z = np.atleast_2d(x)
    if z.shape[1] != mlp.n_inputs:
        raise ValueError(f"expected {mlp.n_inputs} inputs, got {z.shape[1]}")
    z = (z - mlp.x_offset) / mlp.x_scale
    last = len(mlp.weights) - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = z @ w.T + b
        if k < last:
            z = np.maximum(z, 0.0)
    z = z * mlp.y_scale + mlp.y_offset
    return z[0] if single else z


@dataclass
class Dataset:
    """Sampled (input, output) rows with per-row feasibility flags."""

    X: np.ndarray
    Y: np.ndarray
    feasible: np.ndarray
    tag: str = ""

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        self.feasible = np.asarray(self.feasible, dtype=bool)
        if not (len(self.X) == len(self.Y) == len(self.feasible)):
            raise ValueError("row count mismatch between X, Y, feasible")

    def __len__(self) -> int:
        return len(self.X)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ([f"x{i}" for i in range(self.X.shape[1])]
                      + [f"y{i}" for i in range(self.Y.shape[1])]
                      + ["feasible"])
            w.writerow(header + [f"#tag={self.tag}"])
            for xi, yi, fi in zip(self.X, self.Y, self.feasible):
                w.writerow([repr(float(v)) for v in xi]
                           + [repr(float(v)) for v in yi]
                           + [int(fi)])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        tag = ""
        if header and header[-1].startswith("#tag="):
            tag = header[-1][len("#tag="):]
            header = header[:-1]
        nx = sum(1 for h in header if h.startswith("x"))
        ny = sum(1 for h in header if h.startswith("y"))
        X, Y, feas = [], [], []
        for row in rows[1:]:
            if not row:
                continue
            X.append([float(v) for v in row[:nx]])
            Y.append([float(v) for v in row[nx:nx + ny]])
            feas.append(bool(int(row[nx + ny])))
        return cls(np.array(X), np.array(Y), np.array(feas), tag=tag)


def _standardizer(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    off = a.mean(axis=0)
    scale = a.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return off, scale


def init_mlp(n_in: int, hidden: tuple[int, ...], n_out: int,
             rng: np.random.Generator) -> tuple[list[np.ndarray], list[np.ndarray]]:
    sizes = [n_in, *hidden, n_out]
    weights, biases = [], []
    for k in range(len(sizes) - 1):
        std = np.sqrt(2.0 / sizes[k])
        weights.append(rng.normal(0.0, std, size=(sizes[k + 1], sizes[k])))
        biases.append(np.zeros(sizes[k + 1]))
    return weights, biases


def train_mlp(data: Dataset, hidden: tuple[int, ...], epochs: int = 1000,
              seed: int = 0, lr: float = 0.05, momentum: float = 0.9,
              batch_size: int = 32,
              input_box: tuple[np.ndarray, np.ndarray] | None = None) -> Mlp:
    """Fit a ReLU network by momentum SGD on standardized inputs/outputs.

    The learning rate halves every 250 epochs.  Deterministic for a fixed
    seed, dataset, and architecture.  ``epochs=0`` returns the freshly
    initialized network with its loss recorded.
    """
    if len(data) < 1:
        raise ValueError("empty dataset")
    if epochs > 0 and len(data) < 2:
        raise ValueError("training needs at least 2 rows")
    if any(h < 1 for h in hidden):
        raise ValueError("hidden sizes must be >= 1")
    X, Y = data.X, data.Y
    x_off, x_scale = _standardizer(X)
    y_off, y_scale = _standardizer(Y)
    Xs = (X - x_off) / x_scale
    Ys = (Y - y_off) / y_scale
    rng = np.random.default_rng(seed)
    weights, biases = init_mlp(X.shape[1], tuple(hidden), Y.shape[1], rng)
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    n = len(Xs)
    bs = min(batch_size, n)
    last = len(weights) - 1

    def forward(xb):
        acts = [xb]
        z = xb
        for k in range(len(weights)):
            z = z @ weights[k].T + biases[k]
            if k < last:
                z = np.maximum(z, 0.0)
            acts.append(z)
        return acts

    for epoch in range(epochs):
        step = lr * 0.5 ** (epoch // 250)
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            acts = forward(Xs[idx])
            delta = 2.0 * (acts[-1] - Ys[idx]) / len(idx)
            for k in range(last, -1, -1):
                gw = delta.T @ acts[k]
                gb = delta.sum(axis=0)
                if k > 0:
                    delta = (delta @ weights[k]) * (acts[k] > 0)
                vel_w[k] = momentum * vel_w[k] - step * gw
                vel_b[k] = momentum * vel_b[k] - step * gb
                weights[k] = weights[k] + vel_w[k]
                biases[k] = biases[k] + vel_b[k]

    resid = forward(Xs)[-1] - Ys
    loss = float(np.mean(resid ** 2))
    if not np.isfinite(loss):
        raise ArithmeticError("training diverged to a non-finite loss")
    if input_box is not None:
        lo, hi = (np.asarray(input_box[0], dtype=float),
                  np.asarray(input_box[1], dtype=float))
    else:
        lo, hi = X.min(axis=0), X.max(axis=0)
    return Mlp(
        sizes=[X.shape[1], *hidden, Y.shape[1]],
        weights=weights, biases=biases,
        x_offset=x_off, x_scale=x_scale,
        y_offset=y_off, y_scale=y_scale,
        input_lo=lo, input_hi=hi, loss=loss,
    )


def r_squared(y_true: np.ndarray, y_pred: np.ndarray) -> np.ndarray:
    """Per-output coefficient of determination."""
    y_true = np.atleast_2d(y_true)
    y_pred = np.atleast_2d(y_pred)
    ss_res = np.sum((y_true - y_pred) ** 2, axis=0)
    ss_tot = np.sum((y_true - y_true.mean(axis=0)) ** 2, axis=0)
    ss_tot[ss_tot < 1e-300] = 1e-300
    return 1.0 - ss_res / ss_tot


def propagate_bounds(mlp: Mlp, lo: np.ndarray, hi: np.ndarray):
    """Interval bounds of every pre-activation, layer by layer, raw units."""
    ws, bs = mlp.raw_layers()
    los, his = [], []
    cur_lo, cur_hi = np.asarray(lo, float), np.asarray(hi, float)
    last = len(ws) - 1
    for k, (w, b) in enumerate(zip(ws, bs)):
        wp, wm = np.maximum(w, 0.0), np.minimum(w, 0.0)
        a_lo = wp @ cur_lo + wm @ cur_hi + b
        a_hi = wp @ cur_hi + wm @ cur_lo + b
        los.append(a_lo)
        his.append(a_hi)
        if k < last:
            cur_lo, cur_hi = np.maximum(a_lo, 0.0), np.maximum(a_hi, 0.0)
    return los, his


def encode_mlp(model: LinearModel, mlp: Mlp, input_vars: list[int],
               output_vars: list[int], prefix: str = "nn") -> dict:
    """Embed the network exactly as mixed-integer rows linking the given vars.

    Per unstable hidden node this adds one binary and the usual big-M pair;
    nodes whose pre-activation interval lies on one side of zero are folded
    without a binary.  Input variables must carry finite bounds; the big-M
    constants come from interval propagation over the union of the variable
    bounds and the network's input box.  Returns a registry of the created
    variable indices.
    """
    if len(input_vars) != mlp.n_inputs or len(output_vars) != mlp.n_outputs:
        raise ValueError("input/output variable count does not match network")
    in_lo = np.array([model.var_bounds(j)[0] for j in input_vars])
    in_hi = np.array([model.var_bounds(j)[1] for j in input_vars])
    if not (np.all(np.isfinite(in_lo)) and np.all(np.isfinite(in_hi))):
        raise ModelError("encode_mlp needs finite bounds on every input variable")
    lo = np.minimum(in_lo, mlp.input_lo)
    hi = np.maximum(in_hi, mlp.input_hi)
    pre_lo, pre_hi = propagate_bounds(mlp, lo, hi)
    if not all(np.all(np.isfinite(l)) and np.all(np.isfinite(h))
               for l, h in zip(pre_lo, pre_hi)):
        raise ModelError("bound propagation produced non-finite big-M constants")
    ws, bs = mlp.raw_layers()
    last = len(ws) - 1
    prev_vars = list(input_vars)
    registry: dict = {"hidden": [], "binaries": []}
    for k in range(last):
        w, b = ws[k], bs[k]
        a_lo, a_hi = pre_lo[k], pre_hi[k]
        layer_vars: list[int] = []
        for node in range(w.shape[0]):
            zname = f"{prefix}_z{k}_{node}"
            coeffs = {prev_vars[j]: float(w[node, j])
                      for j in range(w.shape[1]) if w[node, j] != 0.0}
            if a_hi[node] <= 0.0:
                z = model.add_var(zname, 0.0, 0.0)
            elif a_lo[node] >= 0.0:
                z = model.add_var(zname, 0.0, float(a_hi[node]))
                row = dict(coeffs)
                row[z] = row.get(z, 0.0) - 1.0
                model.add_constr(row, EQ, -float(b[node]), name=f"{zname}_eq")
            else:
                z = model.add_var(zname, 0.0, float(a_hi[node]))
                sig = model.add_var(f"{prefix}_s{k}_{node}", binary=True)
                registry["binaries"].append(sig)
                # z >= a:  a - z <= 0
                row = dict(coeffs)
                row[z] = row.get(z, 0.0) - 1.0
                model.add_constr(row, LE, -float(b[node]), name=f"{zname}_ge")
                # z <= a - lo*(1 - sig):  z - a - lo*sig <= -lo
                row = {z: 1.0}
                for j, a in coeffs.items():
                    row[j] = row.get(j, 0.0) - a
                row[sig] = row.get(sig, 0.0) - float(a_lo[node])
                model.add_constr(row, LE, float(b[node]) - float(a_lo[node]),
                                 name=f"{zname}_le")
                # z <= hi * sig
                model.add_constr({z: 1.0, sig: -float(a_hi[node])}, LE, 0.0,
                                 name=f"{zname}_cap")
            layer_vars.append(z)
        registry["hidden"].append(layer_vars)
        prev_vars = layer_vars
    w, b = ws[last], bs[last]
    for out in range(w.shape[0]):
        row = {prev_vars[j]: float(w[out, j])
               for j in range(w.shape[1]) if w[out, j] != 0.0}
        row[output_vars[out]] = row.get(output_vars[out], 0.0) - 1.0
        model.add_constr(row, EQ, -float(b[out]), name=f"{prefix}_out{out}")
        olb, oub = model.var_bounds(output_vars[out])
        model.set_bounds(output_vars[out],
                         max(olb, float(pre_lo[last][out])),
                         min(oub, float(pre_hi[last][out])))
    return registry
