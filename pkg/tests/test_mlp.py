import numpy as np
import pytest

from triplan.linmodel import EQ, LinearModel, SolveStatus, solve_milp
from triplan.mlp import (
    Dataset, Mlp, encode_mlp, predict, propagate_bounds, r_squared, train_mlp,
)


def _random_net(rng, n_in, hidden, n_out, box_lo=-1.0, box_hi=1.0):
    sizes = [n_in, *hidden, n_out]
    weights = [rng.normal(0, 1.0, size=(sizes[k + 1], sizes[k]))
               for k in range(len(sizes) - 1)]
    biases = [rng.normal(0, 0.5, size=sizes[k + 1]) for k in range(len(sizes) - 1)]
    return Mlp(
        sizes=sizes, weights=weights, biases=biases,
        x_offset=rng.normal(0, 0.2, n_in), x_scale=rng.uniform(0.5, 2.0, n_in),
        y_offset=rng.normal(0, 0.2, n_out), y_scale=rng.uniform(0.5, 2.0, n_out),
        input_lo=np.full(n_in, box_lo), input_hi=np.full(n_in, box_hi),
    )


def _encode_and_fix(net, x):
    m = LinearModel("enc")
    ins = [m.add_var(f"in{i}", net.input_lo[i], net.input_hi[i])
           for i in range(net.n_inputs)]
    outs = [m.add_var(f"out{i}", -np.inf, np.inf) for i in range(net.n_outputs)]
    encode_mlp(m, net, ins, outs)
    for j, v in zip(ins, x):
        m.add_constr({j: 1.0}, EQ, float(v))
    m.set_objective({})
    res = solve_milp(m)
    assert res.status is SolveStatus.OPTIMAL
    return np.array([res.x[j] for j in outs])


def test_encoding_matches_forward_pass():
    rng = np.random.default_rng(0)
    for trial in range(6):
        n_in = int(rng.integers(1, 4))
        hidden = tuple(int(h) for h in rng.integers(1, 8, size=rng.integers(1, 3)))
        n_out = int(rng.integers(1, 3))
        net = _random_net(rng, n_in, hidden, n_out)
        for _ in range(8):
            x = rng.uniform(net.input_lo, net.input_hi)
            got = _encode_and_fix(net, x)
            assert np.allclose(got, predict(net, x), atol=1e-6)


def test_encoding_zero_weight_net_outputs_bias():
    net = Mlp(
        sizes=[1, 2, 1],
        weights=[np.zeros((2, 1)), np.zeros((1, 2))],
        biases=[np.zeros(2), np.array([3.5])],
        x_offset=np.zeros(1), x_scale=np.ones(1),
        y_offset=np.zeros(1), y_scale=np.ones(1),
        input_lo=np.array([-1.0]), input_hi=np.array([1.0]),
    )
    got = _encode_and_fix(net, np.array([0.3]))
    assert got[0] == pytest.approx(3.5, abs=1e-9)


def test_encoding_single_relu_geometry():
    # z = max(0, x) minimized over x in [-1, 1] is 0 for any x <= 0
    net = Mlp(
        sizes=[1, 1, 1],
        weights=[np.array([[1.0]]), np.array([[1.0]])],
        biases=[np.zeros(1), np.zeros(1)],
        x_offset=np.zeros(1), x_scale=np.ones(1),
        y_offset=np.zeros(1), y_scale=np.ones(1),
        input_lo=np.array([-1.0]), input_hi=np.array([1.0]),
    )
    m = LinearModel()
    xin = m.add_var("x", -1.0, 1.0)
    out = m.add_var("y", -np.inf, np.inf)
    encode_mlp(m, net, [xin], [out])
    m.set_objective({out: 1.0})
    res = solve_milp(m)
    assert res.objective == pytest.approx(0.0, abs=1e-8)
    assert res.x[xin] <= 1e-7


def test_encoding_rejects_unbounded_input():
    rng = np.random.default_rng(1)
    net = _random_net(rng, 1, (2,), 1)
    m = LinearModel()
    xin = m.add_var("x", 0.0, np.inf)
    out = m.add_var("y", -np.inf, np.inf)
    with pytest.raises(Exception):
        encode_mlp(m, net, [xin], [out])


def test_bound_propagation_sound():
    rng = np.random.default_rng(3)
    net = _random_net(rng, 3, (6, 4), 2)
    lo, hi = net.input_lo, net.input_hi
    pre_lo, pre_hi = propagate_bounds(net, lo, hi)
    ws, bs = net.raw_layers()
    for _ in range(1000):
        x = rng.uniform(lo, hi)
        z = x
        for k, (w, b) in enumerate(zip(ws, bs)):
            a = w @ z + b
            assert np.all(a >= pre_lo[k] - 1e-9)
            assert np.all(a <= pre_hi[k] + 1e-9)
            if k < len(ws) - 1:
                z = np.maximum(a, 0.0)


def test_predict_matches_independent_forward():
    rng = np.random.default_rng(4)
    net = _random_net(rng, 2, (5, 5), 2)
    for _ in range(20):
        x = rng.uniform(net.input_lo, net.input_hi)
        z = (x - net.x_offset) / net.x_scale
        for k in range(len(net.weights)):
            z = net.weights[k] @ z + net.biases[k]
            if k < len(net.weights) - 1:
                z = np.maximum(z, 0.0)
        z = z * net.y_scale + net.y_offset
        assert np.allclose(predict(net, x), z, atol=1e-12)


def test_train_linear_map():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, size=(60, 1))
    y = 2.0 * x + 1.0
    data = Dataset(x, y, np.ones(60, dtype=bool), tag="toy")
    net = train_mlp(data, hidden=(5, 5), epochs=1000, seed=0)
    grid = np.linspace(0.02, 0.98, 41)[:, None]
    pred = predict(net, grid)
    assert float(r_squared(2 * grid + 1, pred).min()) >= 0.999


def test_train_constant_row():
    x = np.full((4, 1), 0.7)
    y = np.full((4, 1), 3.0)
    data = Dataset(x, y, np.ones(4, dtype=bool))
    net = train_mlp(data, hidden=(3,), epochs=400, seed=1)
    assert predict(net, np.array([0.7]))[0] == pytest.approx(3.0, abs=1e-3)


def test_zero_epochs_returns_initialized_net():
    rng = np.random.default_rng(6)
    data = Dataset(rng.uniform(0, 1, (10, 2)), rng.uniform(0, 1, (10, 1)),
                   np.ones(10, dtype=bool))
    net = train_mlp(data, hidden=(4,), epochs=0, seed=2)
    assert np.isfinite(net.loss)
    assert net.sizes == [2, 4, 1]


def test_training_determinism():
    rng = np.random.default_rng(7)
    data = Dataset(rng.uniform(0, 1, (30, 1)), rng.uniform(0, 1, (30, 2)),
                   np.ones(30, dtype=bool))
    a = train_mlp(data, hidden=(5, 5), epochs=200, seed=3)
    b = train_mlp(data, hidden=(5, 5), epochs=200, seed=3)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    c = train_mlp(data, hidden=(5, 5), epochs=200, seed=4)
    assert any(not np.array_equal(wa, wc) for wa, wc in zip(a.weights, c.weights))


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train_mlp(Dataset(np.zeros((0, 1)), np.zeros((0, 1)),
                          np.zeros(0, dtype=bool)), hidden=(2,))


def test_mlp_json_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(8)
    net = _random_net(rng, 2, (3, 2), 2)
    net.loss = 0.123456789012345678
    p = tmp_path / "net.json"
    net.save(p)
    back = Mlp.load(p)
    assert back.sizes == net.sizes
    for wa, wb in zip(net.weights, back.weights):
        assert np.array_equal(wa, wb)
    for ba, bb in zip(net.biases, back.biases):
        assert np.array_equal(ba, bb)
    assert np.array_equal(net.x_offset, back.x_offset)
    assert np.array_equal(net.y_scale, back.y_scale)
    assert back.loss == net.loss


def test_dataset_csv_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(9)
    data = Dataset(rng.normal(size=(17, 3)), rng.normal(size=(17, 2)),
                   rng.random(17) < 0.5, tag="control")
    p = tmp_path / "d.csv"
    data.to_csv(p)
    back = Dataset.from_csv(p)
    assert np.array_equal(back.X, data.X)
    assert np.array_equal(back.Y, data.Y)
    assert np.array_equal(back.feasible, data.feasible)
    assert back.tag == "control"
