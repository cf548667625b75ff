import numpy as np
import pytest

from rlinrl import numcore as nc
from rlinrl.numcore import Tensor, serialize
from rlinrl.numcore.layers import Layer, LAYER_KINDS


def test_empty_stack_is_identity():
    x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert np.array_equal(nc.Stack([]).forward(x).data, x.data)


def test_sigmoid_of_zero_is_half():
    out = nc.Stack([nc.Sigmoid()]).forward(Tensor(np.zeros((2, 3))))
    assert np.all(out.data == 0.5)


def test_dense_hand_example():
    layer = nc.Dense(2, 1)
    layer.params["weight"].data[:] = [[1.0], [1.0]]
    out = nc.Stack([layer]).forward(Tensor([[3.0, 4.0]]))
    assert out.data.tolist() == [[7.0]]


def test_shape_error_names_layer_index():
    stack = nc.Stack([nc.Flatten(), nc.Dense(5, 2)])
    with pytest.raises(nc.ShapeError, match="layer 1"):
        stack.forward(Tensor(np.zeros((1, 2, 3))))


@pytest.mark.parametrize("beta", [0.0, 0.3, 0.9])
def test_thresholded_relu_fixed_points(beta):
    x = Tensor([beta, 1.0])
    out = nc.thresholded_relu(x, beta).data
    assert out[0] == 0.0
    assert out[1] == pytest.approx(1.0)


def test_thresholded_relu_beta_zero_is_relu_on_unit_interval():
    assert nc.thresholded_relu(Tensor([0.4]), 0.0).data[0] == pytest.approx(0.4)


def test_thresholded_relu_rejects_beta_one():
    with pytest.raises(nc.ConfigError):
        nc.ThresholdedReLU(1.0)
    with pytest.raises(ValueError):
        nc.thresholded_relu(Tensor([0.5]), 1.0)


def test_square_gradient():
    w = Tensor(3.0, requires_grad=True)
    nc.square(w).sum().backward()
    assert w.grad == pytest.approx(6.0)


def test_sigmoid_gradient_at_zero():
    w = Tensor(0.0, requires_grad=True)
    nc.sigmoid(w).sum().backward()
    assert w.grad == pytest.approx(0.25)


def test_backward_without_tape_is_usage_error():
    with pytest.raises(nc.TapeError):
        Tensor(1.0).backward()
    with pytest.raises(nc.TapeError):
        (Tensor([1.0, 2.0], requires_grad=True) * 2.0).backward()  # not a scalar


def test_no_grad_records_nothing():
    w = Tensor(2.0, requires_grad=True)
    with nc.no_grad():
        y = w * w
    assert not y.requires_grad


def _random_stack(rng):
    return nc.Stack([
        nc.Conv2d(2, 3, 3, 1, 1, rng=rng), nc.ReLU(), nc.Upsample2d(2), nc.Sigmoid(),
        nc.ThresholdedReLU(0.2), nc.Flatten(), nc.Dense(3 * 8 * 8, 4, rng=rng),
    ])


def test_three_layer_stack_matches_finite_differences():
    rng = np.random.default_rng(1)
    stack = nc.Stack([nc.Dense(5, 7, rng=rng), nc.Sigmoid(), nc.Dense(7, 3, rng=rng)])
    rep = nc.grad_check(stack, rng.standard_normal((4, 5)))
    assert rep.max_rel_error < 1e-3


def test_mixed_stack_matches_finite_differences():
    rng = np.random.default_rng(0)
    rep = nc.grad_check(_random_stack(rng), rng.standard_normal((2, 2, 4, 4)))
    assert rep.max_rel_error < 1e-3


def test_linear_layer_is_near_exact():
    rng = np.random.default_rng(3)
    rep = nc.grad_check(nc.Stack([nc.Dense(3, 2, rng=rng)]), rng.standard_normal((2, 3)))
    assert rep.max_rel_error < 1e-5


def test_thresholded_relu_away_from_kink():
    rng = np.random.default_rng(4)
    beta = 0.3
    x = rng.uniform(0, 1, (3, 5))
    x[np.abs(x - beta) < 0.01] += 0.05
    rep = nc.grad_check(nc.Stack([nc.ThresholdedReLU(beta)]), x)
    assert rep.max_rel_error < 1e-3
    assert not rep.flagged


def test_exact_kink_is_flagged_and_excluded():
    rep = nc.grad_check(nc.Stack([nc.ReLU()]), np.array([[0.0, 1.0, -1.0]]))
    assert rep.flagged
    assert rep.non_smooth >= 1
    assert rep.max_rel_error < 1e-3


def test_every_layer_kind_passes_suite():
    results = nc.check_layer_kinds(cases=10, seed=5)
    assert {r.kind for r in results} == set(LAYER_KINDS)
    assert all(r.passed for r in results), results


class _WrongSigmoid(Layer):
    kind = "wrong_sigmoid"

    def forward(self, x):
        out = nc.sigmoid(x)
        # forward value right, derivative doubled
        return Tensor._result(out.data, (x,), lambda g: (2.0 * g * out.data * (1 - out.data),), "bad")


def test_wrong_derivative_is_caught(monkeypatch):
    monkeypatch.setitem(LAYER_KINDS, "wrong_sigmoid", _WrongSigmoid)
    res = {r.kind: r for r in nc.check_layer_kinds(cases=3, kinds=["wrong_sigmoid", "sigmoid"])}
    assert not res["wrong_sigmoid"].passed
    assert res["sigmoid"].passed


def test_composition_of_stacks():
    rng = np.random.default_rng(2)
    a = nc.Stack([nc.Dense(3, 4, rng=rng), nc.ReLU()])
    b = nc.Stack([nc.Dense(4, 2, rng=rng), nc.Sigmoid()])
    x = Tensor(rng.standard_normal((5, 3)))
    assert np.array_equal((a + b).forward(x).data, b.forward(a.forward(x)).data)


def test_forward_is_deterministic():
    rng = np.random.default_rng(0)
    stack = _random_stack(rng)
    x = Tensor(rng.standard_normal((2, 2, 4, 4)))
    assert np.array_equal(stack.forward(x).data, stack.forward(x).data)


def test_conv_output_size_floor_formula():
    conv = nc.Conv2d(1, 1, 3, stride=2, padding=1)
    assert conv.output_shape((1, 1, 16, 16)) == (1, 1, 8, 8)
    assert conv.output_shape((1, 1, 7, 5)) == (1, 1, 4, 3)


def test_sigmoid_range_and_thresholded_bound():
    s = nc.sigmoid(Tensor(np.linspace(-15, 15, 101))).data
    assert np.all((s > 0) & (s < 1))
    y = nc.thresholded_relu(Tensor(np.linspace(0, 0.8, 9)), 0.2).data
    assert y.min() >= 0 and y.max() <= (0.8 - 0.2) / 0.8 + 1e-6


def test_optimizer_zero_grads_leave_params():
    w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = nc.OptimizerState(lr=0.1)
    nc.opt_step(state, {"w": w}, {"w": np.zeros(2, np.float32)})
    assert np.array_equal(w.data, np.array([1.0, -2.0], np.float32))


def test_optimizer_one_step_bound():
    w = Tensor(0.0, requires_grad=True)
    state = nc.OptimizerState(lr=0.1)
    w.sum().backward()
    nc.opt_step(state, {"w": w})
    assert -0.1 - 1e-7 <= float(w.data) < 0.0


def test_optimizer_converges_on_quadratic():
    w = Tensor(0.0, requires_grad=True)
    opt = nc.Adam({"w": w}, lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        nc.square(w - 5.0).sum().backward()
        opt.step()
    assert abs(float(w.data) - 5.0) < 0.1


def test_optimizer_missing_grad_is_usage_error():
    w = Tensor(1.0, requires_grad=True)
    with pytest.raises(RuntimeError, match="w"):
        nc.opt_step(nc.OptimizerState(), {"w": w})


def test_serialize_round_trip_and_layout():
    tensors = {"b": np.arange(6, dtype=np.float32).reshape(2, 3), "a": np.array([1.5], np.float32)}
    blob = serialize.dumps(tensors)
    assert blob[:4] == b"RLNR"
    assert int.from_bytes(blob[4:6], "little") == 1
    assert int.from_bytes(blob[6:10], "little") == 2
    back = serialize.loads(blob)
    assert list(back) == ["a", "b"]
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])


@pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:-3], lambda b: b + b"\0"])
def test_serialize_rejects_damaged_blobs(mutate):
    blob = serialize.dumps({"w": np.ones((2, 2), np.float32)})
    with pytest.raises(serialize.FormatError):
        serialize.loads(mutate(blob))


def test_broadcast_gradients():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones((1, 4)), requires_grad=True)
    ((a * b) + b).sum().backward()
    assert a.grad.shape == (3, 4)
    assert np.allclose(b.grad, 6.0)
