import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advcl.errors import ContractError
from advcl.nn import SGD, Linear, Mlp, PlateauDecay, glorot_bound, init_params, sgd_step
from advcl.tensor import Tensor, backward, softmax_cross_entropy


def test_glorot_bound_784_175():
    layer = Linear(784, 175, seed=0)
    bound = np.sqrt(6 / 959)
    assert glorot_bound(784, 175) == pytest.approx(0.0791, abs=5e-5)
    assert np.abs(layer.weight.data).max() <= bound
    # a uniform sample this large gets close to the edges
    assert np.abs(layer.weight.data).max() > 0.99 * bound


def test_bias_zero_and_seeded():
    a, b = Linear(10, 4, seed=3), Linear(10, 4, seed=3)
    assert not a.bias.data.any()
    assert np.array_equal(a.weight.data, b.weight.data)
    assert not np.array_equal(a.weight.data, Linear(10, 4, seed=4).weight.data)


def test_init_params_resets():
    layer = Linear(5, 3, seed=1)
    ref = layer.weight.data.copy()
    layer.weight.data[:] = 7.0
    init_params(layer, seed=1)
    assert np.array_equal(layer.weight.data, ref)


def test_sgd_arithmetic():
    p = Tensor([1.0], requires_grad=True)
    p.grad = np.array([0.5])
    sgd_step([p], 0.1)
    assert p.data[0] == pytest.approx(0.95, abs=1e-15)
    assert p.grad is None


def test_missing_gradient_is_error():
    with pytest.raises(ContractError):
        sgd_step([Tensor([1.0], requires_grad=True)], 0.1)


def test_quadratic_bowl_geometric_decay():
    # loss = (theta - 3)^2, gradient 2(theta - 3); error shrinks by (1 - 2 lr) each step
    theta = Tensor([10.0], requires_grad=True)
    lr = 0.1
    for _ in range(100):
        d = theta - 3.0
        backward((d * d).sum())
        sgd_step([theta], lr)
    expected = 3.0 + 7.0 * (1 - 2 * lr) ** 100
    assert theta.data[0] == pytest.approx(expected, rel=1e-12)
    assert abs(theta.data[0] - 3.0) < 1e-3


def test_mlp_layout():
    m = Mlp([6, 5, 4, 3], seed=0)
    assert len(m.layers) == 3 and m.out_features == 3
    assert m.num_parameters() == 6 * 5 + 5 + 5 * 4 + 4 + 4 * 3 + 3
    out = m(Tensor(np.ones((2, 6))))
    assert out.shape == (2, 3)
    relu_out = Mlp([6, 3], final_relu=True, seed=0)(Tensor(-np.ones((4, 6)) * 10))
    assert (relu_out.data >= 0).all()


@settings(max_examples=40, deadline=None)
@given(mask=st.lists(st.booleans(), min_size=3, max_size=3), seed=st.integers(0, 2 ** 16))
def test_optimizer_never_touches_frozen(mask, seed):
    rng = np.random.default_rng(seed)
    m = Mlp([4, 5, 5, 2], seed=seed)
    for layer, frozen in zip(m.layers, mask):
        layer.trainable = not frozen
    before = [p.data.copy() for p in m.parameters()]
    x = Tensor(rng.standard_normal((6, 4)))
    loss = softmax_cross_entropy(m(x), rng.integers(0, 2, 6))
    if loss.requires_grad:
        backward(loss)
    sgd_step(m.parameters(), 0.5)
    params = m.parameters()
    for i, layer in enumerate(m.layers):
        for j in range(2):
            same = np.array_equal(params[2 * i + j].data, before[2 * i + j])
            if mask[i]:
                assert same


def test_small_step_decreases_loss(rng):
    for seed in range(10):
        m = Mlp([5, 8, 3], seed=seed)
        x = Tensor(rng.standard_normal((12, 5)))
        y = rng.integers(0, 3, 12)
        loss = softmax_cross_entropy(m(x), y)
        backward(loss)
        sgd_step(m.parameters(), 1e-4)
        assert softmax_cross_entropy(m(x), y).item() < loss.item()


def test_optimizer_groups_and_plateau():
    opt = SGD({"shared": 0.05, "private": 0.1}, decay_factor=0.8)
    plateau = PlateauDecay(opt, patience=3)
    assert not plateau.update(1.0)
    assert [plateau.update(1.0) for _ in range(3)] == [False, False, True]
    assert opt.lrs["shared"] == pytest.approx(0.04) and opt.lrs["private"] == pytest.approx(0.08)
    opt.reset()
    assert opt.lrs == {"shared": 0.05, "private": 0.1}


def test_invalid_sizes():
    with pytest.raises(ContractError):
        Mlp([3])
