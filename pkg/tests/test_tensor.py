import math

import numpy as np
import pytest

from advcl.errors import ContractError, DimensionError, LabelError, NumericError
from advcl.tensor import (Tensor, backward, concat, gradient_reversal, matmul, no_grad,
                          relu, softmax, softmax_cross_entropy, take_rows, transpose, zero_grad)

from oracles import central_diff, loop_matmul, max_rel_error, mp_cross_entropy


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(Tensor(np.eye(2)), Tensor(a)).data, a)

    def test_zero_annihilates(self, rng):
        out = matmul(Tensor(np.zeros((2, 3))), Tensor(rng.standard_normal((3, 4))))
        assert out.shape == (2, 4) and not out.data.any()

    def test_matches_triple_loop(self, rng):
        for _ in range(20):
            a, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
            np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, loop_matmul(a, b),
                                       rtol=0, atol=1e-12)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradients(self, rng):
        a0, b0 = rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (4, 2))
        w = rng.standard_normal((3, 2))
        a, b = Tensor(a0, True), Tensor(b0, True)
        backward((matmul(a, b) * Tensor(w)).sum())
        assert max_rel_error(a.grad, central_diff(lambda v: np.sum((v @ b0) * w), a0)) < 1e-7
        assert max_rel_error(b.grad, central_diff(lambda v: np.sum((a0 @ v) * w), b0)) < 1e-7


class TestElementwise:
    def test_relu_sign_cases(self):
        assert np.array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_relu_backward_only_positive(self):
        x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
        backward(relu(x).sum())
        assert np.array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_concat_layout(self, rng):
        a, b = rng.standard_normal((4, 3)), rng.standard_normal((4, 5))
        out = concat([Tensor(a), Tensor(b)]).data
        assert out.shape == (4, 8)
        assert np.array_equal(out[:, :3], a) and np.array_equal(out[:, 3:], b)

    def test_concat_mismatch(self):
        with pytest.raises(DimensionError):
            concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))])

    def test_transpose_involution(self, rng):
        a = rng.standard_normal((2, 3))
        assert np.array_equal(transpose(transpose(Tensor(a))).data, a)

    def test_add_sub_scale(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = Tensor([5.0, 7.0], requires_grad=True)
        out = (x + y) * 3.0 - y
        np.testing.assert_array_equal(out.data, [13.0, 20.0])
        backward(out.sum())
        assert np.array_equal(x.grad, [3.0, 3.0]) and np.array_equal(y.grad, [2.0, 2.0])

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones((2, 2)))

    def test_take_rows_scatter(self):
        x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
        backward(take_rows(x, [0, 2, 0]).sum())
        assert np.array_equal(x.grad, [[2, 2], [0, 0], [1, 1]])


class TestCrossEntropy:
    def test_uniform(self):
        loss = softmax_cross_entropy(Tensor(np.zeros((3, 2))), [0, 1, 1])
        assert loss.item() == pytest.approx(math.log(2), abs=1e-15)

    def test_saturated_correct(self):
        logits = np.zeros((2, 3))
        logits[0, 1] = logits[1, 2] = 1000.0
        assert softmax_cross_entropy(Tensor(logits), [1, 2]).item() == pytest.approx(0, abs=1e-12)

    def test_high_precision_oracle(self, rng):
        for _ in range(10):
            logits = rng.standard_normal((4, 3)) * 5
            labels = rng.integers(0, 3, 4)
            got = softmax_cross_entropy(Tensor(logits), labels).item()
            assert got == pytest.approx(mp_cross_entropy(logits, labels), abs=1e-10)

    def test_gradient_formula(self, rng):
        logits = rng.standard_normal((5, 4))
        labels = rng.integers(0, 4, 5)
        x = Tensor(logits, requires_grad=True)
        backward(softmax_cross_entropy(x, labels))
        onehot = np.eye(4)[labels]
        np.testing.assert_allclose(x.grad, (softmax(logits) - onehot) / 5, atol=1e-15)

    def test_large_logits_stay_finite(self):
        loss = softmax_cross_entropy(Tensor([[1e4, -1e4, 0.0]]), [1])
        assert loss.item() == pytest.approx(2e4)

    @pytest.mark.parametrize("labels", [[0, 2], [-1, 0]])
    def test_label_range(self, labels):
        with pytest.raises(LabelError):
            softmax_cross_entropy(Tensor(np.zeros((2, 2))), labels)

    def test_non_finite(self):
        with pytest.raises(NumericError):
            softmax_cross_entropy(Tensor([[np.nan, 0.0]]), [0])


class TestGradientReversal:
    def test_forward_bit_identity(self):
        x = np.array([3.5, -2.0])
        assert np.array_equal(gradient_reversal(Tensor(x)).data, x)

    def test_sum_gives_minus_one(self):
        x = Tensor([3.5, -2.0, 0.0], requires_grad=True)
        backward(gradient_reversal(x).sum())
        assert np.array_equal(x.grad, [-1.0, -1.0, -1.0])

    def test_scaled_inner(self):
        x0 = np.array([0.3, -0.7])
        x = Tensor(x0, requires_grad=True)
        backward(gradient_reversal(x * 2.0).sum())
        true_slope = central_diff(lambda v: np.sum(2 * v), x0)
        np.testing.assert_allclose(true_slope, [2.0, 2.0], rtol=1e-9)
        assert np.array_equal(x.grad, [-2.0, -2.0])


class TestBackward:
    def test_quadratic(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward((x * x).sum())
        assert np.array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_accumulates_exactly_twice(self, rng):
        w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
        x = Tensor(rng.standard_normal((4, 3)))
        loss = softmax_cross_entropy(relu(x @ w), [0, 1, 1, 0])
        backward(loss)
        once = w.grad.copy()
        backward(loss)
        assert np.array_equal(w.grad, 2 * once)
        zero_grad([w])
        assert w.grad is None

    def test_non_scalar_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            backward(x * 2.0)

    def test_disconnected_rejected(self):
        with pytest.raises(ContractError):
            backward(Tensor([1.0, 2.0]).sum())

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_shared_subexpression(self):
        # d/dx of (x*x + x) where x feeds two paths into the same node
        x = Tensor([1.5, -2.0], requires_grad=True)
        y = x * x
        backward((y + y + x).sum())
        np.testing.assert_allclose(x.grad, 4 * x.data + 1)

    def test_deep_chain_is_iterative(self):
        x = Tensor([1.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = y * 1.0
        backward(y.sum())
        assert x.grad[0] == 1.0

    def test_deterministic(self, rng):
        a0 = rng.standard_normal((5, 4))
        grads = []
        for _ in range(2):
            a = Tensor(a0, requires_grad=True)
            backward(softmax_cross_entropy(relu(a), [0, 1, 2, 3, 0]))
            grads.append(a.grad)
        assert np.array_equal(*grads)
