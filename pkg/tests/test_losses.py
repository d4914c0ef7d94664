import math

import numpy as np
import pytest

from advcl.errors import ContractError, DimensionError, LabelError
from advcl.losses import (JointBatch, adv_loss_for_D, adv_loss_for_S, diff_loss, diff_loss_joint,
                          encode, normalized_orthogonality, orthogonality, task_loss, total_loss)
from advcl.model import AclModel
from advcl.nn import sgd_step
from advcl.tensor import Tensor, backward, softmax_cross_entropy, zero_grad

from conftest import tiny_model_config
from oracles import loop_frobenius_cross


def make_batch(rng, n=8, tasks=(1,), d=6):
    t = np.resize(np.array(tasks), n)
    return JointBatch(rng.uniform(-1, 1, (n, d)), rng.integers(0, 2, n), t)


def grads_of(loss, params):
    zero_grad(params)
    backward(loss)
    out = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    zero_grad(params)
    return out


class TestTaskLoss:
    def test_untrained_near_ln2(self, rng):
        model = AclModel(tiny_model_config(), seed=0)
        batch = JointBatch(rng.uniform(-1, 1, (64, 6)) * 0.1, np.tile([0, 1], 32), np.ones(64))
        assert abs(task_loss(model, batch).item() - math.log(2)) < 0.1

    def test_single_row_matches_ce(self, rng):
        model = AclModel(tiny_model_config(), seed=0)
        batch = make_batch(rng, n=1)
        expected = softmax_cross_entropy(model.forward_task(batch.x, 1), batch.y).item()
        assert task_loss(model, batch).item() == expected

    def test_routing_through_own_heads(self, rng):
        model = AclModel(tiny_model_config(), seed=0)
        model.grow()
        batch = make_batch(rng, n=10, tasks=(1, 2))
        expected = 0.0
        for k in (1, 2):
            idx = batch.t == k
            ce = softmax_cross_entropy(model.forward_task(batch.x[idx], k), batch.y[idx]).item()
            expected += ce * idx.sum() / 10
        assert task_loss(model, batch).item() == pytest.approx(expected, abs=1e-14)

    def test_frozen_old_task_gets_no_gradient(self, rng):
        model = AclModel(tiny_model_config(), seed=0)
        model.grow()
        backward(task_loss(model, make_batch(rng, n=10, tasks=(1, 2))))
        assert all(p.grad is None for p in model.task_parameters(1))
        assert all(p.grad is not None for p in model.task_parameters(2))
        assert all(p.grad is not None for p in model.shared_parameters())

    def test_overfit_one_batch(self, rng):
        model = AclModel(tiny_model_config(), seed=0)
        x = rng.uniform(-1, 1, (6, 6))
        y = (x[:, 0] > 0).astype(int)
        batch = JointBatch(x, y, np.ones(6))
        params = model.shared_parameters() + model.task_parameters(1)
        for _ in range(3000):
            backward(task_loss(model, batch))
            sgd_step(params, 0.2)
        assert task_loss(model, batch).item() < 1e-3

    def test_label_errors(self, rng):
        model = AclModel(tiny_model_config(), seed=0)
        with pytest.raises(LabelError):
            task_loss(model, JointBatch(np.zeros((2, 6)), [0, 2], [1, 1]))
        with pytest.raises(LabelError):
            task_loss(model, JointBatch(np.zeros((2, 6)), [0, 1], [1, 2]))
        with pytest.raises(LabelError):
            JointBatch(np.zeros((2, 6)), [0, 1], [0, 1])


class TestAdversarial:
    def test_uniform_discriminator_ln6(self, rng):
        model = AclModel(tiny_model_config(max_tasks=5), seed=0)
        for p in model.discriminator.layers[-1].parameters():
            p.data[...] = 0.0
        assert adv_loss_for_S(model, make_batch(rng)).item() == pytest.approx(math.log(6), abs=1e-14)

    def test_fake_label_rejected(self, rng):
        model = AclModel(tiny_model_config(), seed=0)
        batch = make_batch(rng)
        batch.t[0] = 0
        with pytest.raises(ContractError):
            adv_loss_for_S(model, batch)

    def test_grl_flips_shared_gradient(self, rng):
        model = AclModel(tiny_model_config(), seed=0)
        batch = make_batch(rng)
        reversed_ = grads_of(adv_loss_for_S(model, batch), model.shared_parameters())
        z = model.encode_shared(batch.x)
        plain = grads_of(softmax_cross_entropy(model.forward_discriminator(z), batch.t),
                         model.shared_parameters())
        for a, b in zip(reversed_, plain):
            assert np.array_equal(a, -b)

    def test_sign_structure(self, rng):
        # a step on adv_loss_for_S should raise D's loss on that batch
        ups = 0
        for trial in range(100):
            model = AclModel(tiny_model_config(max_tasks=3), seed=trial)
            model.grow()
            model.grow()
            batch = make_batch(rng, n=12, tasks=(1, 2, 3))
            d_loss = lambda: softmax_cross_entropy(
                model.forward_discriminator(model.encode_shared(batch.x)), batch.t).item()
            before = d_loss()
            backward(adv_loss_for_S(model, batch))
            sgd_step(model.shared_parameters(), 1e-3)
            zero_grad(model.parameters())
            ups += d_loss() >= before
        assert ups >= 95

    def test_single_task_shared_gradient_decays(self, rng):
        model = AclModel(tiny_model_config(max_tasks=1), seed=0)
        batch = make_batch(rng, n=16)
        s_params = model.shared_parameters()
        for _ in range(400):
            backward(adv_loss_for_D(model, batch, noise_n=0))
            sgd_step(model.discriminator_parameters(), 0.5)
        g = grads_of(adv_loss_for_S(model, batch), s_params)
        assert max(np.abs(a).max() for a in g) < 1e-3

    def test_d_loss_uniform_with_fakes(self, rng):
        model = AclModel(tiny_model_config(max_tasks=5), seed=0)
        for p in model.discriminator.layers[-1].parameters():
            p.data[...] = 0.0
        loss = adv_loss_for_D(model, make_batch(rng), noise_n=8, rng=rng)
        assert loss.item() == pytest.approx(math.log(6), abs=1e-14)

    def test_d_loss_detached_from_shared(self, rng):
        model = AclModel(tiny_model_config(), seed=0)
        backward(adv_loss_for_D(model, make_batch(rng), noise_n=4, rng=rng))
        assert all(p.grad is None for p in model.shared_parameters())
        assert all(p.grad is not None for p in model.discriminator_parameters())

    def test_d_loss_perfect_discriminator(self, rng):
        model = AclModel(tiny_model_config(), seed=0)
        last = model.discriminator.layers[-1]
        last.weight.data[...] = 0.0
        last.bias.data[...] = [0.0, 100.0, 0.0, 0.0]
        assert adv_loss_for_D(model, make_batch(rng), noise_n=0).item() < 1e-30


class TestDifference:
    def test_orthogonal_columns_zero(self):
        zs = Tensor([[1.0, 0.0], [0.0, 0.0]])
        zp = Tensor([[0.0, 0.0], [3.0, 2.0]])
        assert orthogonality(zs, zp).item() == 0.0

    def test_identity_gives_two(self):
        eye = np.eye(2)
        assert orthogonality(Tensor(eye), Tensor(eye)).item() == 2.0 == loop_frobenius_cross(eye, eye)

    def test_matches_loop_oracle(self, rng):
        for _ in range(10):
            zs, zp = rng.standard_normal((7, 4)), rng.standard_normal((7, 3))
            assert orthogonality(Tensor(zs), Tensor(zp)).item() == pytest.approx(
                loop_frobenius_cross(zs, zp), rel=1e-12)

    def test_homogeneity(self, rng):
        zs, zp = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        base = orthogonality(Tensor(zs), Tensor(zp)).item()
        assert orthogonality(Tensor(zs), Tensor(2.5 * zp)).item() == pytest.approx(6.25 * base,
                                                                                     rel=1e-12)

    def test_row_permutation_invariant(self, rng):
        zs, zp = rng.standard_normal((6, 3)), rng.standard_normal((6, 2))
        perm = rng.permutation(6)
        a = orthogonality(Tensor(zs), Tensor(zp)).item()
        assert orthogonality(Tensor(zs[perm]), Tensor(zp[perm])).item() == pytest.approx(a, rel=1e-13)

    def test_shape_error(self):
        with pytest.raises(DimensionError):
            orthogonality(Tensor(np.ones((3, 2))), Tensor(np.ones((4, 2))))

    def test_normalized_variant(self, rng):
        zs, zp = rng.standard_normal((5, 3)), rng.standard_normal((5, 4))
        a = normalized_orthogonality(Tensor(zs), Tensor(zp)).item()
        b = normalized_orthogonality(Tensor(10 * zs), Tensor(0.5 * zp)).item()
        assert a == pytest.approx(b, rel=1e-5)  # up to the eps in the row norms
        unit = lambda z: z / np.linalg.norm(z, axis=1, keepdims=True)
        assert a == pytest.approx(loop_frobenius_cross(unit(zs), unit(zp)) / 25, rel=1e-5)
        eye = np.eye(2)
        assert normalized_orthogonality(Tensor(eye), Tensor(eye)).item() == pytest.approx(0.5, rel=1e-5)

    def test_model_diff_loss(self, rng):
        model = AclModel(tiny_model_config(), seed=0)
        x = rng.uniform(-1, 1, (5, 6))
        zs, zp = model.encode_shared(x).data, model.encode_private(x, 1).data
        assert diff_loss(model, x, 1).item() == pytest.approx(loop_frobenius_cross(zs, zp), rel=1e-12)

    def test_joint_covers_each_group(self, rng):
        model = AclModel(tiny_model_config(), seed=0)
        model.grow()
        batch = make_batch(rng, n=10, tasks=(1, 2))
        expected = sum(diff_loss(model, batch.x[batch.t == k], k).item() for k in (1, 2))
        assert diff_loss_joint(model, batch).item() == pytest.approx(expected, rel=1e-12)


class TestTotal:
    def test_selector_bit_exact(self, rng):
        model = AclModel(tiny_model_config(), seed=0)
        batch = make_batch(rng)
        f = encode(model, batch)
        l_task = task_loss(model, batch, f)
        total = total_loss((0.0, 1.0, 0.0), adv_loss_for_S(model, batch, f), l_task,
                           diff_loss(model, None, 1, f))
        assert total.item() == l_task.item()

    def test_arithmetic(self):
        parts = [Tensor(v, requires_grad=True) for v in (0.2, 0.3, 0.5)]
        assert total_loss((1, 1, 1), *parts).item() == 1.0

    def test_gradient_is_weighted_sum(self, rng):
        model = AclModel(tiny_model_config(), seed=0)
        batch = make_batch(rng)
        params = model.shared_parameters() + model.task_parameters(1)
        lam = (0.05, 1.0, 0.1)
        terms = [lambda: adv_loss_for_S(model, batch), lambda: task_loss(model, batch),
                 lambda: diff_loss(model, batch.x, 1)]
        per = [grads_of(t(), params) for t in terms]
        whole = grads_of(total_loss(lam, *(t() for t in terms)), params)
        for i, g in enumerate(whole):
            combo = sum(l * p[i] for l, p in zip(lam, per))
            np.testing.assert_allclose(g, combo, rtol=0, atol=1e-12)

    def test_negative_lambda(self):
        with pytest.raises(ContractError):
            total_loss((-1, 1, 1), None, Tensor(1.0), None)

    def test_non_negative(self, rng):
        model = AclModel(tiny_model_config(), seed=0)
        batch = make_batch(rng)
        f = encode(model, batch)
        parts = (adv_loss_for_S(model, batch, f), task_loss(model, batch, f),
                 diff_loss(model, None, 1, f))
        assert all(p.item() >= 0 for p in parts)
        assert total_loss((0.05, 1.0, 0.1), *parts).item() > 0
