"""Optimizer update rules."""

import numpy as np
import pytest

from transync.optim import SGD, Adam, clip_grad_norm, warmup_cosine_lr
from transync.tensor import Tensor


def quadratic_grad(p, target):
    p.zero_grad()
    loss = ((p - Tensor(target)) * (p - Tensor(target))).sum()
    loss.backward()
    return loss.item()


class TestSGD:
    def test_exact_update(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        p.grad = np.array([0.5, -1.0])
        SGD([p], lr=0.1).step()
        np.testing.assert_allclose(p.data, [0.95, 2.1])

    def test_converges_on_quadratic(self):
        p = Tensor(np.array([10.0]), requires_grad=True)
        opt = SGD([p], lr=0.1)
        target = np.array([3.0])
        for _ in range(100):
            quadratic_grad(p, target)
            opt.step()
        np.testing.assert_allclose(p.data, target, atol=1e-6)


class TestAdam:
    def test_first_step_is_signed_lr(self):
        # with bias correction the first update is lr * g/(|g| + eps)
        p = Tensor(np.array([1.0, 1.0, 1.0]), requires_grad=True)
        p.grad = np.array([0.3, -2.0, 1e-12])
        Adam([p], lr=0.01).step()
        np.testing.assert_allclose(p.data[:2], [1.0 - 0.01, 1.0 + 0.01], atol=1e-6)
        assert abs(p.data[2] - 1.0) < 0.01  # tiny grad, eps-damped

    def test_defaults(self):
        opt = Adam([Tensor(np.zeros(2), requires_grad=True)])
        assert opt.lr == 1e-3
        assert (opt.beta1, opt.beta2) == (0.9, 0.999)

    def test_converges_on_quadratic(self):
        p = Tensor(np.array([10.0, -4.0]), requires_grad=True)
        opt = Adam([p], lr=0.05)
        target = np.array([3.0, 1.0])
        for _ in range(500):
            quadratic_grad(p, target)
            opt.step()
        np.testing.assert_allclose(p.data, target, atol=1e-3)

    def test_skips_gradless_params(self):
        a = Tensor(np.array([1.0]), requires_grad=True)
        b = Tensor(np.array([2.0]), requires_grad=True)
        a.grad = np.array([1.0])
        Adam([a, b], lr=0.1).step()
        assert b.data[0] == 2.0
        assert a.data[0] != 1.0

    def test_empty_params_rejected(self):
        with pytest.raises(ValueError):
            Adam([])


class TestClipGradNorm:
    def test_scales_down_to_max_norm(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        b = Tensor(np.zeros(2), requires_grad=True)
        a.grad = np.array([3.0, 0.0])
        b.grad = np.array([0.0, 4.0])
        pre = clip_grad_norm([a, b], 1.0)
        assert pre == pytest.approx(5.0)
        total = np.sqrt(np.sum(a.grad ** 2) + np.sum(b.grad ** 2))
        assert total == pytest.approx(1.0)
        # direction preserved
        assert a.grad[0] == pytest.approx(3.0 / 5.0)
        assert b.grad[1] == pytest.approx(4.0 / 5.0)

    def test_leaves_small_gradients_alone(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        a.grad = np.array([0.3, 0.4])
        pre = clip_grad_norm([a], 1.0)
        assert pre == pytest.approx(0.5)
        np.testing.assert_array_equal(a.grad, [0.3, 0.4])

    def test_accepts_mapping_and_skips_gradless(self):
        a = Tensor(np.zeros(1), requires_grad=True)
        b = Tensor(np.zeros(1), requires_grad=True)
        a.grad = np.array([2.0])
        pre = clip_grad_norm({"a": a, "b": b}, 1.0)
        assert pre == pytest.approx(2.0)
        assert b.grad is None

    def test_rejects_nonpositive_max_norm(self):
        with pytest.raises(ValueError):
            clip_grad_norm([], 0.0)


class TestWarmupCosineLr:
    def test_linear_warmup(self):
        lrs = [warmup_cosine_lr(s, 100, 1.0, 10) for s in range(10)]
        np.testing.assert_allclose(lrs, np.arange(1, 11) / 10.0)

    def test_peak_then_floor(self):
        assert warmup_cosine_lr(10, 100, 1.0, 10) == pytest.approx(1.0)
        assert warmup_cosine_lr(100, 100, 1.0, 10) == pytest.approx(0.1)

    def test_monotone_decay_after_warmup(self):
        lrs = [warmup_cosine_lr(s, 200, 3e-3, 20) for s in range(20, 201)]
        assert all(x >= y for x, y in zip(lrs, lrs[1:]))

    def test_no_warmup_starts_at_peak(self):
        assert warmup_cosine_lr(0, 50, 2.0, 0) == pytest.approx(2.0)

    def test_rejects_bad_steps(self):
        with pytest.raises(ValueError):
            warmup_cosine_lr(-1, 10, 1.0, 2)
        with pytest.raises(ValueError):
            warmup_cosine_lr(0, 0, 1.0, 0)
