"""Autodiff engine, Adam and gradient checking."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ssba.errors import NumericError, ShapeError
from ssba.numerics import (Adam, AdamState, BatchNormState, Tensor, abs_squared, adam_step, add,
                           batchnorm, binary_cross_entropy, cplx_matvec, cplx_unit_normalize,
                           grad_check, linear, matmul, mean, mul, phase_parameterize, relu,
                           sigmoid, softmax_cross_entropy, tsum)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def param(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestTensor:
    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            Tensor([1.0, np.nan])
        with pytest.raises(NumericError):
            Tensor([np.inf])

    def test_backward_visits_shared_node_once(self):
        x = param([2.0])
        y = mul(x, x)
        z = add(y, y)  # dz/dx = 4x
        tsum(z).backward()
        np.testing.assert_allclose(x.grad, [8.0])

    def test_gradient_shape_matches_value(self):
        x = param(np.ones((3, 4)))
        b = param(np.ones(4))
        tsum(add(x, b)).backward()
        assert x.grad.shape == (3, 4)
        np.testing.assert_allclose(b.grad, np.full(4, 3.0))

    def test_forward_is_deterministic(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
        r1 = relu(matmul(Tensor(a), Tensor(b))).data
        r2 = relu(matmul(Tensor(a), Tensor(b))).data
        assert r1.tobytes() == r2.tobytes()


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_orthogonal(self):
        np.testing.assert_array_equal(matmul(Tensor([[1.0, 0.0]]), Tensor([[0.0], [5.0]])).data, [[0.0]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(1)
        a = rng.integers(-5, 5, size=(3, 4)).astype(float)
        b = rng.integers(-5, 5, size=(4, 2)).astype(float)
        np.testing.assert_array_equal(matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradients(self):
        rng = np.random.default_rng(2)
        a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))
        assert grad_check(lambda: tsum(mul(matmul(a, b), matmul(a, b))), [a, b]) < 1e-6


class TestActivations:
    def test_relu(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_relu_subgradient_zero_at_zero(self):
        x = param([0.0, 1.0])
        tsum(relu(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_sigmoid_gradient_matches_central_difference(self):
        x = param([0.0])
        tsum(sigmoid(x)).backward()
        h = 1e-6
        fd = (1 / (1 + math.exp(-h)) - 1 / (1 + math.exp(h))) / (2 * h)
        assert x.grad[0] == pytest.approx(0.25, abs=1e-12)
        assert x.grad[0] == pytest.approx(fd, rel=1e-9)

    def test_sigmoid_saturates_without_overflow(self):
        out = sigmoid(Tensor([-800.0, 800.0])).data
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-300)


class TestBatchNorm:
    def test_identical_rows_give_zero(self):
        st_ = BatchNormState.fresh(3)
        out = batchnorm(Tensor(np.tile([1.0, 2.0, 3.0], (4, 1))), Tensor(np.ones(3)), Tensor(np.zeros(3)), st_, True)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_symmetric_batch(self):
        eps = 1e-5
        out = batchnorm(Tensor([[-1.0], [1.0]]), Tensor([1.0]), Tensor([0.0]), BatchNormState.fresh(1), True)
        np.testing.assert_allclose(out.data[:, 0], [-1 / math.sqrt(1 + eps), 1 / math.sqrt(1 + eps)], rtol=1e-14)

    def test_needs_two_rows_in_training(self):
        with pytest.raises(ShapeError):
            batchnorm(Tensor([[1.0, 2.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), BatchNormState.fresh(2), True)

    def test_inference_uses_running_stats(self):
        state = BatchNormState(np.array([1.0]), np.array([4.0]))
        out = batchnorm(Tensor([[3.0]]), Tensor([1.0]), Tensor([0.0]), state, False)
        assert out.data[0, 0] == pytest.approx(2.0 / math.sqrt(4.0 + 1e-5))

    def test_running_stats_update(self):
        state = BatchNormState.fresh(1)
        batchnorm(Tensor([[0.0], [2.0]]), Tensor([1.0]), Tensor([0.0]), state, True)
        # momentum 0.1, unbiased batch variance 2
        assert state.running_mean[0] == pytest.approx(0.1)
        assert state.running_var[0] == pytest.approx(0.9 + 0.1 * 2.0)

    def test_gradients(self):
        rng = np.random.default_rng(3)
        x, g, b = param(rng.normal(size=(6, 4))), param(rng.normal(size=4)), param(rng.normal(size=4))
        w = rng.normal(size=(6, 4))

        def loss():
            return tsum(mul(batchnorm(x, g, b, BatchNormState.fresh(4), True), w))

        assert grad_check(loss, [x, g, b]) < 1e-6


class TestLosses:
    @pytest.mark.parametrize("m", [2, 256])
    def test_uniform_logits(self, m):
        assert softmax_cross_entropy(Tensor(np.zeros((3, m))), [0, 1, m - 1]).item() == pytest.approx(math.log(m), abs=1e-12)

    def test_large_margin_goes_to_zero(self):
        losses = [softmax_cross_entropy(Tensor([[margin, 0.0, 0.0]]), [0]).item() for margin in (1, 10, 100)]
        assert losses[0] > losses[1] > losses[2] >= 0
        assert losses[2] < 1e-40

    def test_against_direct_formula(self):
        rng = np.random.default_rng(4)
        logits = rng.normal(size=(4, 8))
        labels = np.array([0, 3, 7, 5])
        direct = np.mean([-logits[i, labels[i]] + math.log(sum(math.exp(v) for v in logits[i]))
                          for i in range(4)])
        assert softmax_cross_entropy(Tensor(logits), labels).item() == pytest.approx(direct, rel=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(Tensor(np.zeros((1, 4))), [4])

    def test_softmax_ce_gradient(self):
        x = param(np.random.default_rng(5).normal(size=(4, 8)))
        assert grad_check(lambda: softmax_cross_entropy(x, [1, 2, 3, 0]), [x]) < 1e-6

    def test_bce_perfect_prediction(self):
        onehot = np.eye(4)
        assert binary_cross_entropy(Tensor(onehot), onehot).item() <= -math.log(1 - 1e-7) + 1e-15

    def test_bce_half(self):
        assert binary_cross_entropy(Tensor(np.full((2, 3), 0.5)), np.eye(2, 3)).item() == pytest.approx(math.log(2))

    def test_bce_gradient(self):
        rng = np.random.default_rng(6)
        p = param(rng.uniform(0.1, 0.9, size=(3, 5)))
        assert grad_check(lambda: binary_cross_entropy(p, np.eye(3, 5)), [p]) < 1e-6


class TestComplexOps:
    def test_matvec_identity_column(self):
        re, im = cplx_matvec(Tensor([[1.0]]), Tensor([[0.0]]), Tensor([[1.0]]), Tensor([[1.0]]))
        assert (re.data[0, 0], im.data[0, 0]) == (1.0, 1.0)

    def test_matvec_conjugates_w(self):
        re, im = cplx_matvec(Tensor([[0.0]]), Tensor([[1.0]]), Tensor([[1.0]]), Tensor([[0.0]]))
        assert (re.data[0, 0], im.data[0, 0]) == (0.0, -1.0)

    def test_matvec_against_complex_loop(self):
        rng = np.random.default_rng(7)
        W = rng.integers(-3, 4, (5, 3)) + 1j * rng.integers(-3, 4, (5, 3))
        H = rng.integers(-3, 4, (2, 5)) + 1j * rng.integers(-3, 4, (2, 5))
        re, im = cplx_matvec(Tensor(W.real), Tensor(W.imag), Tensor(H.real), Tensor(H.imag))
        for b in range(2):
            for k in range(3):
                y = sum(W[n, k].conjugate() * H[b, n] for n in range(5))
                assert (re.data[b, k], im.data[b, k]) == (y.real, y.imag)

    def test_unit_normalize_example(self):
        re, im = cplx_unit_normalize(Tensor([[3.0]]), Tensor([[4.0]]), 64)
        assert re.data[0, 0] == pytest.approx(0.6 / 8, abs=1e-15)
        assert im.data[0, 0] == pytest.approx(0.8 / 8, abs=1e-15)

    def test_unit_normalize_fixed_point(self):
        phi = np.random.default_rng(8).uniform(0, 2 * np.pi, (4, 2))
        re, im = cplx_unit_normalize(Tensor(np.cos(phi) / 2), Tensor(np.sin(phi) / 2), 4)
        np.testing.assert_allclose(re.data, np.cos(phi) / 2, atol=1e-15)
        np.testing.assert_allclose(im.data, np.sin(phi) / 2, atol=1e-15)

    def test_unit_normalize_underflow(self):
        with pytest.raises(NumericError):
            cplx_unit_normalize(Tensor([[0.0]]), Tensor([[1e-13]]), 4)

    def test_unit_normalize_gradient(self):
        rng = np.random.default_rng(9)
        a, b = param(rng.normal(size=(4, 2))), param(rng.normal(size=(4, 2)))
        wr, wi = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))

        def loss():
            re, im = cplx_unit_normalize(a, b, 4)
            return add(tsum(mul(re, wr)), tsum(mul(mul(im, im), wi)))

        assert grad_check(loss, [a, b]) < 1e-6

    def test_phase_parameterize(self):
        re, im = phase_parameterize(Tensor([[0.0, math.pi / 2]]), 4)
        np.testing.assert_allclose(re.data, [[0.5, 0.0]], atol=1e-15)
        np.testing.assert_allclose(im.data, [[0.0, 0.5]], atol=1e-15)

    def test_abs_squared(self):
        assert abs_squared(Tensor([3.0]), Tensor([4.0])).data[0] == 25.0

    def test_abs_squared_zero_has_zero_gradient(self):
        re, im = param([0.0]), param([0.0])
        tsum(abs_squared(re, im)).backward()
        assert re.grad[0] == 0.0 and im.grad[0] == 0.0

    def test_abs_squared_gradient(self):
        rng = np.random.default_rng(10)
        re, im = param(rng.normal(size=(3, 4))), param(rng.normal(size=(3, 4)))
        assert grad_check(lambda: tsum(mul(abs_squared(re, im), abs_squared(re, im))), [re, im]) < 1e-6

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, (3, 2), elements=finite), arrays(float, (3, 2), elements=finite))
    def test_unit_normalize_modulus_and_idempotence(self, a, b):
        if (np.hypot(a, b) < 1e-6).any():
            return
        re, im = cplx_unit_normalize(Tensor(a), Tensor(b), 9)
        np.testing.assert_allclose(np.hypot(re.data, im.data), 1 / 3, atol=1e-12)
        re2, im2 = cplx_unit_normalize(re, im, 9)
        np.testing.assert_allclose(re2.data, re.data, atol=1e-15)
        np.testing.assert_allclose(im2.data, im.data, atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, (4, 3), elements=st.floats(-100, 100)), st.integers(1, 256))
    def test_phase_parameterize_modulus(self, phi, n):
        re, im = phase_parameterize(Tensor(phi), n)
        np.testing.assert_allclose(np.hypot(re.data, im.data), 1 / math.sqrt(n), rtol=1e-14)


def _adam_oracle(theta, grad_fn, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam written out longhand."""
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


class TestAdam:
    def test_first_step(self):
        p = [np.array([0.0])]
        adam_step(p, [np.array([1.0])], AdamState(lr=1e-3))
        assert p[0][0] == pytest.approx(-1e-3, rel=1e-4)

    def test_zero_gradient_is_identity(self):
        p = [np.array([1.5, -2.0])]
        state = AdamState()
        for _ in range(5):
            adam_step(p, [np.zeros(2)], state)
        np.testing.assert_array_equal(p[0], [1.5, -2.0])
        assert state.step == 5

    def test_non_finite_gradient(self):
        with pytest.raises(NumericError):
            adam_step([np.zeros(1)], [np.array([np.nan])], AdamState())

    def test_quadratic_matches_longhand_oracle(self):
        t = param([1.0])
        opt = Adam([t], lr=1e-3)
        for _ in range(100):
            opt.zero_grad()
            mul(t, t).backward()
            opt.step()
        assert t.data[0] == pytest.approx(_adam_oracle(1.0, lambda x: 2 * x, 100), rel=1e-12)

    def test_quadratic_descends_below_checkpoint(self):
        # lr 1e-3 moves at most ~1e-3 per step, landing at 0.9017; the checkpoint uses 1e-2
        t = param([1.0])
        opt = Adam([t], lr=1e-2)
        prev = 1.0
        for _ in range(100):
            opt.zero_grad()
            mul(t, t).backward()
            opt.step()
            assert abs(t.data[0]) <= prev
            prev = abs(t.data[0])
        assert abs(t.data[0]) < 0.9


class TestGradCheck:
    def test_quadratic_form(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(4, 4))
        q = a @ a.T
        x = param(rng.normal(size=(1, 4)))
        assert grad_check(lambda: tsum(mul(matmul(x, Tensor(q)), x)), [x]) < 1e-9

    def test_detects_wrong_gradient(self):
        x = param([1.0, 2.0])

        def bad():
            out = tsum(mul(x, x))
            out._backward = lambda g: x._accumulate(np.ones(2) * g)
            return out

        assert grad_check(bad, [x]) > 0.1

    def test_linear_mean(self):
        rng = np.random.default_rng(12)
        x = Tensor(rng.normal(size=(5, 3)))
        w, b = param(rng.normal(size=(3, 2))), param(rng.normal(size=2))
        assert grad_check(lambda: mean(mul(linear(x, w, b), linear(x, w, b))), [w, b]) < 1e-6
