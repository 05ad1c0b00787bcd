import numpy as np
import pytest

from oracles import grad_check
from sweeprecon.autodiff import Tensor, backward, concat, stack_rows

RNG_SEEDS = range(5)


def check_unary(op, shape=(4, 3), seed=0, domain=(-2.0, 2.0), tol=1e-4):
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(*domain, size=shape)

    def f(xs):
        t = Tensor(xs[0].copy(), requires_grad=True)
        out = op(t)
        loss = out.sum() if out.data.ndim else out
        backward(loss)
        return float(loss.data), [t.grad]

    assert grad_check(f, [x0]) < tol


class TestUnaryOps:
    @pytest.mark.parametrize("seed", RNG_SEEDS)
    def test_relu(self, seed):
        # keep values away from the kink
        check_unary(lambda t: t.relu(), seed=seed, domain=(0.1, 2.0))
        check_unary(lambda t: t.relu(), seed=seed + 100, domain=(-2.0, -0.1))

    @pytest.mark.parametrize("seed", RNG_SEEDS)
    def test_tanh(self, seed):
        check_unary(lambda t: t.tanh(), seed=seed)

    @pytest.mark.parametrize("seed", RNG_SEEDS)
    def test_abs(self, seed):
        check_unary(lambda t: t.abs(), seed=seed, domain=(0.2, 2.0))

    @pytest.mark.parametrize("seed", RNG_SEEDS)
    def test_square(self, seed):
        check_unary(lambda t: t.square(), seed=seed)

    @pytest.mark.parametrize("seed", RNG_SEEDS)
    def test_clamp(self, seed):
        # stay inside the active band so the derivative is smooth
        check_unary(lambda t: t.clamp(-3.0, 3.0), seed=seed)

    @pytest.mark.parametrize("seed", RNG_SEEDS)
    def test_mean_and_sum(self, seed):
        check_unary(lambda t: t.mean(), seed=seed)
        check_unary(lambda t: t.sum(), seed=seed)

    @pytest.mark.parametrize("seed", RNG_SEEDS)
    def test_neg_reshape(self, seed):
        check_unary(lambda t: (-t).reshape(12), seed=seed)

    @pytest.mark.parametrize("seed", RNG_SEEDS)
    def test_max_over_rows(self, seed):
        check_unary(lambda t: t.max_over_rows(), shape=(6, 4), seed=seed)

    @pytest.mark.parametrize("seed", RNG_SEEDS)
    def test_mean_over_rows(self, seed):
        check_unary(lambda t: t.mean_over_rows(), shape=(6, 4), seed=seed)


class TestBinaryOps:
    @pytest.mark.parametrize("seed", RNG_SEEDS)
    def test_add_mul_matmul(self, seed):
        rng = np.random.default_rng(seed)
        a0 = rng.normal(size=(3, 4))
        b0 = rng.normal(size=(4, 2))
        c0 = rng.normal(size=(3, 2))

        def f(xs):
            a = Tensor(xs[0].copy(), requires_grad=True)
            b = Tensor(xs[1].copy(), requires_grad=True)
            c = Tensor(xs[2].copy(), requires_grad=True)
            loss = ((a @ b + c) * c - c).square().mean()
            backward(loss)
            return float(loss.data), [a.grad, b.grad, c.grad]

        assert grad_check(f, [a0, b0, c0]) < 1e-4

    @pytest.mark.parametrize("seed", RNG_SEEDS)
    def test_broadcast_add(self, seed):
        rng = np.random.default_rng(seed)
        a0 = rng.normal(size=(5, 3))
        b0 = rng.normal(size=(3,))

        def f(xs):
            a = Tensor(xs[0].copy(), requires_grad=True)
            b = Tensor(xs[1].copy(), requires_grad=True)
            loss = (a + b).square().sum()
            backward(loss)
            return float(loss.data), [a.grad, b.grad]

        assert grad_check(f, [a0, b0]) < 1e-4

    @pytest.mark.parametrize("seed", RNG_SEEDS)
    def test_scalar_mul_sub(self, seed):
        rng = np.random.default_rng(seed)
        a0 = rng.normal(size=(4,))

        def f(xs):
            a = Tensor(xs[0].copy(), requires_grad=True)
            loss = (2.5 * a - 1.0).square().sum()
            backward(loss)
            return float(loss.data), [a.grad]

        assert grad_check(f, [a0]) < 1e-4


class TestStructuralOps:
    @pytest.mark.parametrize("seed", RNG_SEEDS)
    def test_concat(self, seed):
        rng = np.random.default_rng(seed)
        a0, b0 = rng.normal(size=(3, 2)), rng.normal(size=(3, 4))

        def f(xs):
            a = Tensor(xs[0].copy(), requires_grad=True)
            b = Tensor(xs[1].copy(), requires_grad=True)
            loss = concat([a, b], axis=1).square().sum()
            backward(loss)
            return float(loss.data), [a.grad, b.grad]

        assert grad_check(f, [a0, b0]) < 1e-4

    @pytest.mark.parametrize("seed", RNG_SEEDS)
    def test_stack_rows(self, seed):
        rng = np.random.default_rng(seed)
        a0, b0 = rng.normal(size=4), rng.normal(size=4)

        def f(xs):
            a = Tensor(xs[0].copy(), requires_grad=True)
            b = Tensor(xs[1].copy(), requires_grad=True)
            loss = stack_rows([a, b]).square().sum()
            backward(loss)
            return float(loss.data), [a.grad, b.grad]

        assert grad_check(f, [a0, b0]) < 1e-4

    @pytest.mark.parametrize("seed", RNG_SEEDS)
    def test_expand_take_rows(self, seed):
        rng = np.random.default_rng(seed)
        a0 = rng.normal(size=(3, 2))
        idx = np.array([0, 2, 2, 1])

        def f(xs):
            a = Tensor(xs[0].copy(), requires_grad=True)
            loss = a.take_rows(idx).square().sum()
            backward(loss)
            return float(loss.data), [a.grad]

        assert grad_check(f, [a0]) < 1e-4

        b0 = rng.normal(size=4)

        def g(xs):
            b = Tensor(xs[0].copy(), requires_grad=True)
            loss = b.expand_rows(3).square().sum()
            backward(loss)
            return float(loss.data), [b.grad]

        assert grad_check(g, [b0]) < 1e-4


class TestEngine:
    def test_backward_requires_scalar(self):
        t = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            backward(t)

    def test_grad_accumulates_on_reuse(self):
        t = Tensor(np.array(3.0), requires_grad=True)
        loss = t * t  # dL/dt = 2t
        backward(loss)
        assert t.grad == pytest.approx(6.0)

    def test_no_grad_tracking_when_not_required(self):
        t = Tensor(np.ones(3))
        out = (t * 2.0).sum()
        backward(out)
        assert t.grad is None

    def test_deep_graph_no_recursion_error(self):
        t = Tensor(np.array(1.0), requires_grad=True)
        x = t
        for _ in range(5000):
            x = x + 0.0
        backward(x)
        assert t.grad == pytest.approx(1.0)

    def test_max_over_rows_tie_first_argmax(self):
        t = Tensor(np.array([[1.0, 5.0], [1.0, 5.0]]), requires_grad=True)
        backward(t.max_over_rows().sum())
        np.testing.assert_array_equal(t.grad, [[1.0, 1.0], [0.0, 0.0]])
