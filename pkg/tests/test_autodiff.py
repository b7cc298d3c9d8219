"""Exactness of the scalar expression-graph engine against closed forms
and central finite differences."""

import numpy as np
import pytest

from pinnuq import autodiff as ad
from pinnuq.mlp import MlpSpec, forward_generic, init_params, network_fn


def fd_grad(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def stencil_second(f, x, h=1e-3):
    # 5-point stencil for f''(x)
    return (
        -f(x + 2 * h) + 16 * f(x + h) - 30 * f(x) + 16 * f(x - h) - f(x - 2 * h)
    ) / (12 * h**2)


class TestGrad:
    def test_sum_of_squares(self):
        g = ad.grad(lambda p: ad.expr_sum([q * q for q in p]), [1.0, -2.0, 3.0])
        np.testing.assert_allclose(g, [2.0, -4.0, 6.0], rtol=1e-14)

    def test_sin_at_zero(self):
        g = ad.grad(lambda p: ad.sin(p[0]), [0.0])
        np.testing.assert_allclose(g, [1.0], rtol=1e-14)

    def test_mlp_loss_vs_finite_differences(self):
        spec = MlpSpec(1, (6, 5, 4))
        pv = init_params(spec, 11)
        xs = np.linspace(-1, 1, 7)

        def loss_trace(params):
            terms = []
            for x in xs:
                out = forward_generic(spec, params, [ad.constant(float(x))])
                terms.append((out - float(np.sin(x))) ** 2)
            return ad.expr_sum(terms)

        g = ad.grad(loss_trace, pv.values)

        def loss_float(vec):
            return sum(
                (forward_generic(spec, list(vec), [float(x)]) - float(np.sin(x))) ** 2
                for x in xs
            )

        fd = fd_grad(loss_float, pv.values)
        rel = np.abs(g - fd).max() / np.abs(fd).max()
        assert rel < 1e-6

    def test_linearity(self):
        rng = np.random.default_rng(5)
        at = rng.normal(size=4)

        def f(p):
            return ad.expr_sum([q * q for q in p])

        def g(p):
            return ad.sin(p[0]) * ad.cos(p[1]) + ad.exp(p[2] / 3.0) * p[3]

        a, b = 2.5, -1.25
        combo = ad.grad(lambda p: a * f(p) + b * g(p), at)
        parts = a * ad.grad(f, at) + b * ad.grad(g, at)
        np.testing.assert_allclose(combo, parts, rtol=1e-13, atol=1e-13)

    def test_nonfinite_raises_with_node_kind(self):
        with pytest.raises(ad.EvaluationError, match="log"):
            ad.grad(lambda p: ad.log(p[0]), [-1.0])
        with pytest.raises(ad.EvaluationError, match="div"):
            ad.grad(lambda p: p[0] / (p[1] - p[1]), [1.0, 2.0])


class TestInputDerivative:
    def test_identity_second_derivative_zero(self):
        assert ad.input_derivative(lambda x: x[0], [0.3], 0, 2) == 0.0

    def test_single_tanh_neuron(self):
        # w = 1, b = 0: u'(0) = 1 - tanh(0)^2 = 1
        val = ad.input_derivative(lambda x: ad.tanh(x[0]), [0.0], 0, 1)
        np.testing.assert_allclose(val, 1.0, rtol=1e-14)

    def test_order_validation(self):
        with pytest.raises(ValueError, match="order"):
            ad.input_derivative(lambda x: x[0], [0.0], 0, 3)

    def test_trained_net_vs_stencil(self):
        spec = MlpSpec(1, (8, 8))
        rng = np.random.default_rng(3)
        # nonzero biases: zero-bias tanh nets are odd and have u''(0) = 0
        vec = init_params(spec, 3).values + rng.normal(0.0, 0.3, spec.n_params)
        fn = network_fn(spec, vec)
        for x0 in (-0.7, 0.0, 0.4):
            exact = ad.input_derivative(fn, [x0], 0, 2)
            approx = stencil_second(lambda t: fn([float(t)]), x0)
            assert abs(exact - approx) / max(abs(approx), 1e-8) < 1e-4


class TestMixedInputGradient:
    def test_linear(self):
        g = ad.mixed_input_gradient(lambda x: x[0] + 2.0 * x[1], [0.2, 0.7])
        np.testing.assert_allclose(g, [1.0, 2.0], rtol=1e-14)

    def test_product(self):
        g = ad.mixed_input_gradient(lambda x: x[0] * x[1], [3.0, 5.0])
        np.testing.assert_allclose(g, [5.0, 3.0], rtol=1e-14)

    def test_mlp_vs_finite_differences(self):
        spec = MlpSpec(2, (7, 6))
        pv = init_params(spec, 9)
        fn = network_fn(spec, pv)
        x0 = np.array([0.3, -0.5])
        g = ad.mixed_input_gradient(fn, x0)
        fd = fd_grad(lambda x: fn(list(x)), x0)
        assert np.abs(g - fd).max() / np.abs(fd).max() < 1e-6


class TestHessian:
    def test_diagonal_quadratic(self):
        H = ad.hessian(lambda p: 0.5 * (p[0] * p[0] + 4.0 * p[1] * p[1]), [0.7, -0.2])
        np.testing.assert_allclose(H, np.diag([1.0, 4.0]), atol=1e-13)

    def test_bilinear(self):
        H = ad.hessian(lambda p: p[0] * p[1], [2.0, 3.0])
        np.testing.assert_allclose(H, [[0.0, 1.0], [1.0, 0.0]], atol=1e-14)

    def test_mlp_loss_column_vs_fd_of_grad(self):
        spec = MlpSpec(1, (4, 3))
        pv = init_params(spec, 21)
        xs = np.linspace(-1, 1, 5)

        def loss_trace(params):
            return ad.expr_sum(
                [
                    (forward_generic(spec, params, [ad.constant(float(x))]) - 0.3) ** 2
                    for x in xs
                ]
            )

        H = ad.hessian(loss_trace, pv.values)
        h = 1e-5
        j = 7
        e = np.zeros(pv.values.size)
        e[j] = h
        col_fd = (
            ad.grad(loss_trace, pv.values + e) - ad.grad(loss_trace, pv.values - e)
        ) / (2 * h)
        rel = np.abs(H[:, j] - col_fd).max() / np.abs(col_fd).max()
        assert rel < 1e-4

    def test_symmetry_and_psd(self):
        rng = np.random.default_rng(2)
        A = rng.normal(size=(4, 4))
        M = A.T @ A  # PSD quadratic form

        def quad(p):
            return ad.expr_sum(
                [
                    p[i] * p[j] * float(M[i, j])
                    for i in range(4)
                    for j in range(4)
                ]
            )

        H = ad.hessian(quad, rng.normal(size=4))
        assert np.array_equal(H, H.T)
        assert np.linalg.eigvalsh(H).min() >= -1e-10

    def test_dimension_guard(self):
        with pytest.raises(ValueError, match="guard"):
            ad.hessian(lambda p: p[0] * p[0], np.zeros(11), max_dim=10)


class TestPrimitiveSweep:
    """Every primitive and their compositions vs central differences at
    random points: 1e-5 (first order), 1e-3 (second order)."""

    CASES = [
        ("add", lambda x: x[0] + 1.7, lambda v: v > -np.inf),
        ("sub", lambda x: 2.5 - x[0], lambda v: True),
        ("mul", lambda x: x[0] * x[0], lambda v: True),
        ("div", lambda x: 1.0 / x[0], lambda v: abs(v) > 0.3),
        ("pow", lambda x: x[0] ** 3, lambda v: True),
        ("exp", lambda x: ad.exp(x[0]), lambda v: True),
        ("log", lambda x: ad.log(x[0]), lambda v: v > 0.3),
        ("sin", lambda x: ad.sin(x[0]), lambda v: True),
        ("cos", lambda x: ad.cos(x[0]), lambda v: True),
        ("tanh", lambda x: ad.tanh(x[0]), lambda v: True),
        (
            "composed",
            lambda x: ad.tanh(ad.sin(x[0]) * ad.exp(x[0] / 2.0)) + x[0] ** 2 / 3.0,
            lambda v: True,
        ),
    ]

    def test_sweep(self):
        rng = np.random.default_rng(77)
        checked = 0
        for _name, fn, ok in self.CASES:
            pts = rng.uniform(-2.0, 2.0, size=100)
            for x0 in pts:
                if not ok(x0):
                    continue
                d1 = ad.input_derivative(fn, [x0], 0, 1)

                def as_float(t):
                    out = fn([float(t)])
                    return out if isinstance(out, float) else float(out)

                h = 1e-5
                fd1 = (as_float(x0 + h) - as_float(x0 - h)) / (2 * h)
                assert abs(d1 - fd1) / max(abs(fd1), 1.0) < 1e-5
                d2 = ad.input_derivative(fn, [x0], 0, 2)
                fd2 = stencil_second(as_float, x0)
                assert abs(d2 - fd2) / max(abs(fd2), 1.0) < 1e-3
                checked += 1
        assert checked >= 500
