"""Parameter layout, initialization, forward pass, and serialization."""

import numpy as np
import pytest

from pinnuq.mlp import (
    MlpSpec,
    ParameterVector,
    count_params,
    flatten,
    forward,
    forward_batch,
    init_params,
    load_parameter_vector,
    load_parameter_vector_text,
    save_parameter_vector,
    save_parameter_vector_text,
    unflatten,
)


class TestCountParams:
    def test_two_by_fifty(self):
        # 1->50: 100, 50->50: 2550, 50->1: 51
        assert count_params(MlpSpec(1, (50, 50))) == 2701

    def test_four_by_sixty(self):
        # 2->60: 180, 3 x (60->60: 3660), 60->1: 61
        assert count_params(MlpSpec(2, (60, 60, 60, 60))) == 11221

    def test_affine(self):
        assert count_params(MlpSpec(1, ())) == 2


class TestInitParams:
    def test_deterministic(self):
        a = init_params(MlpSpec(1, (5, 5)), 42)
        b = init_params(MlpSpec(1, (5, 5)), 42)
        assert np.array_equal(a.values, b.values)

    def test_seed_changes_values(self):
        a = init_params(MlpSpec(1, (5, 5)), 42)
        b = init_params(MlpSpec(1, (5, 5)), 43)
        assert np.any(a.values != b.values)

    def test_zero_biases(self):
        spec = MlpSpec(2, (4, 3))
        layers = unflatten(spec, init_params(spec, 0).values)
        for _W, b in layers:
            assert np.all(b == 0)

    def test_glorot_variance(self):
        # Var[U(-a, a)] = a^2/3 = 2/(fan_in + fan_out)
        spec = MlpSpec(1, (9,))
        fi, fo = 9, 1  # output layer of this spec
        samples = []
        for seed in range(1000):
            W_out = unflatten(spec, init_params(spec, seed).values)[1][0]
            samples.append(W_out.ravel())
        var = np.var(np.concatenate(samples))
        expected = 2.0 / (fi + fo)
        assert abs(var - expected) / expected < 0.10


class TestForward:
    def test_all_zero_params(self):
        spec = MlpSpec(1, (8, 8))
        assert forward(spec, np.zeros(spec.n_params), [0.7]) == 0.0

    def test_affine(self):
        spec = MlpSpec(1, ())
        vec = flatten(spec, [(np.array([[2.0]]), np.array([1.0]))])
        assert forward(spec, vec, [3.0]) == 7.0

    def test_against_naive_reference(self):
        spec = MlpSpec(2, (6, 5))
        pv = init_params(spec, 17)
        rng = np.random.default_rng(4)
        vec = pv.values + rng.normal(0.0, 0.2, spec.n_params)
        X = rng.uniform(-1, 1, (10, 2))

        def naive(x):
            z = x
            layers = unflatten(spec, vec)
            for W, b in layers[:-1]:
                z = np.tanh(W @ z + b)
            W, b = layers[-1]
            return (W @ z + b)[0]

        got = forward_batch(spec, vec, X)
        want = np.array([naive(x) for x in X])
        # batched GEMM vs per-point matvec may differ in the last ulp
        np.testing.assert_allclose(got, want, rtol=0, atol=5e-15)

    def test_dimension_mismatch(self):
        spec = MlpSpec(2, (3,))
        with pytest.raises(ValueError, match="coordinates"):
            forward(spec, np.zeros(spec.n_params), [1.0])

    def test_odd_symmetry_zero_bias(self):
        spec = MlpSpec(1, (12,))
        pv = init_params(spec, 5)  # biases zero
        for x in (0.3, 1.1, 2.4):
            assert forward(spec, pv, [-x]) == pytest.approx(
                -forward(spec, pv, [x]), abs=1e-15
            )

    def test_finite_on_wide_range(self):
        spec = MlpSpec(1, (50, 50))
        pv = init_params(spec, 1)
        xs = np.linspace(-10, 10, 41)[:, None]
        assert np.all(np.isfinite(forward_batch(spec, pv.values, xs)))


class TestFlattenRoundTrip:
    def test_round_trip_random_specs(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            depth = rng.integers(0, 4)
            spec = MlpSpec(
                int(rng.integers(1, 4)),
                tuple(int(w) for w in rng.integers(1, 9, depth)),
            )
            vec = rng.normal(size=spec.n_params)
            back = flatten(spec, unflatten(spec, vec))
            assert np.array_equal(back, vec)


class TestSerialization:
    def test_binary_round_trip(self, tmp_path):
        pv = init_params(MlpSpec(1, (7, 3)), 2)
        path = tmp_path / "p.pv"
        save_parameter_vector(path, pv)
        back = load_parameter_vector(path)
        assert np.array_equal(back.values, pv.values)
        assert back.layout == pv.layout

    def test_two_net_layout(self, tmp_path):
        layout = (MlpSpec(2, (4,)), MlpSpec(2, (5,)))
        pv = init_params(layout, 9)
        path = tmp_path / "p.pv"
        save_parameter_vector(path, pv)
        back = load_parameter_vector(path)
        assert np.array_equal(back.values, pv.values)
        assert back.layout == layout

    def test_text_round_trip(self, tmp_path):
        pv = init_params(MlpSpec(1, (4,)), 8)
        path = tmp_path / "p.txt"
        save_parameter_vector_text(path, pv)
        back = load_parameter_vector_text(path)
        assert np.array_equal(back.values, pv.values)

    def test_length_validation(self):
        with pytest.raises(ValueError, match="length"):
            ParameterVector(np.zeros(5), MlpSpec(1, (4,)))
