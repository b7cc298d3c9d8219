"""Predictive summaries, scores, convergence diagnostics, and the posterior
subspace/Hessian inspection helpers."""

import numpy as np
import pytest

from pinnuq.stats import (
    PredictiveField,
    SummaryRow,
    coverage,
    hessian_eigenspectrum,
    lpp,
    predictive_moments,
    rel_errors,
    rhat,
    subspace_grid,
)


def field(mean, std, points=None):
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    pts = np.arange(len(mean))[:, None] if points is None else points
    return PredictiveField(pts, mean, std)


class TestPredictiveMoments:
    def test_identical_members(self):
        samples = np.tile([[1.0, 2.0, 3.0]], (5, 1))
        pred = predictive_moments(samples, lambda p: p * 2.0, np.arange(3))
        np.testing.assert_array_equal(pred.mean, [2.0, 4.0, 6.0])
        np.testing.assert_array_equal(pred.std, [0.0, 0.0, 0.0])

    def test_two_members_hand_case(self):
        samples = np.array([[0.0], [2.0]])
        pred = predictive_moments(samples, lambda p: np.array([p[0]]), [0.0])
        assert pred.mean[0] == 1.0
        np.testing.assert_allclose(pred.std[0], np.sqrt(2.0), rtol=1e-15)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        samples = rng.normal(size=(20, 4))
        pts = np.arange(3)
        fn = lambda p: np.array([p @ p, p.sum(), p[0]])
        a = predictive_moments(samples, fn, pts)
        b = predictive_moments(samples[rng.permutation(20)], fn, pts)
        np.testing.assert_allclose(a.mean, b.mean, rtol=1e-13)
        np.testing.assert_allclose(a.std, b.std, rtol=1e-13)

    def test_unbiased_variance_two_pass_reference(self):
        rng = np.random.default_rng(1)
        samples = rng.normal(size=(40, 2))
        fn = lambda p: np.array([p[0] * p[1], p[0] - p[1]])
        pred = predictive_moments(samples, fn, np.arange(2))
        preds = np.array([fn(s) for s in samples])
        mu = preds.sum(axis=0) / 40
        var = ((preds - mu) ** 2).sum(axis=0) / 39
        np.testing.assert_allclose(pred.std**2, var, rtol=0, atol=1e-12)

    def test_empty_ensemble_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            predictive_moments(np.empty((0, 3)), lambda p: p, np.arange(3))


class TestLpp:
    def test_zero_misfit_unit_sigma(self):
        for n in (1, 10, 101):
            ref = np.linspace(-1, 1, n)
            val = lpp(field(ref, np.ones(n)), ref)
            np.testing.assert_allclose(
                val, -0.5 * n * np.log(2 * np.pi), rtol=1e-12
            )

    def test_single_point_hand_value(self):
        val = lpp(field([1.0], [1.0]), [0.0])
        np.testing.assert_allclose(
            val, -(0.5 + 0.5 * np.log(2 * np.pi)), rtol=1e-12
        )
        np.testing.assert_allclose(val, -1.4189385332046727, rtol=1e-12)

    def test_sigma_doubling_penalty(self):
        n = 17
        ref = np.linspace(0, 1, n)
        a = lpp(field(ref, np.ones(n)), ref)
        b = lpp(field(ref, 2 * np.ones(n)), ref)
        np.testing.assert_allclose(a - b, n * np.log(2.0), rtol=1e-12)

    def test_monotone_decreasing_in_sigma_when_exact(self):
        ref = np.zeros(5)
        vals = [lpp(field(ref, s * np.ones(5)), ref) for s in (0.5, 1.0, 2.0, 4.0)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_floor_warns(self):
        with pytest.warns(UserWarning, match="floored"):
            lpp(field([0.0], [0.0]), [0.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            lpp(field([0.0, 1.0], [1.0, 1.0]), [0.0])


class TestRelErrors:
    def test_exact(self):
        assert rel_errors([1.0, 2.0], [1.0, 2.0]) == (0.0, 0.0)

    def test_homogeneity(self):
        ref = np.array([0.3, -1.2, 0.8])
        rl2, _ = rel_errors(1.1 * ref, ref)
        np.testing.assert_allclose(rl2, 0.1, rtol=1e-12)

    def test_hand_case(self):
        rl2, linf = rel_errors([1.0, 0.0, 0.5], [1.0, 0.0, 0.0])
        np.testing.assert_allclose([rl2, linf], [0.5, 0.5], rtol=1e-15)

    def test_zero_reference(self):
        with pytest.raises(ValueError, match="zero norm"):
            rel_errors([1.0], [0.0])


class TestCoverage:
    def test_huge_sigma(self):
        assert coverage(field([0.0, 5.0], [1e6, 1e6]), [3.0, -3.0]) == 1.0

    def test_zero_sigma_wrong_mean(self):
        assert coverage(field([1.0, 1.0], [0.0, 0.0]), [0.0, 0.0]) == 0.0

    def test_hand_case(self):
        assert coverage(field([0.0, 1.0], [1.0, 0.4]), [0.0, 0.0]) == 0.5

    def test_monotone_in_k(self):
        rng = np.random.default_rng(3)
        ref = rng.normal(size=50)
        pred = field(ref + rng.normal(0, 1, 50), np.abs(rng.normal(0.8, 0.3, 50)))
        vals = [coverage(pred, ref, k) for k in (0.5, 1.0, 2.0, 3.0)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))


class TestRhat:
    def test_hand_case(self):
        # chains {0,2} and {10,12}: W=2, B=100, Vhat=51, R=sqrt(25.5)
        val = rhat([np.array([[0.0], [2.0]]), np.array([[10.0], [12.0]])])
        np.testing.assert_allclose(val, [np.sqrt(25.5)], rtol=1e-12)
        np.testing.assert_allclose(val, [5.0497524691810387], rtol=1e-10)

    def test_identical_chains(self):
        rng = np.random.default_rng(0)
        c = rng.normal(size=(50, 3))
        val = rhat([c, c.copy(), c.copy()])
        np.testing.assert_allclose(val, np.sqrt(49 / 50), rtol=1e-12)

    def test_iid_chains_near_one(self):
        rng = np.random.default_rng(42)
        chains = [rng.normal(size=(5000, 3)) for _ in range(4)]
        val = rhat(chains)
        assert np.all(val >= 0.98) and np.all(val <= 1.08)
        assert np.all(val >= 0.99) and np.all(val <= 1.05)

    def test_unequal_lengths(self):
        with pytest.raises(ValueError, match="unequal"):
            rhat([np.zeros((3, 1)), np.zeros((4, 1))])

    def test_zero_within_variance_sentinel(self):
        val = rhat([np.ones((4, 1)), np.full((4, 1), 2.0)])
        assert np.isinf(val[0])

    def test_split_variant_detects_trend(self):
        # a strongly trending chain looks fine to the plain variant when
        # both chains trend identically; the split variant flags it
        t = np.linspace(0, 10, 1000)[:, None]
        plain = rhat([t, t + 1e-12])
        split = rhat([t, t + 1e-12], split=True)
        assert split[0] > plain[0]
        assert split[0] > 1.5


class TestSubspaceGrid:
    def test_corners_exact(self):
        rng = np.random.default_rng(5)
        t1, t2, t3 = rng.normal(size=(3, 7))
        calls = []

        def logp(theta):
            calls.append(theta.copy())
            return float(-(theta @ theta) / 2)

        grid, basis = subspace_grid(t1, t2, t3, [0.0, 1.0], [0.0, 1.0], logp)
        np.testing.assert_array_equal(grid[1, 0], logp(t1))
        np.testing.assert_array_equal(grid[0, 1], logp(t2))
        np.testing.assert_array_equal(grid[0, 0], logp(t3))

    def test_quadratic_matches_direct_evaluation(self):
        rng = np.random.default_rng(6)
        t1, t2, t3 = rng.normal(size=(3, 5))
        logp = lambda th: float(-(th @ th) / 2)
        a = np.linspace(-0.5, 1.5, 9)
        b = np.linspace(-0.5, 1.5, 9)
        grid, _ = subspace_grid(t1, t2, t3, a, b, logp)
        for i, av in enumerate(a):
            for j, bv in enumerate(b):
                th = t1 * av + t2 * bv + t3 * (1 - av - bv)
                assert abs(grid[i, j] - logp(th)) < 1e-12

    def test_orthonormal_basis(self):
        rng = np.random.default_rng(7)
        t1, t2, t3 = rng.normal(size=(3, 6))
        _grid, basis = subspace_grid(t1, t2, t3, [0.0], [0.0], lambda th: 0.0)
        np.testing.assert_allclose(basis @ basis.T, np.eye(2), atol=1e-12)

    def test_degenerate_basis(self):
        t1 = np.array([1.0, 0.0])
        t2 = np.array([0.0, 1.0])
        t3 = 2 * t1 - t2  # t1-t3 parallel to t1-t2
        with pytest.raises(ValueError, match="dependent"):
            subspace_grid(t1, t2, t3, [0.0], [0.0], lambda th: 0.0)
        with pytest.raises(ValueError, match="degenerate"):
            subspace_grid(t1, t1, t2, [0.0], [0.0], lambda th: 0.0)


class TestHessianEigenspectrum:
    def test_diagonal_quadratic(self):
        eigs = hessian_eigenspectrum(
            lambda p: -(0.5 * (p[0] * p[0] + 4.0 * p[1] * p[1])),
            np.zeros(2),
        )
        np.testing.assert_allclose(eigs, [4.0, 1.0], atol=1e-12)

    def test_isotropic(self):
        from pinnuq import autodiff as ad

        eigs = hessian_eigenspectrum(
            lambda p: -0.5 * ad.expr_sum([q * q for q in p]), np.zeros(5)
        )
        np.testing.assert_allclose(eigs, np.ones(5), atol=1e-12)

    def test_permutation_invariance(self):
        from pinnuq import autodiff as ad

        def neg_e(p):
            return -(p[0] * p[0] + 3.0 * p[1] * p[1] + 0.5 * p[0] * p[1])

        def neg_e_perm(p):
            return -(p[1] * p[1] + 3.0 * p[0] * p[0] + 0.5 * p[1] * p[0])

        a = hessian_eigenspectrum(neg_e, np.zeros(2))
        b = hessian_eigenspectrum(neg_e_perm, np.zeros(2))
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_top_k(self):
        eigs = hessian_eigenspectrum(
            lambda p: -(p[0] * p[0] + 2 * p[1] * p[1] + 3 * p[2] * p[2]),
            np.zeros(3),
            top_k=2,
        )
        assert eigs.shape == (2,)
        np.testing.assert_allclose(eigs, [6.0, 4.0], atol=1e-12)


class TestSummaryRow:
    def test_coverage_bounds(self):
        with pytest.raises(ValueError, match="coverage"):
            SummaryRow("rpinn", "u", 0.1, 0.1, 0.1, 0.0, 1.2)


class TestChainDiagnostics:
    def test_extracts_extreme_parameters(self):
        from pinnuq.stats import chain_diagnostics

        rng = np.random.default_rng(9)
        # parameter 0 mixes (iid); parameter 1 is stuck per chain
        chains = []
        for c in range(3):
            s = rng.normal(size=(200, 2))
            s[:, 1] = c * 10.0 + 0.01 * rng.normal(size=200)
            chains.append(s)
        diag = chain_diagnostics(chains, [np.zeros(200)] * 3)
        assert diag.rhat[1] > 5.0
        assert abs(diag.rhat[0] - 1.0) < 0.05
        assert set(diag.trace_params) == {0, 1}
        assert diag.trace_params[1].shape == (3, 200)
        assert len(diag.neg_logp_traces) == 3

    def test_truncates_to_common_length(self):
        from pinnuq.stats import chain_diagnostics

        rng = np.random.default_rng(10)
        chains = [rng.normal(size=(50, 2)), rng.normal(size=(60, 2))]
        diag = chain_diagnostics(chains)
        assert diag.trace_params[next(iter(diag.trace_params))].shape[1] == 50
