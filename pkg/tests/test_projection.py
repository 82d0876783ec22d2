"""Covariate projection: the hat complement, residual scaling, and the
adjusted test path."""

import numpy as np
import pytest

from weightedu.errors import InputError
from weightedu.nulldist import TestResult, asymptotic_pvalue
from weightedu.projection import ProjectionContext, adjusted_test, project_residuals, projected_kernel
from weightedu.statistic import CenteredWeightMatrix, wu_statistic
from weightedu.transform import QuantileVector, quantile_transform


def _design(rng, n, j):
    return np.column_stack([rng.standard_normal(n) for _ in range(j)])


class TestProjectResiduals:
    def test_projector_properties(self):
        rng = np.random.default_rng(11)
        for _ in range(15):
            n = int(rng.integers(10, 50))
            j = int(rng.integers(1, 4))
            X = _design(rng, n, j)
            q = rng.standard_normal(n)
            qe, ctx = project_residuals(q, X)
            H = ctx.hat_complement
            np.testing.assert_allclose(H @ H, H, atol=1e-10)
            np.testing.assert_allclose(H, H.T, atol=1e-12)
            np.testing.assert_allclose(H @ X, 0.0, atol=1e-9)
            np.testing.assert_allclose(H @ np.ones(n), 0.0, atol=1e-9)
            # residuals orthogonal to the design and the intercept
            assert abs(qe @ np.ones(n)) < 1e-9
            np.testing.assert_allclose(qe @ X, 0.0, atol=1e-9)
            assert ctx.rank == j + 1

    def test_studentization(self):
        rng = np.random.default_rng(12)
        n = 40
        X = _design(rng, n, 2)
        qe, ctx = project_residuals(rng.standard_normal(n), X)
        # dividing by sigma_hat puts the squared norm at the residual dof
        assert float(qe @ qe) == pytest.approx(n - 3, rel=1e-10)
        assert ctx.sigma_hat > 0.0
        assert ctx.n_samples == n

    def test_accepts_quantile_vector(self):
        rng = np.random.default_rng(13)
        n = 25
        X = _design(rng, n, 1)
        Q = quantile_transform(rng.standard_normal(n))
        qe1, _ = project_residuals(Q, X)
        qe2, _ = project_residuals(Q.q, X)
        np.testing.assert_array_equal(qe1, qe2)

    def test_rank_deficient_design(self):
        rng = np.random.default_rng(14)
        n = 20
        x = rng.standard_normal(n)
        X = np.column_stack([x, 2.0 * x])  # collinear
        with pytest.raises(InputError, match="rank-deficient"):
            project_residuals(rng.standard_normal(n), X)

    def test_saturated_design(self):
        rng = np.random.default_rng(15)
        n = 4
        X = _design(rng, n, 3)  # plus intercept -> 4 columns at n = 4
        with pytest.raises(InputError, match="more samples than covariate columns"):
            project_residuals(rng.standard_normal(n), X)

    def test_no_intercept_mode(self):
        rng = np.random.default_rng(16)
        n = 30
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        qe, ctx = project_residuals(rng.standard_normal(n), X, add_intercept=False)
        assert ctx.rank == 2
        assert float(qe @ qe) == pytest.approx(n - 2, rel=1e-10)


def test_projected_kernel_is_sandwich():
    rng = np.random.default_rng(17)
    n = 15
    raw = rng.standard_normal((n, n))
    k = (raw + raw.T) / 2.0
    np.fill_diagonal(k, 0.0)
    K = CenteredWeightMatrix(values=k, c=0.1, norm="L2")
    _qe, ctx = project_residuals(rng.standard_normal(n), _design(rng, n, 2))
    ke = projected_kernel(K, ctx)
    H = ctx.hat_complement
    np.testing.assert_allclose(ke, H @ k @ H, atol=1e-12)
    np.testing.assert_allclose(ke, ke.T, atol=1e-12)


class TestAdjustedTest:
    def _kernel(self, rng, n):
        raw = rng.uniform(-0.5, 0.5, size=(n, n))
        k = (raw + raw.T) / 2.0
        np.fill_diagonal(k, 0.0)
        return CenteredWeightMatrix(values=k, c=0.2, norm="L2")

    def test_returns_result_and_context(self):
        rng = np.random.default_rng(18)
        n = 50
        K = self._kernel(rng, n)
        Q = quantile_transform(rng.standard_normal(n))
        X = _design(rng, n, 2)
        result, ctx = adjusted_test(K, Q, X)
        assert isinstance(result, TestResult)
        assert isinstance(ctx, ProjectionContext)
        assert 0.0 < result.p_asymptotic <= 1.0
        assert result.diagnostics.covariate_rank == 3
        assert result.diagnostics.sigma_hat == pytest.approx(ctx.sigma_hat)

    def test_intercept_only_reproduces_unadjusted(self):
        """With no real covariates and an exactly unit-variance mean-zero
        grid, adjustment is a no-op: same statistic, same p."""
        rng = np.random.default_rng(19)
        n = 9
        K = self._kernel(rng, n)
        # mean zero, sum of squares exactly n-1 (all values dyadic)
        q = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 0.0])
        assert float(q.sum()) == 0.0 and float(q @ q) == n - 1
        Q = QuantileVector(q=q, transform="rank", n=n)
        X = np.zeros((n, 0))  # intercept only
        adjusted, ctx = adjusted_test(K, Q, X)
        plain = asymptotic_pvalue(K, Q)
        assert ctx.rank == 1
        assert adjusted.statistic == plain.statistic
        assert adjusted.p_asymptotic == pytest.approx(plain.p_asymptotic, rel=1e-9)

    def test_affine_covariate_recoding_invariance(self):
        rng = np.random.default_rng(20)
        n = 60
        K = self._kernel(rng, n)
        Q = quantile_transform(rng.standard_normal(n))
        X = _design(rng, n, 2)
        A = np.array([[2.0, 0.3], [-0.5, 1.5]])  # invertible
        shift = np.array([3.0, -7.0])
        result_raw, _ = adjusted_test(K, Q, X)
        result_rec, _ = adjusted_test(K, Q, X @ A + shift)
        assert result_rec.statistic == pytest.approx(result_raw.statistic, abs=1e-12)
        assert result_rec.p_asymptotic == pytest.approx(result_raw.p_asymptotic, abs=1e-9)

    def test_zero_diagonal_variant_runs(self):
        rng = np.random.default_rng(21)
        n = 40
        K = self._kernel(rng, n)
        Q = quantile_transform(rng.standard_normal(n))
        X = _design(rng, n, 1)
        strict, _ = adjusted_test(K, Q, X, zero_diagonal_null=True)
        default, _ = adjusted_test(K, Q, X, zero_diagonal_null=False)
        assert 0.0 < strict.p_asymptotic <= 1.0
        # the two conventions agree loosely but are not the same estimator
        assert strict.statistic != default.statistic
