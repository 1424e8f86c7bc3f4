import numpy as np
import pytest
from scipy import linalg

import oracles
from bhtsparse.model import Dictionary, RankDeficientError
from bhtsparse.operators import correlations, lls_amplitudes, min_l2_solution, residual_correction


class TestCorrelations:
    def test_orthonormal_basis_vector(self, ortho_dict):
        z = correlations(ortho_dict, ortho_dict.phi[:, 3])
        np.testing.assert_allclose(z, np.eye(6)[3], atol=1e-12)

    def test_zero(self, small_dict):
        assert np.all(correlations(small_dict, np.zeros(8)) == 0)

    def test_against_naive_loop(self, small_dict):
        x = np.random.default_rng(3).standard_normal(8)
        ref = oracles.naive_correlations(small_dict.phi, x)
        assert np.max(np.abs(correlations(small_dict, x) - ref)) <= 1e-12

    def test_shape_error(self, small_dict):
        with pytest.raises(ValueError):
            correlations(small_dict, np.zeros(7))


class TestMinL2:
    def test_orthogonal(self, ortho_dict):
        x = np.arange(6.0)
        np.testing.assert_allclose(min_l2_solution(ortho_dict, x), ortho_dict.phi.T @ x, atol=1e-12)

    def test_row_space_fixed_point(self, small_dict):
        y0 = small_dict.phi.T @ np.random.default_rng(1).standard_normal(8)
        np.testing.assert_allclose(min_l2_solution(small_dict, small_dict.phi @ y0), y0, atol=1e-10)

    def test_minimum_norm(self, small_dict):
        rng = np.random.default_rng(7)
        x = rng.standard_normal(8)
        y_hat = min_l2_solution(small_dict, x)
        null = linalg.null_space(small_dict.phi)
        for _ in range(100):
            y_any = y_hat + null @ rng.standard_normal(null.shape[1])
            np.testing.assert_allclose(small_dict.phi @ y_any, x, atol=1e-10)
            assert np.linalg.norm(y_hat) <= np.linalg.norm(y_any) + 1e-12

    def test_matches_extended_precision(self, small_dict):
        _, pinv, _, _ = oracles.operators_mp(small_dict.phi)
        np.testing.assert_allclose(small_dict.pinv, oracles.to_np(pinv), atol=1e-12)

    def test_rank_deficient(self):
        a = np.array([1.0, 0.0])
        d = Dictionary(np.stack([a, a, a], axis=1))
        with pytest.raises(RankDeficientError):
            min_l2_solution(d, np.ones(2))


class TestResidualCorrection:
    def test_zero(self, small_dict):
        assert np.all(residual_correction(small_dict, np.zeros(12)) == 0)

    def test_orthonormal(self, ortho_dict):
        c = residual_correction(ortho_dict, np.arange(6.0))
        assert np.max(np.abs(c)) <= 1e-12

    def test_against_naive_loop(self, small_dict):
        y = np.random.default_rng(5).standard_normal(12)
        ref = oracles.naive_correction(small_dict.phi, y)
        assert np.max(np.abs(residual_correction(small_dict, y) - ref)) <= 1e-12
        for j in (0, 5, 11):
            assert abs(residual_correction(small_dict, y, j) - ref[j]) <= 1e-12

    def test_index_error(self, small_dict):
        with pytest.raises(IndexError):
            residual_correction(small_dict, np.zeros(12), 12)


class TestLls:
    def test_empty_support(self, small_dict):
        assert np.all(lls_amplitudes(small_dict, np.zeros(12), 1.0, 0.1, np.ones(8)) == 0)

    def test_identity_wiener(self):
        d = Dictionary(np.eye(5))
        x = np.arange(1.0, 6.0)
        np.testing.assert_allclose(lls_amplitudes(d, np.ones(5), 1.0, 1.0, x), x / 2, atol=1e-14)

    @pytest.mark.parametrize("seed", range(4))
    def test_against_extended_precision(self, small_dict, seed):
        rng = np.random.default_rng(seed)
        q = np.zeros(12)
        q[rng.choice(12, 3, replace=False)] = 1
        x = rng.standard_normal(8)
        got = lls_amplitudes(small_dict, q, 1.3, 0.05, x)
        ref = oracles.lls_mp(small_dict.phi, q, 1.3, 0.05, x).ravel()
        assert np.max(np.abs(got - ref)) <= 1e-8

    def test_soft_pattern_against_extended_precision(self, small_dict):
        rng = np.random.default_rng(9)
        q = rng.uniform(size=12)
        x = rng.standard_normal(8)
        ref = oracles.lls_mp(small_dict.phi, q, 1.0, 0.1, x).ravel()
        assert np.max(np.abs(lls_amplitudes(small_dict, q, 1.0, 0.1, x) - ref)) <= 1e-8

    def test_full_support_path(self, small_dict):
        q = np.ones(12)
        x = np.random.default_rng(2).standard_normal(8)
        ref = oracles.lls_mp(small_dict.phi, q, 1.0, 0.2, x).ravel()
        assert np.max(np.abs(lls_amplitudes(small_dict, q, 1.0, 0.2, x) - ref)) <= 1e-8

    def test_support_containment(self, small_dict):
        q = np.zeros(12)
        q[[1, 4]] = 1
        r = lls_amplitudes(small_dict, q, 1.0, 0.1, np.ones(8))
        assert set(np.flatnonzero(r)) <= {1, 4}

    def test_singular_floor(self):
        # two identical atoms: the active-set Gram matrix is singular without noise
        a = np.array([1.0, 0.0, 0.0])
        d = Dictionary(np.stack([a, a, np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])], axis=1))
        q = np.array([1.0, 1.0, 0.0, 0.0])
        r, floored = lls_amplitudes(d, q, 1.0, 0.0, np.array([2.0, 0.0, 0.0]), return_flag=True)
        assert np.all(np.isfinite(r))
        assert floored
        np.testing.assert_allclose(r[:2], [1.0, 1.0], atol=1e-6)

    def test_noiseless_exact_on_small_support(self, small_dict):
        y = np.zeros(12)
        y[[2, 7]] = [1.5, -0.5]
        q = (y != 0).astype(float)
        r, floored = lls_amplitudes(small_dict, q, 1.0, 0.0, small_dict.phi @ y, return_flag=True)
        np.testing.assert_allclose(r, y, atol=1e-10)
        assert not floored

    def test_bad_parameters(self, small_dict):
        with pytest.raises(ValueError):
            lls_amplitudes(small_dict, np.ones(12), 0.0, 0.1, np.ones(8))
        with pytest.raises(ValueError):
            lls_amplitudes(small_dict, np.ones(12), 1.0, -0.1, np.ones(8))
