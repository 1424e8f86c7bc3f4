import itertools
import math
import threading
import warnings

import numpy as np
import pytest
from scipy import stats

from bhtsparse.model import (
    Dictionary,
    ProblemInstance,
    RankDeficientError,
    SpikyPrior,
    dct_matrix,
    load_instance,
    prior_log_probability,
    sample_dct_cs_dictionary,
    sample_dictionary,
    sample_fixed_amplitude,
    sample_fixed_support,
    sample_spiky,
    save_instance,
    synthesize,
)


class TestSpikyPrior:
    def test_valid(self):
        pr = SpikyPrior(0.9, 1.0)
        assert pr.p == 0.9 and pr.sigma_r == 1.0

    @pytest.mark.parametrize("p,s", [(0.0, 1.0), (1.0, 1.0), (0.9, 0.0), (0.9, -1.0), (1.5, 1.0)])
    def test_invalid(self, p, s):
        with pytest.raises(ValueError):
            SpikyPrior(p, s)

    def test_warns_when_not_sparse(self):
        with pytest.warns(UserWarning, match="not sparse"):
            SpikyPrior(0.4, 1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            SpikyPrior(0.9, 1.0)


class TestDictionary:
    def test_small_sample_unit_columns(self):
        d = sample_dictionary(2, 4, 5)
        assert d.shape == (2, 4)
        np.testing.assert_allclose(np.linalg.norm(d.phi, axis=0), 1.0, atol=1e-12)

    def test_full_scale_invariants(self, large_dict):
        d = large_dict
        np.testing.assert_allclose(np.linalg.norm(d.phi, axis=0), 1.0, atol=1e-10)
        np.testing.assert_allclose(d.gram, d.gram.T, atol=1e-10)
        np.testing.assert_allclose(np.diag(d.gram), 1.0, atol=1e-10)
        assert np.all(np.abs(d.phi) <= 1.0)

    def test_rejects_not_overcomplete(self):
        with pytest.raises(ValueError):
            sample_dictionary(4, 3, 0)
        with pytest.raises(ValueError):
            sample_dct_cs_dictionary(4, 4, 0)

    def test_rejects_non_unit_columns(self):
        with pytest.raises(ValueError, match="unit norm"):
            Dictionary(np.ones((2, 3)))
        d = Dictionary.from_columns(np.ones((2, 3)))
        np.testing.assert_allclose(np.linalg.norm(d.phi, axis=0), 1.0)

    def test_phi_is_read_only(self, small_dict):
        with pytest.raises(ValueError):
            small_dict.phi[0, 0] = 2.0

    def test_deterministic(self):
        a, b = sample_dictionary(8, 12, 99), sample_dictionary(8, 12, 99)
        assert np.array_equal(a.phi, b.phi)
        assert not np.array_equal(a.phi, sample_dictionary(8, 12, 100).phi)

    def test_derived_operators(self, small_dict):
        d = small_dict
        np.testing.assert_allclose(d.phi @ d.pinv, np.eye(8), atol=1e-10)
        np.testing.assert_allclose(d.hat, d.pinv @ d.phi, atol=1e-12)
        np.testing.assert_allclose(d.psi, d.hat - np.eye(12), atol=1e-12)
        np.testing.assert_allclose(d.l_op, 2 * d.phi.T - d.pinv, atol=1e-12)
        np.testing.assert_allclose(d.beta, np.sum(d.gram**2) / 12 - 1, rtol=1e-12)
        np.testing.assert_allclose(d.psi_frob_sq, np.sum(d.psi**2), rtol=1e-12)

    def test_rank_deficient_pinv(self):
        col = np.array([1.0, 0.0, 0.0])
        d = Dictionary(np.stack([col] * 4 + [np.array([0.0, 1.0, 0.0])], axis=1))
        with pytest.raises(RankDeficientError, match="rank"):
            _ = d.pinv

    def test_cache_computed_once_under_concurrency(self, monkeypatch):
        d = sample_dictionary(64, 128, 3)
        calls = []
        orig = Dictionary._build_pinv

        def counting(self):
            calls.append(1)
            return orig(self)

        monkeypatch.setattr(Dictionary, "_build_pinv", counting)
        barrier = threading.Barrier(8)
        results = []

        def worker():
            barrier.wait()
            results.append(d.pinv)

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(calls) == 1
        assert all(r is results[0] for r in results)

    def test_cold_copy_shares_matrix_not_cache(self, small_dict):
        _ = small_dict.gram
        c = small_dict.cold_copy()
        assert np.array_equal(c.phi, small_dict.phi)
        assert c.digest() == small_dict.digest()


class TestDct:
    def test_orthonormal(self):
        d = dct_matrix(16)
        np.testing.assert_allclose(d @ d.T, np.eye(16), atol=1e-10)

    def test_cs_dictionary(self):
        d = sample_dct_cs_dictionary(256, 512, 7)
        np.testing.assert_allclose(np.linalg.norm(d.phi, axis=0), 1.0, atol=1e-10)


class TestSampling:
    def test_spiky_degenerate(self):
        y, q, r = sample_spiky(SpikyPrior(1 - 1e-12, 1.0), 512, 3)
        assert q.sum() == 0 and np.all(y == 0)

    def test_spiky_mean_count(self):
        counts = [sample_spiky(SpikyPrior(0.9, 1.0), 512, s)[1].sum() for s in range(1000)]
        assert 49 <= np.mean(counts) <= 54

    def test_spiky_structure(self):
        y, q, r = sample_spiky(SpikyPrior(0.9, 2.0), 512, 1)
        assert set(np.unique(q)) <= {0, 1}
        np.testing.assert_array_equal(y, q * r)

    def test_amplitude_mean(self):
        _, _, r = sample_spiky(SpikyPrior(0.9, 1.0), 100_000, 11)
        assert abs(r.mean()) <= 3 / math.sqrt(1e5)

    def test_activity_rate(self):
        n_draws, m, p = 200, 512, 0.9
        rate = np.mean([sample_spiky(SpikyPrior(p, 1.0), m, s)[1].mean() for s in range(n_draws)])
        assert abs(rate - (1 - p)) <= 4 * math.sqrt(p * (1 - p) / (n_draws * m))

    def test_fixed_support(self):
        y, q = sample_fixed_support(512, 51, 1.0, 4)
        assert np.count_nonzero(y) == 51 and np.all(y[q == 1] == 1.0)
        with pytest.raises(ValueError):
            sample_fixed_support(5, 5, 1.0, 0)

    def test_fixed_support_uniform_position(self):
        counts = np.zeros(8)
        for s in range(10_000):
            y, _ = sample_fixed_support(8, 1, 2.0, s)
            assert y.max() == 2.0
            counts[np.argmax(y)] += 1
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_fixed_amplitude(self):
        y, q = sample_fixed_amplitude(0.9, 512, 1.0, 3)
        assert set(np.unique(y)) <= {0.0, 1.0}
        np.testing.assert_array_equal(y, q)


class TestSynthesize:
    def test_noiseless(self, small_dict):
        y = np.arange(12.0)
        inst = synthesize(small_dict, y, 0.0, 1)
        np.testing.assert_array_equal(inst.x, small_dict.phi @ y)

    def test_zero(self, small_dict):
        inst = synthesize(small_dict, np.zeros(12), 0.0, 1)
        assert np.all(inst.x == 0)

    def test_exact_identity(self, large_dict):
        for s in range(5):
            y, q, r = sample_spiky(SpikyPrior(0.9, 1.0), 512, s)
            inst = synthesize(large_dict, y, 0.01, s, q=q, r=r)
            t = inst.truth
            assert np.max(np.abs(inst.x - large_dict.phi @ t.y - t.e)) == 0.0

    def test_noise_level(self, large_dict):
        inside = 0
        for s in range(200):
            inst = synthesize(large_dict, np.zeros(512), 0.01, s)
            inside += 0.008 <= np.linalg.norm(inst.truth.e) / 16 <= 0.012
        assert inside >= 198

    def test_shape_check(self, small_dict):
        with pytest.raises(ValueError):
            synthesize(small_dict, np.zeros(5), 0.1, 0)


class TestPriorLogProbability:
    def test_all_zero(self):
        assert prior_log_probability(np.zeros(10), 0.9) == pytest.approx(-1.0536051565782630, rel=1e-12)

    def test_all_active_half(self):
        assert prior_log_probability(np.ones(7), 0.5) == pytest.approx(7 * math.log(0.5), rel=1e-14)

    def test_normalization(self):
        total = math.fsum(math.exp(prior_log_probability(np.array(q), 0.83))
                          for q in itertools.product((0, 1), repeat=10))
        assert abs(total - 1.0) <= 1e-12

    def test_permutation_invariant(self):
        q = np.array([1, 0, 0, 1, 0, 1, 0, 0])
        assert prior_log_probability(q, 0.7) == prior_log_probability(q[::-1], 0.7)

    @pytest.mark.parametrize("p", [0.0, 1.0])
    def test_rejects_endpoints(self, p):
        with pytest.raises(ValueError):
            prior_log_probability(np.zeros(4), p)

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            prior_log_probability(np.array([0, 2]), 0.9)


class TestInstanceFiles:
    def test_round_trip(self, tmp_path, small_dict):
        y, q, r = sample_spiky(SpikyPrior(0.8, 1.0), 12, 5)
        inst = synthesize(small_dict, y, 0.1, 2**63 + 5, q=q, r=r)
        back = load_instance(save_instance(inst, tmp_path / "a.npz"))
        assert back.digest() == inst.digest()
        assert back.seed == 2**63 + 5
        for name in ("y", "q", "r", "e"):
            assert np.array_equal(getattr(back.truth, name), getattr(inst.truth, name))
        assert back.truth.sigma_e == 0.1

    def test_blind_round_trip(self, tmp_path, small_dict):
        inst = ProblemInstance(small_dict, np.ones(8))
        back = load_instance(save_instance(inst, tmp_path / "b.npz"))
        assert back.truth is None and np.array_equal(back.x, inst.x)

    def test_field_order(self, tmp_path, small_dict):
        inst = synthesize(small_dict, np.zeros(12), 0.0, 0)
        with np.load(save_instance(inst, tmp_path / "c.npz")) as data:
            assert list(data.keys()) == ["format_version", "n", "m", "seed", "phi", "x", "has_truth",
                                         "y", "q", "r", "e", "sigma_e"]
