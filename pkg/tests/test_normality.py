import numpy as np
import pytest
import scipy.integrate
import scipy.stats
from hypothesis import given, settings, strategies as st

import noisefix as nf
from noisefix.errors import ConfigError, DegenerateSampleError
from noisefix.normality import MIN_OMNIBUS_N, window_offsets


class TestSkewKurt:
    def test_alternating_pattern(self):
        v = np.tile([1.0, -1.0], 10)
        g1, g2 = nf.skew_kurt(v)
        assert g1 == pytest.approx(0.0, abs=1e-14)
        assert g2 == pytest.approx(-2.0, abs=1e-14)

    def test_symmetric_sample_zero_skew(self):
        base = nf.Rng(0).standard_normal(24)
        v = np.concatenate([base, -base])
        g1, _ = nf.skew_kurt(v)
        assert g1 == pytest.approx(0.0, abs=1e-12)

    def test_against_reference_implementation(self):
        for seed in range(100):
            v = nf.Rng(seed).standard_normal(48)
            g1, g2 = nf.skew_kurt(v)
            ref_g1 = scipy.stats.skew(v, bias=True)
            ref_g2 = scipy.stats.kurtosis(v, fisher=True, bias=True)
            assert g1 == pytest.approx(ref_g1, rel=1e-10, abs=1e-12)
            assert g2 == pytest.approx(ref_g2, rel=1e-10, abs=1e-12)

    def test_too_short(self):
        with pytest.raises(ValueError, match="at least 8"):
            nf.skew_kurt(np.arange(7.0))

    def test_degenerate_signal(self):
        with pytest.raises(DegenerateSampleError):
            nf.skew_kurt(np.full(30, 2.5))


class TestOmnibus:
    def test_reference_chi2_quantile(self):
        # K2 at the 5% point of chi-square with 2 dof
        assert np.exp(-5.99146 / 2) == pytest.approx(0.05, abs=1.5e-6)

    def test_against_reference_implementation(self):
        for seed in range(100):
            v = nf.Rng(seed).standard_normal(48)
            r = nf.omnibus_test(v)
            z1_ref = scipy.stats.skewtest(v).statistic
            z2_ref = scipy.stats.kurtosistest(v).statistic
            k2_ref, p_ref = scipy.stats.normaltest(v)
            assert r.z1 == pytest.approx(z1_ref, rel=1e-10)
            assert r.z2 == pytest.approx(z2_ref, rel=1e-10)
            assert r.k2 == pytest.approx(k2_ref, rel=1e-10)
            assert r.p == pytest.approx(p_ref, rel=1e-8)

    def test_p_is_chi2_survival(self):
        for seed in range(20):
            r = nf.omnibus_test(nf.Rng(seed).standard_normal(60))
            integral, _ = scipy.integrate.quad(
                lambda x: 0.5 * np.exp(-x / 2.0), r.k2, np.inf
            )
            assert r.p == pytest.approx(integral, abs=1e-10)
            assert r.k2 == pytest.approx(r.z1 ** 2 + r.z2 ** 2, abs=1e-12)

    def test_rejection_rate_calibration(self):
        # size of the test at n=48 under the null, many trials at once
        trials = 100_000
        V = nf.Rng(123).standard_normal((trials, 48))
        from noisefix.normality import _omnibus_batch
        *_, p = _omnibus_batch(V)
        rate = float((p < 0.05).mean())
        assert 0.045 <= rate <= 0.058

    def test_constant_vector_auto_fails(self):
        r = nf.omnibus_test(np.zeros(32))
        assert r.p == 0.0
        assert np.isinf(r.k2)
        assert r.degenerate

    def test_sample_too_small(self):
        with pytest.raises(ValueError, match="too small"):
            nf.omnibus_test(np.arange(19.0))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31), perm_seed=st.integers(0, 2**31))
    def test_permutation_invariance(self, seed, perm_seed):
        v = nf.Rng(seed).standard_normal(40)
        perm = np.random.Generator(np.random.PCG64(perm_seed)).permutation(40)
        a = nf.omnibus_test(v)
        b = nf.omnibus_test(v[perm])
        assert a.k2 == pytest.approx(b.k2, rel=1e-9)


class TestWindowOffsets:
    def test_exact_tiling(self):
        assert window_offsets(16, 4, 4) == [0, 4, 8, 12]

    def test_border_snap(self):
        assert window_offsets(10, 4, 4) == [0, 4, 6]
        assert window_offsets(7, 3, 2) == [0, 2, 4]

    def test_stride_one(self):
        assert window_offsets(6, 4, 1) == [0, 1, 2]


class TestScanMask:
    def test_clean_noise_tile_rate_near_alpha(self):
        rates = []
        for seed in range(50):
            z = nf.draw_standard_normal(nf.Rng(seed), 32, 32, 3)
            rates.append(nf.tile_failure_rate(z, 4, 0.05))
        mean = np.mean(rates)
        n_windows = 50 * 64
        band = 3 * np.sqrt(0.05 * 0.95 / n_windows)
        assert abs(mean - 0.05) <= band + 0.01  # binomial band + size bias

    def test_corrupted_tile_is_masked(self):
        z = nf.draw_standard_normal(nf.Rng(5), 16, 16, 3).data.copy()
        z[4:8, 8:12, :] = 10.0
        mask = nf.scan_mask(nf.Tensor3(z), 4, 4, 0.05)
        assert mask.mask.data[4:8, 8:12, :].all()

    def test_alpha_zero_empty_mask(self):
        z = nf.draw_standard_normal(nf.Rng(6), 16, 16, 3)
        mask = nf.scan_mask(z, 4, 4, 0.0)
        assert mask.mask.data.sum() == 0

    def test_mask_monotone_in_alpha(self):
        z = nf.draw_standard_normal(nf.Rng(7), 20, 20, 3)
        prev = nf.scan_mask(z, 4, 2, 0.01).mask.data
        for alpha in (0.05, 0.2, 0.5):
            cur = nf.scan_mask(z, 4, 2, alpha).mask.data
            assert np.all(prev <= cur)
            prev = cur

    def test_coverage_invariant(self):
        z = nf.draw_standard_normal(nf.Rng(8), 18, 14, 3)
        k, stride, alpha = 4, 3, 0.3
        mask = nf.scan_mask(z, k, stride, alpha).mask.data
        rows, cols, p = nf.window_pvalues(z, k, stride)
        rebuilt = np.zeros_like(mask)
        for a, i in enumerate(rows):
            for b, j in enumerate(cols):
                if p[a, b] < alpha:
                    rebuilt[i:i + k, j:j + k, :] = 1.0
        assert np.array_equal(mask, rebuilt)
        # every failing window footprint is fully set
        for a, i in enumerate(rows):
            for b, j in enumerate(cols):
                if p[a, b] < alpha:
                    assert mask[i:i + k, j:j + k, :].all()

    def test_window_sample_minimum_enforced(self):
        z = nf.draw_standard_normal(nf.Rng(9), 16, 16, 1)
        with pytest.raises(ConfigError, match="omnibus minimum"):
            nf.scan_mask(z, 4, 4, 0.05)  # 16 values < 20

    def test_window_larger_than_image(self):
        z = nf.draw_standard_normal(nf.Rng(10), 8, 8, 3)
        with pytest.raises(ConfigError):
            nf.scan_mask(z, 9, 1, 0.05)

    def test_scan_matches_single_tests(self):
        z = nf.draw_standard_normal(nf.Rng(11), 12, 12, 3)
        rows, cols, p = nf.window_pvalues(z, 4, 4)
        for a, i in enumerate(rows):
            for b, j in enumerate(cols):
                window = z.data[i:i + 4, j:j + 4, :].reshape(-1)
                assert p[a, b] == pytest.approx(nf.omnibus_test(window).p, abs=1e-12)


def test_min_omnibus_constant():
    assert MIN_OMNIBUS_N == 20
