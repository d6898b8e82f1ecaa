import math

import numpy as np
import pytest

from trainwatch.stats import (LayerStats, chi2_sf_df1, compute_stats,
                              detect_outliers_iqr, detect_outliers_zscore,
                              detect_shape_distortion, mcnemar_test,
                              odds_ratio)


def brute_force_stats(xs, eps=1e-6):
    """Direct textbook formulas, no vectorization, no shared code paths."""
    xs = [float(v) for v in xs]
    n = len(xs)
    mean = math.fsum(xs) / n
    m2 = math.fsum((x - mean) ** 2 for x in xs) / n
    m3 = math.fsum((x - mean) ** 3 for x in xs) / n
    m4 = math.fsum((x - mean) ** 4 for x in xs) / n
    ordered = sorted(xs)
    mid = n // 2
    median = ordered[mid] if n % 2 else 0.5 * (ordered[mid - 1] + ordered[mid])
    if m2 > 0.0:
        skew = m3 / m2 ** 1.5
        kurt = m4 / m2 ** 2 - 3.0
    else:
        skew = kurt = 0.0
        m2 = 0.0
    return {
        "count": n, "max": max(xs), "min": min(xs), "median": median,
        "mean": mean, "var": m2, "std": math.sqrt(m2), "skew": skew,
        "kurt": kurt, "spar": sum(abs(x) <= eps for x in xs) / n,
    }


def assert_close(actual, expected, rel=1e-9):
    assert abs(actual - expected) <= rel * max(1.0, abs(expected)), \
        f"{actual} != {expected}"


class TestComputeStats:
    def test_hand_computed_example(self):
        s = compute_stats(np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
        assert s.mean == 3.0
        assert s.median == 3.0
        assert s.var == 2.0
        assert_close(s.std, math.sqrt(2.0))
        assert s.skew == 0.0
        assert_close(s.kurt, -1.3)
        assert s.spar == 0.0
        assert s.count == 5

    def test_constant_vector_is_degenerate(self):
        s = compute_stats(np.full(3, 7.25))
        assert s.var == 0.0 and s.std == 0.0
        assert s.skew == 0.0 and s.kurt == 0.0
        assert s.degenerate

    def test_symmetric_vector_has_zero_skew(self):
        s = compute_stats(np.array([-2.5, 0.0, 2.5]))
        assert s.skew == 0.0
        assert s.spar == pytest.approx(1 / 3)

    def test_single_value(self):
        s = compute_stats(np.array([4.0]))
        assert s.count == 1 and s.var == 0.0 and s.skew == 0.0 and s.kurt == 0.0
        assert s.degenerate

    def test_empty_vector_rejected(self):
        with pytest.raises(ValueError):
            compute_stats(np.array([]))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            compute_stats(np.array([1.0, np.nan]))

    def test_agrees_with_brute_force(self):
        rng = np.random.default_rng(1234)
        for _ in range(300):
            n = int(rng.integers(1, 200))
            x = rng.normal(scale=float(rng.uniform(0.01, 100.0)), size=n)
            if rng.random() < 0.2:
                x[rng.integers(0, n)] = 0.0
            got = compute_stats(x)
            want = brute_force_stats(x)
            for name, expected in want.items():
                assert_close(float(getattr(got, name)), expected)

    def test_shift_and_scale_invariance_of_shape(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=50)
        base = compute_stats(x)
        shifted = compute_stats(x + 123.456)
        scaled = compute_stats(x * 37.5)
        assert shifted.skew == pytest.approx(base.skew, rel=1e-6)
        assert shifted.kurt == pytest.approx(base.kurt, rel=1e-6)
        assert scaled.skew == pytest.approx(base.skew, rel=1e-9)
        assert scaled.kurt == pytest.approx(base.kurt, rel=1e-9)
        # sparsity is deliberately not scale invariant
        tiny = compute_stats(x * 1e-8)
        assert tiny.spar == 1.0 and base.spar == 0.0

    def test_huge_values_do_not_overflow(self):
        s = compute_stats(np.array([1e150, -1e150, 5e149]))
        assert math.isfinite(s.var) and math.isfinite(s.kurt)

    def test_validate_rejects_inconsistent_summary(self):
        with pytest.raises(ValueError):
            LayerStats(count=2, max=1.0, min=0.0, median=0.5, mean=0.5,
                       var=1.0, std=0.5, skew=0.0, kurt=0.0, spar=0.0).validate()


class TestOutliers:
    def test_zscore_flags_injected_point(self):
        rng = np.random.default_rng(0)
        x = np.append(rng.normal(size=1000), 5.0)
        report = detect_outliers_zscore(x)
        assert 1000 in report.flagged_indices

    def test_zscore_constant_vector(self):
        report = detect_outliers_zscore(np.full(10, 3.0))
        assert report.flagged_indices == ()
        assert report.degenerate

    def test_zscore_single_extreme_point_inflates_sigma(self):
        # mu = 0.9, sigma = 2.7, |9 - 0.9| = 8.1 == 3*sigma exactly: not flagged
        x = np.array([0.0] * 9 + [9.0])
        report = detect_outliers_zscore(x)
        assert report.flagged_indices == ()
        assert report.mu == pytest.approx(0.9)
        assert report.sigma == pytest.approx(2.7)

    def test_zscore_needs_two_values(self):
        with pytest.raises(ValueError):
            detect_outliers_zscore(np.array([1.0]))

    def test_zscore_set_is_permutation_invariant(self):
        rng = np.random.default_rng(3)
        x = np.append(rng.normal(size=200), [8.0, -9.0])
        base = {x[i] for i in detect_outliers_zscore(x).flagged_indices}
        perm = rng.permutation(x)
        flipped = {perm[i] for i in detect_outliers_zscore(perm).flagged_indices}
        assert base == flipped

    def test_iqr_hand_computed_fences(self):
        report = detect_outliers_iqr(np.array([1.0, 2.0, 3.0, 4.0, 100.0]))
        assert report.q1 == 2.0 and report.q3 == 4.0 and report.iqr == 2.0
        assert report.flagged_indices == (4,)

    def test_iqr_no_flags(self):
        assert detect_outliers_iqr(np.array([1.0, 2.0, 3.0, 4.0])).flagged_indices == ()

    def test_iqr_all_equal(self):
        report = detect_outliers_iqr(np.full(8, 2.5))
        assert report.flagged_indices == ()
        assert report.degenerate

    def test_iqr_needs_four_values(self):
        with pytest.raises(ValueError):
            detect_outliers_iqr(np.array([1.0, 2.0, 3.0]))

    def test_iqr_agrees_with_direct_quantiles(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            x = rng.normal(size=int(rng.integers(4, 80)))
            report = detect_outliers_iqr(x)
            q1, q3 = np.quantile(x, 0.25), np.quantile(x, 0.75)
            lo, hi = q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1)
            expected = tuple(int(i) for i in np.nonzero((x < lo) | (x > hi))[0])
            assert report.flagged_indices == expected


def summary_with_shape(skew, kurt):
    return LayerStats(count=100, max=1.0, min=-1.0, median=0.0, mean=0.0,
                      var=0.1, std=math.sqrt(0.1), skew=skew, kurt=kurt,
                      spar=0.0)


class TestShapeDistortion:
    def test_clean_shape_values_pass(self):
        assert not detect_shape_distortion(summary_with_shape(0.4, 1.3))

    def test_high_skew_flags(self):
        assert detect_shape_distortion(summary_with_shape(1.5, 0.0))

    def test_negative_kurtosis_magnitude_flags(self):
        assert detect_shape_distortion(summary_with_shape(0.0, -3.5))


class TestHypothesisTests:
    def test_mcnemar_without_correction(self):
        r = mcnemar_test(10, 2, continuity=False)
        assert r.statistic == pytest.approx(64 / 12, abs=1e-12)
        assert not r.correction_applied

    def test_mcnemar_with_correction(self):
        r = mcnemar_test(10, 2, continuity=True)
        assert r.statistic == pytest.approx(49 / 12, abs=1e-12)
        assert r.correction_applied

    def test_mcnemar_symmetric_counts(self):
        r = mcnemar_test(5, 5)
        assert r.statistic == 0.0
        assert r.p_value == 1.0

    def test_mcnemar_is_symmetric_in_b_c(self):
        assert mcnemar_test(12, 3).statistic == mcnemar_test(3, 12).statistic

    def test_mcnemar_p_value_monotone_in_statistic(self):
        stats = [mcnemar_test(b, 2).statistic for b in range(3, 40, 4)]
        ps = [mcnemar_test(b, 2).p_value for b in range(3, 40, 4)]
        assert stats == sorted(stats)
        assert ps == sorted(ps, reverse=True)
        assert all(0.0 < p <= 1.0 for p in ps)

    def test_mcnemar_rejects_empty_discordants(self):
        with pytest.raises(ValueError):
            mcnemar_test(0, 0)

    def test_chi2_survival_identity(self):
        # P(chi2_1 > s) = erfc(sqrt(s/2))
        assert chi2_sf_df1(0.0) == 1.0
        assert chi2_sf_df1(3.841458820694124) == pytest.approx(0.05, rel=1e-6)

    def test_odds_ratio_hand_computed(self):
        r = odds_ratio(10, 2, 3, 15)
        assert r.odds_ratio == 25.0
        assert not r.correction_applied

    def test_odds_ratio_no_association(self):
        r = odds_ratio(7, 7, 7, 7)
        assert r.odds_ratio == 1.0
        assert r.statistic == 0.0
        assert r.p_value == 1.0

    def test_odds_ratio_zero_cell_corrected(self):
        r = odds_ratio(10, 0, 3, 15)
        assert math.isfinite(r.odds_ratio)
        assert r.correction_applied

    def test_odds_ratio_rejects_negative(self):
        with pytest.raises(ValueError):
            odds_ratio(-1, 2, 3, 4)
