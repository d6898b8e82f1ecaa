import numpy as np
import pytest

from trainwatch.injectors import (BugSpec, Dataset, FlipRule, InjectError,
                                  apply_preprocessing, inject_class_imbalance,
                                  inject_concept_drift, inject_label_noise,
                                  inject_ood, read_csv, write_csv)


def balanced_dataset(n_per_class=100, d=3, seed=0):
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(2 * n_per_class, d))
    labels = np.array([1] * n_per_class + [2] * n_per_class)
    return Dataset(features=features, labels=labels,
                   timestamps=np.arange(2 * n_per_class, dtype=float))


class TestLabelNoise:
    def test_eta_zero_is_identity(self):
        ds = balanced_dataset()
        out = inject_label_noise(ds, 0.0, seed=1)
        assert np.array_equal(out.labels, ds.labels)
        assert np.array_equal(out.features, ds.features)

    def test_eta_one_binary_flips_everything(self):
        ds = balanced_dataset()
        out = inject_label_noise(ds, 1.0, seed=1)
        assert np.all(out.labels != ds.labels)

    def test_flip_fraction_concentrates(self):
        rng = np.random.default_rng(0)
        ds = Dataset(features=rng.normal(size=(10_000, 2)),
                     labels=rng.integers(1, 5, size=10_000))
        out = inject_label_noise(ds, 0.3, seed=42)
        fraction = np.mean(out.labels != ds.labels)
        assert 0.27 <= fraction <= 0.33

    def test_replacement_drawn_from_other_classes(self):
        rng = np.random.default_rng(0)
        ds = Dataset(features=rng.normal(size=(5000, 2)),
                     labels=rng.integers(1, 4, size=5000))
        out = inject_label_noise(ds, 1.0, seed=3)
        assert np.all(out.labels != ds.labels)
        assert set(np.unique(out.labels)) <= {1, 2, 3}

    def test_only_labels_change(self):
        ds = balanced_dataset()
        out = inject_label_noise(ds, 0.5, seed=2)
        assert np.array_equal(out.features, ds.features)
        assert np.array_equal(out.timestamps, ds.timestamps)

    def test_deterministic_and_seed_sensitive(self):
        ds = balanced_dataset()
        a = inject_label_noise(ds, 0.4, seed=7)
        b = inject_label_noise(ds, 0.4, seed=7)
        c = inject_label_noise(ds, 0.4, seed=8)
        assert np.array_equal(a.labels, b.labels)
        assert not np.array_equal(a.labels, c.labels)

    def test_structured_mode_routes_to_target(self):
        ds = balanced_dataset()
        out = inject_label_noise(ds, 1.0, structured=True,
                                 class_map={1: 2}, seed=0)
        assert np.all(out.labels[ds.labels == 1] == 2)
        assert np.all(out.labels[ds.labels == 2] == 2)  # unmapped kept

    def test_structured_map_to_self_rejected(self):
        with pytest.raises(InjectError):
            inject_label_noise(balanced_dataset(), 0.5, structured=True,
                               class_map={1: 1}, seed=0)

    def test_single_class_rejected(self):
        ds = Dataset(features=np.zeros((4, 2)), labels=np.ones(4, int))
        with pytest.raises(InjectError):
            inject_label_noise(ds, 0.5, seed=0)


class TestClassImbalance:
    def test_tau_one_keeps_balanced_data(self):
        ds = balanced_dataset()
        out = inject_class_imbalance(ds, 1.0, seed=0)
        assert out.class_counts() == {1: 100, 2: 100}

    def test_tau_three(self):
        out = inject_class_imbalance(balanced_dataset(), 3.0, seed=0)
        assert out.class_counts() == {1: 100, 2: 33}

    def test_tau_nine(self):
        out = inject_class_imbalance(balanced_dataset(), 9.0, seed=0)
        assert out.class_counts() == {1: 100, 2: 11}

    def test_achieved_ratio_within_one_sample(self):
        for tau in (2.0, 3.5, 9.0, 25.0):
            out = inject_class_imbalance(balanced_dataset(), tau, seed=1)
            counts = out.class_counts()
            ratio = counts[1] / counts[2]
            assert ratio >= 1.0
            assert counts[1] / (counts[2] + 1) <= tau <= ratio + 1e-9

    def test_only_deletes_rows(self):
        ds = balanced_dataset()
        out = inject_class_imbalance(ds, 4.0, seed=2)
        kept = {tuple(row) for row in out.features}
        assert kept <= {tuple(row) for row in ds.features}
        assert out.n < ds.n

    def test_tau_below_current_ratio_is_noop_with_notice(self):
        ds = balanced_dataset()
        skewed = inject_class_imbalance(ds, 5.0, seed=0)
        with pytest.warns(UserWarning, match="unchanged"):
            out = inject_class_imbalance(skewed, 2.0, seed=0)
        assert out.class_counts() == skewed.class_counts()

    def test_emptying_minority_rejected(self):
        ds = balanced_dataset(n_per_class=3)
        with pytest.raises(InjectError):
            inject_class_imbalance(ds, 50.0, seed=0)

    def test_deterministic(self):
        a = inject_class_imbalance(balanced_dataset(), 9.0, seed=5)
        b = inject_class_imbalance(balanced_dataset(), 9.0, seed=5)
        assert np.array_equal(a.features, b.features)


class TestConceptDrift:
    def test_zero_fraction_keeps_everything_in_train(self):
        ds = balanced_dataset()
        train, test = inject_concept_drift(ds, 0.0, FlipRule(), seed=0)
        assert train.n == ds.n and test.n == 0

    def test_chronological_split_ordering(self):
        rng = np.random.default_rng(2)
        ds = Dataset(features=rng.normal(size=(50, 2)),
                     labels=rng.integers(1, 3, size=50),
                     timestamps=rng.permutation(50).astype(float))
        train, test = inject_concept_drift(ds, 0.3, seed=0, synthetic=False)
        assert train.timestamps.max() <= test.timestamps.min()
        assert train.n == 35 and test.n == 15

    def test_synthetic_flip_changes_conditional_labeling(self):
        rng = np.random.default_rng(3)
        features = rng.normal(size=(200, 2))
        labels = np.where(features[:, 1] > 0, 2, 1)
        ds = Dataset(features=features, labels=labels)
        rule = FlipRule(column=0, threshold=0.0, above=True)
        train, test = inject_concept_drift(ds, 0.5, rule, seed=0)
        region = test.features[:, 0] > 0.0
        original = np.where(test.features[:, 1] > 0, 2, 1)
        assert np.all(test.labels[region] != original[region])
        assert np.all(test.labels[~region] == original[~region])
        # feature matrices untouched: P(X) preserved exactly
        assert np.array_equal(np.sort(np.concatenate([train.features, test.features]), axis=0),
                              np.sort(features, axis=0))

    def test_chronological_without_timestamps_rejected(self):
        ds = Dataset(features=np.zeros((4, 1)), labels=np.array([1, 2, 1, 2]))
        with pytest.raises(InjectError):
            inject_concept_drift(ds, 0.5, synthetic=False)


class TestOod:
    def test_rho_zero_is_identity(self):
        ds = balanced_dataset()
        out = inject_ood(ds, 0.0, np.zeros(3), seed=0)
        assert np.array_equal(out.features, ds.features)

    def test_rho_one_zero_shift_resamples_from_original_rows(self):
        ds = balanced_dataset()
        out = inject_ood(ds, 1.0, np.zeros(3), seed=1)
        originals = {tuple(r) for r in ds.features}
        assert all(tuple(r) in originals for r in out.features)

    def test_shifted_rows_have_shifted_means(self):
        ds = balanced_dataset(n_per_class=500)
        ds = apply_preprocessing(ds, ["standardize"])
        out = inject_ood(ds, 0.2, np.full(3, 10.0), seed=2)
        moved = np.nonzero(np.any(out.features != ds.features, axis=1))[0]
        assert len(moved) == pytest.approx(0.2 * ds.n, rel=0.01)
        assert np.allclose(out.features[moved].mean(axis=0), 10.0, atol=0.5)

    def test_labels_kept(self):
        ds = balanced_dataset()
        out = inject_ood(ds, 0.5, np.ones(3), seed=3)
        assert np.array_equal(out.labels, ds.labels)

    def test_wrong_shift_dimension_rejected(self):
        with pytest.raises(InjectError):
            inject_ood(balanced_dataset(), 0.2, np.zeros(2), seed=0)


class TestPreprocessing:
    def test_standardize_hand_example(self):
        ds = Dataset(features=np.array([[1.0], [2.0], [3.0]]),
                     labels=np.array([1, 2, 1]))
        out = apply_preprocessing(ds, ["standardize"])
        col = out.features[:, 0]
        assert col.mean() == pytest.approx(0.0, abs=1e-12)
        assert col.std() == pytest.approx(1.0, rel=1e-12)

    def test_standardize_constant_column_notice(self):
        ds = Dataset(features=np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]),
                     labels=np.array([1, 2, 1]))
        with pytest.warns(UserWarning, match="constant"):
            out = apply_preprocessing(ds, ["standardize"])
        assert np.allclose(out.features[:, 1], 0.0)

    def test_minmax_constant_column_maps_to_zero(self):
        ds = Dataset(features=np.full((4, 1), 3.3), labels=np.array([1, 2, 1, 2]))
        with pytest.warns(UserWarning, match="constant"):
            out = apply_preprocessing(ds, ["minmax_scale"])
        assert np.all(out.features == 0.0)

    def test_minmax_scales_to_unit_interval(self):
        rng = np.random.default_rng(1)
        ds = Dataset(features=rng.normal(size=(50, 4)) * 100,
                     labels=rng.integers(1, 3, size=50))
        out = apply_preprocessing(ds, ["minmax_scale"])
        assert out.features.min() == pytest.approx(0.0, abs=1e-12)
        assert out.features.max() == pytest.approx(1.0, rel=1e-12)

    def test_dedup_keeps_first_occurrence_order(self):
        r, s = [1.0, 2.0], [3.0, 4.0]
        ds = Dataset(features=np.array([r, r, s]), labels=np.array([1, 1, 2]))
        out = apply_preprocessing(ds, ["dedup"])
        assert out.features.tolist() == [r, s]
        assert out.labels.tolist() == [1, 2]

    def test_impute_fills_column_mean(self):
        ds = Dataset(features=np.array([[1.0, np.nan], [3.0, 4.0], [np.nan, 8.0]]),
                     labels=np.array([1, 2, 1]))
        out = apply_preprocessing(ds, ["impute_missing"])
        assert out.features[2, 0] == pytest.approx(2.0)
        assert out.features[0, 1] == pytest.approx(6.0)

    def test_canonical_order_dedup_before_stats(self):
        # the duplicate row must not influence the standardization statistics
        ds = Dataset(features=np.array([[0.0], [0.0], [10.0]]),
                     labels=np.array([1, 1, 2]))
        out = apply_preprocessing(ds, ["standardize", "dedup"])
        assert out.n == 2
        assert out.features[:, 0].tolist() == [-1.0, 1.0]

    def test_unknown_op_rejected(self):
        with pytest.raises(InjectError):
            apply_preprocessing(balanced_dataset(), ["normalize_rows"])


class TestBugSpec:
    def test_fields_must_match_kind(self):
        with pytest.raises(InjectError):
            BugSpec(kind="label_noise", eta=0.1, tau=3.0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(InjectError):
            BugSpec(kind="feature_noise")

    def test_valid_specs_accepted(self):
        BugSpec(kind="label_noise", eta=0.2)
        BugSpec(kind="class_imbalance", tau=9.0)
        BugSpec(kind="ood", ood_fraction=0.1, shift=[1.0, 2.0])
        BugSpec(kind="omit_preprocessing", omitted_ops=("standardize",))


class TestCsvIO:
    def test_roundtrip(self, tmp_path):
        ds = balanced_dataset(n_per_class=20)
        path = str(tmp_path / "data.csv")
        write_csv(ds, path, time_col="timestamp")
        back = read_csv(path, time_col="timestamp")
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.labels, ds.labels)
        assert np.array_equal(back.timestamps, ds.timestamps)
        assert back.column_names == ds.column_names

    def test_missing_cells_become_nan(self, tmp_path):
        path = tmp_path / "gaps.csv"
        path.write_text("f0,f1,label\n1.0,,1\n,2.0,2\n")
        ds = read_csv(str(path))
        assert np.isnan(ds.features[0, 1]) and np.isnan(ds.features[1, 0])

    def test_missing_label_column_rejected(self, tmp_path):
        path = tmp_path / "nolabel.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(InjectError):
            read_csv(str(path))
