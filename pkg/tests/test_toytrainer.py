import numpy as np
import pytest

from trainwatch.injectors import apply_preprocessing, inject_class_imbalance
from trainwatch.telemetry import ListSink, serialize_record
from trainwatch.toytrainer import (ToyModel, TrainConfig, TrainingDiverged,
                                   backward, evaluate, forward,
                                   generate_synthetic, loss_on, softmax,
                                   train)

ACCEPT_RIG = dict(epochs=20, batch_size=32, learning_rate=0.03)


def quick_train(ds, seed, run_id="run", sink=None, **overrides):
    params = dict(ACCEPT_RIG, **overrides)
    model = ToyModel.initialize([ds.d, 16, len(ds.classes)], seed)
    cfg = TrainConfig(run_id=run_id, **params)
    return model, train(model, ds, cfg, sink)


class TestGenerators:
    def test_two_gaussians_balanced(self):
        ds = generate_synthetic("two_gaussians", 200, 2, seed=0)
        assert ds.class_counts() == {1: 100, 2: 100}

    def test_tabular_scale_ratio(self):
        ds = generate_synthetic("tabular_metrics", 100, 4, seed=1)
        spans = ds.features.std(axis=0)
        assert spans.max() / spans.min() >= 100.0

    def test_ring_is_radially_separated(self):
        ds = generate_synthetic("ring", 200, 2, seed=2)
        radius = np.linalg.norm(ds.features, axis=1)
        inner = radius[ds.labels == 1]
        outer = radius[ds.labels == 2]
        assert inner.max() < outer.min()

    def test_same_seed_identical(self):
        a = generate_synthetic("two_gaussians", 50, 3, seed=9)
        b = generate_synthetic("two_gaussians", 50, 3, seed=9)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            generate_synthetic("spirals", 100, 2, seed=0)


class TestGradients:
    def test_identity_logits_gradient_is_softmax_minus_onehot(self):
        # identity-weight linear layer: logits equal inputs
        model = ToyModel(layer_sizes=[3, 3], weights=[np.eye(3)],
                         biases=[np.zeros(3)], seed=0)
        rng = np.random.default_rng(0)
        x = rng.normal(size=(8, 3))
        y = rng.integers(0, 3, size=8)
        logits, cache = forward(model, x)
        assert np.allclose(logits, x)
        _, grads_b = backward(model, cache, y)
        expected = softmax(x)
        expected[np.arange(8), y] -= 1.0
        assert np.allclose(grads_b[0], expected.mean(axis=0), atol=1e-12)

    def test_backward_matches_central_differences(self):
        rng = np.random.default_rng(4)
        model = ToyModel.initialize([2, 8, 2], seed=4)
        x = rng.normal(size=(16, 2))
        y = rng.integers(0, 2, size=16)
        _, cache = forward(model, x)
        grads_w, grads_b = backward(model, cache, y)
        h = 1e-5
        for params, grads in ((model.weights, grads_w), (model.biases, grads_b)):
            for tensor, grad in zip(params, grads):
                flat = tensor.ravel()
                for idx in range(flat.size):
                    orig = flat[idx]
                    flat[idx] = orig + h
                    up = loss_on(model, x, y)
                    flat[idx] = orig - h
                    down = loss_on(model, x, y)
                    flat[idx] = orig
                    numeric = (up - down) / (2 * h)
                    scale = max(abs(numeric), 1e-8)
                    assert abs(grad.ravel()[idx] - numeric) / scale < 1e-4

    def test_zero_learning_rate_keeps_parameters(self):
        ds = generate_synthetic("two_gaussians", 100, 2, seed=1)
        model = ToyModel.initialize([2, 8, 2], seed=1)
        before_w = [w.copy() for w in model.weights]
        before_b = [b.copy() for b in model.biases]
        train(model, ds, TrainConfig(epochs=3, batch_size=16, learning_rate=0.0))
        assert all(np.array_equal(a, b) for a, b in zip(before_w, model.weights))
        assert all(np.array_equal(a, b) for a, b in zip(before_b, model.biases))

    def test_shape_mismatch_rejected(self):
        model = ToyModel.initialize([2, 4, 2], seed=0)
        with pytest.raises(ValueError):
            forward(model, np.zeros((5, 3)))


class TestTraining:
    def test_clean_run_reaches_high_accuracy(self):
        ds = apply_preprocessing(
            generate_synthetic("two_gaussians", 400, 2, seed=0, separation=6.0),
            ["standardize"])
        _, result = quick_train(ds, seed=0)
        assert result.metrics["accuracy"] >= 0.95
        assert not result.diverged

    def test_loss_non_increasing_within_band(self):
        ds = apply_preprocessing(
            generate_synthetic("two_gaussians", 400, 2, seed=3, separation=6.0),
            ["standardize"])
        _, result = quick_train(ds, seed=3)
        losses = result.trace.epoch_metric("train_loss")
        assert all(b <= a * 1.05 for a, b in zip(losses[1:], losses[2:]))

    def test_telemetry_covers_every_epoch_layer_kind(self):
        ds = apply_preprocessing(
            generate_synthetic("two_gaussians", 120, 2, seed=5, separation=6.0),
            ["standardize"])
        sink = ListSink()
        _, result = quick_train(ds, seed=5, sink=sink, epochs=4,
                                telemetry_cadence="epoch")
        trace = result.trace
        assert sorted(trace.epoch_index) == [0, 1, 2, 3]
        for layer, kind in [("fc1.weight", "weights"), ("fc1.weight", "gradients"),
                            ("fc1.bias", "biases"), ("fc1.bias", "gradients"),
                            ("fc2.weight", "weights"), ("fc2.weight", "gradients"),
                            ("fc2.bias", "biases"), ("fc2.bias", "gradients")]:
            series = trace.series(layer, kind)
            epochs_covered = set()
            for step, _ in series:
                for epoch, (lo, hi) in trace.epoch_index.items():
                    if lo <= step <= hi:
                        epochs_covered.add(epoch)
            assert epochs_covered == {0, 1, 2, 3}, (layer, kind)
        assert len(trace.epoch_metric("train_loss")) == 4
        assert len(sink.records) == len(result.records)

    def test_divergence_aborts_with_partial_telemetry(self):
        ds = generate_synthetic("tabular_metrics", 200, 2, seed=1)
        model = ToyModel.initialize([2, 16, 2], seed=1)
        sink = ListSink()
        with pytest.raises(TrainingDiverged) as err:
            train(model, ds, TrainConfig(epochs=5, batch_size=32,
                                         learning_rate=0.03), sink)
        partial = err.value.partial
        assert partial.diverged
        assert sink.records, "telemetry must be flushed before aborting"
        # every flushed record is still schema-valid and serializable
        for record in sink.records:
            serialize_record(record)
        peak = max(max(abs(v) for v in r.values)
                   for r in sink.records if r.values is not None)
        assert peak > 2.0, "the explosion must be visible in the telemetry"

    def test_telemetry_byte_identical_across_runs(self):
        ds = apply_preprocessing(
            generate_synthetic("two_gaussians", 100, 2, seed=7, separation=6.0),
            ["standardize"])
        blobs = []
        for _ in range(2):
            sink = ListSink()
            quick_train(ds, seed=7, sink=sink, epochs=3)
            blobs.append("\n".join(serialize_record(r) for r in sink.records))
        assert blobs[0] == blobs[1]

    def test_imbalance_tanks_minority_recall(self):
        # overlapping clusters: subsampling one class starves its recall
        base = apply_preprocessing(
            generate_synthetic("two_gaussians", 400, 2, seed=0, separation=1.5),
            ["standardize"])
        model_clean, _ = quick_train(base, seed=0, learning_rate=0.1)
        imbalanced = inject_class_imbalance(base, 9.0, seed=0)
        minority = min(imbalanced.class_counts(),
                       key=lambda k: imbalanced.class_counts()[k])
        model_imb, _ = quick_train(imbalanced, seed=0, learning_rate=0.1)
        classes = base.classes
        clean_metrics, clean_per_class = evaluate(model_clean, base, classes)
        imb_metrics, imb_per_class = evaluate(model_imb, base, classes)
        drop = clean_per_class[minority]["recall"] - imb_per_class[minority]["recall"]
        assert drop >= 0.20

    def test_output_width_must_match_classes(self):
        ds = generate_synthetic("two_gaussians", 100, 2, seed=0)
        model = ToyModel.initialize([2, 8, 3], seed=0)
        with pytest.raises(ValueError):
            train(model, ds, TrainConfig(epochs=1, batch_size=16, learning_rate=0.1))
