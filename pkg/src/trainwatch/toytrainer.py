"""Minimal fully-connected classifier with analytic backprop and telemetry.

The rig exists so injected data bugs demonstrably produce detectable
training symptoms at desk scale: plain SGD (adaptive optimizers would mask
gradient pathologies), ReLU hidden layers, softmax + cross-entropy, and
per-layer telemetry emission in the JSONL wire format.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .injectors import BugSpec, Dataset, apply_bug
from .telemetry import (KIND_BIASES, KIND_GRADIENTS, KIND_METRIC,
                        KIND_WEIGHTS, METRIC_LAYER, RunTrace, TelemetryRecord,
                        build_trace)

SYNTHETIC_KINDS = ("two_gaussians", "ring", "tabular_metrics")

# Beyond this magnitude second moments stop being representable in float64;
# a run that reaches it has plainly exploded and is aborted like a NaN.
MAGNITUDE_LIMIT = 1e100


class TrainingDiverged(RuntimeError):
    """Raised when loss or parameters go non-finite; partial telemetry has
    already been flushed so the trace shows the run up to the explosion."""

    def __init__(self, message: str, step: int, partial: "TrainResult"):
        super().__init__(message)
        self.step = step
        self.partial = partial


def generate_synthetic(kind: str, n: int, d: int, seed: int, *,
                       separation: float = 4.0) -> Dataset:
    """Build a labeled synthetic dataset.

    two_gaussians: balanced binary classes at +/- mu, unit covariance, with
    `separation` the distance between the class means. ring: radially
    separable classes. tabular_metrics: columns on wildly different scales
    (ratio >= 100) to exercise normalization omission.
    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    if d < 1 or n < 4:
        raise ValueError("need d >= 1 and n >= 2K")
    rng = np.random.default_rng(seed)
    half = n // 2
    if kind == "two_gaussians":
        mu = np.full(d, separation / (2.0 * np.sqrt(d)))
        a = rng.normal(size=(half, d)) + mu
        b = rng.normal(size=(n - half, d)) - mu
        features = np.vstack([a, b])
        labels = np.concatenate([np.ones(half, int), np.full(n - half, 2)])
    elif kind == "ring":
        direction = rng.normal(size=(n, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        r_inner = rng.uniform(0.0, 1.0, size=half)
        r_outer = rng.uniform(2.0, 3.0, size=n - half)
        radius = np.concatenate([r_inner, r_outer])
        features = direction * radius[:, None]
        labels = np.concatenate([np.ones(half, int), np.full(n - half, 2)])
    else:
        latent = rng.normal(size=(n, d))
        w_true = rng.normal(size=d)
        labels = np.where(latent @ w_true > 0.0, 2, 1)
        scales = np.ones(d)
        scales[0] = 1000.0
        if d > 1:
            scales[-1] = 0.1
        features = latent * scales
    order = rng.permutation(n)
    return Dataset(features=features[order], labels=labels[order],
                   timestamps=np.arange(n, dtype=float))


@dataclass
class ToyModel:
    """Fully-connected ReLU classifier with explicit parameters."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int

    @classmethod
    def initialize(cls, layer_sizes: list[int], seed: int) -> "ToyModel":
        """Weights uniform in +/- 1/sqrt(fan_in); biases uniform in
        [0.05, 0.45] so healthy layers start with clearly nonzero,
        tightly-ranged bias vectors."""
        if len(layer_sizes) < 2 or any(s < 1 for s in layer_sizes):
            raise ValueError("layer_sizes must chain at least input -> output")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(0.05, 0.45, size=fan_out))
        return cls(layer_sizes=list(layer_sizes), weights=weights,
                   biases=biases, seed=seed)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def layer_name(self, i: int) -> str:
        return f"fc{i + 1}"

    def check_finite(self) -> bool:
        params = self.weights + self.biases
        return all(np.isfinite(p).all() and np.abs(p).max() < MAGNITUDE_LIMIT
                   for p in params)


def forward(model: ToyModel, batch: np.ndarray):
    """Return (logits, cache); cache holds each layer's input activations."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_sizes[0]:
        raise ValueError("batch shape does not match the input layer")
    cache = [x]
    for i in range(model.n_layers):
        z = cache[-1] @ model.weights[i] + model.biases[i]
        if i < model.n_layers - 1:
            z = np.maximum(z, 0.0)
        cache.append(z)
    return cache[-1], cache


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    p = softmax(logits)
    n = logits.shape[0]
    return float(-np.log(np.clip(p[np.arange(n), targets], 1e-300, None)).mean())


def backward(model: ToyModel, cache: list[np.ndarray], targets: np.ndarray):
    """Analytic gradients of the mean cross-entropy over the batch.

    Returns (grads_w, grads_b) aligned with model.weights/biases.
    """
    logits = cache[-1]
    n = logits.shape[0]
    if targets.shape != (n,):
        raise ValueError("targets must be one class index per row")
    delta = softmax(logits)
    delta[np.arange(n), targets] -= 1.0
    delta /= n
    grads_w = [None] * model.n_layers
    grads_b = [None] * model.n_layers
    for i in reversed(range(model.n_layers)):
        grads_w[i] = cache[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i].T
            delta[cache[i] <= 0.0] = 0.0  # ReLU gate
    return grads_w, grads_b


def loss_on(model: ToyModel, batch: np.ndarray, targets: np.ndarray) -> float:
    logits, _ = forward(model, batch)
    return cross_entropy(logits, targets)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.1
    telemetry_cadence: str = "step"  # "step" | "epoch"
    run_id: str = "toy"
    injection: BugSpec | None = None
    eps_sparsity: float = 1e-6

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.telemetry_cadence not in ("step", "epoch"):
            raise ValueError("telemetry_cadence must be 'step' or 'epoch'")


@dataclass
class TrainResult:
    run_id: str
    trace: RunTrace
    metrics: dict[str, float]
    per_class: dict[int, dict[str, float]]
    final_loss: float
    epochs_run: int
    diverged: bool = False
    records: list[TelemetryRecord] = field(default_factory=list)


def evaluate(model: ToyModel, ds: Dataset, classes: np.ndarray) -> tuple[dict, dict]:
    """Accuracy plus macro precision/recall/F1 and the per-class breakdown."""
    logits, _ = forward(model, ds.features)
    predicted = classes[np.argmax(logits, axis=1)]
    per_class: dict[int, dict[str, float]] = {}
    precisions, recalls, f1s = [], [], []
    for cls in classes:
        tp = int(np.sum((predicted == cls) & (ds.labels == cls)))
        fp = int(np.sum((predicted == cls) & (ds.labels != cls)))
        fn = int(np.sum((predicted != cls) & (ds.labels == cls)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[int(cls)] = {"precision": precision, "recall": recall, "f1": f1}
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
    metrics = {
        "accuracy": float(np.mean(predicted == ds.labels)),
        "precision": float(np.mean(precisions)),
        "recall": float(np.mean(recalls)),
        "f1": float(np.mean(f1s)),
    }
    return metrics, per_class


def train(model: ToyModel, ds: Dataset, cfg: TrainConfig, sink=None) -> TrainResult:
    """Run SGD, emitting telemetry per cadence and train_loss per epoch.

    Raises TrainingDiverged on a non-finite loss or parameter, after
    flushing everything emitted so far (the trace must show the explosion).
    """
    if cfg.injection is not None:
        injected = apply_bug(ds, cfg.injection)
        ds = injected[0] if isinstance(injected, tuple) else injected
    classes = ds.classes
    if classes.size != model.layer_sizes[-1]:
        raise ValueError("output layer width must equal the number of classes")
    if ds.d != model.layer_sizes[0]:
        raise ValueError("input layer width must equal the feature dimension")
    targets = np.searchsorted(classes, ds.labels)
    rng = np.random.default_rng(model.seed ^ 0x5EED)
    collected: list[TelemetryRecord] = []

    def emit(record: TelemetryRecord) -> None:
        collected.append(record)
        if sink is not None:
            sink.write(record)

    def emit_tensors(step: int, epoch: int, grads_w, grads_b) -> None:
        for i in range(model.n_layers):
            name = model.layer_name(i)
            common = dict(run_id=cfg.run_id, step=step, epoch=epoch)
            emit(TelemetryRecord(layer=f"{name}.weight", kind=KIND_WEIGHTS,
                                 values=tuple(model.weights[i].ravel()), **common))
            emit(TelemetryRecord(layer=f"{name}.bias", kind=KIND_BIASES,
                                 values=tuple(model.biases[i]), **common))
            emit(TelemetryRecord(layer=f"{name}.weight", kind=KIND_GRADIENTS,
                                 values=tuple(grads_w[i].ravel()), **common))
            emit(TelemetryRecord(layer=f"{name}.bias", kind=KIND_GRADIENTS,
                                 values=tuple(grads_b[i]), **common))

    def finish(diverged: bool, epochs_run: int, last_loss: float) -> TrainResult:
        if sink is not None:
            sink.flush()
        trace = build_trace(collected, cfg.eps_sparsity) if collected else RunTrace(cfg.run_id)
        metrics, per_class = evaluate(model, ds, classes) if not diverged else ({}, {})
        return TrainResult(run_id=cfg.run_id, trace=trace, metrics=metrics,
                           per_class=per_class, final_loss=last_loss,
                           epochs_run=epochs_run, diverged=diverged,
                           records=collected)

    step = 0
    last_loss = float("nan")
    for epoch in range(cfg.epochs):
        order = rng.permutation(ds.n)
        epoch_losses = []
        n_batches = (ds.n + cfg.batch_size - 1) // cfg.batch_size
        for b in range(n_batches):
            rows = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch, y = ds.features[rows], targets[rows]
            with np.errstate(over="ignore", invalid="ignore"):
                logits, cache = forward(model, batch)
                loss = cross_entropy(logits, y)
                grads_w, grads_b = backward(model, cache, y)
            grads_ok = all(np.isfinite(g).all() and np.abs(g).max() < MAGNITUDE_LIMIT
                           for g in grads_w + grads_b)
            if not np.isfinite(loss) or not grads_ok:
                raise TrainingDiverged(f"non-finite loss or gradient at step {step}",
                                       step, finish(True, epoch, last_loss))
            for i in range(model.n_layers):
                model.weights[i] -= cfg.learning_rate * grads_w[i]
                model.biases[i] -= cfg.learning_rate * grads_b[i]
            if not model.check_finite():
                raise TrainingDiverged(f"non-finite parameters at step {step}",
                                       step, finish(True, epoch, last_loss))
            epoch_losses.append(loss)
            last_loss = loss
            is_epoch_end = b == n_batches - 1
            if cfg.telemetry_cadence == "step" or is_epoch_end:
                emit_tensors(step, epoch, grads_w, grads_b)
            step += 1
        epoch_mean = float(np.mean(epoch_losses))
        emit(TelemetryRecord(run_id=cfg.run_id, step=step - 1, epoch=epoch,
                             layer=METRIC_LAYER, kind=KIND_METRIC,
                             metric=("train_loss", epoch_mean)))
    return finish(False, cfg.epochs, last_loss)
