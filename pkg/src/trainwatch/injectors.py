"""Seeded data-bug injectors for labeled tabular datasets.

Each injector is deterministic given (parameters, seed) and touches exactly
one aspect of the dataset: label noise rewrites labels, OOD replacement
rewrites features, class imbalance deletes rows. Randomness comes from the
counter-based Philox generator keyed by (seed, stream id); the i-th draw of
a stream belongs to row i, so results are reproducible row-by-row.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PREPROCESS_OPS = ("standardize", "minmax_scale", "dedup", "impute_missing")
# Structural fixes first, then statistics computed on the cleaned rows.
_CANONICAL_ORDER = ("dedup", "impute_missing", "standardize", "minmax_scale")

BUG_KINDS = ("label_noise", "class_imbalance", "concept_drift", "ood",
             "omit_preprocessing")


class InjectError(ValueError):
    """Invalid injector parameters or an impossible request."""


def _rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, stream]))


@dataclass
class Dataset:
    """A labeled tabular dataset: features (n x d), class-id labels (1..K)."""

    features: np.ndarray
    labels: np.ndarray
    timestamps: np.ndarray | None = None
    column_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise InjectError("features must be a 2-D matrix")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.features.shape[0],):
            raise InjectError("labels must be one class id per row")
        # n = 0 is representable (e.g. an empty drift test split); loaders
        # and injectors reject empty inputs at their own boundaries.
        if self.timestamps is not None:
            self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
            if self.timestamps.shape != (self.features.shape[0],):
                raise InjectError("timestamps must be one value per row")
        if not self.column_names:
            self.column_names = [f"f{i}" for i in range(self.features.shape[1])]
        elif len(self.column_names) != self.features.shape[1]:
            raise InjectError("column_names must match feature dimension")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def class_counts(self) -> dict[int, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            timestamps=None if self.timestamps is None else self.timestamps[idx],
            column_names=list(self.column_names),
        )


@dataclass
class FlipRule:
    """Deterministic region-dependent label flip: rows where the chosen
    feature lies on the given side of the threshold move to the next class."""

    column: int = 0
    threshold: float = 0.0
    above: bool = True

    def mask(self, features: np.ndarray) -> np.ndarray:
        col = features[:, self.column]
        return col > self.threshold if self.above else col < self.threshold


@dataclass
class BugSpec:
    """Parameters of one injected data bug; only the chosen kind's knobs
    may be set."""

    kind: str
    seed: int = 0
    eta: float | None = None
    structured: bool = False
    class_map: dict[int, int] | None = None
    tau: float | None = None
    drift_fraction: float | None = None
    flip_rule: FlipRule | None = None
    ood_fraction: float | None = None
    shift: Sequence[float] | None = None
    omitted_ops: tuple[str, ...] | None = None

    _FIELDS_BY_KIND = {
        "label_noise": {"eta", "structured", "class_map"},
        "class_imbalance": {"tau"},
        "concept_drift": {"drift_fraction", "flip_rule"},
        "ood": {"ood_fraction", "shift"},
        "omit_preprocessing": {"omitted_ops"},
    }

    def __post_init__(self):
        if self.kind not in BUG_KINDS:
            raise InjectError(f"unknown bug kind {self.kind!r}")
        allowed = self._FIELDS_BY_KIND[self.kind]
        for name in ("eta", "tau", "drift_fraction", "flip_rule",
                     "ood_fraction", "shift", "omitted_ops", "class_map"):
            if getattr(self, name) is not None and name not in allowed:
                raise InjectError(f"field {name!r} does not belong to kind {self.kind!r}")
        if self.structured and self.kind != "label_noise":
            raise InjectError("structured flag belongs to label_noise")


def apply_bug(ds: Dataset, spec: BugSpec):
    """Dispatch a BugSpec to its injector. concept_drift returns a
    (train, test) pair, the others a single dataset."""
    if spec.kind == "label_noise":
        return inject_label_noise(ds, spec.eta, structured=spec.structured,
                                  class_map=spec.class_map, seed=spec.seed)
    if spec.kind == "class_imbalance":
        return inject_class_imbalance(ds, spec.tau, seed=spec.seed)
    if spec.kind == "concept_drift":
        return inject_concept_drift(ds, spec.drift_fraction,
                                    spec.flip_rule or FlipRule(), seed=spec.seed)
    if spec.kind == "ood":
        shift = np.zeros(ds.d) if spec.shift is None else np.asarray(spec.shift, float)
        return inject_ood(ds, spec.ood_fraction, shift, seed=spec.seed)
    return apply_preprocessing(
        ds, [op for op in PREPROCESS_OPS if op not in (spec.omitted_ops or ())])


def inject_label_noise(ds: Dataset, eta: float, *, structured: bool = False,
                       class_map: dict[int, int] | None = None,
                       seed: int = 0) -> Dataset:
    """Flip each label independently with probability eta.

    Uniform mode draws the replacement uniformly from the other K-1 classes;
    structured mode routes mapped source classes to their target and leaves
    unmapped classes alone.
    """
    if not 0.0 <= eta <= 1.0:
        raise InjectError("eta must lie in [0, 1]")
    classes = ds.classes
    if classes.size < 2:
        raise InjectError("label noise requires at least 2 classes")
    if structured:
        if not class_map:
            raise InjectError("structured label noise requires a class map")
        for src, dst in class_map.items():
            if src == dst:
                raise InjectError(f"class map targets the source class {src}")
    flip = _rng(seed, 0).random(ds.n) < eta
    labels = ds.labels.copy()
    if structured:
        todo = flip & np.isin(labels, list(class_map))
        labels[todo] = [class_map[int(v)] for v in labels[todo]]
    else:
        # Draw an index into the K-1 classes that differ from the current one.
        draws = _rng(seed, 1).integers(0, classes.size - 1, size=ds.n)
        rank = np.searchsorted(classes, labels)
        offset = draws + (draws >= rank)  # skip the original class
        labels[flip] = classes[offset[flip]]
    return replace_labels(ds, labels)


def replace_labels(ds: Dataset, labels: np.ndarray) -> Dataset:
    return Dataset(features=ds.features, labels=labels, timestamps=ds.timestamps,
                   column_names=list(ds.column_names))


def inject_class_imbalance(ds: Dataset, tau: float, *, seed: int = 0) -> Dataset:
    """Subsample non-majority classes so majority:minority approaches tau.

    Every non-majority class keeps floor(majority/tau) rows, drawn uniformly
    without replacement; the achieved ratio never falls below the original
    one and exceeds tau by at most one sample's worth.
    """
    if tau < 1.0:
        raise InjectError("tau must be >= 1")
    counts = ds.class_counts()
    majority = max(counts.values())
    current = majority / min(counts.values())
    if tau < current * (1.0 - 1e-12):
        warnings.warn(f"tau={tau} does not exceed the current ratio "
                      f"{current:.3g}; dataset left unchanged")
        return ds.take(np.arange(ds.n))
    target = int(majority // tau)
    if target < 1:
        raise InjectError("requested imbalance would empty a minority class")
    rng = _rng(seed, 2)
    keep = np.ones(ds.n, dtype=bool)
    majority_label = max(counts, key=lambda k: (counts[k], -k))
    for label, count in sorted(counts.items()):
        if label == majority_label or count <= target:
            continue
        rows = np.nonzero(ds.labels == label)[0]
        drop = rng.choice(rows, size=count - target, replace=False)
        keep[drop] = False
    return ds.take(np.nonzero(keep)[0])


def inject_concept_drift(ds: Dataset, drift_fraction: float,
                         flip_rule: FlipRule | None = None, *,
                         seed: int = 0,
                         synthetic: bool | None = None) -> tuple[Dataset, Dataset]:
    """Split chronologically and alter P(Y|X) on the later partition.

    The later drift_fraction of rows becomes the test split. In synthetic
    mode (forced, or implied by missing timestamps) the test labels are
    flipped deterministically inside the flip-rule region, changing the
    conditional labeling while leaving the feature distribution untouched.
    """
    if not 0.0 <= drift_fraction <= 1.0:
        raise InjectError("drift_fraction must lie in [0, 1]")
    if synthetic is None:
        synthetic = ds.timestamps is None
    if not synthetic and ds.timestamps is None:
        raise InjectError("chronological drift requires timestamps")
    order = (np.argsort(ds.timestamps, kind="stable")
             if ds.timestamps is not None else np.arange(ds.n))
    cut = ds.n - int(round(ds.n * drift_fraction))
    train = ds.take(order[:cut])
    test = ds.take(order[cut:])
    if synthetic and test.n and flip_rule is not None:
        labels = test.labels.copy()
        region = flip_rule.mask(test.features)
        labels[region] = _next_class(ds.classes, labels[region])
        test = replace_labels(test, labels)
    return train, test


def _next_class(classes: np.ndarray, labels: np.ndarray) -> np.ndarray:
    rank = np.searchsorted(classes, labels)
    return classes[(rank + 1) % classes.size]


def inject_ood(ds: Dataset, rho: float, shift: np.ndarray, *, seed: int = 0) -> Dataset:
    """Replace a rho-fraction of rows with resampled, mean-shifted features.

    Replacement features are bootstrap draws from the original matrix plus
    the per-column shift vector; labels are kept.
    """
    if not 0.0 <= rho <= 1.0:
        raise InjectError("rho must lie in [0, 1]")
    shift = np.asarray(shift, dtype=np.float64)
    if shift.shape != (ds.d,):
        raise InjectError(f"shift must have dimension {ds.d}")
    count = int(round(ds.n * rho))
    if count == 0:
        return ds.take(np.arange(ds.n))
    rng = _rng(seed, 3)
    rows = rng.choice(ds.n, size=count, replace=False)
    sources = rng.integers(0, ds.n, size=count)
    features = ds.features.copy()
    features[rows] = ds.features[sources] + shift
    return Dataset(features=features, labels=ds.labels.copy(),
                   timestamps=ds.timestamps, column_names=list(ds.column_names))


def apply_preprocessing(ds: Dataset, ops: Sequence[str]) -> Dataset:
    """Apply preprocessing ops in canonical order (dedup, impute,
    standardize, minmax); omitting an op simply skips it."""
    unknown = set(ops) - set(PREPROCESS_OPS)
    if unknown:
        raise InjectError(f"unknown preprocessing op {sorted(unknown)[0]!r}")
    out = ds
    for op in _CANONICAL_ORDER:
        if op not in ops:
            continue
        if op == "dedup":
            out = _dedup(out)
        elif op == "impute_missing":
            out = _impute(out)
        elif op == "standardize":
            out = _standardize(out)
        else:
            out = _minmax(out)
    return out


def _dedup(ds: Dataset) -> Dataset:
    _, first = np.unique(ds.features, axis=0, return_index=True)
    keep = np.sort(first)  # order-preserving first occurrence
    return ds.take(keep)


def _impute(ds: Dataset) -> Dataset:
    features = ds.features.copy()
    for j in range(ds.d):
        col = features[:, j]
        missing = np.isnan(col)
        if missing.any():
            present = col[~missing]
            fill = present.mean() if present.size else 0.0
            col[missing] = fill
    return Dataset(features=features, labels=ds.labels, timestamps=ds.timestamps,
                   column_names=list(ds.column_names))


def _standardize(ds: Dataset) -> Dataset:
    features = ds.features.copy()
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    constant = std == 0.0
    if constant.any():
        names = [ds.column_names[j] for j in np.nonzero(constant)[0]]
        warnings.warn(f"constant column(s) {names} centered with unit divisor")
    std = np.where(constant, 1.0, std)
    features = (features - mean) / std
    return Dataset(features=features, labels=ds.labels, timestamps=ds.timestamps,
                   column_names=list(ds.column_names))


def _minmax(ds: Dataset) -> Dataset:
    features = ds.features.copy()
    lo = features.min(axis=0)
    hi = features.max(axis=0)
    span = hi - lo
    constant = span == 0.0
    if constant.any():
        names = [ds.column_names[j] for j in np.nonzero(constant)[0]]
        warnings.warn(f"constant column(s) {names} mapped to 0")
    span = np.where(constant, 1.0, span)
    features = (features - lo) / span
    return Dataset(features=features, labels=ds.labels, timestamps=ds.timestamps,
                   column_names=list(ds.column_names))


# ---------------------------------------------------------------------------
# CSV I/O: header row, label column by name, empty cells = missing values.


def read_csv(path: str, label_col: str = "label",
             time_col: str | None = None) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InjectError("empty CSV file")
        if label_col not in header:
            raise InjectError(f"label column {label_col!r} not in header")
        if time_col is not None and time_col not in header:
            raise InjectError(f"timestamp column {time_col!r} not in header")
        label_idx = header.index(label_col)
        time_idx = header.index(time_col) if time_col is not None else None
        feature_idx = [i for i in range(len(header))
                       if i != label_idx and i != time_idx]
        rows, labels, times = [], [], []
        for row in reader:
            if not row:
                continue
            rows.append([float(row[i]) if row[i] != "" else math.nan
                         for i in feature_idx])
            labels.append(int(row[label_idx]))
            if time_idx is not None:
                times.append(float(row[time_idx]))
    if not rows:
        raise InjectError("CSV contains no data rows")
    return Dataset(
        features=np.asarray(rows, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
        timestamps=np.asarray(times) if time_idx is not None else None,
        column_names=[header[i] for i in feature_idx],
    )


def write_csv(ds: Dataset, path: str, label_col: str = "label",
              time_col: str | None = None) -> None:
    if time_col is not None and ds.timestamps is None:
        raise InjectError("dataset has no timestamps to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = list(ds.column_names) + [label_col]
        if time_col is not None:
            header.append(time_col)
        writer.writerow(header)
        for i in range(ds.n):
            row = ["" if math.isnan(v) else repr(float(v)) for v in ds.features[i]]
            row.append(str(int(ds.labels[i])))
            if time_col is not None:
                row.append(repr(float(ds.timestamps[i])))
            writer.writerow(row)
