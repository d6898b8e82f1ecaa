"""Telemetry data model, JSONL wire format, and run-trace assembly.

One record per line, UTF-8 JSON, schema_version 1. Emitters may ship raw
tensor values (small layers) or precomputed LayerStats summaries (large
layers); metric records carry scalar series such as the training loss and
use the reserved layer path "_". Non-finite numbers are parse errors, never
clamped: a NaN gradient is itself diagnostic and must surface loudly.
"""

from __future__ import annotations

import gzip
import io
import json
import math
import re
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

import numpy as np

from .stats import EPS_SPARSITY, LayerStats, compute_stats

SCHEMA_VERSION = 1
METRIC_LAYER = "_"

KIND_WEIGHTS = "weights"
KIND_BIASES = "biases"
KIND_GRADIENTS = "gradients"
KIND_METRIC = "metric"
KINDS = (KIND_WEIGHTS, KIND_BIASES, KIND_GRADIENTS, KIND_METRIC)
TENSOR_KINDS = (KIND_WEIGHTS, KIND_BIASES, KIND_GRADIENTS)

_NONFINITE_STRINGS = {"nan", "+nan", "-nan", "inf", "+inf", "-inf",
                      "infinity", "+infinity", "-infinity"}


class TelemetryError(Exception):
    """Base class for telemetry failures."""


class ParseError(TelemetryError):
    """A malformed wire-format line, with byte offset and offending field."""

    def __init__(self, message: str, offset: int = 0, fieldname: str | None = None):
        self.offset = offset
        self.fieldname = fieldname
        where = f" at byte {offset}"
        what = f" (field {fieldname!r})" if fieldname else ""
        super().__init__(f"{message}{where}{what}")


class TraceError(TelemetryError):
    """Inconsistent record stream: duplicates, mixed runs, bad ordering."""


@dataclass(frozen=True)
class TelemetryRecord:
    """One (run, step, layer, kind) observation."""

    run_id: str
    step: int
    layer: str
    kind: str
    epoch: int | None = None
    values: tuple[float, ...] | None = None
    summary: LayerStats | None = None
    metric: tuple[str, float] | None = None
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        if not self.run_id:
            raise ValueError("run_id must be non-empty")
        if self.step < 0:
            raise ValueError("step must be non-negative")
        if self.epoch is not None and self.epoch < 0:
            raise ValueError("epoch must be non-negative")
        if not self.layer:
            raise ValueError("layer must be non-empty")
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        payloads = [p is not None for p in (self.values, self.summary, self.metric)]
        if sum(payloads) != 1:
            raise ValueError("exactly one of values/summary/metric must be set")
        if self.kind == KIND_METRIC:
            if self.metric is None:
                raise ValueError("metric kind requires a metric payload")
            if self.layer != METRIC_LAYER:
                raise ValueError(f"metric records use the reserved layer {METRIC_LAYER!r}")
            if not math.isfinite(self.metric[1]):
                raise ValueError("non-finite metric value")
        else:
            if self.metric is not None:
                raise ValueError(f"kind {self.kind!r} cannot carry a metric payload")
            if self.layer == METRIC_LAYER:
                raise ValueError(f"layer {METRIC_LAYER!r} is reserved for metric records")
            if self.values is not None:
                if len(self.values) == 0:
                    raise ValueError("values payload must be non-empty")
                if not all(math.isfinite(v) for v in self.values):
                    raise ValueError("non-finite value in values payload")
            else:
                self.summary.validate()


def _as_plain_float(x: float) -> float:
    if not math.isfinite(x):
        raise ValueError("non-finite number")
    return float(x)


def serialize_record(record: TelemetryRecord) -> str:
    """Render one record as its wire-format line (no trailing newline)."""
    record.validate()
    doc: dict = {
        "schema_version": record.schema_version,
        "run_id": record.run_id,
        "step": record.step,
    }
    if record.epoch is not None:
        doc["epoch"] = record.epoch
    doc["layer"] = record.layer
    doc["kind"] = record.kind
    if record.metric is not None:
        doc["metric"] = {"name": record.metric[0], "value": _as_plain_float(record.metric[1])}
    elif record.values is not None:
        doc["values"] = [_as_plain_float(v) for v in record.values]
    else:
        s = record.summary
        doc["summary"] = {"count": s.count}
        doc["summary"].update({f: _as_plain_float(getattr(s, f)) for f in s.FIELD_ORDER[1:]})
    return json.dumps(doc, allow_nan=False, separators=(",", ":"))


def _field_offset(raw: bytes, name: str) -> int:
    m = re.search(rb'"' + name.encode() + rb'"', raw)
    return m.start() if m else 0


def _reject_constant(token: str):
    raise _NonFiniteToken(token)


class _NonFiniteToken(Exception):
    def __init__(self, token: str):
        self.token = token


def _require(doc: dict, raw: bytes, name: str, types, *, optional: bool = False):
    if name not in doc:
        if optional:
            return None
        raise ParseError("missing required field", 0, name)
    value = doc[name]
    if isinstance(value, bool) or not isinstance(value, types):
        raise ParseError("wrong field type", _field_offset(raw, name), name)
    return value


def _check_number(value, raw: bytes, name: str) -> float:
    if isinstance(value, str) and value.strip().lower() in _NONFINITE_STRINGS:
        raise ParseError("non-finite number", _field_offset(raw, name), name)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError("wrong field type", _field_offset(raw, name), name)
    if not math.isfinite(value):
        raise ParseError("non-finite number", _field_offset(raw, name), name)
    return float(value)


def parse_record(line: bytes | str) -> TelemetryRecord:
    """Parse one wire-format line into a validated TelemetryRecord.

    Raises ParseError carrying the byte offset and field name for malformed
    syntax, unknown kinds, non-finite numbers, and missing fields.
    """
    raw = line.encode("utf-8") if isinstance(line, str) else bytes(line)
    text = raw.decode("utf-8", errors="strict")
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except _NonFiniteToken as e:
        pos = text.find(e.token)
        offset = len(text[:pos].encode("utf-8")) if pos >= 0 else 0
        raise ParseError("non-finite number", offset, None) from None
    except json.JSONDecodeError as e:
        offset = len(text[: e.pos].encode("utf-8"))
        raise ParseError(f"malformed syntax: {e.msg}", offset, None) from None
    if not isinstance(doc, dict):
        raise ParseError("record is not a JSON object", 0, None)

    version = _require(doc, raw, "schema_version", int)
    run_id = _require(doc, raw, "run_id", str)
    step = _require(doc, raw, "step", int)
    layer = _require(doc, raw, "layer", str)
    kind = _require(doc, raw, "kind", str)
    epoch = _require(doc, raw, "epoch", int, optional=True)
    if kind not in KINDS:
        raise ParseError(f"unknown kind {kind!r}", _field_offset(raw, "kind"), "kind")

    values = summary = metric = None
    if "values" in doc:
        seq = _require(doc, raw, "values", list)
        if not seq:
            raise ParseError("values payload must be non-empty",
                             _field_offset(raw, "values"), "values")
        values = tuple(_check_number(v, raw, "values") for v in seq)
    if "summary" in doc:
        obj = _require(doc, raw, "summary", dict)
        count = obj.get("count")
        if isinstance(count, bool) or not isinstance(count, int):
            raise ParseError("wrong field type", _field_offset(raw, "count"), "summary.count")
        fields = {}
        for name in LayerStats.FIELD_ORDER[1:]:
            if name not in obj:
                raise ParseError("missing required field",
                                 _field_offset(raw, "summary"), f"summary.{name}")
            fields[name] = _check_number(obj[name], raw, name)
        unknown = set(obj) - set(LayerStats.FIELD_ORDER)
        if unknown:
            raise ParseError(f"unknown summary field {sorted(unknown)[0]!r}",
                             _field_offset(raw, "summary"), "summary")
        summary = LayerStats(count=count, **fields)
        try:
            summary.validate()
        except ValueError as e:
            raise ParseError(str(e), _field_offset(raw, "summary"), "summary") from None
    if "metric" in doc:
        obj = _require(doc, raw, "metric", dict)
        name = obj.get("name")
        if not isinstance(name, str) or not name:
            raise ParseError("metric name must be a non-empty string",
                             _field_offset(raw, "metric"), "metric.name")
        value = _check_number(obj.get("value"), raw, "value")
        metric = (name, value)

    record = TelemetryRecord(
        run_id=run_id, step=step, layer=layer, kind=kind, epoch=epoch,
        values=values, summary=summary, metric=metric, schema_version=version,
    )
    try:
        record.validate()
    except ValueError as e:
        raise ParseError(str(e), 0, None) from None
    return record


# ---------------------------------------------------------------------------
# Run traces


@dataclass
class RunTrace:
    """Per-layer, per-kind time series of one training run.

    Built once by build_trace and treated as immutable afterwards; safe to
    share across threads once construction returns.
    """

    run_id: str
    layers: dict[str, dict[str, list[tuple[int, LayerStats]]]] = field(default_factory=dict)
    metrics: dict[str, list[tuple[int, float]]] = field(default_factory=dict)
    epoch_index: dict[int, tuple[int, int]] = field(default_factory=dict)

    def layers_with_kind(self, kind: str) -> list[str]:
        return sorted(name for name, kinds in self.layers.items() if kind in kinds)

    def series(self, layer: str, kind: str) -> list[tuple[int, LayerStats]]:
        return self.layers.get(layer, {}).get(kind, [])

    def metric_series(self, name: str) -> list[tuple[int, float]]:
        return self.metrics.get(name, [])

    def epoch_metric(self, name: str) -> list[float]:
        """One value per epoch for a metric, using epoch_index when present.

        Falls back to one value per recorded sample when the stream carried
        no epoch annotations.
        """
        series = self.metric_series(name)
        if not series:
            return []
        if not self.epoch_index:
            return [v for _, v in series]
        out = []
        for epoch in sorted(self.epoch_index):
            lo, hi = self.epoch_index[epoch]
            inside = [v for s, v in series if lo <= s <= hi]
            if inside:
                out.append(inside[-1])
        return out if out else [v for _, v in series]

    @property
    def is_empty(self) -> bool:
        return not self.layers and not self.metrics

    def last_step(self) -> int:
        steps = [series[-1][0] for kinds in self.layers.values() for series in kinds.values()]
        steps += [series[-1][0] for series in self.metrics.values()]
        return max(steps) if steps else 0


def build_trace(records: Iterable[TelemetryRecord],
                eps_sparsity: float = EPS_SPARSITY) -> RunTrace:
    """Assemble records of a single run into a RunTrace.

    Raw values payloads are reduced to LayerStats on the way in. Duplicate
    (step, layer, kind) keys, out-of-order steps within one (layer, kind)
    series, and mixed run ids are errors; distinct layers may interleave in
    any order.
    """
    trace: RunTrace | None = None
    for record in records:
        record.validate()
        if trace is None:
            trace = RunTrace(run_id=record.run_id)
        elif record.run_id != trace.run_id:
            raise TraceError(
                f"mixed run ids: {trace.run_id!r} and {record.run_id!r}")
        if record.epoch is not None:
            lo, hi = trace.epoch_index.get(record.epoch, (record.step, record.step))
            trace.epoch_index[record.epoch] = (min(lo, record.step), max(hi, record.step))
        if record.kind == KIND_METRIC:
            name, value = record.metric
            series = trace.metrics.setdefault(name, [])
            _append_in_order(series, record.step, value, f"metric {name!r}")
            continue
        stats = record.summary
        if stats is None:
            stats = compute_stats(np.asarray(record.values), eps_sparsity)
        series = trace.layers.setdefault(record.layer, {}).setdefault(record.kind, [])
        _append_in_order(series, record.step, stats, f"({record.layer!r}, {record.kind})")
    if trace is None or trace.is_empty:
        raise TraceError("empty record stream")
    return trace


def _append_in_order(series: list, step: int, payload, label: str) -> None:
    if series:
        last = series[-1][0]
        if step == last:
            raise TraceError(f"duplicate step {step} for {label}")
        if step < last:
            raise TraceError(f"out-of-order step {step} after {last} for {label}")
    series.append((step, payload))


# ---------------------------------------------------------------------------
# File I/O


def open_telemetry(path: str, mode: str = "rt") -> IO:
    """Open a telemetry file, transparently gzipped when it ends '.gz'."""
    if path.endswith(".csv"):
        raise TelemetryError("CSV is not accepted for telemetry; use JSONL")
    if path.endswith(".gz"):
        if "r" in mode:
            return gzip.open(path, mode, encoding="utf-8" if "t" in mode else None)
        # fileobj + mtime=0 keeps the archive free of timestamps and file
        # names, so identical content is byte-identical on disk.
        handle = open(path, "wb")
        raw = gzip.GzipFile(filename="", fileobj=handle, mode="wb", mtime=0)
        raw.myfileobj = handle  # GzipFile closes this on close()
        return io.TextIOWrapper(raw, encoding="utf-8") if "t" in mode else raw
    return open(path, mode, encoding="utf-8" if "t" in mode else None)


def read_records(path: str) -> Iterator[TelemetryRecord]:
    """Yield records from a JSONL(.gz) file, skipping blank lines."""
    with open_telemetry(path, "rt") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                yield parse_record(stripped)
            except ParseError as e:
                raise ParseError(f"line {lineno}: {e}", e.offset, e.fieldname) from None


def read_trace(path: str, eps_sparsity: float = EPS_SPARSITY) -> RunTrace:
    return build_trace(read_records(path), eps_sparsity)


class JsonlWriter:
    """Append-only telemetry writer; one line per record, flushed in order."""

    def __init__(self, path_or_fh: str | IO):
        if isinstance(path_or_fh, str):
            self._fh = open_telemetry(path_or_fh, "wt")
            self._owns = True
        else:
            self._fh = path_or_fh
            self._owns = False

    def write(self, record: TelemetryRecord) -> None:
        self._fh.write(serialize_record(record) + "\n")

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        if self._owns:
            self._fh.close()

    def __enter__(self) -> "JsonlWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class ListSink:
    """In-memory telemetry sink used by tests and the toy trainer."""

    def __init__(self):
        self.records: list[TelemetryRecord] = []

    def write(self, record: TelemetryRecord) -> None:
        self.records.append(record)

    def flush(self) -> None:
        pass

    def close(self) -> None:
        pass
