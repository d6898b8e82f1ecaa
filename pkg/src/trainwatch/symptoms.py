"""Symptom classification over run traces, cause attribution, interruption.

A trace is scanned with sixteen per-layer/per-run detectors. In absolute
mode each detector compares recorded layer statistics against fixed
thresholds and a layer counts as affected when the violation is sustained
over at least `sustain_frac` of its recorded steps. In relative mode a
baseline trace supplies per-layer reference values and thresholds are placed
`relative_margin` away from them, so a trace classified against itself
never produces findings.

A finding is only emitted when the fraction of eligible layers affected
reaches `layer_coverage_min`; this separates isolated anomalies from
systematic data problems. Note the per-run coverage rule interpolates from
study-level prevalence thresholds and should be tuned per pipeline.
"""

from __future__ import annotations

import importlib.resources
import json
import math
import re
from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Callable

from .stats import KURT_MAX, SKEW_MAX, LayerStats
from .telemetry import (KIND_BIASES, KIND_GRADIENTS, KIND_WEIGHTS,
                        METRIC_LAYER, RunTrace)

LOSS_METRIC = "train_loss"

CAUSE_ORDER = ("label_noise", "class_imbalance", "concept_drift",
               "missing_preprocessing")
SEVERITY_ORDER = ("info", "warning", "critical")
DATA_TYPES = ("code", "text", "metric", "union")

# Magnitudes at or beyond this are treated as "one step from non-finite"
# and escalate severity on their own.
NONFINITE_ADJACENT = 1e12

# A gradient range only counts as instability when its loud end is loud.
GRAD_INSTABILITY_PEAK_MIN = 1.0

# A run whose epoch loss has shed this much of its starting value has fit
# the data; it counts as converged even while still polishing the tail.
CONVERGENCE_COLLAPSE_FRAC = 0.2


class Symptom(Enum):
    NearZeroBiases = "NearZeroBiases"
    SmallerWeights = "SmallerWeights"
    GradientInstability = "GradientInstability"
    SlowConvergence = "SlowConvergence"
    ExtremeBiasValues = "ExtremeBiasValues"
    SkewedParameterDistribution = "SkewedParameterDistribution"
    AbnormalWeightVariance = "AbnormalWeightVariance"
    GradientSkewness = "GradientSkewness"
    OverfittingBias = "OverfittingBias"
    ExtremeWeights = "ExtremeWeights"
    SkewedBiasDistribution = "SkewedBiasDistribution"
    SparseParameterUpdates = "SparseParameterUpdates"
    VanishingGradients = "VanishingGradients"
    HigherLoss = "HigherLoss"
    ExplodingGradients = "ExplodingGradients"
    HighWeightVariance = "HighWeightVariance"


_SYMPTOM_INDEX = {s: i for i, s in enumerate(Symptom)}


@dataclass
class ThresholdConfig:
    """Detector thresholds; defaults sit between published clean and buggy
    training regimes so either side keeps a margin."""

    near_zero_bias_abs: float = 0.01
    healthy_bias_abs: float = 0.5
    small_weight_mean_abs: float = 0.05
    grad_instability_span_orders: float = 8.0
    weight_var_hi: float = 1.5
    grad_skew_hi: float = 1.0
    overfit_bias_median: float = 0.5
    extreme_weight_abs: float = 1.0
    extreme_bias_range: float = 1.0
    sparse_update_frac: float = 0.5
    vanish_ratio: float = 1e-4
    loss_ratio_hi: float = 1.5
    explode_grad_abs: float = 2.0
    weight_var_extreme: float = 3.0
    convergence_delta: float = 1e-3
    convergence_patience_epochs: int = 2
    layer_coverage_min: float = 0.20
    baseline_mode: str = "absolute"
    sustain_frac: float = 0.5
    relative_margin: float = 1.5
    data_type: str = "union"

    _FLOAT_FIELDS = (
        "near_zero_bias_abs", "healthy_bias_abs", "small_weight_mean_abs",
        "grad_instability_span_orders", "weight_var_hi", "grad_skew_hi",
        "overfit_bias_median", "extreme_weight_abs", "extreme_bias_range",
        "sparse_update_frac", "vanish_ratio", "loss_ratio_hi",
        "explode_grad_abs", "weight_var_extreme", "convergence_delta",
        "layer_coverage_min", "sustain_frac", "relative_margin",
    )

    def __post_init__(self):
        for name in self._FLOAT_FIELDS:
            if not getattr(self, name) > 0.0:
                raise ValueError(f"threshold {name} must be positive")
        if self.convergence_patience_epochs < 1:
            raise ValueError("convergence_patience_epochs must be >= 1")
        if not 0.0 < self.layer_coverage_min <= 1.0:
            raise ValueError("layer_coverage_min must lie in (0, 1]")
        if not 0.0 < self.sustain_frac <= 1.0:
            raise ValueError("sustain_frac must lie in (0, 1]")
        if self.relative_margin <= 1.0:
            raise ValueError("relative_margin must exceed 1")
        if self.loss_ratio_hi <= 1.0:
            raise ValueError("loss_ratio_hi must exceed 1")
        if self.baseline_mode not in ("absolute", "relative"):
            raise ValueError("baseline_mode must be 'absolute' or 'relative'")
        if self.data_type not in DATA_TYPES:
            raise ValueError(f"data_type must be one of {DATA_TYPES}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ThresholdConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown threshold key {sorted(unknown)[0]!r}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LayerEvidence:
    """Why one layer counts as affected: the violating statistic, the
    threshold it crossed, and where the violation started."""

    layer: str
    statistic: str
    value: float
    threshold: float
    comparator: str
    first_step: int
    violating_fraction: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SymptomFinding:
    symptom: Symptom
    affected_layers: tuple[LayerEvidence, ...]
    coverage: float
    first_step: int
    suspected_causes: tuple[tuple[str, float], ...]
    severity: str

    def to_dict(self) -> dict:
        return {
            "symptom": self.symptom.value,
            "severity": self.severity,
            "coverage": self.coverage,
            "first_step": self.first_step,
            "suspected_causes": [{"cause": c, "strength": s}
                                 for c, s in self.suspected_causes],
            "affected_layers": [e.to_dict() for e in self.affected_layers],
        }


@dataclass
class InterruptPolicy:
    """When to halt a watched run. An empty symptom set enables all."""

    enabled_symptoms: frozenset[Symptom] = frozenset()
    min_severity: str = "warning"
    min_coverage: float = 0.0
    evaluate_every: str = "epoch"  # "step" | "epoch"

    def __post_init__(self):
        if self.min_severity not in SEVERITY_ORDER:
            raise ValueError(f"unknown severity {self.min_severity!r}")
        if not 0.0 <= self.min_coverage <= 1.0:
            raise ValueError("min_coverage must lie in [0, 1]")
        if self.evaluate_every not in ("step", "epoch"):
            raise ValueError("evaluate_every must be 'step' or 'epoch'")

    @classmethod
    def from_dict(cls, doc: dict) -> "InterruptPolicy":
        doc = dict(doc)
        names = doc.pop("enabled_symptoms", [])
        symptoms = frozenset(Symptom(n) for n in names)
        return cls(enabled_symptoms=symptoms, **doc)


@dataclass(frozen=True)
class InterruptDecision:
    halt: bool
    finding: SymptomFinding | None = None


# ---------------------------------------------------------------------------
# Cause attribution


def load_cause_table() -> dict[str, dict[str, list[tuple[str, float]]]]:
    text = importlib.resources.files("trainwatch").joinpath(
        "data/causes.json").read_text(encoding="utf-8")
    raw = json.loads(text)
    return {dt: {name: [(c, float(s)) for c, s in pairs]
                 for name, pairs in table.items()}
            for dt, table in raw.items()}


_DEFAULT_CAUSES = load_cause_table()


def attribute_causes(symptom: Symptom, data_type: str = "union",
                     table: dict | None = None) -> list[tuple[str, float]]:
    """Ordered (cause, association strength) pairs for a symptom.

    data_type selects the code/text/metric association table; symptoms
    absent from the selected table fall back to the union of all three.
    Ordering is by strength, ties broken by the canonical cause order.
    """
    table = table if table is not None else _DEFAULT_CAUSES
    if data_type not in DATA_TYPES:
        raise ValueError(f"data_type must be one of {DATA_TYPES}")
    tables = [table[data_type]] if data_type != "union" else []
    if not tables or symptom.value not in tables[0]:
        tables = list(table.values())
    pairs: dict[str, float] = {}
    for sub in tables:
        for cause, strength in sub.get(symptom.value, []):
            pairs[cause] = max(strength, pairs.get(cause, -math.inf))
    ranked = sorted(pairs.items(),
                    key=lambda cs: (-cs[1], CAUSE_ORDER.index(cs[0])))
    return ranked


# ---------------------------------------------------------------------------
# Detector machinery


def _peak_abs(s: LayerStats) -> float:
    return max(s.max, -s.min)


def _value_range(s: LayerStats) -> float:
    return s.max - s.min


@dataclass(frozen=True)
class _Rule:
    statistic: str
    quantity: Callable[[LayerStats], float]
    op: str  # "gt" | "lt"
    threshold_of: Callable[[ThresholdConfig], float]

    def violates(self, value: float, threshold: float) -> bool:
        return value > threshold if self.op == "gt" else value < threshold

    def relative_threshold(self, base_value: float, cfg: ThresholdConfig) -> float:
        scale = (cfg.relative_margin - 1.0) * max(abs(base_value),
                                                  self.threshold_of(cfg))
        return base_value + scale if self.op == "gt" else base_value - scale


@dataclass(frozen=True)
class _SeriesDetector:
    symptom: Symptom
    kind: str
    rules: tuple[_Rule, ...]
    combine: str = "any"  # "any" | "all"


_SERIES_DETECTORS = (
    _SeriesDetector(Symptom.NearZeroBiases, KIND_BIASES, (
        _Rule("mean_abs", lambda s: s.mean_abs_lower, "lt",
              lambda c: c.near_zero_bias_abs),)),
    _SeriesDetector(Symptom.SmallerWeights, KIND_WEIGHTS, (
        _Rule("mean_abs", lambda s: s.mean_abs_lower, "lt",
              lambda c: c.small_weight_mean_abs),)),
    _SeriesDetector(Symptom.ExtremeBiasValues, KIND_BIASES, (
        _Rule("range", _value_range, "gt", lambda c: c.extreme_bias_range),)),
    _SeriesDetector(Symptom.SkewedParameterDistribution, KIND_WEIGHTS, (
        _Rule("skew", lambda s: s.skew, "gt", lambda c: SKEW_MAX),
        _Rule("kurt_abs", lambda s: abs(s.kurt), "gt", lambda c: KURT_MAX),
    ), combine="any"),
    _SeriesDetector(Symptom.AbnormalWeightVariance, KIND_WEIGHTS, (
        _Rule("var", lambda s: s.var, "gt", lambda c: c.weight_var_hi),)),
    _SeriesDetector(Symptom.GradientSkewness, KIND_GRADIENTS, (
        _Rule("skew", lambda s: s.skew, "gt", lambda c: c.grad_skew_hi),)),
    _SeriesDetector(Symptom.OverfittingBias, KIND_BIASES, (
        _Rule("median", lambda s: s.median, "gt",
              lambda c: c.overfit_bias_median),)),
    _SeriesDetector(Symptom.ExtremeWeights, KIND_WEIGHTS, (
        _Rule("peak_abs", _peak_abs, "gt", lambda c: c.extreme_weight_abs),)),
    _SeriesDetector(Symptom.SkewedBiasDistribution, KIND_BIASES, (
        _Rule("skew", lambda s: s.skew, "gt", lambda c: SKEW_MAX),
        _Rule("kurt_abs", lambda s: abs(s.kurt), "gt", lambda c: KURT_MAX),
    ), combine="all"),
    _SeriesDetector(Symptom.SparseParameterUpdates, KIND_GRADIENTS, (
        _Rule("spar", lambda s: s.spar, "gt", lambda c: c.sparse_update_frac),)),
    _SeriesDetector(Symptom.ExplodingGradients, KIND_GRADIENTS, (
        _Rule("peak_abs", _peak_abs, "gt", lambda c: c.explode_grad_abs),)),
    _SeriesDetector(Symptom.HighWeightVariance, KIND_WEIGHTS, (
        _Rule("var", lambda s: s.var, "gt", lambda c: c.weight_var_extreme),)),
)


def _median(values: list[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    return ordered[mid] if n % 2 else 0.5 * (ordered[mid - 1] + ordered[mid])


def _eval_series_detector(det: _SeriesDetector, trace: RunTrace,
                          baseline: RunTrace | None,
                          cfg: ThresholdConfig) -> tuple[list[LayerEvidence], int]:
    layers = trace.layers_with_kind(det.kind)
    if baseline is not None:
        layers = [l for l in layers if baseline.series(l, det.kind)]
    evidence: list[LayerEvidence] = []
    for layer in layers:
        series = trace.series(layer, det.kind)
        if baseline is None:
            ev = _eval_absolute(det, layer, series, cfg)
        else:
            ev = _eval_relative(det, layer, series,
                                baseline.series(layer, det.kind), cfg)
        if ev is not None:
            evidence.append(ev)
    return evidence, len(layers)


def _eval_absolute(det: _SeriesDetector, layer: str, series, cfg) -> LayerEvidence | None:
    thresholds = [rule.threshold_of(cfg) for rule in det.rules]
    hits = []
    for step, stats in series:
        flags = [rule.violates(rule.quantity(stats), t)
                 for rule, t in zip(det.rules, thresholds)]
        ok = any(flags) if det.combine == "any" else all(flags)
        hits.append((step, stats, ok))
    violating = [h for h in hits if h[2]]
    if not violating or len(violating) / len(hits) < cfg.sustain_frac:
        return None
    # Report the rule with the largest relative excess at its worst step.
    best = None
    for rule, t in zip(det.rules, thresholds):
        for step, stats, _ in violating:
            value = rule.quantity(stats)
            if not rule.violates(value, t):
                continue
            excess = abs(value - t) / max(abs(t), 1e-30)
            if best is None or excess > best[0]:
                best = (excess, rule, value, t)
    _, rule, value, threshold = best
    return LayerEvidence(
        layer=layer, statistic=rule.statistic, value=value,
        threshold=threshold, comparator=">" if rule.op == "gt" else "<",
        first_step=violating[0][0],
        violating_fraction=len(violating) / len(hits),
    )


def _eval_relative(det: _SeriesDetector, layer: str, series, base_series,
                   cfg) -> LayerEvidence | None:
    per_rule = []
    for rule in det.rules:
        values = [rule.quantity(stats) for _, stats in series]
        base = _median([rule.quantity(stats) for _, stats in base_series])
        threshold = rule.relative_threshold(base, cfg)
        agg = _median(values)
        per_rule.append((rule, agg, threshold, values))
    flags = [rule.violates(agg, t) for rule, agg, t, _ in per_rule]
    fired = any(flags) if det.combine == "any" else all(flags)
    if not fired:
        return None
    best = None
    for (rule, agg, t, values), flag in zip(per_rule, flags):
        if not flag:
            continue
        excess = abs(agg - t) / max(abs(t), 1e-30)
        if best is None or excess > best[0]:
            best = (excess, rule, agg, t, values)
    _, rule, agg, threshold, values = best
    first_step = series[0][0]
    for (step, _), value in zip(series, values):
        if rule.violates(value, threshold):
            first_step = step
            break
    frac = sum(1 for v in values if rule.violates(v, threshold)) / len(values)
    return LayerEvidence(
        layer=layer, statistic=rule.statistic, value=agg, threshold=threshold,
        comparator=">" if rule.op == "gt" else "<", first_step=first_step,
        violating_fraction=frac,
    )


# --- gradient instability: a within-run amplitude range spanning too many
# orders of magnitude while the loud end is genuinely loud.


def _amplitude_span(series) -> tuple[float, float, float, int]:
    """Return (span_orders, min_amp, max_amp, first_step_realizing_span)."""
    running_min = math.inf
    running_max = 0.0
    amps = []
    for step, stats in series:
        amps.append((step, _peak_abs(stats)))
    first_step = series[0][0]
    best_span = 0.0
    for step, amp in amps:
        running_min = min(running_min, amp)
        running_max = max(running_max, amp)
        span = (math.inf if running_min == 0.0 and running_max > 0.0
                else 0.0 if running_max == 0.0
                else math.log10(running_max / running_min))
        if span > best_span:
            best_span = span
            first_step = step
    min_amp = min(a for _, a in amps)
    max_amp = max(a for _, a in amps)
    return best_span, min_amp, max_amp, first_step


def _detect_gradient_instability(trace, baseline, cfg) -> tuple[list[LayerEvidence], int]:
    layers = trace.layers_with_kind(KIND_GRADIENTS)
    if baseline is not None:
        layers = [l for l in layers if baseline.series(l, KIND_GRADIENTS)]
    evidence = []
    for layer in layers:
        series = trace.series(layer, KIND_GRADIENTS)
        span, _, max_amp, first_step = _amplitude_span(series)
        if baseline is None:
            span_t = cfg.grad_instability_span_orders
            peak_t = GRAD_INSTABILITY_PEAK_MIN
            fired = span > span_t and max_amp >= peak_t
        else:
            base_span, _, base_peak, _ = _amplitude_span(
                baseline.series(layer, KIND_GRADIENTS))
            margin = cfg.relative_margin - 1.0
            span_t = base_span + margin * max(abs(base_span),
                                              cfg.grad_instability_span_orders)
            peak_t = base_peak + margin * max(base_peak, GRAD_INSTABILITY_PEAK_MIN)
            fired = span > span_t and max_amp > peak_t
        if fired:
            evidence.append(LayerEvidence(
                layer=layer, statistic="amplitude_span_orders", value=span,
                threshold=span_t, comparator=">", first_step=first_step,
                violating_fraction=1.0))
    return evidence, len(layers)


# --- vanishing gradients: first-layer gradients orders of magnitude below
# last-layer gradients, sustained across the run.


def _natural_key(name: str):
    return tuple((0, int(tok), "") if tok.isdigit() else (1, 0, tok)
                 for tok in re.split(r"(\d+)", name) if tok)


def _gradient_endpoints(trace: RunTrace) -> tuple[str, str] | None:
    layers = trace.layers_with_kind(KIND_GRADIENTS)
    weighted = [l for l in layers if l.endswith(".weight")]
    candidates = sorted(weighted or layers, key=_natural_key)
    if len(candidates) < 2:
        return None
    return candidates[0], candidates[-1]


def _ratio_series(trace: RunTrace, first: str, last: str) -> list[tuple[int, float]]:
    head = dict(trace.series(first, KIND_GRADIENTS))
    tail = dict(trace.series(last, KIND_GRADIENTS))
    out = []
    for step in sorted(set(head) & set(tail)):
        denom = tail[step].rms
        if denom == 0.0:
            continue
        out.append((step, head[step].rms / denom))
    return out


def _detect_vanishing(trace, baseline, cfg) -> list[LayerEvidence]:
    endpoints = _gradient_endpoints(trace)
    if endpoints is None:
        return []
    ratios = _ratio_series(trace, *endpoints)
    if not ratios:
        return []
    if baseline is None:
        violating = [(s, r) for s, r in ratios if r <= cfg.vanish_ratio]
        frac = len(violating) / len(ratios)
        if not violating or frac < cfg.sustain_frac:
            return []
        worst_step, worst = min(violating, key=lambda sr: sr[1])
        return [LayerEvidence(
            layer=endpoints[0], statistic="rms_ratio_first_to_last",
            value=worst, threshold=cfg.vanish_ratio, comparator="<",
            first_step=violating[0][0], violating_fraction=frac)]
    base_endpoints = _gradient_endpoints(baseline)
    if base_endpoints is None:
        return []
    base_ratios = _ratio_series(baseline, *base_endpoints)
    if not base_ratios:
        return []
    log_q = _median([math.log10(r) for _, r in ratios if r > 0.0] or [0.0])
    log_base = _median([math.log10(r) for _, r in base_ratios if r > 0.0] or [0.0])
    scale = (cfg.relative_margin - 1.0) * max(abs(log_base),
                                              abs(math.log10(cfg.vanish_ratio)))
    threshold = log_base - scale
    if log_q >= threshold:
        return []
    first_step = next((s for s, r in ratios
                       if r > 0.0 and math.log10(r) < threshold), ratios[0][0])
    return [LayerEvidence(
        layer=endpoints[0], statistic="log10_rms_ratio_first_to_last",
        value=log_q, threshold=threshold, comparator="<",
        first_step=first_step, violating_fraction=1.0)]


# --- loss-level detectors


def epochs_to_convergence(losses: list[float], delta: float,
                          patience: int) -> int | None:
    """Epoch (1-based) at which the run counts as converged, else None.

    Converged means either the loss plateaued (no relative improvement of
    at least `delta` over the running best for `patience` consecutive
    epochs) or it collapsed below CONVERGENCE_COLLAPSE_FRAC of the first
    epoch's value; a run still making large progress at budget end did not
    converge within the budget.
    """
    if len(losses) < 2:
        return None
    best = losses[0]
    collapse = CONVERGENCE_COLLAPSE_FRAC * abs(losses[0])
    streak = 0
    for e in range(1, len(losses)):
        if losses[e] <= collapse:
            return e + 1
        if losses[e] < best - delta * abs(best):
            streak = 0
        else:
            streak += 1
        best = min(best, losses[e])
        if streak >= patience:
            return e + 1
    return None


def _plateau(losses: list[float], patience: int) -> float:
    tail = losses[-patience:] if len(losses) >= patience else losses
    return sum(tail) / len(tail)


def _detect_slow_convergence(trace, baseline, cfg) -> list[LayerEvidence]:
    losses = trace.epoch_metric(LOSS_METRIC)
    if len(losses) < cfg.convergence_patience_epochs + 2:
        return []
    converged = epochs_to_convergence(losses, cfg.convergence_delta,
                                      cfg.convergence_patience_epochs)
    budget = len(losses)
    if baseline is None:
        fired = converged is None
        value = float(budget if converged is None else converged)
        threshold = float(budget)
    else:
        base_losses = baseline.epoch_metric(LOSS_METRIC)
        if len(base_losses) < cfg.convergence_patience_epochs + 2:
            return []
        base_conv = epochs_to_convergence(base_losses, cfg.convergence_delta,
                                          cfg.convergence_patience_epochs)
        if base_conv is None:
            return []  # no healthy reference point
        threshold = cfg.relative_margin * base_conv
        value = float(budget if converged is None else converged)
        fired = converged is None or converged > threshold
    if not fired:
        return []
    step = trace.metric_series(LOSS_METRIC)[-1][0]
    return [LayerEvidence(
        layer=METRIC_LAYER, statistic="epochs_to_convergence", value=value,
        threshold=threshold, comparator=">", first_step=step,
        violating_fraction=1.0)]


def _detect_higher_loss(trace, baseline, cfg) -> list[LayerEvidence]:
    if baseline is None:
        return []  # baseline-relative by definition; disabled in absolute mode
    losses = trace.epoch_metric(LOSS_METRIC)
    base_losses = baseline.epoch_metric(LOSS_METRIC)
    if not losses or not base_losses:
        return []
    plateau = _plateau(losses, cfg.convergence_patience_epochs)
    base_plateau = _plateau(base_losses, cfg.convergence_patience_epochs)
    if base_plateau <= 0.0:
        return []
    ratio = plateau / base_plateau
    if ratio < cfg.loss_ratio_hi:
        return []
    step = trace.metric_series(LOSS_METRIC)[-1][0]
    return [LayerEvidence(
        layer=METRIC_LAYER, statistic="plateau_loss_ratio", value=ratio,
        threshold=cfg.loss_ratio_hi, comparator=">=", first_step=step,
        violating_fraction=1.0)]


# ---------------------------------------------------------------------------
# Classification


def _severity_of(coverage: float, evidence: tuple[LayerEvidence, ...],
                 cfg: ThresholdConfig) -> str:
    extreme = any(abs(e.value) >= NONFINITE_ADJACENT for e in evidence)
    if coverage >= 2.0 * cfg.layer_coverage_min or extreme:
        return "critical"
    return "warning"


def _finding(symptom: Symptom, evidence: list[LayerEvidence], eligible: int,
             cfg: ThresholdConfig,
             cause_table: dict | None) -> SymptomFinding | None:
    if not evidence or eligible == 0:
        return None
    coverage = len(evidence) / eligible
    if coverage < cfg.layer_coverage_min:
        return None
    ordered = tuple(sorted(evidence, key=lambda e: e.layer))
    return SymptomFinding(
        symptom=symptom,
        affected_layers=ordered,
        coverage=coverage,
        first_step=min(e.first_step for e in ordered),
        suspected_causes=tuple(attribute_causes(symptom, cfg.data_type,
                                                cause_table)),
        severity=_severity_of(coverage, ordered, cfg),
    )


def classify(trace: RunTrace, baseline: RunTrace | None = None,
             cfg: ThresholdConfig | None = None,
             cause_table: dict | None = None) -> list[SymptomFinding]:
    """Scan a trace for the full symptom catalog.

    Passing a baseline switches to relative mode: per-layer thresholds are
    derived from the baseline's statistics instead of the absolute defaults,
    and the baseline-relative HigherLoss detector becomes available.
    Findings are sorted by severity, then coverage, then catalog order.
    """
    cfg = cfg or ThresholdConfig()
    if trace.is_empty:
        raise ValueError("cannot classify an empty trace")
    if cfg.baseline_mode == "relative" and baseline is None:
        raise ValueError("relative mode requires a baseline trace")
    if baseline is not None:
        overlap = set(trace.layers) & set(baseline.layers)
        if trace.layers and not overlap:
            raise ValueError("baseline shares no layers with the trace")
    findings: list[SymptomFinding] = []

    for det in _SERIES_DETECTORS:
        evidence, eligible = _eval_series_detector(det, trace, baseline, cfg)
        f = _finding(det.symptom, evidence, eligible, cfg, cause_table)
        if f:
            findings.append(f)

    evidence, eligible = _detect_gradient_instability(trace, baseline, cfg)
    f = _finding(Symptom.GradientInstability, evidence, eligible, cfg, cause_table)
    if f:
        findings.append(f)

    for symptom, detector in ((Symptom.VanishingGradients, _detect_vanishing),
                              (Symptom.SlowConvergence, _detect_slow_convergence),
                              (Symptom.HigherLoss, _detect_higher_loss)):
        evidence = detector(trace, baseline, cfg)
        f = _finding(symptom, evidence, 1, cfg, cause_table)
        if f:
            findings.append(f)

    findings.sort(key=lambda f: (-SEVERITY_ORDER.index(f.severity),
                                 -f.coverage, _SYMPTOM_INDEX[f.symptom]))
    return findings


def should_interrupt(findings: list[SymptomFinding],
                     policy: InterruptPolicy) -> InterruptDecision:
    """Halt when any finding matches the policy; the triggering finding is
    the strongest match (severity, then coverage, then catalog order)."""
    floor = SEVERITY_ORDER.index(policy.min_severity)
    matches = [
        f for f in findings
        if (not policy.enabled_symptoms or f.symptom in policy.enabled_symptoms)
        and SEVERITY_ORDER.index(f.severity) >= floor
        and f.coverage >= policy.min_coverage
    ]
    if not matches:
        return InterruptDecision(halt=False)
    matches.sort(key=lambda f: (-SEVERITY_ORDER.index(f.severity),
                                -f.coverage, _SYMPTOM_INDEX[f.symptom]))
    return InterruptDecision(halt=True, finding=matches[0])
