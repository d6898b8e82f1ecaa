"""trainwatch: training-run telemetry monitoring and data-bug diagnosis.

The package watches per-layer weights, biases, gradients, and losses from a
training run, detects statistical symptoms of data-quality and
preprocessing bugs, attributes probable root causes, and can interrupt the
run. Companion tooling injects the bug classes into tabular datasets and
trains a small reference classifier so every detector can be exercised
end to end.
"""

from .injectors import (BugSpec, Dataset, FlipRule, apply_preprocessing,
                        inject_class_imbalance, inject_concept_drift,
                        inject_label_noise, inject_ood)
from .report import DiagnosticReport, load_remediation_table
from .stats import (LayerStats, OutlierReport, TestResult, compute_stats,
                    detect_outliers_iqr, detect_outliers_zscore,
                    detect_shape_distortion, mcnemar_test, odds_ratio)
from .symptoms import (InterruptPolicy, LayerEvidence, Symptom,
                       SymptomFinding, ThresholdConfig, attribute_causes,
                       classify, load_cause_table, should_interrupt)
from .telemetry import (JsonlWriter, ListSink, ParseError, RunTrace,
                        TelemetryRecord, TraceError, build_trace,
                        parse_record, read_records, read_trace,
                        serialize_record)
from .toytrainer import (ToyModel, TrainConfig, TrainingDiverged, backward,
                         forward, generate_synthetic, train)
from .xai import (GradcamInput, attention_head_mean, gradcam_map,
                  gradcam_weights, kl_divergence, token_importance,
                  tsne_embed, tsne_kl_gradient, tsne_p_matrix, tsne_q_matrix)

__version__ = "0.1.0"
