"""Command-line surface: train the toy rig, inject bugs, analyze and watch
telemetry, run the XAI computations, and render diagnostic reports.

Exit codes: 0 = success / no findings, 2 = findings detected, 1 = error.
The distinction lets CI pipelines gate builds on detected data bugs while
still failing loudly on operational errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import time

import numpy as np

from . import injectors, toytrainer, xai
from .config import AppConfig, load_config
from .injectors import BugSpec, FlipRule
from .report import REPORT_FORMATS, DiagnosticReport, write_atomic
from .symptoms import (InterruptPolicy, Symptom, ThresholdConfig, classify,
                       should_interrupt)
from .telemetry import (JsonlWriter, ParseError, RunTrace, TraceError,
                        build_trace, parse_record, read_trace,
                        serialize_record)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FINDINGS = 2


class CliError(Exception):
    pass


def _thresholds(app: AppConfig, baseline_given: bool) -> ThresholdConfig:
    cfg = app.thresholds
    if baseline_given and cfg.baseline_mode == "absolute":
        cfg = ThresholdConfig.from_dict(dict(cfg.to_dict(), baseline_mode="relative"))
    return cfg


def _build_report(run_path: str, baseline_path: str | None,
                  app: AppConfig) -> DiagnosticReport:
    trace = read_trace(run_path)
    baseline = read_trace(baseline_path) if baseline_path else None
    cfg = _thresholds(app, baseline is not None)
    findings = classify(trace, baseline, cfg, cause_table=app.cause_table)
    report = DiagnosticReport(
        run_id=trace.run_id, findings=findings, config=cfg,
        baseline_run_id=baseline.run_id if baseline else None)
    if app.remediations:
        report.remediations = dict(report.remediations, **app.remediations)
    return report


# ---------------------------------------------------------------------------
# train-toy


def cmd_train_toy(args) -> int:
    app = load_config(args.config)
    train_cfg = dict(app.train)
    layer_sizes = args.layer_sizes or train_cfg.get("layer_sizes", [2, 16, 2])
    data_cfg = train_cfg.get("data", {})
    kind = args.data or data_cfg.get("kind", "two_gaussians")
    n = args.n or data_cfg.get("n", 400)
    d = args.d or data_cfg.get("d", layer_sizes[0])
    seed = args.seed if args.seed is not None else train_cfg.get("seed", 0)
    separation = data_cfg.get("separation", 4.0)

    ds = toytrainer.generate_synthetic(kind, n, d, seed, separation=separation)
    injection = None
    if args.inject:
        injection = _parse_bugspec(args.inject, seed)
    preprocess = train_cfg.get("preprocess", ["standardize"])
    if injection is not None and injection.kind == "omit_preprocessing":
        ds = injectors.apply_bug(ds, injection)
        injection = None
    elif preprocess:
        ds = injectors.apply_preprocessing(ds, preprocess)

    cfg = toytrainer.TrainConfig(
        epochs=args.epochs or train_cfg.get("epochs", 20),
        batch_size=args.batch_size or train_cfg.get("batch_size", 32),
        learning_rate=args.learning_rate or train_cfg.get("learning_rate", 0.1),
        telemetry_cadence=train_cfg.get("telemetry_cadence", "step"),
        run_id=args.run_id or train_cfg.get("run_id", f"toy-{seed}"),
        injection=injection,
    )
    model = toytrainer.ToyModel.initialize(layer_sizes, seed)
    tmp = f"{args.out}.tmp-{os.getpid()}"
    diverged = False
    try:
        with JsonlWriter(tmp) as sink:
            try:
                result = toytrainer.train(model, ds, cfg, sink)
            except toytrainer.TrainingDiverged as e:
                result = e.partial
                diverged = True
                print(f"warning: {e} (partial telemetry kept)", file=sys.stderr)
        os.replace(tmp, args.out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    summary = {"run_id": result.run_id, "diverged": diverged,
               "epochs_run": result.epochs_run, "final_loss": result.final_loss,
               "metrics": result.metrics, "telemetry": args.out}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _parse_bugspec(text: str, default_seed: int) -> BugSpec:
    if os.path.exists(text):
        with open(text, encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise CliError(f"--inject must be a JSON object or a path: {e}")
    if not isinstance(doc, dict) or "kind" not in doc:
        raise CliError("--inject needs at least a 'kind' key")
    doc.setdefault("seed", default_seed)
    if "flip_rule" in doc and doc["flip_rule"] is not None:
        doc["flip_rule"] = FlipRule(**doc["flip_rule"])
    if "class_map" in doc and doc["class_map"] is not None:
        doc["class_map"] = {int(k): int(v) for k, v in doc["class_map"].items()}
    if "omitted_ops" in doc and doc["omitted_ops"] is not None:
        doc["omitted_ops"] = tuple(doc["omitted_ops"])
    return BugSpec(**doc)


# ---------------------------------------------------------------------------
# inject


def cmd_inject(args) -> int:
    ds = injectors.read_csv(args.dataset, label_col=args.label_col,
                            time_col=args.time_col)
    seed = args.seed
    if args.bug == "label_noise":
        if args.eta is None:
            raise CliError("label_noise requires --eta")
        out = injectors.inject_label_noise(ds, args.eta, seed=seed)
    elif args.bug == "class_imbalance":
        if args.tau is None:
            raise CliError("class_imbalance requires --tau")
        out = injectors.inject_class_imbalance(ds, args.tau, seed=seed)
    elif args.bug == "ood":
        if args.rho is None:
            raise CliError("ood requires --rho")
        shift = (np.array([float(v) for v in args.shift.split(",")])
                 if args.shift else np.zeros(ds.d))
        out = injectors.inject_ood(ds, args.rho, shift, seed=seed)
    elif args.bug == "concept_drift":
        if args.drift_fraction is None:
            raise CliError("concept_drift requires --drift-fraction")
        rule = FlipRule(column=args.flip_column,
                        threshold=args.flip_threshold,
                        above=not args.flip_below)
        train, test = injectors.inject_concept_drift(
            ds, args.drift_fraction, rule, seed=seed,
            synthetic=args.synthetic or None)
        _write_csv_atomic(train, args.out, args.label_col, args.time_col)
        if args.out_test:
            _write_csv_atomic(test, args.out_test, args.label_col, args.time_col)
        return EXIT_OK
    elif args.bug == "omit_preprocessing":
        omitted = tuple((args.omit or "").split(",")) if args.omit else ()
        ops = [op for op in injectors.PREPROCESS_OPS if op not in omitted]
        out = injectors.apply_preprocessing(ds, ops)
    else:
        raise CliError(f"unknown bug kind {args.bug!r}")
    _write_csv_atomic(out, args.out, args.label_col, args.time_col)
    return EXIT_OK


def _write_csv_atomic(ds, path, label_col, time_col) -> None:
    tmp = f"{path}.tmp-{os.getpid()}"
    try:
        injectors.write_csv(ds, tmp, label_col=label_col,
                            time_col=time_col if ds.timestamps is not None else None)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args) -> int:
    app = load_config(args.config)
    report = _build_report(args.run, args.baseline, app)
    rendered = report.render(args.format)
    if args.out:
        write_atomic(args.out, rendered)
    else:
        sys.stdout.write(rendered)
    return EXIT_FINDINGS if report.findings else EXIT_OK


# ---------------------------------------------------------------------------
# watch


def _read_complete_lines(path: str) -> tuple[list[bytes], bool]:
    """All newline-terminated lines plus whether a partial tail exists."""
    with open(path, "rb") as fh:
        blob = fh.read()
    lines = blob.split(b"\n")
    partial = lines[-1] != b""
    return [l for l in lines[:-1] if l.strip()], partial


def cmd_watch(args) -> int:
    app = load_config(args.config)
    policy = app.policy
    if args.min_severity:
        policy = InterruptPolicy(enabled_symptoms=policy.enabled_symptoms,
                                 min_severity=args.min_severity,
                                 min_coverage=args.min_coverage
                                 if args.min_coverage is not None
                                 else policy.min_coverage,
                                 evaluate_every=policy.evaluate_every)
    baseline = read_trace(args.baseline) if args.baseline else None
    cfg = _thresholds(app, baseline is not None)

    seen = 0
    records = []
    idle_since = time.monotonic()
    epochs_seen = -1
    while True:
        try:
            lines, _ = _read_complete_lines(args.run)
        except FileNotFoundError:
            lines = []
        new = lines[seen:]
        if new:
            idle_since = time.monotonic()
            for line in new:
                records.append(parse_record(line))
            seen = len(lines)
        idle = time.monotonic() - idle_since >= args.idle_timeout
        boundary = False
        if new:
            if policy.evaluate_every == "step":
                boundary = True
            else:
                top = max((r.epoch for r in records if r.epoch is not None),
                          default=-1)
                boundary = top > epochs_seen
                epochs_seen = max(epochs_seen, top)
        if boundary or (idle and records):
            try:
                trace = build_trace(records)
                findings = classify(trace, baseline, cfg,
                                    cause_table=app.cause_table)
            except (TraceError, ValueError):
                findings = []
            decision = should_interrupt(findings, policy)
            if decision.halt:
                report = DiagnosticReport(
                    run_id=trace.run_id, findings=findings, config=cfg,
                    baseline_run_id=baseline.run_id if baseline else None)
                rendered = report.render(args.format)
                if args.report_out:
                    write_atomic(args.report_out, rendered)
                sys.stdout.write(rendered)
                trigger = decision.finding.symptom.value
                print(f"halt: {trigger} triggered the interrupt policy",
                      file=sys.stderr)
                if args.interrupt_cmd:
                    env = dict(os.environ,
                               TRAINWATCH_RUN_ID=trace.run_id,
                               TRAINWATCH_SYMPTOM=trigger,
                               TRAINWATCH_REPORT=args.report_out or "")
                    subprocess.run(args.interrupt_cmd, shell=True, env=env,
                                   check=False)
                return EXIT_FINDINGS
            if idle:
                report = DiagnosticReport(
                    run_id=trace.run_id, findings=findings, config=cfg,
                    baseline_run_id=baseline.run_id if baseline else None)
                rendered = report.render(args.format)
                if args.report_out:
                    write_atomic(args.report_out, rendered)
                sys.stdout.write(rendered)
                return EXIT_FINDINGS if findings else EXIT_OK
        elif idle:
            print("watch: stream ended before any evaluable records arrived",
                  file=sys.stderr)
            return EXIT_OK
        time.sleep(args.poll_interval)


# ---------------------------------------------------------------------------
# xai


def _read_matrix_csv(path: str) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return np.asarray(rows, dtype=np.float64)


def _write_matrix_csv(path: str, matrix: np.ndarray) -> None:
    m = np.atleast_2d(np.asarray(matrix))
    out = "\n".join(",".join(repr(float(v)) for v in row) for row in m) + "\n"
    write_atomic(path, out)


def cmd_xai(args) -> int:
    if args.xai_cmd == "attention":
        with open(args.input, encoding="utf-8") as fh:
            tensor = np.asarray(json.load(fh), dtype=np.float64)
        mean = xai.attention_head_mean(tensor)
        scores = xai.token_importance(mean)
        if args.mean_out:
            _write_matrix_csv(args.mean_out, mean)
        _write_matrix_csv(args.out, scores[None, :])
    elif args.xai_cmd == "gradcam":
        with open(args.input, encoding="utf-8") as fh:
            doc = json.load(fh)
        inputs = xai.GradcamInput.build(doc["maps"], doc["gradients"])
        weights = xai.gradcam_weights(inputs)
        heat = xai.gradcam_map(weights, inputs.maps)
        if args.weights_out:
            _write_matrix_csv(args.weights_out, weights[None, :])
        _write_matrix_csv(args.out, heat)
    else:  # tsne
        x = _read_matrix_csv(args.input)
        y, trajectory = xai.tsne_embed(
            x, d=args.dims, sigma=args.sigma, iters=args.iters,
            learning_rate=args.learning_rate, seed=args.seed,
            perplexity=args.perplexity)
        _write_matrix_csv(args.out, y)
        if args.kl_out:
            _write_matrix_csv(args.kl_out, np.asarray(trajectory)[None, :])
        if args.plot:
            _plot_embedding(y, args.plot)
    return EXIT_OK


def _plot_embedding(y: np.ndarray, path: str) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("warning: matplotlib unavailable, skipping plot", file=sys.stderr)
        return
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(y[:, 0], y[:, 1], s=12)
    ax.set_title("embedding")
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    with open(args.findings, encoding="utf-8") as fh:
        doc = json.load(fh)
    report = _report_from_dict(doc)
    write_atomic(args.out, report.render(args.format))
    return EXIT_OK


def _report_from_dict(doc: dict) -> DiagnosticReport:
    from .symptoms import LayerEvidence, SymptomFinding

    findings = []
    for f in doc.get("findings", []):
        evidence = tuple(
            LayerEvidence(layer=e["layer"], statistic=e["statistic"],
                          value=e["value"], threshold=e["threshold"],
                          comparator=e["comparator"],
                          first_step=e["first_step"],
                          violating_fraction=e["violating_fraction"])
            for e in f["affected_layers"])
        findings.append(SymptomFinding(
            symptom=Symptom(f["symptom"]),
            affected_layers=evidence,
            coverage=f["coverage"],
            first_step=f["first_step"],
            suspected_causes=tuple((c["cause"], c["strength"])
                                   for c in f["suspected_causes"]),
            severity=f["severity"]))
    cfg = ThresholdConfig.from_dict(doc.get("config", {}))
    return DiagnosticReport(run_id=doc.get("run_id", "unknown"),
                            findings=findings, config=cfg,
                            baseline_run_id=doc.get("baseline_run_id"))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trainwatch",
        description="Training telemetry monitoring and data-bug diagnosis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-toy", help="train the reference model, emitting telemetry")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="telemetry JSONL(.gz) path")
    p.add_argument("--seed", type=int)
    p.add_argument("--inject", help="BugSpec as inline JSON or a file path")
    p.add_argument("--run-id")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--layer-sizes", type=lambda s: [int(v) for v in s.split(",")])
    p.add_argument("--data", choices=toytrainer.SYNTHETIC_KINDS)
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("inject", help="inject a data bug into a CSV dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--bug", required=True, choices=injectors.BUG_KINDS)
    p.add_argument("--label-col", default="label")
    p.add_argument("--time-col")
    p.add_argument("--eta", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--shift", help="comma-separated per-column shift")
    p.add_argument("--drift-fraction", type=float)
    p.add_argument("--flip-column", type=int, default=0)
    p.add_argument("--flip-threshold", type=float, default=0.0)
    p.add_argument("--flip-below", action="store_true")
    p.add_argument("--synthetic", action="store_true",
                   help="force synthetic drift mode even with timestamps")
    p.add_argument("--omit", help="comma-separated preprocessing ops to skip")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--out-test", help="test split output for concept_drift")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("analyze", help="classify a finished telemetry trace")
    p.add_argument("--run", required=True)
    p.add_argument("--baseline")
    p.add_argument("--config")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("watch", help="follow a growing trace, interrupt on policy")
    p.add_argument("--run", required=True)
    p.add_argument("--baseline")
    p.add_argument("--config")
    p.add_argument("--min-severity", choices=("info", "warning", "critical"))
    p.add_argument("--min-coverage", type=float)
    p.add_argument("--poll-interval", type=float, default=0.5)
    p.add_argument("--idle-timeout", type=float, default=10.0)
    p.add_argument("--report-out")
    p.add_argument("--interrupt-cmd",
                   help="shell command to run on halt (report path in "
                        "TRAINWATCH_REPORT)")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_watch)

    p = sub.add_parser("xai", help="attention / gradcam / tsne computations")
    xsub = p.add_subparsers(dest="xai_cmd", required=True)
    pa = xsub.add_parser("attention")
    pa.add_argument("--input", required=True, help="JSON (heads, n, n) tensor")
    pa.add_argument("--out", required=True, help="token score CSV")
    pa.add_argument("--mean-out", help="head-averaged matrix CSV")
    pa.set_defaults(func=cmd_xai)
    pg = xsub.add_parser("gradcam")
    pg.add_argument("--input", required=True,
                    help='JSON {"maps": [...], "gradients": [...]}')
    pg.add_argument("--out", required=True, help="heatmap CSV")
    pg.add_argument("--weights-out")
    pg.set_defaults(func=cmd_xai)
    pt = xsub.add_parser("tsne")
    pt.add_argument("--input", required=True, help="CSV matrix, one row per point")
    pt.add_argument("--out", required=True, help="embedding CSV")
    pt.add_argument("--kl-out")
    pt.add_argument("--dims", type=int, default=2)
    pt.add_argument("--sigma", type=float, default=1.0)
    pt.add_argument("--iters", type=int, default=200)
    pt.add_argument("--learning-rate", type=float, default=100.0)
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--perplexity", type=float)
    pt.add_argument("--plot", help="optional scatter plot PNG")
    pt.set_defaults(func=cmd_xai)

    p = sub.add_parser("report", help="re-render a findings JSON document")
    p.add_argument("--findings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=REPORT_FORMATS, default="text")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse uses exit code 2 for usage errors; 2 means "findings"
        # in this tool's contract, so remap.
        return EXIT_OK if e.code == 0 else EXIT_ERROR
    try:
        return args.func(args)
    except (CliError, ParseError, TraceError, ValueError, OSError,
            json.JSONDecodeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
