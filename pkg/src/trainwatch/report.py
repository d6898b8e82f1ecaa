"""Diagnostic report rendering: one internal structure, three surfaces.

The JSON and human-readable forms are generated from the same
DiagnosticReport instance, so they always carry identical content. The
remediation table ships as editable JSON data keyed by symptom name.
"""

from __future__ import annotations

import importlib.resources
import json
import os
from dataclasses import dataclass, field

from .symptoms import SymptomFinding, ThresholdConfig

REPORT_FORMATS = ("text", "md", "json")


def load_remediation_table() -> dict[str, list[str]]:
    text = importlib.resources.files("trainwatch").joinpath(
        "data/remediations.json").read_text(encoding="utf-8")
    return json.loads(text)


_DEFAULT_REMEDIATIONS = load_remediation_table()


@dataclass
class DiagnosticReport:
    run_id: str
    findings: list[SymptomFinding]
    config: ThresholdConfig
    baseline_run_id: str | None = None
    remediations: dict[str, list[str]] = field(
        default_factory=lambda: _DEFAULT_REMEDIATIONS)

    @property
    def verdict(self) -> str:
        if not self.findings:
            return "healthy: no symptoms detected"
        worst = self.findings[0].severity
        return (f"{len(self.findings)} symptom(s) detected, "
                f"worst severity {worst}")

    def remediation_for(self, finding: SymptomFinding) -> list[str]:
        return self.remediations.get(finding.symptom.value, [])

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "baseline_run_id": self.baseline_run_id,
            "verdict": self.verdict,
            "findings": [
                dict(f.to_dict(), remediation=self.remediation_for(f))
                for f in self.findings
            ],
            "config": self.config.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True,
                          allow_nan=False) + "\n"

    def to_text(self) -> str:
        bar = "=" * 72
        lines = [bar,
                 f" diagnostic report for run {self.run_id}",
                 bar,
                 f" verdict: {self.verdict}"]
        if self.baseline_run_id is not None:
            lines.append(f" baseline: {self.baseline_run_id} (relative thresholds)")
        for f in self.findings:
            lines.append("")
            lines.append(f" [{f.severity}] {f.symptom.value}  "
                         f"coverage {f.coverage:.2f}  first step {f.first_step}")
            lines.append("   evidence:")
            for e in f.affected_layers:
                lines.append(f"     - {e.layer}: {e.statistic} = {e.value:.6g} "
                             f"{e.comparator} {e.threshold:.6g} "
                             f"(from step {e.first_step}, "
                             f"{e.violating_fraction:.0%} of steps)")
            causes = ", ".join(f"{c} ({s:.5g})" for c, s in f.suspected_causes)
            lines.append(f"   suspected causes: {causes}")
            remediation = self.remediation_for(f)
            if remediation:
                lines.append("   suggested remediation:")
                lines.extend(f"     - {r}" for r in remediation)
        lines.append("")
        lines.append(" thresholds:")
        for key, value in sorted(self.config.to_dict().items()):
            lines.append(f"   {key} = {value}")
        lines.append(bar)
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        lines = [f"# Diagnostic report: run `{self.run_id}`",
                 "",
                 f"**Verdict:** {self.verdict}"]
        if self.baseline_run_id is not None:
            lines.append(f"**Baseline:** `{self.baseline_run_id}` "
                         f"(relative thresholds)")
        for f in self.findings:
            lines.append("")
            lines.append(f"## {f.symptom.value} ({f.severity})")
            lines.append("")
            lines.append(f"- coverage: {f.coverage:.2f}")
            lines.append(f"- first step: {f.first_step}")
            causes = ", ".join(f"{c} ({s:.5g})" for c, s in f.suspected_causes)
            lines.append(f"- suspected causes: {causes}")
            lines.append("")
            lines.append("| layer | statistic | value | threshold |")
            lines.append("|---|---|---|---|")
            for e in f.affected_layers:
                lines.append(f"| `{e.layer}` | {e.statistic} | {e.value:.6g} "
                             f"| {e.comparator} {e.threshold:.6g} |")
            remediation = self.remediation_for(f)
            if remediation:
                lines.append("")
                lines.append("Suggested remediation:")
                lines.extend(f"- {r}" for r in remediation)
        lines.append("")
        return "\n".join(lines) + "\n"

    def render(self, fmt: str) -> str:
        if fmt == "json":
            return self.to_json()
        if fmt == "md":
            return self.to_markdown()
        if fmt == "text":
            return self.to_text()
        raise ValueError(f"unknown report format {fmt!r}")


def write_atomic(path: str, content: str) -> None:
    """Write through a temp file and rename, so failures leave no partial
    output behind."""
    tmp = f"{path}.tmp-{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
