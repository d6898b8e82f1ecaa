"""Shared JSON config file: thresholds, interrupt policy, trainer settings.

All sections are optional; key names match the dataclass fields exactly.
The TRAINWATCH_CONFIG environment variable supplies a default path when a
command is run without --config.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .symptoms import InterruptPolicy, ThresholdConfig

CONFIG_ENV = "TRAINWATCH_CONFIG"

_KNOWN_SECTIONS = {"thresholds", "policy", "train", "cause_table", "remediations"}


@dataclass
class AppConfig:
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    policy: InterruptPolicy = field(default_factory=InterruptPolicy)
    train: dict = field(default_factory=dict)
    cause_table: dict | None = None
    remediations: dict | None = None


def load_config(path: str | None = None) -> AppConfig:
    """Load the config file at `path`, the env-var path, or defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV)
    if path is None:
        return AppConfig()
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a JSON object")
    unknown = set(doc) - _KNOWN_SECTIONS
    if unknown:
        raise ValueError(f"unknown config section {sorted(unknown)[0]!r}")
    cause_table = doc.get("cause_table")
    if cause_table is not None:
        cause_table = {dt: {name: [(c, float(s)) for c, s in pairs]
                            for name, pairs in table.items()}
                       for dt, table in cause_table.items()}
    return AppConfig(
        thresholds=ThresholdConfig.from_dict(doc.get("thresholds", {})),
        policy=InterruptPolicy.from_dict(doc.get("policy", {})),
        train=doc.get("train", {}),
        cause_table=cause_table,
        remediations=doc.get("remediations"),
    )
