"""Append-only line-delimited metric records."""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np


class MetricsSink:
    """Collects ``{iteration, phase, name, value}`` records.

    With a path, every record is written as one complete JSON line and
    flushed immediately, so a crashed run never leaves a partial line.
    """

    def __init__(self, path=None, **static):
        self.records: list[dict] = []
        self.static = static
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def emit(self, iteration, phase: str, name: str, value, **extra) -> None:
        if hasattr(value, "item"):
            value = value.item()
        rec = {"iteration": int(iteration), "phase": phase, "name": name, "value": value, **self.static, **extra}
        self.records.append(rec)
        if self.path:
            line = json.dumps(rec, allow_nan=True) + "\n"
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())

    def values(self, name: str, phase: str | None = None) -> list:
        return [r["value"] for r in self.records if r["name"] == name and (phase is None or r["phase"] == phase)]


def read_metrics(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.endswith("\n"):
                out.append(json.loads(line))
    return out


def nmse(pred, target) -> float:
    """Mean squared error divided by the target variance."""
    pred = np.asarray(pred, dtype=float).reshape(np.shape(target))
    target = np.asarray(target, dtype=float)
    return float(np.mean((pred - target) ** 2) / np.var(target))


def error_rate(pred_labels, labels) -> float:
    return float(np.mean(np.asarray(pred_labels) != np.asarray(labels)))
