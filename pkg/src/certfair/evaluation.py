"""Empirical fairness, accuracy, timing comparisons and CSV reports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .network import NetworkSpec, Parameters, build_input, forward_inputs, labels_from_logits

REPORT_COLUMNS = ["dataset", "attribute", "method", "fairness_pct", "discriminatory_count",
                  "accuracy_pct", "total_seconds", "steps_per_sec"]
CURVE_COLUMNS = ["epoch", "fairness_pct", "accuracy_pct", "cumulative_seconds", "loss"]


@dataclass
class EvalReport:
    dataset: str
    attribute: str
    method: str
    fairness_pct: float
    discriminatory_count: int
    accuracy_pct: float
    total_seconds: float = 0.0
    steps_per_sec: float = 0.0

    def row(self) -> dict:
        return asdict(self)


@dataclass
class FairnessResult:
    fairness_pct: float
    discriminatory_count: int
    violating: np.ndarray

    def __iter__(self):
        return iter((self.fairness_pct, self.discriminatory_count, self.violating))


def labels_per_value(spec: NetworkSpec, params: Parameters, x, n_values: int) -> np.ndarray:
    """``(n_values, n)`` predicted labels with the sensitive input forced to each value."""
    x = np.atleast_2d(x)
    out = np.empty((n_values, len(x)), dtype=int)
    for v in range(n_values):
        z = forward_inputs(spec, params, build_input(spec, x, np.full(len(x), v))).output
        out[v] = labels_from_logits(z)
    return out


def empirical_fairness(spec: NetworkSpec, params: Parameters, data) -> FairnessResult:
    """Share of test rows whose label survives every sensitive substitution."""
    n = len(data)
    if n == 0:
        raise ValueError("empty test set")
    labels = labels_per_value(spec, params, data.x, len(data.sensitive))
    bad = np.flatnonzero((labels != labels[0]).any(axis=0))
    return FairnessResult(100.0 * (n - bad.size) / n, int(bad.size), bad)


def accuracy(spec: NetworkSpec, params: Parameters, data) -> float:
    if len(data) == 0:
        raise ValueError("empty test set")
    z = forward_inputs(spec, params, build_input(spec, data.x, data.s)).output
    return 100.0 * float(np.mean(labels_from_logits(z) == data.y))


def evaluate(spec: NetworkSpec, params: Parameters, data, method: str = "",
             dataset: str = "", attribute: str = "", stats=None) -> EvalReport:
    fair = empirical_fairness(spec, params, data)
    report = EvalReport(dataset, attribute, method, fair.fairness_pct,
                        fair.discriminatory_count, accuracy(spec, params, data))
    if stats:
        report.total_seconds = sum(s.seconds for s in stats)
        steps = sum(s.steps for s in stats)
        report.steps_per_sec = steps / report.total_seconds if report.total_seconds > 0 else 0.0
    return report


@dataclass
class TimingComparison:
    ratio: float
    per_iteration_ratio: float
    fair_seconds: float
    erm_seconds: float
    fair_steps_per_sec: float
    erm_steps_per_sec: float


def timing_ratio(stats_fair, stats_erm) -> TimingComparison:
    """Wall-clock ratio of two training logs over the same epochs.

    Only the per-epoch durations of the records passed in are summed, so
    dropping the same epochs from both logs leaves a proportional ratio
    unchanged.
    """
    if len(stats_fair) != len(stats_erm):
        raise ValueError("timing logs must cover the same number of epochs")
    tf = sum(s.seconds for s in stats_fair)
    te = sum(s.seconds for s in stats_erm)
    nf = sum(s.steps for s in stats_fair)
    ne = sum(s.steps for s in stats_erm)
    speed_f = nf / tf if tf > 0 else 0.0
    speed_e = ne / te if te > 0 else 0.0
    ratio = tf / te if te > 0 else float("nan")
    per_iter = (tf / nf) / (te / ne) if nf and ne and te > 0 else ratio
    return TimingComparison(ratio, per_iter, tf, te, speed_f, speed_e)


def write_table(reports, path) -> Path:
    if not reports:
        raise ValueError("no reports to write")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        out = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        out.writeheader()
        for r in reports:
            out.writerow({k: getattr(r, k) for k in REPORT_COLUMNS})
    return path


def read_table(path) -> list[EvalReport]:
    types = {f.name: f.type for f in fields(EvalReport)}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                t = types[k]
                kw[k] = int(v) if t in (int, "int") else float(v) if t in (float, "float") else v
            out.append(EvalReport(**kw))
    return out


def write_curves(stats, path) -> Path:
    """Per-epoch fairness, accuracy and cumulative time, epoch 0 included."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(CURVE_COLUMNS)
        for s in stats:
            out.writerow([s.epoch, s.fairness_pct, s.accuracy_pct, s.wall, s.loss])
    return path


def emit_report(reports, out_dir, fmt: str = "csv", curves: dict | None = None,
                stem: str = "results") -> list[Path]:
    """Write a results table and optional per-method curve files into ``out_dir``."""
    if not reports:
        raise ValueError("no reports to write")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        written.append(write_table(reports, out_dir / f"{stem}.csv"))
    elif fmt == "json":
        path = out_dir / f"{stem}.json"
        path.write_text(json.dumps([r.row() for r in reports], indent=2))
        written.append(path)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    for method, stats in (curves or {}).items():
        written.append(write_curves(stats, out_dir / f"curve_{method}.csv"))
    return written
