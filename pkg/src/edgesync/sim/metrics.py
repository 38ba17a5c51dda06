"""Headline numbers and output files derived from a simulation trace.

Every number here is a function of the per-sample trace and the cycle
records alone, so a report can be rebuilt from ``trace.csv`` and
``metrics.csv`` without rerunning anything.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .kernel import CycleRecord, SimulationResult

COMPONENTS = ("t_filter", "t_upload", "t_label", "t_profile", "t_train", "t_download", "t_idle")
CYCLE_FIELDS = (
    "cycle_index", "edge_id", "start", *COMPONENTS, "total", "samples_uploaded",
    "window_size", "train_samples", "d_at_selection", "epochs", "best_epoch",
    "stop_reason", "installed",
)
TRACE_FIELDS = ("edge_id", "seq", "arrival_time", "true_label", "predicted_label", "model_version")


@dataclass
class MetricsReport:
    policy: str
    num_edges: int
    duration: float
    accuracy: float
    edge_accuracy: list
    cycles: int
    mean_cycle_time: float
    mean_components: dict
    upload_bytes: int
    download_bytes: int
    upload_bps: float
    download_bps: float
    series_times: np.ndarray
    series_accuracy: np.ndarray


def accuracy_series(times: np.ndarray, correct: np.ndarray, duration: float, resolution: float) -> tuple[np.ndarray, np.ndarray]:
    """Accuracy over consecutive bins of ``resolution`` seconds (bin end times; NaN for empty bins)."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    nbins = max(1, int(np.ceil(duration / resolution)))
    bins = np.minimum((np.asarray(times) // resolution).astype(np.int64), nbins - 1)
    hits = np.bincount(bins, weights=correct.astype(float), minlength=nbins)
    counts = np.bincount(bins, minlength=nbins)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    return (np.arange(nbins) + 1) * resolution, acc


def build_report(
    policy: str,
    duration: float,
    times: Sequence[np.ndarray],
    correct: Sequence[np.ndarray],
    cycles: Sequence[CycleRecord],
    upload_bytes: int,
    download_bytes: int,
    resolution: float = 50.0,
) -> MetricsReport:
    all_correct = np.concatenate([np.asarray(c, dtype=bool) for c in correct]) if correct else np.zeros(0, bool)
    all_times = np.concatenate([np.asarray(t, dtype=float) for t in times]) if times else np.zeros(0)
    edge_acc = [float(np.mean(c)) if len(c) else float("nan") for c in correct]
    acc = float(np.mean(all_correct)) if len(all_correct) else float("nan")
    if cycles:
        mean_cycle = float(np.mean([c.total for c in cycles]))
        comps = {k: float(np.mean([getattr(c, k) for c in cycles])) for k in COMPONENTS}
    else:
        mean_cycle = float("nan")
        comps = {k: float("nan") for k in COMPONENTS}
    st, sa = accuracy_series(all_times, all_correct, duration, resolution)
    rate = (lambda b: b * 8 / duration) if duration > 0 else (lambda b: 0.0)
    return MetricsReport(
        policy=policy,
        num_edges=len(correct),
        duration=duration,
        accuracy=acc,
        edge_accuracy=edge_acc,
        cycles=len(cycles),
        mean_cycle_time=mean_cycle,
        mean_components=comps,
        upload_bytes=int(upload_bytes),
        download_bytes=int(download_bytes),
        upload_bps=float(rate(upload_bytes)),
        download_bps=float(rate(download_bytes)),
        series_times=st,
        series_accuracy=sa,
    )


def metrics_report(result: SimulationResult, resolution: float = 50.0) -> MetricsReport:
    """Accuracy, cycle timing and bandwidth for one finished run."""
    return build_report(
        result.policy, result.duration, result.arrival_times,
        [result.correct(e) for e in range(result.num_edges)],
        result.cycles, result.upload_bytes, result.download_bytes, resolution,
    )


# -- files -----------------------------------------------------------------------


def fmt(value) -> str:
    """Deterministic text for a number: ``repr`` for floats, ``str`` otherwise."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def atomic_write(path: str, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file in the same directory and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cycles_csv(cycles: Sequence[CycleRecord], num_edges: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*CYCLE_FIELDS, *(f"urgency_{e}" for e in range(num_edges))])
    for c in cycles:
        row = [fmt(c.total if f == "total" else getattr(c, f)) for f in CYCLE_FIELDS]
        row += [fmt(c.urgency.get(e, float("nan"))) for e in range(num_edges)]
        w.writerow(row)
    return buf.getvalue()


def trace_csv(result: SimulationResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_FIELDS)
    for e in range(result.num_edges):
        t, y, p, v = result.arrival_times[e], result.true_labels[e], result.predictions[e], result.model_versions[e]
        for j in range(len(t)):
            w.writerow((e, j, fmt(t[j]), int(y[j]), int(p[j]), int(v[j])))
    return buf.getvalue()


def summary_text(report: MetricsReport) -> str:
    lines = [
        f"policy = {report.policy}",
        f"edges = {report.num_edges}",
        f"duration_s = {fmt(report.duration)}",
        f"accuracy = {fmt(report.accuracy)}",
        *(f"accuracy_edge_{e} = {fmt(a)}" for e, a in enumerate(report.edge_accuracy)),
        f"cycles = {report.cycles}",
        f"mean_cycle_time_s = {fmt(report.mean_cycle_time)}",
        *(f"mean_{k}_s = {fmt(v)}" for k, v in report.mean_components.items()),
        f"upload_bytes = {report.upload_bytes}",
        f"download_bytes = {report.download_bytes}",
        f"upload_bps = {fmt(report.upload_bps)}",
        f"download_bps = {fmt(report.download_bps)}",
    ]
    return "\n".join(lines) + "\n"


def write_outputs(result: SimulationResult, out_dir: str, trace: bool = False, resolution: float = 50.0) -> MetricsReport:
    """Write ``metrics.csv``, ``summary.txt`` and optionally ``trace.csv``."""
    report = metrics_report(result, resolution)
    atomic_write(os.path.join(out_dir, "metrics.csv"), cycles_csv(result.cycles, result.num_edges))
    atomic_write(os.path.join(out_dir, "summary.txt"), summary_text(report))
    if trace:
        atomic_write(os.path.join(out_dir, "trace.csv"), trace_csv(result))
    return report


def read_cycles(path: str) -> list[CycleRecord]:
    """Parse ``metrics.csv`` back into cycle records."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = CycleRecord(edge_id=int(row["edge_id"]), cycle_index=int(row["cycle_index"]), start=float(row["start"]))
            for k in COMPONENTS:
                setattr(rec, k, float(row[k]))
            for k in ("samples_uploaded", "window_size", "train_samples", "epochs", "best_epoch"):
                setattr(rec, k, int(row[k]))
            rec.d_at_selection = float(row["d_at_selection"])
            rec.stop_reason = row["stop_reason"]
            rec.installed = row["installed"] == "1"
            rec.urgency = {int(k[8:]): float(v) for k, v in row.items() if k.startswith("urgency_")}
            out.append(rec)
    return out


def report_from_files(
    trace_path: str,
    metrics_path: str,
    policy: str,
    duration: float,
    upload_bytes: int,
    download_bytes: int,
    resolution: float = 50.0,
    num_edges: Optional[int] = None,
) -> MetricsReport:
    """Rebuild a report from ``trace.csv`` and ``metrics.csv``."""
    data = np.loadtxt(trace_path, delimiter=",", skiprows=1, ndmin=2)
    edges = data[:, 0].astype(int)
    k = num_edges if num_edges is not None else (int(edges.max()) + 1 if len(edges) else 0)
    times, correct = [], []
    for e in range(k):
        rows = data[edges == e]
        times.append(rows[:, 2])
        correct.append(rows[:, 3] == rows[:, 4])
    return build_report(policy, duration, times, correct, read_cycles(metrics_path),
                        upload_bytes, download_bytes, resolution)
