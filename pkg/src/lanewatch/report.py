"""Comparison reporting for paired simulation runs.

Recomputes metrics from trace files, writes a side-by-side summary (text and
CSV), and renders the four standard comparison figures (EV/TV velocity and
acceleration over time, aligned so t = 0 is the lane-marking crossing when
one run contains it).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .sim import ScenarioMetrics, ScenarioTrace, metrics_from_trace

_METRIC_ROWS = (
    ("anticipation_horizon", "anticipation horizon [s]"),
    ("ev_brake_lead", "EV brake lead [s]"),
    ("first_llc_time", "first LLC prediction [s]"),
    ("crossing_time", "lane-marking crossing [s]"),
    ("ev_brake_onset_time", "EV brake onset [s]"),
    ("tv_emergency_onset_time", "TV emergency onset [s]"),
    ("tv_min_accel", "TV min acceleration [m/s^2]"),
    ("min_gap_tv_ev", "min TV-EV gap [m]"),
    ("min_gap_tv_pv", "min TV-PV gap [m]"),
    ("collision_flag", "collision"),
)

_FIGURES = (
    ("ev_velocity", "EV velocity", "velocity [m/s]", lambda r: r.ev_v),
    ("ev_acceleration", "EV acceleration", "acceleration [m/s^2]", lambda r: r.ev_a),
    ("tv_velocity", "TV velocity", "velocity [m/s]", lambda r: r.tv_v),
    ("tv_acceleration", "TV acceleration", "acceleration [m/s^2]", lambda r: r.tv_a),
)


@dataclass(frozen=True)
class RunReport:
    path: str
    label: str
    trace: ScenarioTrace
    metrics: ScenarioMetrics


def _run_label(trace: ScenarioTrace) -> str:
    return "with prediction" if trace.config.prediction_enabled else "without prediction"


def load_runs(trace_paths: Sequence[str]) -> list[RunReport]:
    runs = []
    for path in trace_paths:
        trace = ScenarioTrace.load_csv(path)
        runs.append(RunReport(str(path), _run_label(trace), trace, metrics_from_trace(trace)))
    _warn_on_mismatched_configs(runs)
    return runs


def _warn_on_mismatched_configs(runs: Sequence[RunReport]) -> None:
    if len(runs) < 2:
        return
    base = {k: v for k, v in runs[0].trace.config.to_dict().items() if k != "prediction_enabled"}
    for run in runs[1:]:
        other = {k: v for k, v in run.trace.config.to_dict().items() if k != "prediction_enabled"}
        if other != base:
            differing = sorted(k for k in base if base[k] != other.get(k))
            warnings.warn(
                f"trace configs differ beyond prediction_enabled ({run.path}): {differing}",
                stacklevel=2,
            )


def _format_value(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def summary_table(runs: Sequence[RunReport]) -> str:
    """Plain-text metric table, one column per run."""
    headers = ["metric"] + [r.label for r in runs]
    rows = []
    for key, title in _METRIC_ROWS:
        rows.append([title] + [_format_value(getattr(r.metrics, key)) for r in runs])
    widths = [max(len(row[i]) for row in [headers] + rows) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def save_summary_csv(runs: Sequence[RunReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric"] + [r.label for r in runs])
        for key, _ in _METRIC_ROWS:
            writer.writerow([key] + [
                "" if getattr(r.metrics, key) is None else getattr(r.metrics, key) for r in runs
            ])


def _time_origin(runs: Sequence[RunReport]) -> float:
    for run in runs:
        if run.metrics.crossing_time is not None:
            return run.metrics.crossing_time
    return 0.0


def render_figures(runs: Sequence[RunReport], out_dir) -> list[Path]:
    """Write the four comparison PNGs; returns the created paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    origin = _time_origin(runs)
    created = []
    for stem, title, ylabel, getter in _FIGURES:
        fig, ax = plt.subplots(figsize=(6.0, 3.6))
        for run in runs:
            times = [r.t - origin for r in run.trace.records]
            ax.plot(times, [getter(r) for r in run.trace.records], label=run.label)
        ax.axvline(0.0, color="gray", linewidth=0.8, linestyle="--")
        ax.set_title(title)
        ax.set_xlabel("time relative to lane-marking crossing [s]" if origin else "time [s]")
        ax.set_ylabel(ylabel)
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"{stem}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        created.append(path)
    return created


def write_report(trace_paths: Sequence[str], out_dir) -> dict:
    """Full report: summary.txt, summary.csv, and the four figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = load_runs(trace_paths)
    text = summary_table(runs)
    (out_dir / "summary.txt").write_text(text, encoding="utf-8")
    save_summary_csv(runs, out_dir / "summary.csv")
    figures = render_figures(runs, out_dir)
    return {
        "summary_txt": str(out_dir / "summary.txt"),
        "summary_csv": str(out_dir / "summary.csv"),
        "figures": [str(p) for p in figures],
        "text": text,
    }
