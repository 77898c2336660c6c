"""Aggregate a run directory's metrics CSVs into one human-readable summary.

The summary quotes reference values reported for the full-scale system on
public driving benchmarks (NAVSIM, nuScenes). Those numbers come from a
different benchmark, data scale, and scoring protocol and are quoted for
orientation only — they are never comparable to results on the synthetic
desk benchmark.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .ablation import ABLATION_COLUMNS, plot_ablation, read_ablation_csv
from .metrics import METRIC_COLUMNS, read_metrics

REFERENCE_HEADLINE = (
    ("NAVSIM PDMS (full-scale system)", "89.1"),
    ("nuScenes avg L2, meters (full-scale system)", "0.33"),
)
REFERENCE_ROUNDS = "full-scale NAVSIM ablation peaked at K=4 rounds (PDMS 87.9)"
REFERENCE_COUPLING = (
    ("full", "87.9"),
    ("no_world_to_action", "84.9"),
    ("no_action_to_world", "81.6"),
)
REFERENCE_COMPONENTS = (
    ("base", "82.9"),
    ("+resampler", "82.8"),
    ("+predictor", "85.2"),
    ("+interactive", "87.9"),
)
_NOT_COMPARABLE = (
    "PDMS on real data at full scale — not comparable to desk-scale L2/collision"
)


def _csv_header(path: Path) -> tuple[str, ...]:
    with path.open(newline="") as f:
        row = next(csv.reader(f), None)
    return tuple(row or ())


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def _metrics_section(path: Path, rel: Path) -> list[str]:
    records = read_metrics(path)
    lines = [f"## Planning metrics: `{rel}`", ""]
    lines.append("| " + " | ".join(METRIC_COLUMNS) + " |")
    lines.append("|" + "---|" * len(METRIC_COLUMNS))
    for r in records:
        cells = [
            r.config_fingerprint[:12],
            str(r.seed),
            *(f"{getattr(r, c):.4f}" for c in METRIC_COLUMNS[2:]),
        ]
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    return lines


def _ablation_section(path: Path, rel: Path, out_dir: Path) -> list[str]:
    rows = read_ablation_csv(path)
    axis = rows[0]["axis"]
    lines = [f"## Ablation `{axis}`: `{rel}`", ""]

    by_value: dict[str, list[dict]] = defaultdict(list)
    order: list[str] = []
    for r in rows:
        if r["value"] not in by_value:
            order.append(r["value"])
        by_value[r["value"]].append(r)

    lines.append("| value | seeds | l2_avg (m) | col_avg | latency_ms |")
    lines.append("|---|---|---|---|---|")
    summary = {}
    for value in order:
        group = by_value[value]
        cells = [str(value), str(len(group))]
        for metric in ("l2_avg", "col_avg", "latency_ms"):
            mean, std = _mean_std([g[metric] for g in group])
            summary.setdefault(value, {})[metric] = mean
            cells.append(f"{mean:.4f} ± {std:.4f}")
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")

    if axis == "rounds":
        best = min(order, key=lambda v: summary[v]["l2_avg"])
        lines.append(
            f"**Best round count on this benchmark: K={best}** "
            f"(mean avg L2 {summary[best]['l2_avg']:.4f} m). "
            f"Reference: {REFERENCE_ROUNDS} ({_NOT_COMPARABLE})."
        )
        lines.append("")
    elif axis == "coupling":
        lines.append(f"Full-scale PDMS references ({_NOT_COMPARABLE}):")
        lines.extend(f"- {name}: {val}" for name, val in REFERENCE_COUPLING)
        lines.append("")
    elif axis == "components":
        lines.append(f"Full-scale PDMS references ({_NOT_COMPARABLE}):")
        lines.extend(f"- {name}: {val}" for name, val in REFERENCE_COMPONENTS)
        lines.append("")

    plots = plot_ablation(rows, axis, out_dir)
    for p in plots:
        lines.append(f"![{p.stem}]({p.name})")
    lines.append("")
    return lines


def write_report(run_dir: str | Path, out_path: str | Path | None = None) -> Path:
    """Scan ``run_dir`` recursively for metrics/ablation CSVs and write a
    markdown summary (default ``run_dir/report.md``)."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"no run directory at {run_dir}")
    out_path = Path(out_path) if out_path is not None else run_dir / "report.md"

    metric_files, ablation_files = [], []
    for path in sorted(run_dir.rglob("*.csv")):
        header = _csv_header(path)
        if header == METRIC_COLUMNS:
            metric_files.append(path)
        elif header == ABLATION_COLUMNS:
            ablation_files.append(path)
    if not metric_files and not ablation_files:
        raise ValueError(f"{run_dir}: no metrics CSVs found")

    lines = ["# Desk benchmark summary", ""]
    lines.append(f"Aggregated from `{run_dir}`.")
    lines.append("")
    lines.append("## Full-scale reference values (not comparable)")
    lines.append("")
    lines.append(
        "Scores reported for the full-scale system on public benchmarks. They "
        "use different data, model scale, and scoring (PDMS is not implemented "
        "here) and are quoted for orientation only:"
    )
    lines.extend(f"- {name}: {val}" for name, val in REFERENCE_HEADLINE)
    lines.append("")

    for path in metric_files:
        lines.extend(_metrics_section(path, path.relative_to(run_dir)))
    for path in ablation_files:
        lines.extend(
            _ablation_section(path, path.relative_to(run_dir), out_path.parent)
        )

    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines))
    return out_path
