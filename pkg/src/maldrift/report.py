"""Evaluation reports and rendering.

Builds the rolling-window evaluation grid (per-split AUT columns plus the
mean/std aggregate) from a manifest and prediction sets, or directly from
published per-split AUT values. Report floats are printed at 4 decimals with
a 2-decimal display column; prediction sets are ranked by mean descending,
ties broken by std ascending.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Optional, Sequence, Union

from .errors import MissingPredictionsError
from .ingest import PredictionSet
from .metrics import (
    MetricSeries,
    a_aut,
    aut,
    confusion_metrics,
    family_overlap,
    rolling_splits,
)
from .model import ClassLabel, Granularity
from .sampler import DatasetManifest
from .version import __version__


def fmt4(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.4f}"


def fmt2(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.2f}"


@dataclass(frozen=True)
class PredsetResult:
    """Per-split AUT values and their aggregate for one prediction set."""

    name: str
    auts: tuple[float, ...]
    mu: float
    sigma: float
    auts_strict: tuple[Optional[float], ...] = ()
    strict_differs: bool = False


@dataclass(frozen=True)
class EvaluationReport:
    window_months: int
    split_labels: tuple[str, ...]
    results: tuple[PredsetResult, ...]
    window_series: dict[tuple[str, int], dict[str, MetricSeries]]
    # per split: overlap of each test month's malware families with the
    # training window's families (prediction-independent drift view)
    overlap_series: dict[int, MetricSeries] = field(default_factory=dict)


def _rank(results: list[PredsetResult]) -> tuple[PredsetResult, ...]:
    return tuple(sorted(results, key=lambda r: (-r.mu, r.sigma)))


def evaluate_manifest(
    manifest: DatasetManifest,
    predsets: Sequence[PredictionSet],
    window_months: int,
    metric: str = "f1",
    lenient: bool = False,
    allow_partial_last: bool = False,
) -> EvaluationReport:
    """Rolling-window evaluation of prediction sets against a manifest.

    Each split's AUT is computed over the test months with a defined metric
    value; the all-months variant is reported alongside when it differs
    (it is refused, not interpolated, when a month is absent).
    """
    periods = {e.period for e in manifest.entries}
    if not periods:
        raise ValueError("manifest has no entries to evaluate")
    if any(p.granularity is not Granularity.MONTH for p in periods):
        raise ValueError("temporal evaluation requires a monthly manifest")
    plan = rolling_splits(
        min(periods, key=lambda p: p.index),
        max(periods, key=lambda p: p.index),
        window_months,
        allow_partial_last,
    )
    manifest_hashes = manifest.hashes()
    by_period = manifest.by_period()

    overlap: dict[int, MetricSeries] = {}
    for idx, split in enumerate(plan.splits):
        train_families = [
            e.family
            for month in split.train
            for e in by_period.get(month, [])
            if e.label is ClassLabel.MALWARE
        ]
        points = []
        for month in split.test:
            month_families = [
                e.family for e in by_period.get(month, []) if e.label is ClassLabel.MALWARE
            ]
            value = family_overlap(month_families, train_families) if month_families else None
            points.append((month, value))
        overlap[idx] = MetricSeries("family_overlap", tuple(points))

    results = []
    window_series: dict[tuple[str, int], dict[str, MetricSeries]] = {}
    for preds in predsets:
        extras = set(preds.rows) - manifest_hashes
        if extras and not lenient:
            shown = ", ".join(sorted(extras)[:10])
            raise MissingPredictionsError(
                f"{len(extras)} prediction hashes do not resolve against the manifest (e.g. {shown})",
                tuple(sorted(extras)),
            )
        auts: list[float] = []
        stricts: list[Optional[float]] = []
        for idx, split in enumerate(plan.splits):
            truth = [
                (e.sha256, e.label, e.period)
                for month in split.test
                for e in by_period.get(month, [])
            ]
            if not truth:
                raise ValueError(f"split {split.label()} has no test entries")
            report = confusion_metrics(truth, preds, lenient=lenient)
            window_series[(preds.name, idx)] = report.series
            series = report.series[metric]
            strict_points = dict(series.points)
            strict_values = [strict_points.get(month) for month in split.test]
            defined = [v for v in strict_values if v is not None]
            if not defined:
                raise ValueError(
                    f"split {split.label()} has no defined {metric} value for {preds.name}"
                )
            auts.append(aut(defined))
            stricts.append(aut(strict_values) if all(v is not None for v in strict_values) else None)
        mu, sigma = a_aut(auts)
        strict_differs = any(
            s is None or abs(s - a) > 1e-12 for s, a in zip(stricts, auts)
        )
        results.append(
            PredsetResult(preds.name, tuple(auts), mu, sigma, tuple(stricts), strict_differs)
        )
    labels = tuple(split.label() for split in plan.splits)
    return EvaluationReport(window_months, labels, _rank(results), window_series, overlap)


def report_from_aut_table(
    rows: Sequence[tuple[str, Sequence[float]]], window_months: int = 12
) -> EvaluationReport:
    """Aggregate already-computed per-split AUT values into the report grid."""
    if not rows:
        raise ValueError("empty AUT table")
    width = len(rows[0][1])
    if width == 0 or any(len(auts) != width for _, auts in rows):
        raise ValueError("all rows must carry the same non-zero number of AUT values")
    results = []
    for name, auts in rows:
        mu, sigma = a_aut(list(auts))
        results.append(PredsetResult(name, tuple(auts), mu, sigma))
    labels = tuple(f"split{i + 1}" for i in range(width))
    return EvaluationReport(window_months, labels, _rank(results), {})


def render_aut_markdown(report: EvaluationReport) -> str:
    headers = ["classifier", *report.split_labels, "mu_aut", "sigma_aut", "mu", "sigma"]
    lines = ["| " + " | ".join(headers) + " |", "|" + "---|" * len(headers)]
    for row in report.results:
        cells = [row.name]
        cells.extend(fmt4(v) for v in row.auts)
        cells.extend([fmt4(row.mu), fmt4(row.sigma), fmt2(row.mu), fmt2(row.sigma)])
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def aut_table_rows(report: EvaluationReport) -> tuple[list[str], list[list[str]]]:
    header = ["classifier", *report.split_labels, "mu_aut", "sigma_aut", "mu_2dp", "sigma_2dp"]
    rows = []
    for row in report.results:
        rows.append(
            [row.name, *(fmt4(v) for v in row.auts), fmt4(row.mu), fmt4(row.sigma), fmt2(row.mu), fmt2(row.sigma)]
        )
    return header, rows


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "window_months": report.window_months,
        "split_labels": list(report.split_labels),
        "family_overlap": {
            report.split_labels[idx]: [
                {"period": str(p), "value": None if v is None else round(v, 6)}
                for p, v in series.points
            ]
            for idx, series in sorted(report.overlap_series.items())
        },
        "results": [
            {
                "name": r.name,
                "aut_by_split": [round(v, 6) for v in r.auts],
                "mu_aut": round(r.mu, 6),
                "sigma_aut": round(r.sigma, 6),
                "mu_aut_2dp": float(fmt2(r.mu)),
                "sigma_aut_2dp": float(fmt2(r.sigma)),
                "aut_all_months": [None if v is None else round(v, 6) for v in r.auts_strict],
                "all_months_variant_differs": r.strict_differs,
            }
            for r in report.results
        ],
    }


def write_window_series_csv(report: EvaluationReport, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(("predictions", "split", "period", "metric", "value"))
    for (name, split_idx), series_map in sorted(report.window_series.items()):
        for metric_name, series in sorted(series_map.items()):
            for period, value in series.points:
                writer.writerow((name, split_idx, str(period), metric_name, fmt4(value)))


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_run_config(out_dir: Union[str, Path], command: str, config: dict) -> Path:
    """Echo the fully-resolved run configuration next to the outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"tool_version": __version__, "command": command, "config": config}
    path = out_dir / "run_config.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
