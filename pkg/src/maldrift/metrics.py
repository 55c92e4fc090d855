"""Time-aware metric engine.

Per-period confusion metrics, the trapezoidal area-under-time summary, rolling
train/test windows, the (mean, population-std) aggregate over splits, and the
representation-free family-overlap measure. Everything here is pure and
deterministic; series are accumulated left-to-right over sorted periods so
results are bit-stable regardless of worker count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Union

from .errors import MissingPredictionsError
from .ingest import PredictionSet
from .labeling import LabelRule, TimestampPolicy, label, timeline_date
from .model import ClassLabel, Granularity, Period, Population, period_of

METRIC_NAMES = ("f1", "fpr", "tpr", "precision", "recall")


@dataclass(frozen=True)
class MetricSeries:
    """An ordered (period, value) series; absent values are explicit Nones."""

    name: str
    points: tuple[tuple[Period, Optional[float]], ...]

    def __post_init__(self) -> None:
        last = None
        for period, value in self.points:
            if last is not None:
                if period.granularity is not last.granularity:
                    raise ValueError("series mixes period granularities")
                if period.index <= last.index:
                    raise ValueError("series periods must be strictly ascending")
            last = period
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"metric value {value} outside [0,1]")

    def periods(self) -> list[Period]:
        return [p for p, _ in self.points]

    def values(self) -> list[Optional[float]]:
        return [v for _, v in self.points]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def metric(self, name: str) -> Optional[float]:
        tp, fp, tn, fn = self.tp, self.fp, self.tn, self.fn
        if name == "f1":
            return 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else None
        if name == "fpr":
            return fp / (fp + tn) if (fp + tn) else None
        if name in ("tpr", "recall"):
            return tp / (tp + fn) if (tp + fn) else None
        if name == "precision":
            return tp / (tp + fp) if (tp + fp) else None
        raise ValueError(f"unknown metric {name!r}")


@dataclass(frozen=True)
class ConfusionReport:
    counts: dict[Period, ConfusionCounts]
    series: dict[str, MetricSeries]
    dropped: tuple[str, ...] = ()


TruthEntry = tuple[str, ClassLabel, Period]


def confusion_metrics(
    truth: Iterable[TruthEntry],
    preds: PredictionSet,
    granularity: Optional[Granularity] = None,
    lenient: bool = False,
) -> ConfusionReport:
    """Per-period confusion counts and derived metrics; positives are malware.

    Every truth hash needs a prediction: missing ones raise (with the hash
    list) unless lenient, in which case they are dropped and counted.
    Empty-denominator metrics are explicit absent values, never silent zeros.
    """
    raw: dict[Period, list[int]] = {}
    missing: list[str] = []
    for sha, cls, period in truth:
        if cls is ClassLabel.GREYWARE:
            raise ValueError(f"greyware entry {sha} cannot be scored")
        if granularity is Granularity.YEAR:
            period = period.year_period()
        if sha not in preds.rows:
            missing.append(sha)
            continue
        predicted = preds.predicted(sha)
        actual = 1 if cls is ClassLabel.MALWARE else 0
        cell = raw.setdefault(period, [0, 0, 0, 0])  # tp fp tn fn
        if actual and predicted:
            cell[0] += 1
        elif not actual and predicted:
            cell[1] += 1
        elif not actual and not predicted:
            cell[2] += 1
        else:
            cell[3] += 1
    if missing and not lenient:
        shown = ", ".join(missing[:10])
        raise MissingPredictionsError(
            f"{len(missing)} truth hashes lack predictions (e.g. {shown})", tuple(missing)
        )
    ordered = sorted(raw, key=lambda p: p.index)
    counts = {p: ConfusionCounts(*raw[p]) for p in ordered}
    series = {
        name: MetricSeries(name, tuple((p, counts[p].metric(name)) for p in ordered))
        for name in METRIC_NAMES
    }
    return ConfusionReport(counts, series, tuple(missing))


def aut(series: Union[MetricSeries, Sequence[float]]) -> float:
    """Trapezoidal mean of a unit-spaced series; the single-point case is the value itself.

    Absent values are refused rather than silently interpolated.
    """
    if isinstance(series, MetricSeries):
        values = series.values()
    else:
        values = list(series)
    if not values:
        raise ValueError("aut of an empty series")
    if any(v is None for v in values):
        raise ValueError("aut refuses series with absent values")
    if len(values) == 1:
        return float(values[0])
    acc = 0.0
    for left, right in zip(values, values[1:]):
        acc += (left + right) / 2.0
    return acc / (len(values) - 1)


@dataclass(frozen=True)
class Split:
    train: tuple[Period, ...]
    test: tuple[Period, ...]

    def label(self) -> str:
        if (
            len(self.train) == 12
            and len(self.test) == 12
            and self.train[0].month == 1
            and self.test[0].month == 1
        ):
            return f"{self.train[0].year}|{self.test[0].year}"
        return (
            f"{self.train[0]}..{self.train[-1]}|{self.test[0]}..{self.test[-1]}"
        )


@dataclass(frozen=True)
class SplitPlan:
    window_months: int
    splits: tuple[Split, ...]


def rolling_splits(
    start: Period, end: Period, window_months: int, allow_partial_last: bool = False
) -> SplitPlan:
    """Consecutive train/test windows of N months each, advancing by N.

    Training on [t, t+N) and testing on [t+N, t+2N); a trailing test window
    shorter than N months is included only when explicitly allowed.
    """
    if start.granularity is not Granularity.MONTH or end.granularity is not Granularity.MONTH:
        raise ValueError("rolling splits require month periods")
    if window_months < 1:
        raise ValueError(f"window must be >= 1 month, got {window_months}")
    span = end.index - start.index + 1
    if span < 2 * window_months:
        raise ValueError(
            f"range of {span} months cannot hold a {window_months}-month train/test pair"
        )
    splits = []
    t = start.index
    while t + 2 * window_months - 1 <= end.index:
        train = tuple(Period(Granularity.MONTH, i) for i in range(t, t + window_months))
        test = tuple(
            Period(Granularity.MONTH, i) for i in range(t + window_months, t + 2 * window_months)
        )
        splits.append(Split(train, test))
        t += window_months
    if allow_partial_last and t + window_months <= end.index:
        train = tuple(Period(Granularity.MONTH, i) for i in range(t, t + window_months))
        test = tuple(
            Period(Granularity.MONTH, i) for i in range(t + window_months, end.index + 1)
        )
        splits.append(Split(train, test))
    return SplitPlan(window_months, tuple(splits))


def a_aut(aut_values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation of per-split AUT scores."""
    values = list(aut_values)
    if not values:
        raise ValueError("a_aut of an empty list")
    if min(values) == max(values):
        return float(values[0]), 0.0  # exact for constant lists
    mu = sum(values) / len(values)
    sigma = math.sqrt(sum((v - mu) ** 2 for v in values) / len(values))
    return mu, sigma


@dataclass(frozen=True)
class OverlapResult:
    phi: float
    total: int
    matched: int
    unlabeled: int


def family_overlap_detail(
    families: Sequence[Optional[str]], ref_families: Iterable[Optional[str]]
) -> OverlapResult:
    """Fraction of a slice's samples whose family already exists in the reference.

    Samples without a family label cannot match and are reported separately.
    """
    if not families:
        raise ValueError("family overlap of an empty slice")
    known = {f for f in ref_families if f is not None}
    matched = sum(1 for f in families if f is not None and f in known)
    unlabeled = sum(1 for f in families if f is None)
    return OverlapResult(matched / len(families), len(families), matched, unlabeled)


def family_overlap(
    families: Sequence[Optional[str]], ref_families: Iterable[Optional[str]]
) -> float:
    return family_overlap_detail(families, ref_families).phi


def malware_families_by_period(
    pop: Population,
    rule: LabelRule,
    policy: TimestampPolicy,
    granularity: Granularity = Granularity.MONTH,
) -> dict[Period, list[Optional[str]]]:
    """Family labels of every datable malware record, grouped by period."""
    out: dict[Period, list[Optional[str]]] = {}
    for rec in pop:
        if label(rec, rule) is not ClassLabel.MALWARE:
            continue
        ts = timeline_date(rec, policy)
        if ts is None:
            continue
        out.setdefault(period_of(ts, granularity), []).append(rec.family)
    return out


def overlap_series(
    families_by_period: Mapping[Period, Sequence[Optional[str]]],
    ref_period: Period,
    test_periods: Sequence[Period],
) -> MetricSeries:
    """Family overlap of each test period's malware against a reference period."""
    ref = families_by_period.get(ref_period)
    if not ref:
        raise ValueError(f"reference period {ref_period} has no malware")
    points = []
    for period in sorted(test_periods, key=lambda p: p.index):
        slice_families = families_by_period.get(period)
        if not slice_families:
            raise ValueError(f"test period {period} has no malware")
        points.append((period, family_overlap(slice_families, ref)))
    return MetricSeries("family_overlap", tuple(points))
