"""Reproducible stratified sampling with constraint verification.

Selection is input-order independent: candidates are keyed by sorted sha256,
shuffled with a generator derived from (seed, period, class), and taken as a
prefix. Identical population content, parameters, and seed therefore yield a
byte-identical manifest, serially or across worker threads.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import IO, Optional, Union

import numpy as np

from .labeling import (
    LabelRule,
    TimestampKind,
    TimestampPolicy,
    label,
    market_consistency_from_pairs,
    timeline_date,
)
from .model import ClassLabel, Granularity, Period, Population, format_timestamp, period_of
from .sizing import PlanMode, SizingParams, SizingPlan, SizingResult, round_half_up
from .version import __version__

_GRAN_CODE = {Granularity.MONTH: 0, Granularity.YEAR: 1}
_CLASS_CODE = {None: 0, ClassLabel.GOODWARE: 1, ClassLabel.MALWARE: 2}
_GLOBAL_PERIOD_CODE = 10**6


@dataclass(frozen=True)
class ManifestEntry:
    sha256: str
    label: ClassLabel
    period: Period
    markets: frozenset[str]
    family: Optional[str] = None


@dataclass(frozen=True)
class StratumFill:
    period: Optional[Period]
    label: Optional[ClassLabel]
    requested: int
    sampled: int
    note: str = ""

    @property
    def shortfall(self) -> int:
        return self.requested - self.sampled


@dataclass(frozen=True)
class DatasetManifest:
    """The reproducible output of a sampling run: entries plus full parameter echo."""

    entries: tuple[ManifestEntry, ...]
    spec: dict
    created: str
    strata: tuple[StratumFill, ...] = ()
    checks: tuple[dict, ...] = ()
    violations: tuple[dict, ...] = ()

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for entry in self.entries:
            if entry.sha256 in seen:
                raise ValueError(f"duplicate sha256 in manifest: {entry.sha256}")
            seen.add(entry.sha256)

    def hashes(self) -> set[str]:
        return {e.sha256 for e in self.entries}

    def by_period(self) -> dict[Period, list[ManifestEntry]]:
        out: dict[Period, list[ManifestEntry]] = {}
        for entry in self.entries:
            out.setdefault(entry.period, []).append(entry)
        return out


def _sort_entries(entries: list[ManifestEntry]) -> tuple[ManifestEntry, ...]:
    return tuple(sorted(entries, key=lambda e: (e.period.index, e.label.value, e.sha256)))


def build_spec_echo(
    rule: LabelRule,
    policy: TimestampPolicy,
    plan: Optional[SizingPlan],
    params: Optional[SizingParams],
    seed: int,
    snapshot_date: Optional[datetime] = None,
    market_filter: Optional[frozenset[str]] = None,
    extra: Optional[dict] = None,
) -> dict:
    echo = {
        "tool_version": __version__,
        "seed": seed,
        "rule": {"vtt": rule.vtt},
        "policy": {
            "kind": policy.kind.value,
            "fallback": policy.fallback.value if policy.fallback else None,
        },
        "plan": None
        if plan is None
        else {"mode": plan.mode.value, "spatial": plan.spatial, "ratio_malware": plan.ratio_malware},
        "params": None
        if params is None
        else {
            "confidence": params.confidence,
            "delta": params.delta,
            "p": params.p,
            "bonferroni_m": params.bonferroni_m,
        },
        "snapshot_date": format_timestamp(snapshot_date) if snapshot_date else None,
        "market_filter": sorted(market_filter) if market_filter else None,
    }
    if extra:
        echo.update(extra)
    return echo


def _stratum_rng(seed: int, granularity: Granularity, period: Optional[Period], cls: Optional[ClassLabel]) -> np.random.Generator:
    period_code = period.index if period is not None else _GLOBAL_PERIOD_CODE
    ss = np.random.SeedSequence([seed, _GRAN_CODE[granularity], period_code, _CLASS_CODE[cls]])
    return np.random.Generator(np.random.PCG64(ss))


def _take(candidates: list[ManifestEntry], count: int, rng: np.random.Generator) -> list[ManifestEntry]:
    ordered = sorted(candidates, key=lambda e: e.sha256)
    if count >= len(ordered):
        return ordered
    picks = rng.permutation(len(ordered))[:count]
    return [ordered[i] for i in picks]


def _default_created(entries: list[ManifestEntry], pop: Population) -> str:
    """Deterministic data-horizon stamp: the latest timestamp seen in the source.

    A wall-clock stamp would break byte-for-byte reproducibility of identical
    runs, so the manifest is dated by its data instead.
    """
    stamps = [rec.crawl_date for rec in pop if rec.crawl_date is not None]
    stamps.extend(rec.dex_date for rec in pop)
    return format_timestamp(max(stamps)) if stamps else "1970-01-01 00:00:00"


def stratified_sample(
    pop: Population,
    rule: LabelRule,
    policy: TimestampPolicy,
    sizing: SizingResult,
    seed: int,
    market_filter: Optional[frozenset[str]] = None,
    workers: int = 1,
    created: Optional[str] = None,
) -> DatasetManifest:
    """Draw the per-stratum counts of a sizing result as a reproducible manifest.

    Greyware and undatable records never enter the candidate pool; records
    sharing no tag with market_filter are excluded. Stratum shortfalls take
    all available candidates and are recorded, never backfilled from
    neighboring periods.
    """
    plan = sizing.plan
    stratum_gran = Granularity.YEAR if plan.mode is PlanMode.YEARLY else Granularity.MONTH
    pools: dict[tuple[Optional[Period], Optional[ClassLabel]], list[ManifestEntry]] = {}
    for rec in pop:
        cls = label(rec, rule)
        if cls is ClassLabel.GREYWARE:
            continue
        if market_filter and not (rec.markets & market_filter):
            continue
        ts = timeline_date(rec, policy)
        if ts is None:
            continue
        entry_period = period_of(ts, stratum_gran)
        stratum_period = None if plan.mode is PlanMode.GLOBAL else entry_period
        if plan.mode is PlanMode.GLOBAL:
            entry_period = period_of(ts, Granularity.MONTH)
        entry = ManifestEntry(rec.sha256, cls, entry_period, rec.markets, rec.family)
        key = (stratum_period, cls if plan.spatial else None)
        pools.setdefault(key, []).append(entry)
    if not pools:
        raise ValueError("empty candidate pool: no labeled, datable records to sample")

    tasks: list[tuple[Optional[Period], Optional[ClassLabel], int]] = []
    for stratum in sizing.strata:
        if plan.spatial:
            # echo the uncapped plan request so shortfalls stay visible here
            tasks.append(
                (stratum.period, ClassLabel.MALWARE, (stratum.malware or 0) + stratum.malware_shortfall)
            )
            tasks.append(
                (stratum.period, ClassLabel.GOODWARE, (stratum.goodware or 0) + stratum.goodware_shortfall)
            )
        else:
            tasks.append((stratum.period, None, stratum.n))

    def run(task: tuple[Optional[Period], Optional[ClassLabel], int]) -> tuple[StratumFill, list[ManifestEntry]]:
        period, cls, requested = task
        candidates = pools.get((period, cls), [])
        rng = _stratum_rng(seed, stratum_gran, period, cls)
        chosen = _take(candidates, requested, rng)
        return StratumFill(period, cls, requested, len(chosen)), chosen

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    fills = []
    entries: list[ManifestEntry] = []
    for fill, chosen in results:
        fills.append(fill)
        entries.extend(chosen)
    spec = build_spec_echo(
        rule, policy, plan, sizing.params, seed, pop.snapshot_date, market_filter
    )
    return DatasetManifest(
        entries=_sort_entries(entries),
        spec=spec,
        created=created if created is not None else _default_created(entries, pop),
        strata=tuple(fills),
    )


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    evidence: str


def verify_constraints(
    manifest: DatasetManifest,
    population: Optional[Population] = None,
    c3_tolerance: int = 1,
    market_threshold: float = 0.10,
) -> list[CheckResult]:
    """Check a manifest against the temporal/spatial/market constraints.

    C2: any period holding one class must hold the other (unless the plan
    requested zero). C3: per-period malware count within c3_tolerance of
    round(n * ratio). Market consistency: TV distance between class market
    distributions at most market_threshold. Timestamp policy: entries map
    into their recorded periods (full check needs the source population).
    """
    by_period = manifest.by_period()
    plan = manifest.spec.get("plan") or {}
    spatial = bool(plan.get("spatial"))
    ratio = float(plan.get("ratio_malware", 0.10))
    requested: dict[tuple[Optional[str], Optional[str]], int] = {}
    for fill in manifest.strata:
        key = (str(fill.period) if fill.period else None, fill.label.value if fill.label else None)
        requested[key] = fill.requested

    c2_bad = []
    for period in sorted(by_period, key=lambda p: p.index):
        entries = by_period[period]
        mw = sum(1 for e in entries if e.label is ClassLabel.MALWARE)
        gw = len(entries) - mw
        if spatial:
            req_mw = requested.get((str(period), ClassLabel.MALWARE.value))
            req_gw = requested.get((str(period), ClassLabel.GOODWARE.value))
        else:
            pooled = requested.get((str(period), None))
            req_mw = req_gw = pooled
        if mw == 0 and (req_mw is None or req_mw > 0):
            c2_bad.append(f"{period}: no malware")
        if gw == 0 and (req_gw is None or req_gw > 0):
            c2_bad.append(f"{period}: no goodware")
    checks = [
        CheckResult(
            "C2",
            not c2_bad,
            "all periods hold both classes" if not c2_bad else "; ".join(c2_bad[:5]),
        )
    ]

    c3_bad = []
    for period in sorted(by_period, key=lambda p: p.index):
        entries = by_period[period]
        mw = sum(1 for e in entries if e.label is ClassLabel.MALWARE)
        expected = round_half_up(len(entries) * ratio)
        if abs(mw - expected) > c3_tolerance:
            c3_bad.append(f"{period}: {mw} malware, expected {expected}±{c3_tolerance}")
    checks.append(
        CheckResult(
            "C3",
            not c3_bad,
            f"per-period malware within ±{c3_tolerance} of round(n·{ratio})"
            if not c3_bad
            else "; ".join(c3_bad[:5]),
        )
    )

    try:
        consistency = market_consistency_from_pairs(
            ((e.markets, e.label) for e in manifest.entries), threshold=market_threshold
        )
        checks.append(
            CheckResult(
                "market_consistency",
                consistency.passed,
                f"tv_distance={consistency.tv_distance:.4f} (threshold {market_threshold})",
            )
        )
    except ValueError as exc:
        checks.append(CheckResult("market_consistency", False, str(exc)))

    if population is None:
        checks.append(
            CheckResult(
                "timestamp_policy",
                True,
                "structural check only (source population not provided)",
            )
        )
    else:
        policy = TimestampPolicy(
            TimestampKind(manifest.spec["policy"]["kind"]),
            TimestampKind(manifest.spec["policy"]["fallback"])
            if manifest.spec["policy"].get("fallback")
            else None,
        )
        bad = []
        for entry in manifest.entries:
            rec = population.by_sha.get(entry.sha256)
            ts = timeline_date(rec, policy) if rec is not None else None
            if ts is None or period_of(ts, entry.period.granularity) != entry.period:
                bad.append(entry.sha256)
        checks.append(
            CheckResult(
                "timestamp_policy",
                not bad,
                "all entries dated by the declared policy"
                if not bad
                else f"{len(bad)} entries mis-dated (e.g. {bad[0]})",
            )
        )
    return checks


# (goodware GP, goodware 3PM, malware GP, malware 3PM) per train/test split.
# The proportional configuration's test malware follows the stated 10% test
# ratio and 5,000-sample test size (400 GP + 100 3PM).
MARKET_SCENARIOS: dict[str, tuple[tuple[int, int, int, int], tuple[int, int, int, int]]] = {
    "D_GP": ((10000, 0, 10000, 0), (4500, 0, 500, 0)),
    "D_3PM": ((0, 10000, 0, 10000), (0, 4500, 0, 500)),
    "D_EVEN": ((5000, 5000, 5000, 5000), (2250, 2250, 250, 250)),
    "D_PROP": ((8000, 2000, 8000, 2000), (3600, 900, 400, 100)),
    "D_GP3PM": ((10000, 0, 0, 10000), (4500, 0, 0, 500)),
    "D_3PMGP": ((0, 10000, 10000, 0), (0, 4500, 500, 0)),
}

DEFAULT_GP_TAGS = frozenset({"play.google.com"})


def market_scenario(
    pop: Population,
    name: str,
    rule: LabelRule,
    policy: TimestampPolicy,
    seed: int,
    gp_tags: frozenset[str] = DEFAULT_GP_TAGS,
) -> tuple[DatasetManifest, DatasetManifest]:
    """Build one of the fixed train/test market-composition experiments.

    Records carrying any gp_tag form the GP group; all others are third-party
    (3PM). Train and test are drawn disjointly from one shuffle per cell.
    """
    if name not in MARKET_SCENARIOS:
        raise ValueError(f"unknown market scenario {name!r}; choose from {sorted(MARKET_SCENARIOS)}")
    train_cells, test_cells = MARKET_SCENARIOS[name]
    pools: dict[tuple[ClassLabel, str], list[ManifestEntry]] = {}
    for rec in pop:
        cls = label(rec, rule)
        if cls is ClassLabel.GREYWARE:
            continue
        ts = timeline_date(rec, policy)
        if ts is None:
            continue
        group = "GP" if rec.markets & gp_tags else "3PM"
        entry = ManifestEntry(rec.sha256, cls, period_of(ts, Granularity.MONTH), rec.markets, rec.family)
        pools.setdefault((cls, group), []).append(entry)

    cell_order = [
        (ClassLabel.GOODWARE, "GP", train_cells[0], test_cells[0]),
        (ClassLabel.GOODWARE, "3PM", train_cells[1], test_cells[1]),
        (ClassLabel.MALWARE, "GP", train_cells[2], test_cells[2]),
        (ClassLabel.MALWARE, "3PM", train_cells[3], test_cells[3]),
    ]
    train_entries: list[ManifestEntry] = []
    test_entries: list[ManifestEntry] = []
    train_fills: list[StratumFill] = []
    test_fills: list[StratumFill] = []
    for cls, group, n_train, n_test in cell_order:
        if n_train + n_test == 0:
            continue
        pool = pools.get((cls, group), [])
        if len(pool) < n_train + n_test:
            raise ValueError(
                f"insufficient population for cell ({group}, {cls.value}): "
                f"need {n_train + n_test}, have {len(pool)}"
            )
        # one shuffle per (class, group) cell keeps train/test disjoint
        code = 1 if group == "GP" else 2
        ordered = sorted(pool, key=lambda e: e.sha256)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, code, _CLASS_CODE[cls]])))
        picks = rng.permutation(len(ordered))
        train_entries.extend(ordered[i] for i in picks[:n_train])
        test_entries.extend(ordered[i] for i in picks[n_train : n_train + n_test])
        train_fills.append(StratumFill(None, cls, n_train, n_train, note=group))
        test_fills.append(StratumFill(None, cls, n_test, n_test, note=group))

    def build(entries: list[ManifestEntry], fills: list[StratumFill], split: str) -> DatasetManifest:
        spec = build_spec_echo(
            rule,
            policy,
            None,
            None,
            seed,
            pop.snapshot_date,
            None,
            extra={"scenario": name, "split": split, "gp_tags": sorted(gp_tags)},
        )
        return DatasetManifest(
            entries=_sort_entries(entries),
            spec=spec,
            created=_default_created(entries, pop),
            strata=tuple(fills),
        )

    return build(train_entries, train_fills, "train"), build(test_entries, test_fills, "test")


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    return {
        "spec": manifest.spec,
        "created": manifest.created,
        "strata": [
            {
                "period": str(f.period) if f.period else None,
                "label": f.label.value if f.label else None,
                "requested": f.requested,
                "sampled": f.sampled,
                "shortfall": f.shortfall,
                "note": f.note,
            }
            for f in manifest.strata
        ],
        "checks": list(manifest.checks),
        "violations": list(manifest.violations),
        "entries": [
            {
                "sha256": e.sha256,
                "label": e.label.value,
                "period": str(e.period),
                "markets": sorted(e.markets),
                "family": e.family,
            }
            for e in manifest.entries
        ],
    }


def manifest_from_dict(data: dict) -> DatasetManifest:
    entries = tuple(
        ManifestEntry(
            sha256=e["sha256"],
            label=ClassLabel(e["label"]),
            period=Period.parse(e["period"]),
            markets=frozenset(e["markets"]),
            family=e.get("family"),
        )
        for e in data["entries"]
    )
    strata = tuple(
        StratumFill(
            period=Period.parse(f["period"]) if f.get("period") else None,
            label=ClassLabel(f["label"]) if f.get("label") else None,
            requested=f["requested"],
            sampled=f["sampled"],
            note=f.get("note", ""),
        )
        for f in data.get("strata", ())
    )
    return DatasetManifest(
        entries=entries,
        spec=data["spec"],
        created=data["created"],
        strata=strata,
        checks=tuple(data.get("checks", ())),
        violations=tuple(data.get("violations", ())),
    )


def write_manifest_json(manifest: DatasetManifest, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(manifest_to_dict(manifest), indent=2) + "\n")


def read_manifest_json(path: Union[str, Path]) -> DatasetManifest:
    return manifest_from_dict(json.loads(Path(path).read_text()))


def write_manifest_csv(manifest: DatasetManifest, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(("sha256", "label", "period"))
    for entry in manifest.entries:
        writer.writerow((entry.sha256, entry.label.value, str(entry.period)))
