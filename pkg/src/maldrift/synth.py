"""Synthetic metadata populations with controllable drift.

The generator exists to make properties assertable at desk scale, not to
model the real app ecosystem: family churn is a sliding birth/lifetime
window, markets and detection counts are drawn from small per-class models,
and every aggregate count is fixed by the config (seed-independent).
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import timedelta
from typing import Optional

import numpy as np

from .model import ApkRecord, ClassLabel, Period, Population
from .sizing import round_half_up


@dataclass(frozen=True)
class LagModel:
    """Distribution of crawl_date - dex_date in days.

    kind "point" pins every lag to `days`; "lognormal" uses `days` as the
    median with shape `sigma`; "backfill" is lognormal plus a `late_fraction`
    of records crawled `late_days` after creation.
    """

    kind: str = "lognormal"
    days: float = 5.0
    sigma: float = 0.5
    late_fraction: float = 0.0
    late_days: float = 730.0

    def __post_init__(self) -> None:
        if self.kind not in ("point", "lognormal", "backfill"):
            raise ValueError(f"unknown lag model kind {self.kind!r}")
        if self.days < 0 or self.late_days < 0 or not 0.0 <= self.late_fraction <= 1.0:
            raise ValueError("invalid lag model parameters")


@dataclass(frozen=True)
class DetectionModel:
    """Per-class distribution of AV detection counts."""

    kind: str = "point"
    value: int = 0
    low: int = 4
    high: int = 40

    def __post_init__(self) -> None:
        if self.kind not in ("point", "uniform"):
            raise ValueError(f"unknown detection model kind {self.kind!r}")
        if self.kind == "uniform" and self.low > self.high:
            raise ValueError("uniform detection model needs low <= high")

    def support_min(self) -> int:
        return self.value if self.kind == "point" else self.low

    def support_max(self) -> int:
        return self.value if self.kind == "point" else self.high


@dataclass(frozen=True)
class SynthConfig:
    months: int = 24
    per_month: int = 400
    malware_fraction: float = 0.10
    family_pool: int = 20
    family_birth_rate: int = 0
    family_lifetime: Optional[int] = None  # None = immortal
    goodware_markets: dict[str, float] = field(default_factory=lambda: {"play.google.com": 1.0})
    malware_markets: dict[str, float] = field(default_factory=lambda: {"play.google.com": 1.0})
    lag: LagModel = LagModel()
    goodware_detections: DetectionModel = DetectionModel("point", value=0)
    malware_detections: DetectionModel = DetectionModel("uniform", low=4, high=40)
    design_vtt: int = 4
    start: str = "2014-01"
    seed: int = 0
    allow_label_noise: bool = False
    size_range: tuple[int, int] = (50_000, 50_000_000)

    def validate(self) -> None:
        if self.months < 1 or self.per_month < 1:
            raise ValueError("months and per_month must be positive")
        if not 0.0 <= self.malware_fraction <= 1.0:
            raise ValueError(f"malware_fraction must be in [0,1], got {self.malware_fraction}")
        for mixture in (self.goodware_markets, self.malware_markets):
            if not mixture or any(w < 0 for w in mixture.values()) or sum(mixture.values()) <= 0:
                raise ValueError("market mixtures must be non-empty with non-negative weights")
        if self.family_lifetime is not None and self.family_lifetime < 1:
            raise ValueError("family_lifetime must be >= 1 (or None for immortal)")
        if not self.allow_label_noise:
            gd = self.goodware_detections
            if not (gd.kind == "point" and gd.value == 0):
                raise ValueError("goodware detections must be all-zero unless label noise is allowed")
            if self.malware_detections.support_min() < self.design_vtt:
                raise ValueError(
                    "malware detection support must start at design_vtt unless label noise is allowed"
                )
        if self.monthly_malware() > 0 and not self._family_process_alive():
            raise ValueError("family process dies out: no active families for some generated month")

    def monthly_malware(self) -> int:
        return round_half_up(self.per_month * self.malware_fraction)

    def _family_process_alive(self) -> bool:
        return all(self._births_alive_at(m) for m in range(self.months))

    def _births_alive_at(self, m: int) -> bool:
        life = self.family_lifetime
        initial = self.family_pool > 0 and (life is None or m < life)
        fresh = self.family_birth_rate > 0 and m >= 1
        return initial or fresh


@dataclass(frozen=True)
class GroundTruth:
    active_families: dict[Period, tuple[str, ...]]
    true_class: dict[str, ClassLabel]


def _family_births(config: SynthConfig) -> list[tuple[str, int]]:
    """(name, birth month) for every family ever born, in id order.

    Initial-pool birth months are staggered backwards so deaths spread out
    instead of the whole pool expiring at once.
    """
    births: list[tuple[str, int]] = []
    life = config.family_lifetime
    for i in range(config.family_pool):
        birth = -(i % life) if life is not None else 0
        births.append((f"fam{i:05d}", birth))
    next_id = config.family_pool
    for month in range(1, config.months):
        for _ in range(config.family_birth_rate):
            births.append((f"fam{next_id:05d}", month))
            next_id += 1
    return births


def _active_at(births: list[tuple[str, int]], month: int, lifetime: Optional[int]) -> list[str]:
    if lifetime is None:
        return [name for name, birth in births if birth <= month]
    return [name for name, birth in births if birth <= month < birth + lifetime]


def _draw_lags(model: LagModel, rng: np.random.Generator, n: int) -> np.ndarray:
    if model.kind == "point":
        return np.full(n, model.days)
    lags = rng.lognormal(mean=np.log(max(model.days, 1e-9)), sigma=model.sigma, size=n)
    if model.kind == "backfill" and model.late_fraction > 0:
        late = rng.random(n) < model.late_fraction
        lags = np.where(late, model.late_days, lags)
    return lags


def _draw_detections(model: DetectionModel, rng: np.random.Generator, n: int) -> np.ndarray:
    if model.kind == "point":
        return np.full(n, model.value, dtype=np.int64)
    return rng.integers(model.low, model.high + 1, size=n)


def _draw_markets(mixture: dict[str, float], rng: np.random.Generator, n: int) -> list[frozenset[str]]:
    keys = sorted(mixture)
    weights = np.array([mixture[k] for k in keys], dtype=float)
    weights = weights / weights.sum()
    picks = rng.choice(len(keys), size=n, p=weights)
    groups = [frozenset(k.split("|")) for k in keys]
    return [groups[i] for i in picks]


def _generate_month(config: SynthConfig, month_offset: int, active: list[str]) -> list[tuple[ApkRecord, ClassLabel]]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, month_offset])))
    period = Period.parse(config.start).shifted(month_offset)
    month_start = period.start()
    month_seconds = int((period.successor().start() - month_start).total_seconds())
    n_mw = config.monthly_malware()
    n_gw = config.per_month - n_mw

    dex_offsets = rng.integers(0, month_seconds, size=config.per_month)
    lag_days = _draw_lags(config.lag, rng, config.per_month)
    sizes = rng.integers(config.size_range[0], config.size_range[1] + 1, size=config.per_month)
    gw_markets = _draw_markets(config.goodware_markets, rng, n_gw)
    mw_markets = _draw_markets(config.malware_markets, rng, n_mw)
    gw_det = _draw_detections(config.goodware_detections, rng, n_gw)
    mw_det = _draw_detections(config.malware_detections, rng, n_mw)
    families = rng.choice(len(active), size=n_mw) if (n_mw and active) else np.zeros(0, dtype=int)

    rows = []
    for i in range(config.per_month):
        malware = i >= n_gw
        j = i - n_gw if malware else i
        sha = hashlib.sha256(f"synth-{config.seed}-{month_offset}-{i}".encode()).hexdigest()
        dex = month_start + timedelta(seconds=int(dex_offsets[i]))
        crawl = dex + timedelta(seconds=int(lag_days[i] * 86400))
        rec = ApkRecord(
            sha256=sha,
            dex_date=dex,
            vt_detection=int(mw_det[j] if malware else gw_det[j]),
            crawl_date=crawl,
            vt_scan_date=crawl,
            markets=mw_markets[j] if malware else gw_markets[j],
            apk_size=int(sizes[i]),
            family=active[families[j]] if malware else None,
        )
        rows.append((rec, ClassLabel.MALWARE if malware else ClassLabel.GOODWARE))
    return rows


def generate(config: SynthConfig, workers: int = 1) -> tuple[Population, GroundTruth]:
    """Deterministic synthetic population plus its ground truth.

    Per-month record and class counts are exact and seed-independent; all
    draws run on month-derived sub-seeds so serial and parallel generation
    produce identical results.
    """
    config.validate()
    births = _family_births(config)
    active_by_month = [
        sorted(_active_at(births, m, config.family_lifetime)) for m in range(config.months)
    ]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            month_rows = list(
                pool.map(
                    lambda m: _generate_month(config, m, active_by_month[m]),
                    range(config.months),
                )
            )
    else:
        month_rows = [_generate_month(config, m, active_by_month[m]) for m in range(config.months)]

    records = []
    true_class = {}
    for rows in month_rows:
        for rec, cls in rows:
            records.append(rec)
            true_class[rec.sha256] = cls
    start = Period.parse(config.start)
    active_families = {
        start.shifted(m): tuple(active_by_month[m]) for m in range(config.months)
    }
    pop = Population(tuple(records), provenance=f"synth(seed={config.seed})")
    return pop, GroundTruth(active_families, true_class)


def replace_seed(config: SynthConfig, seed: int) -> SynthConfig:
    return replace(config, seed=seed)


def config_to_dict(config: SynthConfig) -> dict:
    """JSON-ready echo of a generator configuration."""
    return {
        "months": config.months,
        "per_month": config.per_month,
        "malware_fraction": config.malware_fraction,
        "family_pool": config.family_pool,
        "family_birth_rate": config.family_birth_rate,
        "family_lifetime": config.family_lifetime,
        "goodware_markets": dict(sorted(config.goodware_markets.items())),
        "malware_markets": dict(sorted(config.malware_markets.items())),
        "lag": {
            "kind": config.lag.kind,
            "days": config.lag.days,
            "sigma": config.lag.sigma,
            "late_fraction": config.lag.late_fraction,
            "late_days": config.lag.late_days,
        },
        "goodware_detections": {
            "kind": config.goodware_detections.kind,
            "value": config.goodware_detections.value,
            "low": config.goodware_detections.low,
            "high": config.goodware_detections.high,
        },
        "malware_detections": {
            "kind": config.malware_detections.kind,
            "value": config.malware_detections.value,
            "low": config.malware_detections.low,
            "high": config.malware_detections.high,
        },
        "design_vtt": config.design_vtt,
        "start": config.start,
        "seed": config.seed,
        "allow_label_noise": config.allow_label_noise,
        "size_range": list(config.size_range),
    }


def scenario_presets() -> dict[str, SynthConfig]:
    """Named configurations that reproduce the pathologies the toolkit checks for."""
    return {
        # no churn: one immortal family pool, overlap stays at 1
        "stable": SynthConfig(
            months=24,
            per_month=400,
            family_pool=8,
            family_birth_rate=0,
            family_lifetime=None,
            seed=7,
        ),
        # steady replacement: one family dies and one is born each month
        "churn": SynthConfig(
            months=36,
            per_month=500,
            family_pool=36,
            family_birth_rate=1,
            family_lifetime=36,
            seed=5,
        ),
        # goodware and malware from disjoint markets (spurious-correlation setup)
        "market-skew": SynthConfig(
            months=24,
            per_month=400,
            family_pool=8,
            goodware_markets={"play.google.com": 1.0},
            malware_markets={"VirusShare": 1.0},
            seed=11,
        ),
        # a third of records reach the crawler years after creation
        "late-backfill": SynthConfig(
            months=24,
            per_month=300,
            family_pool=12,
            family_birth_rate=1,
            family_lifetime=12,
            lag=LagModel("backfill", days=5.0, sigma=0.5, late_fraction=0.3, late_days=900.0),
            seed=13,
        ),
    }
