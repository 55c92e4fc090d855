import io

import pytest

from maldrift.ingest import parse_metadata, snapshot_filter, write_metadata_csv
from maldrift.labeling import (
    LabelRule,
    TimestampKind,
    TimestampPolicy,
    label,
    market_consistency,
    timestamp_lag_stats,
)
from maldrift.metrics import malware_families_by_period, overlap_series
from maldrift.model import ClassLabel, Granularity, parse_timestamp
from maldrift.synth import (
    DetectionModel,
    LagModel,
    SynthConfig,
    generate,
    scenario_presets,
)

DEX = TimestampPolicy(TimestampKind.CREATION_DEX)


def test_generate_deterministic():
    config = SynthConfig(months=6, per_month=100, family_pool=5, seed=21)
    pop1, truth1 = generate(config)
    pop2, truth2 = generate(config)
    assert pop1.records == pop2.records
    assert truth1 == truth2


def test_generate_parallel_identical():
    config = SynthConfig(months=8, per_month=150, family_pool=5, seed=22)
    serial, _ = generate(config, workers=1)
    parallel, _ = generate(config, workers=8)
    assert serial.records == parallel.records


def test_counts_exact_and_seed_independent():
    base = SynthConfig(months=5, per_month=97, malware_fraction=0.13, family_pool=4, seed=1)
    other = SynthConfig(months=5, per_month=97, malware_fraction=0.13, family_pool=4, seed=2)
    for config in (base, other):
        pop, truth = generate(config)
        assert len(pop) == 5 * 97
        per_month_malware = {}
        for rec in pop:
            if truth.true_class[rec.sha256] is ClassLabel.MALWARE:
                key = (rec.dex_date.year, rec.dex_date.month)
                per_month_malware[key] = per_month_malware.get(key, 0) + 1
        assert set(per_month_malware.values()) == {13}  # round(97*0.13)
    pop_a, _ = generate(base)
    pop_b, _ = generate(other)
    assert {r.sha256 for r in pop_a} != {r.sha256 for r in pop_b}


def test_round_trip_through_ingest():
    pop, _ = generate(SynthConfig(months=4, per_month=80, family_pool=4, seed=5))
    buf = io.StringIO()
    write_metadata_csv(pop, buf)
    buf.seek(0)
    assert set(parse_metadata(buf).population.records) == set(pop.records)


def test_ground_truth_matches_design_labeling():
    config = SynthConfig(months=4, per_month=120, family_pool=4, design_vtt=4, seed=6)
    pop, truth = generate(config)
    rule = LabelRule(config.design_vtt)
    for rec in pop:
        assert label(rec, rule) is truth.true_class[rec.sha256]


def test_lognormal_lag_median_recoverable():
    config = SynthConfig(
        months=10,
        per_month=1200,
        family_pool=4,
        lag=LagModel("lognormal", days=5.0, sigma=0.6),
        seed=17,
    )
    pop, _ = generate(config)
    assert len(pop) >= 10_000
    stats = timestamp_lag_stats(pop, TimestampKind.CREATION_DEX, TimestampKind.PUBLICATION_CRAWL)
    assert abs(stats.median_days - 5.0) / 5.0 <= 0.10


def test_point_lag():
    config = SynthConfig(months=2, per_month=50, family_pool=4, lag=LagModel("point", days=3.0), seed=1)
    pop, _ = generate(config)
    for rec in pop:
        assert (rec.crawl_date - rec.dex_date).total_seconds() == pytest.approx(3 * 86400)


def test_multi_tag_market_mixture():
    config = SynthConfig(
        months=2,
        per_month=50,
        family_pool=4,
        goodware_markets={"play.google.com|anzhi": 1.0},
        seed=1,
    )
    pop, truth = generate(config)
    for rec in pop:
        if truth.true_class[rec.sha256] is ClassLabel.GOODWARE:
            assert rec.markets == frozenset({"play.google.com", "anzhi"})


def test_invalid_configs():
    with pytest.raises(ValueError):
        SynthConfig(family_lifetime=0).validate()
    with pytest.raises(ValueError):
        # pool dies after 3 months with no births to replace it
        generate(SynthConfig(months=12, per_month=50, family_pool=4, family_lifetime=3))
    with pytest.raises(ValueError):
        generate(SynthConfig(months=2, per_month=50, family_pool=0, family_birth_rate=0))
    with pytest.raises(ValueError):
        generate(
            SynthConfig(
                months=2,
                per_month=50,
                family_pool=4,
                malware_detections=DetectionModel("uniform", low=1, high=40),
            )
        )
    with pytest.raises(ValueError):
        generate(
            SynthConfig(
                months=2,
                per_month=50,
                family_pool=4,
                goodware_detections=DetectionModel("point", value=2),
            )
        )


def test_label_noise_opt_in():
    config = SynthConfig(
        months=2,
        per_month=50,
        family_pool=4,
        malware_detections=DetectionModel("uniform", low=1, high=40),
        allow_label_noise=True,
        seed=9,
    )
    pop, truth = generate(config)
    assert len(pop) == 100


def test_preset_market_skew_tv_one():
    pop, _ = generate(scenario_presets()["market-skew"])
    result = market_consistency(pop, LabelRule(4))
    assert result.tv_distance == 1.0
    assert not result.passed


def test_preset_late_backfill_snapshot_shrinks():
    pop, _ = generate(scenario_presets()["late-backfill"])
    result = snapshot_filter(pop, parse_timestamp("2015-01-01"))
    assert len(result.population) < len(pop)
    assert result.dropped_late >= 1


def test_preset_churn_frozen_decreasing_sequence():
    pop, _ = generate(scenario_presets()["churn"])
    fams = malware_families_by_period(pop, LabelRule(4), DEX, Granularity.YEAR)
    years = sorted(fams, key=lambda p: p.index)
    series = overlap_series(fams, years[0], years[1:])
    values = [v for _, v in series.points]
    assert values == pytest.approx([0.82, 0.48333333333333334])
    assert all(a > b for a, b in zip(values, values[1:]))


def test_preset_stable_no_churn():
    pop, truth = generate(scenario_presets()["stable"])
    months = sorted(truth.active_families, key=lambda p: p.index)
    first = truth.active_families[months[0]]
    assert all(truth.active_families[m] == first for m in months)
