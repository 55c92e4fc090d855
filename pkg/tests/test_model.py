from datetime import datetime

import pytest
from hypothesis import given
from hypothesis import strategies as st

from maldrift.model import (
    ApkRecord,
    Granularity,
    Period,
    Population,
    parse_timestamp,
    period_of,
    period_range,
)

from helpers import make_population, make_record


def test_period_of_month_identity():
    p = period_of(parse_timestamp("2014-01-15"), Granularity.MONTH)
    assert str(p) == "2014-01"


def test_period_of_year_boundary():
    p = period_of(parse_timestamp("2014-12-31 23:59:59"), Granularity.YEAR)
    assert str(p) == "2014"


def test_month_distance_2014_01_to_2018_06():
    # counted by hand: 4 full years (48) plus Jan->Jun (5)
    a = Period.parse("2014-01")
    b = Period.parse("2018-06")
    assert b.index - a.index == 53


def test_period_of_out_of_range():
    with pytest.raises(ValueError):
        period_of(datetime(1969, 12, 31), Granularity.MONTH)
    with pytest.raises(ValueError):
        period_of(datetime(2101, 1, 1), Granularity.YEAR)


def test_period_range_yearly():
    r = period_range(Period.parse("2014"), Period.parse("2018"))
    assert [str(p) for p in r] == ["2014", "2015", "2016", "2017", "2018"]


def test_period_range_monthly_and_singleton():
    assert len(period_range(Period.parse("2014-01"), Period.parse("2014-03"))) == 3
    assert period_range(Period.parse("2014"), Period.parse("2014")) == [Period.parse("2014")]


def test_period_range_mismatched_granularity():
    with pytest.raises(ValueError):
        period_range(Period.parse("2014-01"), Period.parse("2014"))


_ts = st.datetimes(min_value=datetime(1970, 1, 1), max_value=datetime(2100, 12, 31))


@given(_ts)
def test_month_refines_year(ts):
    month = period_of(ts, Granularity.MONTH)
    year = period_of(ts, Granularity.YEAR)
    assert month.year_period() == year


@given(st.integers(0, 1500), st.integers(0, 60))
def test_period_range_length(start, extra):
    a = Period(Granularity.MONTH, start)
    b = Period(Granularity.MONTH, start + extra)
    assert len(period_range(a, b)) == extra + 1


def test_record_normalization():
    rec = make_record("x", markets=())
    assert rec.markets == frozenset({"unknown"})
    upper = ApkRecord(sha256=make_record("y").sha256.upper(), dex_date=parse_timestamp("2014-01-01"), vt_detection=0)
    assert upper.sha256 == upper.sha256.lower()
    assert make_record("z", family="  ").family is None


def test_record_validation():
    with pytest.raises(ValueError):
        ApkRecord(sha256="abc", dex_date=parse_timestamp("2014-01-01"), vt_detection=0)
    with pytest.raises(ValueError):
        make_record("neg").__class__(
            sha256=make_record("neg").sha256,
            dex_date=parse_timestamp("2014-01-01"),
            vt_detection=-1,
        )


def test_population_unique_sha():
    rec = make_record("dup")
    with pytest.raises(ValueError):
        Population((rec, rec))


def test_population_snapshot_invariant():
    rec = make_record("s", crawl="2016-05-01")
    Population((rec,), snapshot_date=parse_timestamp("2016-06-01"))
    with pytest.raises(ValueError):
        Population((rec,), snapshot_date=parse_timestamp("2016-04-01"))
    with pytest.raises(ValueError):
        Population((make_record("nocrawl"),), snapshot_date=parse_timestamp("2016-06-01"))


def test_population_union_disjoint():
    a = make_population([make_record(1)])
    b = make_population([make_record(2)])
    assert len(a.union(b)) == 2
    with pytest.raises(ValueError):
        a.union(a)


def test_timestamp_parsing_forms():
    assert parse_timestamp("2014-01-15") == datetime(2014, 1, 15)
    assert parse_timestamp("2014-01-15 10:22:03") == datetime(2014, 1, 15, 10, 22, 3)
    assert parse_timestamp("2014-01-15T10:22:03Z") == datetime(2014, 1, 15, 10, 22, 3)
    with pytest.raises(ValueError):
        parse_timestamp("not a date")
