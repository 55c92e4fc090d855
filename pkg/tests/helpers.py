"""Shared builders for toy populations."""
import hashlib
from typing import Optional

from maldrift.model import ApkRecord, Population, parse_timestamp


def sha_of(tag) -> str:
    return hashlib.sha256(str(tag).encode()).hexdigest()


def make_record(
    tag,
    dex: str = "2014-01-15",
    vt: int = 0,
    crawl: Optional[str] = None,
    scan: Optional[str] = None,
    markets=("play.google.com",),
    size: int = 1000,
    family: Optional[str] = None,
) -> ApkRecord:
    return ApkRecord(
        sha256=sha_of(tag),
        dex_date=parse_timestamp(dex),
        vt_detection=vt,
        crawl_date=parse_timestamp(crawl) if crawl else None,
        vt_scan_date=parse_timestamp(scan) if scan else None,
        markets=frozenset(markets),
        apk_size=size,
        family=family,
    )


def make_population(records, provenance: str = "test") -> Population:
    return Population(tuple(records), provenance=provenance)
