"""Command-line surface: config handling, end-to-end workflows, report emission.

Settings resolve flag > config file > default. The config file is an INI
document with one section per subcommand. Exit codes: 0 success, 1 error,
2 usage, 3 constraint refusal.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import gzip
import io
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import ingest as ingest_mod
from . import labeling, metrics, report, sampler, sizing, synth
from .errors import FetchError, FormatError, MissingPredictionsError
from .model import Granularity, Period, Population, parse_timestamp
from .version import __version__

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_CONSTRAINT = 3

CACHE_ENV = "MALDRIFT_CACHE_DIR"

_TIMESTAMP_KINDS = {
    "dex": labeling.TimestampKind.CREATION_DEX,
    "vt": labeling.TimestampKind.CREATION_VT,
    "crawl": labeling.TimestampKind.PUBLICATION_CRAWL,
}


class Settings:
    """Per-subcommand setting resolution: flag, then config file, then default."""

    def __init__(self, args: argparse.Namespace, section: str):
        self.args = vars(args)
        self.section: dict[str, str] = {}
        config_path = self.args.get("config")
        if config_path:
            parser = configparser.ConfigParser()
            with open(config_path) as fh:
                parser.read_file(fh)
            if parser.has_section(section):
                self.section = dict(parser.items(section))

    def get(self, key: str, default=None, cast=None):
        value = self.args.get(key)
        if value is None and key in self.section:
            raw = self.section[key]
            if cast is bool:
                value = raw.strip().lower() in ("1", "true", "yes", "on")
            elif cast is not None:
                value = cast(raw)
            else:
                value = raw
        if value is None:
            return default
        return value


def _policy_from(settings: Settings) -> labeling.TimestampPolicy:
    kind = _TIMESTAMP_KINDS[settings.get("timestamp", "crawl")]
    fallback_name = settings.get("timestamp_fallback")
    fallback = _TIMESTAMP_KINDS[fallback_name] if fallback_name else None
    return labeling.TimestampPolicy(kind, fallback)


def _load_population(path: str) -> Population:
    with ingest_mod.open_text(path) as fh:
        result = ingest_mod.parse_metadata(fh, provenance=path)
    return result.population


def _write_population_gz(pop: Population, path: Path) -> None:
    buffer = io.StringIO()
    ingest_mod.write_metadata_csv(pop, buffer)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as raw:
        # fixed mtime keeps byte-identical outputs across runs
        with gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as gz:
            gz.write(buffer.getvalue().encode())


def _out_dir(settings: Settings, default: str) -> Path:
    out = Path(settings.get("out", default))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_ingest(args: argparse.Namespace) -> int:
    settings = Settings(args, "ingest")
    strict = settings.get("strict", False, bool)
    cache_default = os.environ.get(CACHE_ENV, "maldrift_cache")
    out = _out_dir(settings, cache_default)
    with ingest_mod.open_text(args.input) as fh:
        result = ingest_mod.parse_metadata(fh, strict=strict, provenance=args.input)
    pop, stats = result.population, result.stats
    if args.families:
        with ingest_mod.open_text(args.families) as fh:
            mapping, malformed = ingest_mod.parse_families(fh)
        pop, join_stats = ingest_mod.join_families(pop, mapping)
        family_info = {
            "mapped": join_stats.mapped,
            "matched": join_stats.matched,
            "unmatched": len(join_stats.unmatched),
            "malformed": malformed,
        }
    else:
        family_info = None
    _write_population_gz(pop, out / "population.csv.gz")
    per_year: dict[str, int] = {}
    for rec in pop:
        per_year[str(rec.dex_date.year)] = per_year.get(str(rec.dex_date.year), 0) + 1
    stats_payload = {
        "rows": stats.rows,
        "parsed": stats.parsed,
        "malformed_skipped": stats.malformed,
        "duplicates": stats.duplicates,
        "records": len(pop),
        "per_dex_year": dict(sorted(per_year.items())),
        "families": family_info,
    }
    (out / "ingest_stats.json").write_text(json.dumps(stats_payload, indent=2) + "\n")
    report.write_run_config(out, "ingest", {"input": args.input, "strict": strict})
    print(f"ingested {len(pop)} records -> {out / 'population.csv.gz'}")
    print(f"rows={stats.rows} malformed={stats.malformed} duplicates={stats.duplicates}")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    settings = Settings(args, "stats")
    out = _out_dir(settings, "stats_out")
    pop = _load_population(args.population)
    rule = labeling.LabelRule(settings.get("vtt", 4, int))
    wrote = []
    if args.vtt_curve:
        rows = []
        for vtt in range(1, settings.get("vtt_max", 40, int) + 1):
            rows.append((vtt, f"{labeling.vtt_coverage(pop, vtt):.6f}"))
        report.write_csv(out / "vtt_coverage.csv", ("vtt", "coverage"), rows)
        heat_values = [int(v) for v in settings.get("vtt_values", "1,4,10,15,20").split(",")]
        heatmap = labeling.vtt_market_heatmap(pop, heat_values)
        heat_rows = []
        for vtt, row in heatmap.items():
            if row is None:
                heat_rows.append((vtt, "", ""))
                continue
            for market, pct in row.items():
                heat_rows.append((vtt, market, f"{pct:.4f}"))
        report.write_csv(out / "vtt_market_heatmap.csv", ("vtt", "market", "pct"), heat_rows)
        wrote += ["vtt_coverage.csv", "vtt_market_heatmap.csv"]
    if args.markets:
        comp = labeling.market_composition(pop, rule)
        report.write_csv(
            out / "market_composition.csv",
            ("market", "goodware_pct", "malware_pct"),
            [(r.market, f"{r.goodware_pct:.4f}", f"{r.malware_pct:.4f}") for r in comp],
        )
        consistency = labeling.market_consistency(pop, rule)
        (out / "market_consistency.json").write_text(
            json.dumps(
                {
                    "tv_distance": round(consistency.tv_distance, 6),
                    "passed": consistency.passed,
                    "threshold": consistency.threshold,
                },
                indent=2,
            )
            + "\n"
        )
        wrote += ["market_composition.csv", "market_consistency.json"]
    if args.timestamps:
        a = _TIMESTAMP_KINDS[settings.get("lag_from", "dex")]
        b = _TIMESTAMP_KINDS[settings.get("lag_to", "crawl")]
        lag = labeling.timestamp_lag_stats(pop, a, b)
        report.write_csv(
            out / "timestamp_lag.csv",
            ("stat", "value"),
            [
                ("count", lag.count),
                ("excluded", lag.excluded),
                ("median_days", f"{lag.median_days:.4f}"),
                ("q1_days", f"{lag.q1_days:.4f}"),
                ("q3_days", f"{lag.q3_days:.4f}"),
            ],
        )
        report.write_csv(
            out / "timestamp_lag_histogram.csv",
            ("day_lag", "count"),
            sorted(lag.histogram.items()),
        )
        wrote += ["timestamp_lag.csv", "timestamp_lag_histogram.csv"]
    if args.overlap:
        policy = _policy_from(settings)
        gran = Granularity(settings.get("granularity", "year"))
        slices = metrics.malware_families_by_period(pop, rule, policy, gran)
        if not slices:
            raise ValueError("no datable malware records for overlap statistics")
        periods = sorted(slices, key=lambda p: p.index)
        ref_raw = settings.get("ref_period")
        ref = Period.parse(str(ref_raw)) if ref_raw else periods[0]
        tests = [p for p in periods if p != ref]
        series = metrics.overlap_series(slices, ref, tests)
        report.write_csv(
            out / "family_overlap.csv",
            ("period", "overlap"),
            [(str(p), f"{v:.6f}") for p, v in series.points],
        )
        wrote.append("family_overlap.csv")
    if not wrote:
        print("nothing to do: pass at least one of --vtt-curve/--markets/--timestamps/--overlap", file=sys.stderr)
        return EXIT_USAGE
    report.write_run_config(out, "stats", {"population": args.population, "tables": wrote})
    print(f"wrote {', '.join(wrote)} -> {out}")
    return EXIT_OK


def cmd_sample_size(args: argparse.Namespace) -> int:
    settings = Settings(args, "sample-size")
    params = sizing.SizingParams(
        confidence=settings.get("confidence", 0.99, float),
        delta=settings.get("delta", 0.015, float),
        p=settings.get("p", 0.5, float),
        bonferroni_m=settings.get("bonferroni_m", None, int),
    )
    n = sizing.required_sample_size(args.population_size, params)
    print(n)
    return EXIT_OK


def _sizing_inputs(settings: Settings):
    rule = labeling.LabelRule(settings.get("vtt", 4, int))
    policy = _policy_from(settings)
    plan = sizing.SizingPlan(
        mode=sizing.PlanMode(settings.get("mode", "monthly")),
        spatial=settings.get("spatial", False, bool),
        ratio_malware=settings.get("ratio", 0.10, float),
    )
    params = sizing.SizingParams(
        confidence=settings.get("confidence", 0.99, float),
        delta=settings.get("delta", 0.015, float),
        p=settings.get("p", 0.5, float),
        bonferroni_m=settings.get("bonferroni_m", None, int),
    )
    return rule, policy, plan, params


def cmd_sample(args: argparse.Namespace) -> int:
    settings = Settings(args, "sample")
    out = _out_dir(settings, "sample_out")
    seed = settings.get("seed", 0, int)
    workers = settings.get("workers", 1, int)
    allow_violations = settings.get("allow_violations", False, bool)
    rule, policy, plan, params = _sizing_inputs(settings)
    pop = _load_population(args.population)
    snapshot_raw = settings.get("snapshot")
    if snapshot_raw:
        snap = ingest_mod.snapshot_filter(pop, parse_timestamp(snapshot_raw))
        pop = snap.population
        print(
            f"snapshot {snapshot_raw}: kept {len(pop)}, dropped {snap.dropped_late} late,"
            f" {snap.dropped_missing_crawl} without crawl date"
        )
    markets_raw = settings.get("markets")
    market_filter = frozenset(m.strip() for m in markets_raw.split(",") if m.strip()) if markets_raw else None
    pool = pop.filter(lambda r: bool(r.markets & market_filter)) if market_filter else pop

    plan_result = sizing.plan_sizes(pool, rule, policy, plan, params)
    for warning in plan_result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    manifest = sampler.stratified_sample(
        pool, rule, policy, plan_result, seed=seed, market_filter=market_filter, workers=workers
    )
    checks = sampler.verify_constraints(
        manifest,
        population=pool,
        c3_tolerance=settings.get("c3_tolerance", 1, int),
        market_threshold=settings.get("consistency_threshold", 0.10, float),
    )
    failures = [c for c in checks if not c.passed]
    for check in checks:
        print(f"{'PASS' if check.passed else 'FAIL'} {check.name}: {check.evidence}")
    config_echo = {
        "population": args.population,
        "seed": seed,
        "vtt": rule.vtt,
        "timestamp": settings.get("timestamp", "crawl"),
        "mode": plan.mode.value,
        "spatial": plan.spatial,
        "ratio": plan.ratio_malware,
        "markets": sorted(market_filter) if market_filter else None,
        "snapshot": snapshot_raw,
        "allow_violations": allow_violations,
    }
    if failures and not allow_violations:
        print(
            f"refusing to emit manifest: {len(failures)} constraint check(s) failed "
            "(use --allow-violations to stamp and emit)",
            file=sys.stderr,
        )
        return EXIT_CONSTRAINT
    manifest = sampler.DatasetManifest(
        entries=manifest.entries,
        spec=manifest.spec,
        created=manifest.created,
        strata=manifest.strata,
        checks=tuple(
            {"name": c.name, "passed": c.passed, "evidence": c.evidence} for c in checks
        ),
        violations=tuple({"check": c.name, "evidence": c.evidence} for c in failures),
    )
    sampler.write_manifest_json(manifest, out / "manifest.json")
    with open(out / "manifest.csv", "w", newline="") as fh:
        sampler.write_manifest_csv(manifest, fh)
    report.write_csv(
        out / "plan.csv",
        ("period", "population", "n", "malware", "goodware", "malware_shortfall", "goodware_shortfall"),
        [
            (
                str(s.period) if s.period else "global",
                s.population,
                s.n,
                "" if s.malware is None else s.malware,
                "" if s.goodware is None else s.goodware,
                s.malware_shortfall,
                s.goodware_shortfall,
            )
            for s in plan_result.strata
        ],
    )
    report.write_run_config(out, "sample", config_echo)
    print(f"manifest with {len(manifest.entries)} entries -> {out / 'manifest.json'}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    settings = Settings(args, "verify")
    manifest = sampler.read_manifest_json(args.manifest)
    pop = _load_population(args.population) if args.population else None
    checks = sampler.verify_constraints(
        manifest,
        population=pop,
        c3_tolerance=settings.get("c3_tolerance", 1, int),
        market_threshold=settings.get("consistency_threshold", 0.10, float),
    )
    for check in checks:
        print(f"{'PASS' if check.passed else 'FAIL'} {check.name}: {check.evidence}")
    if args.out:
        out = _out_dir(settings, args.out)
        (out / "verify.json").write_text(
            json.dumps(
                [{"name": c.name, "passed": c.passed, "evidence": c.evidence} for c in checks],
                indent=2,
            )
            + "\n"
        )
        report.write_run_config(
            out, "verify", {"manifest": args.manifest, "population": args.population}
        )
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CONSTRAINT


def cmd_split(args: argparse.Namespace) -> int:
    settings = Settings(args, "split")
    window = settings.get("window", 12, int)
    plan = metrics.rolling_splits(
        Period.parse(args.start),
        Period.parse(args.end),
        window,
        allow_partial_last=settings.get("allow_partial", False, bool),
    )
    payload = [
        {
            "label": s.label(),
            "train": [str(p) for p in s.train],
            "test": [str(p) for p in s.test],
        }
        for s in plan.splits
    ]
    for split in plan.splits:
        print(split.label())
    if args.out:
        out = _out_dir(settings, args.out)
        (out / "splits.json").write_text(json.dumps({"window_months": window, "splits": payload}, indent=2) + "\n")
    return EXIT_OK


def _parse_predset_arg(value: str, threshold: float) -> ingest_mod.PredictionSet:
    if "=" in value:
        name, path = value.split("=", 1)
    else:
        name, path = Path(value).stem, value
    with ingest_mod.open_text(path) as fh:
        predset, _ = ingest_mod.parse_predictions(fh, name=name, threshold=threshold)
    return predset


def cmd_evaluate(args: argparse.Namespace) -> int:
    settings = Settings(args, "evaluate")
    out = _out_dir(settings, "evaluate_out")
    window = settings.get("window", 12, int)
    if args.aut_table:
        rows = []
        with open(args.aut_table, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0] == "classifier":
                    continue
                rows.append((row[0], [float(v) for v in row[1:]]))
        result = report.report_from_aut_table(rows, window)
        config_echo = {"aut_table": args.aut_table, "window": window}
    else:
        if not args.manifest or not args.predictions:
            print("evaluate needs --manifest and --predictions (or --aut-table)", file=sys.stderr)
            return EXIT_USAGE
        threshold = settings.get("threshold", 0.5, float)
        manifest = sampler.read_manifest_json(args.manifest)
        predsets = [_parse_predset_arg(v, threshold) for v in args.predictions]
        result = report.evaluate_manifest(
            manifest,
            predsets,
            window,
            metric=settings.get("metric", "f1"),
            lenient=settings.get("lenient", False, bool),
        )
        config_echo = {
            "manifest": args.manifest,
            "predictions": list(args.predictions),
            "window": window,
            "threshold": threshold,
        }
    markdown = report.render_aut_markdown(result)
    print(markdown, end="")
    (out / "report.md").write_text(markdown)
    header, rows = report.aut_table_rows(result)
    report.write_csv(out / "aut_table.csv", header, rows)
    (out / "report.json").write_text(json.dumps(report.report_to_dict(result), indent=2) + "\n")
    if result.window_series:
        with open(out / "window_series.csv", "w", newline="") as fh:
            report.write_window_series_csv(result, fh)
    report.write_run_config(out, "evaluate", config_echo)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    settings = Settings(args, "synth")
    out = _out_dir(settings, "synth_out")
    workers = settings.get("workers", 1, int)
    if args.preset:
        presets = synth.scenario_presets()
        if args.preset not in presets:
            print(
                f"unknown preset {args.preset!r}; available: {', '.join(sorted(presets))}",
                file=sys.stderr,
            )
            return EXIT_USAGE
        config = presets[args.preset]
        seed_override = settings.get("seed", None, int)
        if seed_override is not None:
            config = synth.replace_seed(config, seed_override)
    else:
        config = synth.SynthConfig(
            months=settings.get("months", 24, int),
            per_month=settings.get("per_month", 400, int),
            malware_fraction=settings.get("malware_fraction", 0.10, float),
            family_pool=settings.get("family_pool", 20, int),
            family_birth_rate=settings.get("family_birth_rate", 0, int),
            family_lifetime=settings.get("family_lifetime", None, int),
            start=settings.get("start", "2014-01"),
            seed=settings.get("seed", 0, int),
        )
    pop, truth = synth.generate(config, workers=workers)
    _write_population_gz(pop, out / "population.csv.gz")
    truth_payload = {
        "config": synth.config_to_dict(config),
        "active_families": {str(p): list(fams) for p, fams in sorted(truth.active_families.items(), key=lambda kv: kv[0].index)},
        "true_class": {sha: cls.value for sha, cls in sorted(truth.true_class.items())},
    }
    (out / "ground_truth.json").write_text(json.dumps(truth_payload, indent=2, sort_keys=True) + "\n")
    report.write_run_config(out, "synth", synth.config_to_dict(config) | {"preset": args.preset})
    print(f"generated {len(pop)} records over {config.months} months -> {out / 'population.csv.gz'}")
    return EXIT_OK


def cmd_fetch(args: argparse.Namespace) -> int:
    settings = Settings(args, "fetch")
    path = ingest_mod.fetch_metadata(
        args.url,
        args.dest,
        resume=settings.get("resume", False, bool),
        attempts=settings.get("attempts", 3, int),
    )
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maldrift",
        description="Bias-controlled dataset sampling and drift-aware evaluation for app metadata.",
    )
    parser.add_argument("--version", action="version", version=f"maldrift {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="INI config file with one section per subcommand")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("ingest", help="parse a metadata CSV into a population cache")
    common(p)
    p.add_argument("--input", required=True, help="metadata CSV (optionally .gz)")
    p.add_argument("--families", help="sha256,family CSV to join")
    p.add_argument("--strict", action="store_const", const=True, help="fail on malformed rows")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="population statistics tables")
    common(p)
    p.add_argument("--population", required=True)
    p.add_argument("--vtt-curve", action="store_true", help="detection-threshold coverage curve and market heatmap")
    p.add_argument("--markets", action="store_true", help="market composition and consistency")
    p.add_argument("--timestamps", action="store_true", help="timestamp lag distribution")
    p.add_argument("--overlap", action="store_true", help="family overlap series")
    p.add_argument("--vtt", type=int)
    p.add_argument("--vtt-max", type=int)
    p.add_argument("--timestamp", choices=sorted(_TIMESTAMP_KINDS))
    p.add_argument("--ref-period", help="reference period for --overlap (e.g. 2014)")
    p.add_argument("--granularity", choices=["month", "year"])
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sample-size", help="minimum representative sample size")
    common(p)
    p.add_argument("--population-size", type=int, required=True)
    p.add_argument("--confidence", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--p", type=float)
    p.add_argument("--bonferroni-m", type=int)
    p.set_defaults(func=cmd_sample_size)

    p = sub.add_parser("sample", help="draw a constraint-checked stratified sample")
    common(p)
    p.add_argument("--population", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--vtt", type=int)
    p.add_argument("--timestamp", choices=sorted(_TIMESTAMP_KINDS))
    p.add_argument("--timestamp-fallback", choices=sorted(_TIMESTAMP_KINDS))
    p.add_argument("--mode", choices=[m.value for m in sizing.PlanMode])
    p.add_argument("--spatial", action=argparse.BooleanOptionalAction)
    p.add_argument("--ratio", type=float, help="malware ratio for spatial plans")
    p.add_argument("--confidence", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--p", type=float)
    p.add_argument("--bonferroni-m", type=int)
    p.add_argument("--markets", help="comma-separated market filter")
    p.add_argument("--snapshot", help="crawl-date cutoff emulating a historical snapshot")
    p.add_argument("--workers", type=int)
    p.add_argument("--allow-violations", action="store_const", const=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("verify", help="re-check a manifest against the constraints")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--population")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("split", help="rolling train/test windows")
    common(p)
    p.add_argument("--start", required=True, help="first month, e.g. 2014-01")
    p.add_argument("--end", required=True, help="last month, e.g. 2018-12")
    p.add_argument("--window", type=int)
    p.add_argument("--allow-partial", action="store_const", const=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("evaluate", help="rolling-window metric report for prediction sets")
    common(p)
    p.add_argument("--manifest")
    p.add_argument(
        "--predictions",
        action="append",
        help="prediction CSV as name=path (repeatable)",
    )
    p.add_argument("--aut-table", help="CSV of name,aut1,aut2,... to aggregate directly")
    p.add_argument("--window", type=int)
    p.add_argument("--metric", choices=list(metrics.METRIC_NAMES))
    p.add_argument("--threshold", type=float)
    p.add_argument("--lenient", action="store_const", const=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic population with ground truth")
    common(p)
    p.add_argument("--preset", help="named scenario (see synth.scenario_presets)")
    p.add_argument("--months", type=int)
    p.add_argument("--per-month", type=int)
    p.add_argument("--malware-fraction", type=float)
    p.add_argument("--family-pool", type=int)
    p.add_argument("--family-birth-rate", type=int)
    p.add_argument("--family-lifetime", type=int)
    p.add_argument("--start")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fetch", help="download a remote metadata file")
    common(p)
    p.add_argument("--url", required=True)
    p.add_argument("--dest", required=True)
    p.add_argument("--resume", action="store_const", const=True)
    p.add_argument("--attempts", type=int)
    p.set_defaults(func=cmd_fetch)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, MissingPredictionsError, FetchError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
