"""Command-line front end.

Subcommands: ingest, classify, squatgen dump, monitor, lifecycle, report.
All inputs come from a JSON config file; every config key can be overridden
by a long flag of the same name. Outputs are CSV/JSON-lines files written
atomically into --out-dir, and identical inputs always produce
byte-identical outputs.

Exit codes: 2 config error, 3 empty output, 4 snapshot-store failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from collections import Counter
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Optional

from . import classifier, dnsmon, ingest, lifecycle, squatgen
from .errors import PhishlifeError
from .timeutil import format_utc, parse_utc, to_days

EXIT_CONFIG = 2
EXIT_EMPTY = 3
EXIT_STORE = 4

DEFAULT_RRTYPES = ["A", "AAAA", "NS", "MX", "TXT"]
DEFAULT_MONITOR_START = "2024-01-01T00:00:00Z"


class ConfigError(PhishlifeError):
    pass


class EmptyOutput(PhishlifeError):
    pass


@dataclass
class PipelineConfig:
    feeds: list[tuple[Path, str]] = field(default_factory=list)
    suffix_rules: Optional[Path] = None
    allowlist: Optional[Path] = None
    brand_catalog: Optional[Path] = None
    word_list: Optional[Path] = None
    registration_log: Optional[Path] = None
    timestamp_sources: Optional[Path] = None
    vantage_config: Optional[Path] = None
    snapshot_store: Optional[Path] = None
    resolver_fixture: Optional[Path] = None
    monitor_domains: Optional[Path] = None

    bulk_window_hours: float = 24.0
    max_edit_distance: int = 2
    min_cluster_size: int = 3
    min_word_length: int = 4
    reference_source: str = "apwg"
    monitor_interval_minutes: float = 30.0
    monitor_duration_minutes: float = 60.0
    monitor_start: str = DEFAULT_MONITOR_START
    brand_top_n: int = 1000
    squat_top_n: int = 200
    rrtypes: list[str] = field(default_factory=lambda: list(DEFAULT_RRTYPES))
    backoff_base_ms: float = 500.0
    backoff_cap_ms: float = 8000.0
    concurrency: int = 64


_PATH_KEYS = (
    "suffix_rules", "allowlist", "brand_catalog", "word_list", "registration_log",
    "timestamp_sources", "vantage_config", "snapshot_store", "resolver_fixture",
    "monitor_domains",
)
_PARAM_KEYS = (
    "bulk_window_hours", "max_edit_distance", "min_cluster_size", "min_word_length",
    "reference_source", "monitor_interval_minutes", "monitor_duration_minutes",
    "monitor_start", "brand_top_n", "squat_top_n", "rrtypes", "backoff_base_ms",
    "backoff_cap_ms", "concurrency",
)


def _feed_spec(entry: object, base: Path) -> tuple[Path, str]:
    if isinstance(entry, dict):
        path = base / str(entry["path"])
        fmt = str(entry.get("format", "")).strip()
    else:
        path = base / str(entry)
        fmt = ""
    if not fmt:
        fmt = "json" if path.suffix in (".json", ".jsonl") else "lines"
    if fmt not in ("lines", "json"):
        raise ConfigError(f"unknown feed format {fmt!r} for {path}")
    return path, fmt


def load_config(path: Optional[str], args: argparse.Namespace) -> PipelineConfig:
    """Build the pipeline config from the JSON file plus flag overrides."""
    cfg = PipelineConfig()
    if path:
        cfg_path = Path(path)
        try:
            raw = json.loads(cfg_path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from exc
        base = cfg_path.parent
        if "feeds" in raw:
            cfg.feeds = [_feed_spec(e, base) for e in raw["feeds"]]
        for key in _PATH_KEYS:
            if raw.get(key):
                setattr(cfg, key, base / str(raw[key]))
        for key in _PARAM_KEYS:
            if key in raw and raw[key] is not None:
                setattr(cfg, key, raw[key])

    # flag overrides; paths resolve against the working directory
    if getattr(args, "feeds", None):
        cfg.feeds = [_feed_spec(p, Path(".")) for p in args.feeds.split(",") if p]
    for key in _PATH_KEYS:
        value = getattr(args, key, None)
        if value:
            setattr(cfg, key, Path(value))
    for key in _PARAM_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            if key == "rrtypes" and isinstance(value, str):
                value = [t.strip().upper() for t in value.split(",") if t.strip()]
            setattr(cfg, key, value)

    _validate_params(cfg)
    return cfg


def _validate_params(cfg: PipelineConfig) -> None:
    checks = [
        (cfg.bulk_window_hours > 0, "bulk_window_hours must be positive"),
        (cfg.max_edit_distance >= 0, "max_edit_distance must be >= 0"),
        (cfg.min_cluster_size >= 2, "min_cluster_size must be >= 2"),
        (cfg.min_word_length >= 1, "min_word_length must be >= 1"),
        (cfg.monitor_interval_minutes > 0, "monitor_interval_minutes must be positive"),
        (cfg.monitor_duration_minutes >= 0, "monitor_duration_minutes must be >= 0"),
        (cfg.brand_top_n >= 1, "brand_top_n must be >= 1"),
        (0 <= cfg.squat_top_n <= cfg.brand_top_n, "squat_top_n must be in [0, brand_top_n]"),
        (cfg.backoff_base_ms > 0, "backoff_base_ms must be positive"),
        (cfg.backoff_cap_ms >= cfg.backoff_base_ms, "backoff_cap_ms must be >= backoff_base_ms"),
        (cfg.concurrency >= 1, "concurrency must be >= 1"),
        (bool(cfg.reference_source.strip()), "reference_source must be non-empty"),
        (all(t in dnsmon.RRTYPES for t in cfg.rrtypes), f"rrtypes must be among {dnsmon.RRTYPES}"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)
    try:
        parse_utc(cfg.monitor_start)
    except ValueError as exc:
        raise ConfigError(f"monitor_start: {exc}") from exc


def _require(cfg_value: Optional[Path], name: str) -> Path:
    if cfg_value is None:
        raise ConfigError(f"config key {name!r} is required for this command")
    if not Path(cfg_value).exists():
        raise ConfigError(f"{name} file not found: {cfg_value}")
    return Path(cfg_value)


def write_atomic(path: Path, text: str) -> None:
    """Write via a temp file and atomic rename; no partial files on failure."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt_days(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


# ---------------------------------------------------------------- pipeline


def _load_feed_entries(cfg: PipelineConfig) -> list[ingest.FeedEntry]:
    if not cfg.feeds:
        raise ConfigError("no feeds configured")
    entries: list[ingest.FeedEntry] = []
    for path, fmt in cfg.feeds:
        if not path.exists():
            raise ConfigError(f"feed file not found: {path}")
        entries.extend(ingest.load_feed(path, fmt).entries)
    return entries


def _build_table(cfg: PipelineConfig) -> tuple[list[ingest.FeedEntry], ingest.DomainTable]:
    rules = ingest.load_suffix_rules(_require(cfg.suffix_rules, "suffix_rules"))
    entries = _load_feed_entries(cfg)
    table = ingest.build_domain_table(entries, rules)
    return entries, table


def _domain_record_json(rec: ingest.DomainRecord) -> str:
    return json.dumps({
        "registrable": rec.registrable,
        "public_suffix": rec.public_suffix,
        "subdomain": rec.subdomain,
        "subdomain_count": rec.subdomain_count,
        "suffix_unlisted": rec.suffix_unlisted,
        "first_detections": {s: format_utc(t) for s, t in sorted(rec.first_detections.items())},
        "brands": sorted(rec.brands),
        "url_count": rec.url_count,
    }, sort_keys=True)


def cmd_ingest(cfg: PipelineConfig, out_dir: Path) -> ingest.DomainTable:
    entries, table = _build_table(cfg)
    if not table.records:
        raise EmptyOutput("domain table is empty")

    write_atomic(out_dir / "domains.jsonl",
                 "".join(_domain_record_json(r) + "\n" for r in table.records))

    urls_by_source = Counter(e.source for e in entries)
    domains_by_source: Counter = Counter()
    tlds_by_source: dict[str, set] = {}
    for rec in table.records:
        for source in rec.first_detections:
            domains_by_source[source] += 1
            tlds_by_source.setdefault(source, set()).add(rec.public_suffix)

    tld_count = len({r.public_suffix for r in table.records})
    print(f"{len(table.records)} domains, {tld_count} TLDs "
          f"({sum(urls_by_source.values())} URLs, {table.skipped_urls} skipped)")
    for source in sorted(urls_by_source):
        print(f"  {source}: {urls_by_source[source]} URLs, "
              f"{domains_by_source.get(source, 0)} domains, "
              f"{len(tlds_by_source.get(source, ()))} TLDs")
    return table


def _build_classifier_ctx(cfg: PipelineConfig) -> classifier.ClassifierContext:
    allow = classifier.load_allowlist(_require(cfg.allowlist, "allowlist"))
    catalog = squatgen.load_catalog(
        _require(cfg.brand_catalog, "brand_catalog"),
        brand_top_n=cfg.brand_top_n, squat_top_n=cfg.squat_top_n,
    )
    words = classifier.load_word_list(_require(cfg.word_list, "word_list"))
    clusters: list[classifier.BulkCluster] = []
    if cfg.registration_log is not None:
        log = classifier.load_registration_log(_require(cfg.registration_log, "registration_log"))
        clusters = classifier.cluster_bulk(
            log,
            window=timedelta(hours=cfg.bulk_window_hours),
            max_edit_distance=cfg.max_edit_distance,
            min_cluster_size=cfg.min_cluster_size,
        )
    return classifier.ClassifierContext(
        allow=allow,
        catalog=catalog,
        squat_index=squatgen.build_index(catalog),
        word_list=words,
        bulk_membership=classifier.bulk_membership(clusters),
        min_word_len=cfg.min_word_length,
    )


def cmd_classify(cfg: PipelineConfig, out_dir: Path) -> list[classifier.ClassificationResult]:
    _, table = _build_table(cfg)
    if not table.records:
        raise EmptyOutput("domain table is empty")
    ctx = _build_classifier_ctx(cfg)
    results = classifier.classify_all(table.records, ctx)

    rows = []
    json_lines = []
    for res in results:
        flags = ";".join(classifier.ordered_flags(res.flags))
        evidence = "|".join(f"{flag}={detail}" for flag, detail in res.evidence)
        rows.append([res.registrable, res.verdict, flags, evidence])
        json_lines.append(json.dumps({
            "registrable": res.registrable,
            "verdict": res.verdict,
            "flags": classifier.ordered_flags(res.flags),
            "evidence": [list(e) for e in res.evidence],
        }, sort_keys=True))
    write_atomic(out_dir / "classification.csv",
                 _csv_text(["registrable", "verdict", "flags", "evidence"], rows))
    write_atomic(out_dir / "classification.jsonl", "".join(l + "\n" for l in json_lines))

    candidates = [r for r in results
                  if r.verdict in (classifier.VERDICT_MALICIOUS, classifier.VERDICT_COMPROMISED)]
    base = len(candidates)
    malicious = [r for r in candidates if r.verdict == classifier.VERDICT_MALICIOUS]

    def pct(n: int) -> str:
        return f"{100.0 * n / base:.1f}" if base else ""

    # allowlisted and platform-abuse domains are tallied apart from the
    # malicious/compromised percentages
    for verdict in (classifier.VERDICT_ALLOWLISTED, classifier.VERDICT_PLATFORM):
        n = sum(1 for r in results if r.verdict == verdict)
        print(f"{verdict}: {n}")
    summary_rows = []
    print(f"candidates after allowlist removal: {base}")
    for flag in classifier.FLAG_ORDER:
        n = sum(1 for r in candidates if flag in r.flags)
        summary_rows.append([flag, n, pct(n)])
        print(f"  {flag}: {n} ({pct(n)}%)")
    summary_rows.append(["malicious_total", len(malicious), pct(len(malicious))])
    print(f"  malicious_total: {len(malicious)} ({pct(len(malicious))}%)")
    write_atomic(out_dir / "flag_summary.csv",
                 _csv_text(["flag", "domains", "pct_of_candidates"], summary_rows))

    bulk_by_registrar: Counter = Counter()
    for res in results:
        cluster = ctx.bulk_membership.get(res.registrable)
        if cluster is not None and classifier.BULK_REGISTERED in res.flags:
            bulk_by_registrar[cluster.registrar] += 1
    total_bulk = sum(bulk_by_registrar.values())
    registrar_rows = []
    ranked = sorted(bulk_by_registrar.items(), key=lambda kv: (-kv[1], kv[0]))
    for rank, (registrar, n) in enumerate(ranked, start=1):
        share = f"{100.0 * n / total_bulk:.1f}" if total_bulk else ""
        registrar_rows.append([rank, registrar, n, share])
    write_atomic(out_dir / "registrar_summary.csv",
                 _csv_text(["rank", "registrar", "domains", "share"], registrar_rows))
    return results


def _monitor_domain_list(cfg: PipelineConfig) -> list[str]:
    if cfg.monitor_domains is not None:
        path = _require(cfg.monitor_domains, "monitor_domains")
        domains = [l.strip().lower() for l in path.read_text(encoding="utf-8").splitlines()
                   if l.strip() and not l.startswith("#")]
    else:
        _, table = _build_table(cfg)
        domains = [r.registrable for r in table.records]
    return sorted(set(domains))


def cmd_monitor(cfg: PipelineConfig, out_dir: Path, mode: str) -> None:
    vantages = dnsmon.load_vantages(_require(cfg.vantage_config, "vantage_config"))
    domains = _monitor_domain_list(cfg)
    store_path = cfg.snapshot_store or (out_dir / "snapshots.jsonl")
    store = dnsmon.SnapshotStore(store_path)
    monitor_cfg = dnsmon.MonitorConfig(
        interval=timedelta(minutes=cfg.monitor_interval_minutes),
        vantages=vantages,
        types=tuple(cfg.rrtypes),
        backoff_base=cfg.backoff_base_ms / 1000.0,
        backoff_cap=cfg.backoff_cap_ms / 1000.0,
        concurrency=cfg.concurrency,
    )

    if mode == "simulate":
        resolver = dnsmon.ScriptedResolver.from_file(
            _require(cfg.resolver_fixture, "resolver_fixture"))
        clock = dnsmon.SimulatedClock(parse_utc(cfg.monitor_start))
        until = clock.now() + timedelta(minutes=cfg.monitor_duration_minutes)
    else:
        from .dnswire import UdpResolver
        resolver = UdpResolver()
        clock = dnsmon.SystemClock()
        until = None
        if cfg.monitor_duration_minutes > 0:
            until = clock.now() + timedelta(minutes=cfg.monitor_duration_minutes)

    try:
        ticks = dnsmon.run_schedule(domains, monitor_cfg, store, clock, resolver, until=until)
        rounds = str(ticks)
    except KeyboardInterrupt:  # pragma: no cover - live mode only
        rounds = "interrupted"

    snapshots = store.load()
    if not snapshots:
        raise EmptyOutput("no snapshots collected")

    changes = dnsmon.detect_changes(snapshots)
    changed_domains = {c.registrable for c in changes}
    rate = 100.0 * len(changed_domains) / len(domains) if domains else 0.0
    print(f"{rounds} collection rounds over {len(domains)} domains")
    print(f"{rate:.1f}% of domains exhibit record changes "
          f"({len(changed_domains)} of {len(domains)}, {len(changes)} changes)")

    change_rows = [
        [c.registrable, c.rrtype, c.vantage_id,
         ";".join(c.before), ";".join(c.after), format_utc(c.observed_at)]
        for c in sorted(changes, key=lambda c: (c.registrable, c.observed_at, c.rrtype, c.vantage_id))
    ]
    write_atomic(out_dir / "record_changes.csv",
                 _csv_text(["registrable", "rrtype", "vantage_id", "before", "after", "observed_at"],
                           change_rows))

    summary = dnsmon.ttl_stats(snapshots)
    ttl_rows = [
        [d.registrable, d.observations, d.min_ttl, f"{d.median_ttl:.2f}", f"{d.mean_ttl:.2f}"]
        for d in summary.per_domain
    ]
    write_atomic(out_dir / "ttl_summary.csv",
                 _csv_text(["registrable", "observations", "min_ttl", "median_ttl", "mean_ttl"],
                           ttl_rows))
    bucket_rows = [
        ["under_60s", summary.under_60s],
        ["under_3600s", summary.under_3600s],
        ["over_43200s", summary.over_43200s],
        ["between_43200s_and_86400s", summary.between_43200s_and_86400s],
        ["overall_median_ttl", f"{summary.overall_median_ttl:.2f}"],
        ["overall_mean_ttl", f"{summary.overall_mean_ttl:.2f}"],
    ]
    write_atomic(out_dir / "ttl_buckets.csv", _csv_text(["metric", "value"], bucket_rows))


def cmd_lifecycle(cfg: PipelineConfig, out_dir: Path) -> None:
    _, table = _build_table(cfg)
    if not table.records:
        raise EmptyOutput("domain table is empty")
    ctx = _build_classifier_ctx(cfg)
    classifications = {r.registrable: r for r in classifier.classify_all(table.records, ctx)}

    sources, _skipped = lifecycle.load_timestamp_sources(
        _require(cfg.timestamp_sources, "timestamp_sources"))
    registrations = lifecycle.merge_all_registrations(sources)
    records = lifecycle.build_lifecycle_records(
        table.records, classifications, registrations, cfg.reference_source)
    if not records:
        raise EmptyOutput("no lifecycle records")

    rows = []
    for rec in records:
        reg = rec.registration
        rows.append([
            rec.registrable,
            format_utc(reg.registered_at) if reg else "",
            reg.provenance if reg else "",
            format_utc(reg.deregistered_at) if reg and reg.deregistered_at else "",
            _fmt_days(to_days(rec.detection_delay) if rec.detection_delay is not None else None),
            _fmt_days(to_days(rec.takedown_delay) if rec.takedown_delay is not None else None),
            ";".join(classifier.ordered_flags(rec.classification.flags)),
            rec.classification.verdict,
        ])
    write_atomic(out_dir / "lifecycle.csv", _csv_text(
        ["registrable", "registered_at", "provenance", "deregistered_at",
         "detection_delay_days", "takedown_delay_days", "flags", "verdict"],
        rows,
    ))

    plans = [("detection_delay", g) for g in ("brand", "tld", "flag_category", "verdict", "source")]
    plans += [("takedown_delay", g) for g in ("brand", "tld", "flag_category", "verdict")]
    plans += [("lag", "source")]
    for metric, group in plans:
        try:
            report = lifecycle.aggregate(records, metric, group, cfg.reference_source)
        except lifecycle.EmptyInput:
            continue
        agg_rows = [
            [row.key, row.count, _fmt_days(row.mean_days), _fmt_days(row.median_days), row.missing]
            for row in report.rows
        ]
        write_atomic(out_dir / f"agg_{metric}_{group}.csv",
                     _csv_text(["key", "count", "mean_days", "median_days", "missing"], agg_rows))
    print(f"{len(records)} lifecycle records "
          f"({sum(1 for r in records if r.detection_delay is not None)} with detection delay)")


def cmd_squatgen_dump(brand_domain: Optional[str]) -> None:
    writer = csv.writer(sys.stdout, lineterminator="\n")
    if brand_domain:
        writer.writerow(["label", "technique"])
        candidates = squatgen.generate(brand_domain)
        for cand in sorted(candidates, key=lambda c: (c.label, c.technique.value)):
            writer.writerow([cand.label, cand.technique.value])
    else:
        writer.writerow(["character", "replacements"])
        for char in sorted(squatgen.HOMOGLYPHS):
            writer.writerow([char, ";".join(squatgen.HOMOGLYPHS[char])])


def cmd_report(cfg: PipelineConfig, out_dir: Path) -> None:
    cmd_ingest(cfg, out_dir)
    cmd_classify(cfg, out_dir)
    cmd_lifecycle(cfg, out_dir)
    if cfg.resolver_fixture is not None:
        cmd_monitor(cfg, out_dir, mode="simulate")


# ---------------------------------------------------------------- argparse


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--out-dir", default="out", help="output directory")
    common.add_argument("--feeds", help="comma-separated feed paths (overrides config)")
    for key in _PATH_KEYS:
        common.add_argument(f"--{key.replace('_', '-')}")
    common.add_argument("--bulk-window-hours", type=float)
    common.add_argument("--max-edit-distance", type=int)
    common.add_argument("--min-cluster-size", type=int)
    common.add_argument("--min-word-length", type=int)
    common.add_argument("--reference-source")
    common.add_argument("--monitor-interval-minutes", type=float)
    common.add_argument("--monitor-duration-minutes", type=float)
    common.add_argument("--monitor-start")
    common.add_argument("--brand-top-n", type=int)
    common.add_argument("--squat-top-n", type=int)
    common.add_argument("--rrtypes", help="comma-separated record types")
    common.add_argument("--backoff-base-ms", type=float)
    common.add_argument("--backoff-cap-ms", type=float)
    common.add_argument("--concurrency", type=int)

    parser = argparse.ArgumentParser(prog="phishlife", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common])
    sub.add_parser("classify", parents=[common])
    monitor = sub.add_parser("monitor", parents=[common])
    monitor.add_argument("--live", action="store_true",
                         help="query real resolvers instead of the scripted fixture")
    sub.add_parser("lifecycle", parents=[common])
    sub.add_parser("report", parents=[common])
    squat = sub.add_parser("squatgen", parents=[common])
    squat.add_argument("action", choices=["dump"])
    squat.add_argument("--brand-domain", help="dump candidates for one brand domain")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)

    try:
        if args.command == "squatgen":
            cmd_squatgen_dump(args.brand_domain)
            return 0

        cfg = load_config(args.config, args)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        if args.command == "ingest":
            cmd_ingest(cfg, out_dir)
        elif args.command == "classify":
            cmd_classify(cfg, out_dir)
        elif args.command == "monitor":
            cmd_monitor(cfg, out_dir, mode="live" if args.live else "simulate")
        elif args.command == "lifecycle":
            cmd_lifecycle(cfg, out_dir)
        elif args.command == "report":
            cmd_report(cfg, out_dir)
        return 0
    except dnsmon.StoreFailure as exc:
        print(f"store failure: {exc}", file=sys.stderr)
        return EXIT_STORE
    except EmptyOutput as exc:
        print(f"empty output: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (ConfigError, PhishlifeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
