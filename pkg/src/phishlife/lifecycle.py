"""Domain lifecycle reconciliation and delay statistics.

Merges registration and deregistration timestamps from heterogeneous
sources, joins them with blocklist detections and classification verdicts,
and computes detection-delay, takedown-delay, and blocklist-lag aggregates.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .classifier import ClassificationResult
from .errors import IoFailure, PhishlifeError
from .ingest import DomainRecord
from .timeutil import parse_utc, to_days

KIND_WHOIS = "whois"
KIND_RDAP = "rdap"
KIND_CT = "ct_log"
KIND_PDNS = "passive_dns_first_seen"
KIND_ZONE_FIRST = "zone_first_appearance"
KIND_ZONE_LAST = "zone_last_seen"

# earliest-timestamp ties are broken by this order
KIND_ORDER = {
    KIND_WHOIS: 0,
    KIND_RDAP: 1,
    KIND_CT: 2,
    KIND_PDNS: 3,
    KIND_ZONE_FIRST: 4,
    KIND_ZONE_LAST: 5,
}

PRE_REGISTRATION_DETECTION = "pre_registration_detection"
DEREGISTERED_BEFORE_DETECTION = "deregistered_before_detection"

GROUP_KEYS = ("brand", "tld", "flag_category", "verdict", "source")


class NoRegistrationEvidence(PhishlifeError):
    """Only last-seen data (or nothing) is available for the domain."""


class ReferenceMissing(PhishlifeError):
    """The reference blocklist source never detected the domain."""


class EmptyInput(PhishlifeError):
    """No records, or no record carries the grouping attribute."""


@dataclass(frozen=True)
class TimestampSource:
    kind: str
    registrable: str
    at: datetime


@dataclass(frozen=True)
class RegistrationEvent:
    registrable: str
    registered_at: datetime
    provenance: str
    deregistered_at: Optional[datetime] = None


@dataclass
class LifecycleRecord:
    registrable: str
    registration: Optional[RegistrationEvent]
    detections: dict[str, datetime]
    detection_delay: Optional[timedelta]
    takedown_delay: Optional[timedelta]
    classification: ClassificationResult
    brands: frozenset[str] = frozenset()
    public_suffix: str = ""
    data_flags: frozenset[str] = frozenset()


@dataclass(frozen=True)
class AggregateRow:
    key: str
    count: int
    mean_days: Optional[float]
    median_days: Optional[float]
    missing: int


@dataclass
class AggregateReport:
    group_key: str
    metric: str
    rows: list[AggregateRow]
    ungrouped: int = 0


def load_timestamp_sources(path: str | Path) -> tuple[list[TimestampSource], int]:
    """Load a timestamp-source CSV (``registrable,kind,at``, header required).

    Rows with an unknown kind or unparseable timestamp are skipped and
    counted.
    """
    sources: list[TimestampSource] = []
    skipped = 0
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != [
                "registrable", "kind", "at",
            ]:
                raise IoFailure(f"{path}: expected header registrable,kind,at")
            for row in reader:
                kind = row.get("kind", "").strip()
                if kind not in KIND_ORDER:
                    skipped += 1
                    continue
                try:
                    at = parse_utc(row.get("at", ""))
                except ValueError:
                    skipped += 1
                    continue
                sources.append(TimestampSource(
                    kind=kind, registrable=row["registrable"].strip().lower(), at=at,
                ))
    except OSError as exc:
        raise IoFailure(f"cannot read timestamp sources {path}: {exc}") from exc
    return sources, skipped


def merge_registration(sources: list[TimestampSource]) -> RegistrationEvent:
    """Merge one domain's timestamp sources into a registration event.

    registered_at is the earliest instant among the non-last-seen kinds
    (ties broken by kind order); deregistered_at is the latest
    zone_last_seen when present.
    """
    if not sources:
        raise NoRegistrationEvidence("no sources supplied")
    subjects = {s.registrable for s in sources}
    if len(subjects) != 1:
        raise ValueError(f"sources span multiple domains: {sorted(subjects)}")

    reg_sources = [s for s in sources if s.kind != KIND_ZONE_LAST]
    if not reg_sources:
        raise NoRegistrationEvidence(f"only last-seen data for {sources[0].registrable}")
    best = min(reg_sources, key=lambda s: (s.at, KIND_ORDER[s.kind]))

    last_seen = [s.at for s in sources if s.kind == KIND_ZONE_LAST]
    return RegistrationEvent(
        registrable=best.registrable,
        registered_at=best.at,
        provenance=best.kind,
        deregistered_at=max(last_seen) if last_seen else None,
    )


def merge_all_registrations(sources: Iterable[TimestampSource]) -> dict[str, RegistrationEvent]:
    """Group sources per domain and merge; domains without registration evidence are omitted."""
    grouped: dict[str, list[TimestampSource]] = {}
    for src in sources:
        grouped.setdefault(src.registrable, []).append(src)
    events: dict[str, RegistrationEvent] = {}
    for registrable, group in grouped.items():
        try:
            events[registrable] = merge_registration(group)
        except NoRegistrationEvidence:
            continue
    return events


def detection_delay(
    reg: Optional[RegistrationEvent],
    detections: Mapping[str, datetime],
    reference_source: str,
) -> Optional[timedelta]:
    """Reference detection minus registration, when both are known."""
    if reg is None or reference_source not in detections:
        return None
    return detections[reference_source] - reg.registered_at


def takedown_delay(
    reg: Optional[RegistrationEvent],
    detections: Mapping[str, datetime],
    reference_source: str,
) -> Optional[timedelta]:
    """Deregistration minus reference detection, when both are known."""
    if reg is None or reg.deregistered_at is None or reference_source not in detections:
        return None
    return reg.deregistered_at - detections[reference_source]


def blocklist_lag(
    detections: Mapping[str, datetime], reference_source: str,
) -> dict[str, timedelta]:
    """Per-source detection lag relative to the reference blocklist.

    Negative lags mean the other list was earlier.
    """
    if reference_source not in detections:
        raise ReferenceMissing(f"{reference_source} not among detections")
    ref = detections[reference_source]
    return {
        source: at - ref
        for source, at in detections.items()
        if source != reference_source
    }


def build_lifecycle_records(
    domain_records: list[DomainRecord],
    classifications: Mapping[str, ClassificationResult],
    registrations: Mapping[str, RegistrationEvent],
    reference_source: str = "apwg",
) -> list[LifecycleRecord]:
    """Join the domain table, classifications, and registration events."""
    records = []
    for rec in sorted(domain_records, key=lambda r: r.registrable):
        reg = registrations.get(rec.registrable)
        det = detection_delay(reg, rec.first_detections, reference_source)
        take = takedown_delay(reg, rec.first_detections, reference_source)
        data_flags = set()
        if det is not None and det < timedelta(0):
            data_flags.add(PRE_REGISTRATION_DETECTION)
        if take is not None and take < timedelta(0):
            data_flags.add(DEREGISTERED_BEFORE_DETECTION)
        records.append(LifecycleRecord(
            registrable=rec.registrable,
            registration=reg,
            detections=dict(rec.first_detections),
            detection_delay=det,
            takedown_delay=take,
            classification=classifications[rec.registrable],
            brands=frozenset(rec.brands),
            public_suffix=rec.public_suffix,
            data_flags=frozenset(data_flags),
        ))
    return records


def _group_values(record: LifecycleRecord, group_key: str) -> list[str]:
    if group_key == "brand":
        return sorted(record.brands)
    if group_key == "tld":
        return [record.public_suffix]
    if group_key == "flag_category":
        return sorted(record.classification.flags)
    if group_key == "verdict":
        return [record.classification.verdict]
    if group_key == "source":
        return sorted(record.detections)
    raise ValueError(f"unknown group key {group_key!r}")


def _metric_value(
    record: LifecycleRecord, metric: str, group: str, reference_source: str,
) -> Optional[float]:
    if metric == "detection_delay":
        return to_days(record.detection_delay) if record.detection_delay is not None else None
    if metric == "takedown_delay":
        return to_days(record.takedown_delay) if record.takedown_delay is not None else None
    if metric == "lag":
        # group is a blocklist source; value is its lag behind the reference
        if reference_source not in record.detections or group not in record.detections:
            return None
        return to_days(record.detections[group] - record.detections[reference_source])
    if metric.startswith("lag:"):
        source = metric.split(":", 1)[1]
        if reference_source not in record.detections or source not in record.detections:
            return None
        return to_days(record.detections[source] - record.detections[reference_source])
    raise ValueError(f"unknown metric {metric!r}")


def aggregate(
    records: list[LifecycleRecord],
    metric: str,
    group_key: str,
    reference_source: str = "apwg",
) -> AggregateReport:
    """Group records and compute count/mean/median of a delay metric.

    Records lacking the metric are excluded from a row's statistics but
    counted in its missing column; records lacking the grouping attribute
    are tallied as ungrouped. Medians use lower interpolation. Rows sort by
    count descending, then key.
    """
    if not records:
        raise EmptyInput("no records")
    if group_key not in GROUP_KEYS:
        raise ValueError(f"unknown group key {group_key!r}")
    if metric == "lag" and group_key != "source":
        raise ValueError("metric 'lag' requires group_key 'source'")

    values: dict[str, list[float]] = {}
    missing: dict[str, int] = {}
    ungrouped = 0
    grouped_any = False
    for record in records:
        groups = _group_values(record, group_key)
        if metric == "lag":
            groups = [g for g in groups if g != reference_source]
        if not groups:
            ungrouped += 1
            continue
        grouped_any = True
        for group in groups:
            value = _metric_value(record, metric, group, reference_source)
            if value is None:
                missing[group] = missing.get(group, 0) + 1
                values.setdefault(group, [])
            else:
                values.setdefault(group, []).append(value)
                missing.setdefault(group, 0)

    if not grouped_any:
        raise EmptyInput(f"no record carries grouping attribute {group_key!r}")

    rows = []
    for key in values:
        vals = sorted(values[key])
        rows.append(AggregateRow(
            key=key,
            count=len(vals),
            mean_days=statistics.fmean(vals) if vals else None,
            median_days=float(statistics.median_low(vals)) if vals else None,
            missing=missing.get(key, 0),
        ))
    rows.sort(key=lambda r: (-r.count, r.key))
    return AggregateReport(group_key=group_key, metric=metric, rows=rows, ungrouped=ungrouped)
