"""DNS record monitoring across vantage points.

Collects snapshots of tracked domains through a pluggable resolver (a
scripted in-memory one for tests and simulation, a real stub client for
operation), detects record changes, and computes TTL and vantage-divergence
analytics. Failed queries are retried with exponential backoff, up to five
attempts.
"""

from __future__ import annotations

import json
import statistics
import threading
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

from .errors import PhishlifeError
from .timeutil import format_utc, parse_utc

RRTYPES = ("A", "AAAA", "CNAME", "NS", "MX", "TXT", "SOA")
MAX_TTL = 2**31 - 1
MAX_ATTEMPTS = 5

STATUS_OK = "ok"
STATUS_FAILED = "failed"


class QueryTimeout(PhishlifeError):
    """The resolver did not answer in time."""


class ServerFailure(PhishlifeError):
    """The resolver answered SERVFAIL."""


class NxDomain(PhishlifeError):
    """The name does not exist (feeds deregistration evidence)."""


class MismatchedSubject(PhishlifeError):
    """Snapshots being diffed are not for the same domain and vantage."""


class NoObservations(PhishlifeError):
    """No Ok snapshot with TTL observations was supplied."""


class StoreFailure(PhishlifeError):
    """The snapshot store could not be written."""


@dataclass(frozen=True)
class VantagePoint:
    id: str
    resolver_address: str
    region_label: str


@dataclass(frozen=True)
class RrSet:
    rrtype: str
    values: tuple[str, ...]
    ttl: int

    def __post_init__(self) -> None:
        if self.rrtype not in RRTYPES:
            raise ValueError(f"unknown rrtype {self.rrtype!r}")
        if not self.values:
            raise ValueError("rrset values must be non-empty")
        if not 0 <= self.ttl <= MAX_TTL:
            raise ValueError(f"ttl out of range: {self.ttl}")


@dataclass(frozen=True)
class DnsSnapshot:
    registrable: str
    vantage_id: str
    taken_at: datetime
    rrsets: tuple[RrSet, ...]
    status: str
    attempts: int
    errors: tuple[str, ...] = ()
    nxdomain: bool = False

    def to_json(self) -> str:
        return json.dumps({
            "registrable": self.registrable,
            "vantage_id": self.vantage_id,
            "taken_at": format_utc(self.taken_at),
            "rrsets": [
                {"rrtype": r.rrtype, "values": list(r.values), "ttl": r.ttl}
                for r in self.rrsets
            ],
            "status": self.status,
            "attempts": self.attempts,
            "errors": list(self.errors),
            "nxdomain": self.nxdomain,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "DnsSnapshot":
        obj = json.loads(line)
        return cls(
            registrable=obj["registrable"],
            vantage_id=obj["vantage_id"],
            taken_at=parse_utc(obj["taken_at"]),
            rrsets=tuple(
                RrSet(r["rrtype"], tuple(r["values"]), int(r["ttl"]))
                for r in obj["rrsets"]
            ),
            status=obj["status"],
            attempts=int(obj["attempts"]),
            errors=tuple(obj.get("errors", ())),
            nxdomain=bool(obj.get("nxdomain", False)),
        )


@dataclass(frozen=True)
class RecordChange:
    registrable: str
    rrtype: str
    vantage_id: str
    before: tuple[str, ...]
    after: tuple[str, ...]
    observed_at: datetime


@dataclass(frozen=True)
class DomainTtl:
    registrable: str
    observations: int
    min_ttl: int
    median_ttl: float
    mean_ttl: float


@dataclass(frozen=True)
class TtlSummary:
    """Per-domain TTL statistics plus fast-flux bucket counts.

    A domain counts in a bucket when its minimum observed TTL falls in it;
    bucket bounds are strict (a 3600 s TTL is not "under 3600 s").
    """

    per_domain: tuple[DomainTtl, ...]
    under_60s: int
    under_3600s: int
    over_43200s: int
    between_43200s_and_86400s: int
    overall_median_ttl: float
    overall_mean_ttl: float


@dataclass(frozen=True)
class DivergenceReport:
    registrable: str
    rrtypes: tuple[str, ...]
    # rrtype -> groups of vantage ids that saw the same answer multiset
    vantage_partition: dict[str, tuple[tuple[str, ...], ...]]


class Clock(Protocol):
    def now(self) -> datetime: ...
    def sleep(self, seconds: float) -> None: ...


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(tz=timezone.utc)

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            _time.sleep(seconds)


class SimulatedClock:
    """Deterministic clock for tests and simulate mode.

    sleep() advances simulated time instead of blocking; every sleep is
    recorded so backoff schedules can be asserted.
    """

    def __init__(self, start: datetime):
        if start.tzinfo is None:
            start = start.replace(tzinfo=timezone.utc)
        self._now = start
        self._lock = threading.Lock()
        self.sleeps: list[float] = []

    def now(self) -> datetime:
        with self._lock:
            return self._now

    def sleep(self, seconds: float) -> None:
        if seconds < 0:
            return
        with self._lock:
            self.sleeps.append(seconds)
            self._now += timedelta(seconds=seconds)


class Resolver(Protocol):
    def query(self, vantage: VantagePoint, domain: str, rrtype: str) -> Optional[RrSet]:
        """Return the rrset, None for an empty answer, or raise a query error."""


class ScriptedResolver:
    """In-memory resolver driven by a fixture script.

    The script maps ``domain -> rrtype -> [step, ...]`` where each step is
    either the string "nxdomain", the string "servfail", or an object
    ``{"values": [...], "ttl": N, "fail_count_before_success": K}``. A step
    times out K times before answering; each delivered answer (or nxdomain)
    advances to the next step, and the last step repeats. Keys of the form
    ``domain@vantage_id`` override the plain domain entry for one vantage.
    Domains absent from the script resolve as nxdomain.
    """

    def __init__(self, script: dict):
        self._script = script
        self._cursor: dict[tuple[str, str, str], int] = {}
        self._fails: dict[tuple[str, str, str], int] = {}
        self._lock = threading.Lock()
        self.query_counts: dict[tuple[str, str, str], int] = {}

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedResolver":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def _steps(self, vantage: VantagePoint, domain: str, rrtype: str):
        per_vantage = self._script.get(f"{domain}@{vantage.id}")
        entry = per_vantage if per_vantage is not None else self._script.get(domain)
        if entry is None:
            raise NxDomain(domain)
        return entry.get(rrtype)

    def query(self, vantage: VantagePoint, domain: str, rrtype: str) -> Optional[RrSet]:
        key = (vantage.id, domain, rrtype)
        with self._lock:
            self.query_counts[key] = self.query_counts.get(key, 0) + 1
            steps = self._steps(vantage, domain, rrtype)
            if not steps:
                return None  # name exists but has no records of this type
            idx = min(self._cursor.get(key, 0), len(steps) - 1)
            step = steps[idx]

            if step == "nxdomain":
                self._cursor[key] = idx + 1
                raise NxDomain(domain)
            if step == "servfail":
                raise ServerFailure(domain)

            fails_needed = int(step.get("fail_count_before_success", 0))
            if self._fails.get(key, 0) < fails_needed:
                self._fails[key] = self._fails.get(key, 0) + 1
                raise QueryTimeout(f"{domain}/{rrtype} (scripted)")

            self._cursor[key] = idx + 1
            self._fails[key] = 0
            values = tuple(step.get("values", ()))
            if not values:
                return None
            return RrSet(rrtype=rrtype, values=values, ttl=int(step.get("ttl", 0)))


def backoff_delays(base: float, cap: float, max_attempts: int = MAX_ATTEMPTS) -> list[float]:
    """Delays slept between attempts: base, 2*base, ... capped at cap."""
    return [min(base * (2 ** k), cap) for k in range(max_attempts - 1)]


@dataclass
class MonitorConfig:
    interval: timedelta
    vantages: list[VantagePoint]
    types: Sequence[str] = ("A", "AAAA", "NS", "MX", "TXT")
    backoff_base: float = 0.5
    backoff_cap: float = 8.0
    concurrency: int = 64


def _query_with_retry(
    resolver: Resolver,
    vantage: VantagePoint,
    domain: str,
    rrtype: str,
    clock: Clock,
    backoff_base: float,
    backoff_cap: float,
) -> tuple[Optional[RrSet], int, Optional[str], bool]:
    """Returns (rrset, attempts_used, error_note, nxdomain)."""
    delays = backoff_delays(backoff_base, backoff_cap)
    for attempt in range(1, MAX_ATTEMPTS + 1):
        try:
            return resolver.query(vantage, domain, rrtype), attempt, None, False
        except NxDomain:
            return None, attempt, None, True
        except (QueryTimeout, ServerFailure) as exc:
            if attempt == MAX_ATTEMPTS:
                kind = "timeout" if isinstance(exc, QueryTimeout) else "servfail"
                return None, attempt, f"{rrtype}:{kind}", False
            clock.sleep(delays[attempt - 1])
    raise AssertionError("unreachable")


def collect_snapshot(
    domain: str,
    vantages: Sequence[VantagePoint],
    types: Sequence[str],
    resolver: Resolver,
    clock: Optional[Clock] = None,
    taken_at: Optional[datetime] = None,
    backoff_base: float = 0.5,
    backoff_cap: float = 8.0,
) -> list[DnsSnapshot]:
    """Collect one snapshot per vantage for a domain.

    Partial rrtype failures downgrade to Ok with the failed type noted;
    only a snapshot with no answered rrtype at all is marked failed.
    """
    if not vantages:
        raise ValueError("vantages must be non-empty")
    clock = clock or SystemClock()
    at = taken_at or clock.now()

    snapshots = []
    for vantage in vantages:
        rrsets: list[RrSet] = []
        errors: list[str] = []
        nxdomain = False
        answered = False
        max_attempts_used = 1
        for rrtype in types:
            rrset, attempts, error, is_nx = _query_with_retry(
                resolver, vantage, domain, rrtype, clock, backoff_base, backoff_cap,
            )
            max_attempts_used = max(max_attempts_used, attempts)
            if is_nx:
                nxdomain = True
                answered = True  # a definitive negative answer, not a failure
            elif error is not None:
                errors.append(error)
            else:
                answered = True
                if rrset is not None:
                    rrsets.append(rrset)
        status = STATUS_OK if answered else STATUS_FAILED
        snapshots.append(DnsSnapshot(
            registrable=domain,
            vantage_id=vantage.id,
            taken_at=at,
            rrsets=tuple(rrsets) if status == STATUS_OK else (),
            status=status,
            attempts=max_attempts_used,
            errors=tuple(errors),
            nxdomain=nxdomain,
        ))
    return snapshots


class SnapshotStore:
    """Append-only JSON-lines store, one DnsSnapshot per line."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append_many(self, snapshots: Iterable[DnsSnapshot]) -> None:
        lines = [snap.to_json() for snap in snapshots]
        if not lines:
            return
        try:
            with self._lock:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    for line in lines:
                        fh.write(line + "\n")
        except OSError as exc:
            raise StoreFailure(f"cannot append to {self.path}: {exc}") from exc

    def append(self, snapshot: DnsSnapshot) -> None:
        self.append_many([snapshot])

    def load(self) -> list[DnsSnapshot]:
        if not self.path.exists():
            return []
        try:
            with open(self.path, encoding="utf-8") as fh:
                return [DnsSnapshot.from_json(line) for line in fh if line.strip()]
        except OSError as exc:
            raise StoreFailure(f"cannot read {self.path}: {exc}") from exc


def run_schedule(
    domains: Sequence[str],
    config: MonitorConfig,
    store: SnapshotStore,
    clock: Clock,
    resolver: Resolver,
    until: Optional[datetime] = None,
    max_ticks: Optional[int] = None,
) -> int:
    """Collect every domain once per interval tick until stopped.

    Ticks fire after each full interval elapses; results are appended to
    the store in (domain, vantage) order so runs are deterministic. Returns
    the number of completed ticks.
    """
    if config.interval <= timedelta(0):
        raise ValueError("interval must be positive")
    start = clock.now()
    next_due = start + config.interval
    ticks = 0

    while True:
        if until is not None and next_due > until:
            break
        if max_ticks is not None and ticks >= max_ticks:
            break
        gap = (next_due - clock.now()).total_seconds()
        if gap > 0:
            clock.sleep(gap)

        def collect_one(domain: str) -> list[DnsSnapshot]:
            return collect_snapshot(
                domain, config.vantages, config.types, resolver,
                clock=clock, taken_at=next_due,
                backoff_base=config.backoff_base, backoff_cap=config.backoff_cap,
            )

        if not domains:
            results: list[list[DnsSnapshot]] = []
        elif config.concurrency > 1:
            with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
                results = list(pool.map(collect_one, domains))
        else:
            results = [collect_one(d) for d in domains]

        store.append_many(snap for group in results for snap in group)
        next_due += config.interval
        ticks += 1
    return ticks


def _failed_types(snapshot: DnsSnapshot) -> set[str]:
    return {err.split(":", 1)[0] for err in snapshot.errors}


def _values_by_type(snapshot: DnsSnapshot) -> dict[str, list[str]]:
    merged: dict[str, list[str]] = {}
    for rrset in snapshot.rrsets:
        merged.setdefault(rrset.rrtype, []).extend(rrset.values)
    return {t: sorted(v) for t, v in merged.items()}


def diff_snapshots(prev: DnsSnapshot, next: DnsSnapshot) -> list[RecordChange]:
    """Changes between two snapshots of the same domain from one vantage.

    One RecordChange per rrtype whose value multiset differs; TTL-only
    drift and value reordering are not changes. Rrtypes whose query failed
    on either side are skipped rather than reported as disappearances.
    """
    if prev.registrable != next.registrable or prev.vantage_id != next.vantage_id:
        raise MismatchedSubject(f"{prev.registrable}/{prev.vantage_id} vs {next.registrable}/{next.vantage_id}")
    if not prev.taken_at < next.taken_at:
        raise MismatchedSubject("snapshots out of order")

    before_map = _values_by_type(prev)
    after_map = _values_by_type(next)
    skip = _failed_types(prev) | _failed_types(next)
    changes = []
    for rrtype in sorted(set(before_map) | set(after_map)):
        if rrtype in skip:
            continue
        before = before_map.get(rrtype, [])
        after = after_map.get(rrtype, [])
        if before != after:
            changes.append(RecordChange(
                registrable=prev.registrable,
                rrtype=rrtype,
                vantage_id=prev.vantage_id,
                before=tuple(before),
                after=tuple(after),
                observed_at=next.taken_at,
            ))
    return changes


def detect_changes(snapshots: Iterable[DnsSnapshot]) -> list[RecordChange]:
    """Diff consecutive Ok snapshots per (domain, vantage) across a store."""
    series: dict[tuple[str, str], list[DnsSnapshot]] = {}
    for snap in snapshots:
        if snap.status != STATUS_OK:
            continue
        series.setdefault((snap.registrable, snap.vantage_id), []).append(snap)

    changes: list[RecordChange] = []
    for key in sorted(series):
        chain = sorted(series[key], key=lambda s: s.taken_at)
        for prev, nxt in zip(chain, chain[1:]):
            if prev.taken_at == nxt.taken_at:
                continue
            changes.extend(diff_snapshots(prev, nxt))
    return changes


def ttl_stats(snapshots: Iterable[DnsSnapshot]) -> TtlSummary:
    """Per-domain TTL statistics and fast-flux bucket counts."""
    ttls_by_domain: dict[str, list[int]] = {}
    for snap in snapshots:
        if snap.status != STATUS_OK:
            continue
        for rrset in snap.rrsets:
            ttls_by_domain.setdefault(snap.registrable, []).append(rrset.ttl)

    if not ttls_by_domain:
        raise NoObservations("no Ok snapshots with rrsets")

    per_domain = []
    under_60 = under_3600 = over_43200 = between = 0
    for registrable in sorted(ttls_by_domain):
        ttls = ttls_by_domain[registrable]
        low = min(ttls)
        per_domain.append(DomainTtl(
            registrable=registrable,
            observations=len(ttls),
            min_ttl=low,
            median_ttl=float(statistics.median_low(ttls)),
            mean_ttl=statistics.fmean(ttls),
        ))
        if low < 60:
            under_60 += 1
        if low < 3600:
            under_3600 += 1
        if low > 43200:
            over_43200 += 1
            if low < 86400:
                between += 1

    medians = [d.median_ttl for d in per_domain]
    return TtlSummary(
        per_domain=tuple(per_domain),
        under_60s=under_60,
        under_3600s=under_3600,
        over_43200s=over_43200,
        between_43200s_and_86400s=between,
        overall_median_ttl=float(statistics.median_low(medians)),
        overall_mean_ttl=statistics.fmean(medians),
    )


def vantage_divergence(snapshots_same_tick: Sequence[DnsSnapshot]) -> Optional[DivergenceReport]:
    """Partition vantages by distinct answer multisets per rrtype.

    Returns None when fewer than two Ok snapshots are supplied or when all
    vantages agree (TTL differences do not count).
    """
    ok = [s for s in snapshots_same_tick if s.status == STATUS_OK]
    if len(ok) < 2:
        return None
    subjects = {s.registrable for s in ok}
    if len(subjects) != 1:
        raise MismatchedSubject(f"multiple domains in one tick group: {sorted(subjects)}")

    rrtypes = sorted({t for s in ok for t in _values_by_type(s)})
    partition: dict[str, tuple[tuple[str, ...], ...]] = {}
    divergent: list[str] = []
    for rrtype in rrtypes:
        groups: dict[tuple[str, ...], list[str]] = {}
        for snap in ok:
            if rrtype in _failed_types(snap):
                continue
            answer = tuple(_values_by_type(snap).get(rrtype, []))
            groups.setdefault(answer, []).append(snap.vantage_id)
        if len(groups) > 1:
            divergent.append(rrtype)
            partition[rrtype] = tuple(sorted(
                tuple(sorted(v)) for v in groups.values()
            ))
    if not divergent:
        return None
    return DivergenceReport(
        registrable=ok[0].registrable,
        rrtypes=tuple(divergent),
        vantage_partition=partition,
    )


def load_vantages(path: str | Path) -> list[VantagePoint]:
    """Load vantage points from a JSON array of {id, resolver_address, region_label}."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    vantages = [
        VantagePoint(id=v["id"], resolver_address=v["resolver_address"],
                     region_label=v.get("region_label", ""))
        for v in raw
    ]
    ids = [v.id for v in vantages]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate vantage ids in {path}")
    return vantages
