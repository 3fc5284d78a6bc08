"""Maliciously-registered-domain classification.

Runs the allowlist/platform prefilter and then four non-exclusive checks
over each domain: brand name in domain, squatted domain, random-looking
label, and bulk registration. Any firing check yields a
MaliciousRegistration verdict; otherwise the domain is Compromised.
"""

from __future__ import annotations

import csv
import enum
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Mapping, NamedTuple, Optional

from .errors import IoFailure, PhishlifeError
from .ingest import DomainRecord
from .squatgen import BrandCatalog, SquatIndex, match as squat_match
from .timeutil import parse_utc

BRAND_IN_DOMAIN = "brand_in_domain"
SQUATTED = "squatted"
RANDOM_LOOKING = "random_looking"
BULK_REGISTERED = "bulk_registered"
FLAG_ORDER = (BRAND_IN_DOMAIN, SQUATTED, RANDOM_LOOKING, BULK_REGISTERED)

VERDICT_MALICIOUS = "MaliciousRegistration"
VERDICT_COMPROMISED = "Compromised"
VERDICT_PLATFORM = "PlatformSubdomainAbuse"
VERDICT_ALLOWLISTED = "Allowlisted"

_STRIP_RE = re.compile(r"[0-9-]")


class EmptyAllowlist(PhishlifeError):
    """The allowlist file parsed to zero domains."""


class PrefilterResult(enum.Enum):
    ALLOWLISTED = "allowlisted"
    PLATFORM_SUBDOMAIN_ABUSE = "platform_subdomain_abuse"
    CANDIDATE = "candidate"


@dataclass(frozen=True)
class Allowlist:
    domains: frozenset[str]
    ranks: dict[str, int]

    def __contains__(self, registrable: str) -> bool:
        return registrable in self.domains


@dataclass(frozen=True)
class WordList:
    words: frozenset[str]


@dataclass(frozen=True)
class RegistrationLogEntry:
    registrable: str
    registered_at: datetime
    registrar: str


@dataclass(frozen=True)
class BulkCluster:
    """A connected group of similar names registered together."""

    members: frozenset[str]
    registrar: str
    window_start: datetime


class BrandHit(NamedTuple):
    brand_id: str
    location: str  # "registrable_label" | "subdomain"


@dataclass
class ClassificationResult:
    registrable: str
    flags: frozenset[str]
    verdict: str
    evidence: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class ClassifierContext:
    """Immutable inputs shared across classify() calls."""

    allow: Allowlist
    catalog: BrandCatalog
    squat_index: SquatIndex
    word_list: WordList
    bulk_membership: Mapping[str, BulkCluster]
    min_word_len: int = 4


def load_allowlist(path: str | Path) -> Allowlist:
    """Load an allowlist as CSV ``rank,domain`` or one domain per line.

    Duplicate domains keep the lowest rank.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read allowlist {path}: {exc}") from exc

    ranks: dict[str, int] = {}
    line_no = 0
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        line_no += 1
        if "," in line:
            rank_str, domain = line.split(",", 1)
            try:
                rank = int(rank_str)
            except ValueError:
                continue
        else:
            domain, rank = line, line_no
        domain = domain.strip().lower()
        if not domain:
            continue
        if domain not in ranks or rank < ranks[domain]:
            ranks[domain] = rank
    if not ranks:
        raise EmptyAllowlist(f"no domains parsed from {path}")
    return Allowlist(domains=frozenset(ranks), ranks=ranks)


def load_word_list(path: str | Path) -> WordList:
    """Load a dictionary file, one lowercase word per line."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read word list {path}: {exc}") from exc
    words = frozenset(w.strip().lower() for w in text.splitlines() if w.strip())
    return WordList(words=words)


def load_registration_log(path: str | Path) -> list[RegistrationLogEntry]:
    """Load a registration log CSV (``registrable,registered_at,registrar``, header required)."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != [
                "registrable", "registered_at", "registrar",
            ]:
                raise IoFailure(f"{path}: expected header registrable,registered_at,registrar")
            entries = [
                RegistrationLogEntry(
                    registrable=row["registrable"].strip().lower(),
                    registered_at=parse_utc(row["registered_at"]),
                    registrar=row["registrar"].strip(),
                )
                for row in reader
            ]
    except OSError as exc:
        raise IoFailure(f"cannot read registration log {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise IoFailure(f"malformed registration log {path}: {exc}") from exc
    return entries


def prefilter(record: DomainRecord, allow: Allowlist) -> PrefilterResult:
    """Apply the allowlist/platform filter before the four checks.

    An allowlisted registrable seen only bare is legitimate; seen under any
    subdomain it is platform abuse (a hosting or site-builder service).
    """
    if record.registrable not in allow:
        return PrefilterResult.CANDIDATE
    if record.subdomain or record.subdomain_count > 0:
        return PrefilterResult.PLATFORM_SUBDOMAIN_ABUSE
    return PrefilterResult.ALLOWLISTED


def match_brand(record: DomainRecord, catalog: BrandCatalog) -> Optional[BrandHit]:
    """Search the top brand ids inside the domain's labels.

    Brand ids of 4+ characters match as substrings of the second-level
    label or any subdomain label; shorter ids require a whole-label or
    hyphen-delimited-token match. The lowest-ranked brand wins, and the
    registrable label is preferred over subdomain labels.
    """
    sld = record.registrable.split(".", 1)[0]
    scan: list[tuple[str, str]] = [("registrable_label", sld)]
    scan += [("subdomain", lbl) for lbl in record.subdomain.split(".") if lbl]

    for brand in catalog.top_brands():
        bid = brand.brand_id
        for location, label in scan:
            if len(bid) >= 4:
                hit = bid in label
            else:
                hit = bid == label or bid in label.split("-")
            if hit:
                return BrandHit(brand_id=bid, location=location)
    return None


def is_random_looking(record: DomainRecord, words: WordList, min_word_len: int = 4) -> bool:
    """True iff the second-level label contains no dictionary word.

    Digits and hyphens are stripped first; only words of at least
    min_word_len characters count. A label that strips to fewer than
    min_word_len characters is random by convention.
    """
    label = record.registrable.split(".", 1)[0]
    stripped = _STRIP_RE.sub("", label)
    if len(stripped) < min_word_len:
        return True
    for length in range(min_word_len, len(stripped) + 1):
        for i in range(len(stripped) - length + 1):
            if stripped[i:i + length] in words.words:
                return False
    return True


def levenshtein(a: str, b: str) -> int:
    """Edit distance between two strings (two-row dynamic program)."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a):
        current = [i + 1]
        for j, cb in enumerate(b):
            current.append(min(
                previous[j + 1] + 1,        # deletion
                current[j] + 1,             # insertion
                previous[j] + (ca != cb),   # substitution
            ))
        previous = current
    return previous[-1]


def _window_start(at: datetime, window: timedelta) -> datetime:
    seconds = int(window.total_seconds())
    bucket = int(at.timestamp()) // seconds
    return datetime.fromtimestamp(bucket * seconds, tz=timezone.utc)


def cluster_bulk(
    log: list[RegistrationLogEntry],
    window: timedelta = timedelta(hours=24),
    max_edit_distance: int = 2,
    min_cluster_size: int = 3,
) -> list[BulkCluster]:
    """Find groups of similar names registered together at one registrar.

    Entries are bucketed by registrar and a tumbling, epoch-aligned window
    over registered_at; within a bucket, second-level labels within
    max_edit_distance form edges, and connected components of at least
    min_cluster_size become clusters.
    """
    if window <= timedelta(0):
        raise ValueError("window must be positive")

    buckets: dict[tuple[str, datetime], set[str]] = {}
    for entry in log:
        key = (entry.registrar, _window_start(entry.registered_at, window))
        buckets.setdefault(key, set()).add(entry.registrable)

    clusters: list[BulkCluster] = []
    for (registrar, start), members in buckets.items():
        domains = sorted(members)
        if len(domains) < min_cluster_size:
            continue
        labels = [d.split(".", 1)[0] for d in domains]
        parent = list(range(len(domains)))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i in range(len(domains)):
            for j in range(i + 1, len(domains)):
                if levenshtein(labels[i], labels[j]) <= max_edit_distance:
                    parent[find(i)] = find(j)

        components: dict[int, set[str]] = {}
        for i, domain in enumerate(domains):
            components.setdefault(find(i), set()).add(domain)
        for comp in components.values():
            if len(comp) >= min_cluster_size:
                clusters.append(BulkCluster(
                    members=frozenset(comp), registrar=registrar, window_start=start,
                ))

    clusters.sort(key=lambda c: (c.registrar, c.window_start, min(c.members)))
    return clusters


def bulk_membership(clusters: list[BulkCluster]) -> dict[str, BulkCluster]:
    """Map each clustered registrable to its cluster."""
    members: dict[str, BulkCluster] = {}
    for cluster in clusters:
        for domain in cluster.members:
            members[domain] = cluster
    return members


def classify(record: DomainRecord, ctx: ClassifierContext) -> ClassificationResult:
    """Run the prefilter and the four checks over one domain record."""
    pre = prefilter(record, ctx.allow)
    if pre is PrefilterResult.ALLOWLISTED:
        return ClassificationResult(record.registrable, frozenset(), VERDICT_ALLOWLISTED)
    if pre is PrefilterResult.PLATFORM_SUBDOMAIN_ABUSE:
        return ClassificationResult(
            record.registrable, frozenset(), VERDICT_PLATFORM,
            evidence=[("platform", f"subdomain of allowlisted {record.registrable}")],
        )

    flags: set[str] = set()
    evidence: list[tuple[str, str]] = []

    brand_hit = match_brand(record, ctx.catalog)
    if brand_hit:
        flags.add(BRAND_IN_DOMAIN)
        evidence.append((BRAND_IN_DOMAIN, f"{brand_hit.brand_id} in {brand_hit.location}"))

    squat_hit = squat_match(ctx.squat_index, record)
    if squat_hit:
        flags.add(SQUATTED)
        evidence.append((SQUATTED, f"{squat_hit.technique.value} variant of {squat_hit.brand_id}"))

    # random-looking is only evaluated once brand and squat have both passed
    if not brand_hit and not squat_hit:
        if is_random_looking(record, ctx.word_list, ctx.min_word_len):
            flags.add(RANDOM_LOOKING)
            label = record.registrable.split(".", 1)[0]
            evidence.append((RANDOM_LOOKING, f"no dictionary word in {label!r}"))

    cluster = ctx.bulk_membership.get(record.registrable)
    if cluster is not None:
        flags.add(BULK_REGISTERED)
        evidence.append((BULK_REGISTERED, f"cluster of {len(cluster.members)} via {cluster.registrar}"))

    verdict = VERDICT_MALICIOUS if flags else VERDICT_COMPROMISED
    return ClassificationResult(record.registrable, frozenset(flags), verdict, evidence)


def classify_all(records: list[DomainRecord], ctx: ClassifierContext) -> list[ClassificationResult]:
    return [classify(record, ctx) for record in records]


def ordered_flags(flags: frozenset[str]) -> list[str]:
    return [f for f in FLAG_ORDER if f in flags]
