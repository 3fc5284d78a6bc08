"""Blocklist feed ingestion.

Parses feed files, normalizes URLs to registrable domains via public-suffix
rules, and merges duplicate observations into one table keyed by the
registrable domain.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional

from .errors import IoFailure, PhishlifeError
from .timeutil import parse_utc

MAX_LABEL_LEN = 63
MAX_HOST_LEN = 253

_SCHEME_RE = re.compile(r"^[a-zA-Z][a-zA-Z0-9+.-]*://")
_ASCII_LABEL_RE = re.compile(r"^[a-z0-9-]+$")


class MalformedUrl(PhishlifeError):
    """No host could be extracted from the raw URL."""


class InvalidLabel(PhishlifeError):
    """A host label is empty, too long, or has illegal characters."""


class EmptyRuleSet(PhishlifeError):
    """The suffix rules file parsed to zero rules."""


class HostIsSuffix(PhishlifeError):
    """The host equals a public suffix; there is no registrable part."""


class AllRecordsMalformed(PhishlifeError):
    """Every record in a feed file failed to parse."""


@dataclass(frozen=True)
class FeedEntry:
    """One blocklist observation."""

    url: str
    detected_at: datetime
    source: str
    brand: Optional[str] = None


@dataclass(frozen=True)
class ParsedUrl:
    """URL decomposed into scheme, normalized host, and path."""

    scheme: str
    host: str
    path: str


@dataclass(frozen=True)
class SuffixRules:
    """Public-suffix rules split by rule kind."""

    exact: frozenset[str]
    wildcard: frozenset[str]
    exception: frozenset[str]


@dataclass(frozen=True)
class RegistrableParts:
    """Result of splitting a host at its public suffix.

    ``suffix_listed`` is False when no rule matched and the last label was
    used as a fallback suffix.
    """

    subdomain: str
    registrable: str
    public_suffix: str
    suffix_listed: bool = True


@dataclass
class DomainRecord:
    """A distinct registrable domain with its merged observation history."""

    registrable: str
    public_suffix: str
    subdomain: str
    subdomain_count: int
    first_detections: dict[str, datetime]
    brands: set[str]
    url_count: int
    suffix_unlisted: bool = False


@dataclass
class FeedLoadResult:
    entries: list[FeedEntry]
    skipped: int


@dataclass
class DomainTable:
    records: list[DomainRecord]
    skipped_urls: int = 0


def _normalize_label(label: str) -> str:
    """Lowercase one host label and convert it to punycode if needed."""
    if not label:
        raise InvalidLabel("empty label in host")
    if label.isascii():
        label = label.lower()
        if not _ASCII_LABEL_RE.match(label):
            raise InvalidLabel(f"illegal characters in label {label!r}")
    else:
        try:
            label = label.encode("idna").decode("ascii").lower()
        except UnicodeError as exc:
            raise InvalidLabel(f"cannot punycode label {label!r}: {exc}") from exc
    if len(label) > MAX_LABEL_LEN:
        raise InvalidLabel(f"label longer than {MAX_LABEL_LEN} chars: {label!r}")
    return label


def normalize_host(host: str) -> str:
    """Normalize a raw hostname to lowercase punycode ASCII."""
    host = host.rstrip(".")  # tolerate a FQDN trailing dot
    if not host:
        raise MalformedUrl("empty host")
    labels = [_normalize_label(l) for l in host.split(".")]
    normalized = ".".join(labels)
    if len(normalized) > MAX_HOST_LEN:
        raise InvalidLabel(f"host longer than {MAX_HOST_LEN} chars")
    return normalized


def parse_url(raw: str) -> ParsedUrl:
    """Parse a raw feed URL into scheme, normalized host, and path.

    The scheme defaults to "http" when absent; port and userinfo are
    stripped; internationalized labels are converted to punycode.
    """
    from urllib.parse import urlsplit

    raw = raw.strip()
    if not raw:
        raise MalformedUrl("empty URL")
    if not _SCHEME_RE.match(raw):
        raw = "http://" + raw
    try:
        parts = urlsplit(raw)
        hostname = parts.hostname
    except ValueError as exc:
        raise MalformedUrl(f"unparseable URL: {exc}") from exc
    if not hostname:
        raise MalformedUrl(f"no host in URL {raw!r}")
    host = normalize_host(hostname)
    return ParsedUrl(scheme=parts.scheme.lower(), host=host, path=parts.path)


def load_suffix_rules(path: str | Path) -> SuffixRules:
    """Load a public-suffix-list text file.

    ``//`` comment lines and blanks are ignored; ``*.``-prefixed lines are
    wildcard rules, ``!``-prefixed lines exception rules, everything else
    an exact rule.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read suffix rules {path}: {exc}") from exc

    exact: set[str] = set()
    wildcard: set[str] = set()
    exception: set[str] = set()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("//"):
            continue
        rule = line.split()[0]
        if rule.startswith("!"):
            target, bucket = rule[1:], exception
        elif rule.startswith("*."):
            target, bucket = rule[2:], wildcard
        else:
            target, bucket = rule, exact
        try:
            bucket.add(normalize_host(target))
        except PhishlifeError:
            continue  # skip malformed rule lines
    if not (exact or wildcard or exception):
        raise EmptyRuleSet(f"no rules parsed from {path}")
    return SuffixRules(frozenset(exact), frozenset(wildcard), frozenset(exception))


def _label_suffix_matches(host_labels: list[str], rule: str) -> bool:
    rule_labels = rule.split(".")
    return len(host_labels) >= len(rule_labels) and host_labels[-len(rule_labels):] == rule_labels


def split_registrable(host: str, rules: SuffixRules) -> RegistrableParts:
    """Split a normalized host into (subdomain, registrable, public suffix).

    Exception rules beat wildcard rules beat exact rules; within a kind the
    longest match wins. When no rule matches, the last label is used as the
    suffix and the result is flagged via ``suffix_listed=False``.
    """
    labels = host.split(".")
    suffix_labels: Optional[list[str]] = None
    listed = True

    exc_matches = [r for r in rules.exception if _label_suffix_matches(labels, r)]
    if exc_matches:
        # An exception names a registrable domain inside a wildcard block:
        # the public suffix is the rule minus its leftmost label.
        best = max(exc_matches, key=lambda r: r.count("."))
        suffix_labels = best.split(".")[1:]
    else:
        wild_matches = [
            r for r in rules.wildcard
            if len(labels) >= len(r.split(".")) + 1 and _label_suffix_matches(labels, r)
        ]
        exact_matches = [r for r in rules.exact if _label_suffix_matches(labels, r)]
        if wild_matches:
            best = max(wild_matches, key=lambda r: r.count("."))
            suffix_labels = labels[-(len(best.split(".")) + 1):]
        elif exact_matches:
            best = max(exact_matches, key=lambda r: r.count("."))
            suffix_labels = best.split(".")
        else:
            suffix_labels = labels[-1:]
            listed = False

    n = len(suffix_labels)
    if len(labels) <= n:
        raise HostIsSuffix(f"{host!r} is a public suffix")
    registrable = ".".join(labels[-(n + 1):])
    subdomain = ".".join(labels[: -(n + 1)])
    public_suffix = ".".join(suffix_labels)
    return RegistrableParts(subdomain, registrable, public_suffix, suffix_listed=listed)


def _entry_from_line(line: str) -> FeedEntry:
    parts = line.split("\t")
    if len(parts) not in (3, 4):
        raise ValueError(f"expected 3 or 4 tab-separated fields, got {len(parts)}")
    detected_at = parse_utc(parts[0])
    url, source = parts[1].strip(), parts[2].strip()
    brand = parts[3].strip() if len(parts) == 4 and parts[3].strip() else None
    if not url or not source:
        raise ValueError("empty url or source field")
    return FeedEntry(url=url, detected_at=detected_at, source=source, brand=brand)


def _entry_from_obj(obj: object) -> FeedEntry:
    if not isinstance(obj, dict):
        raise ValueError("feed record is not an object")
    url = obj.get("url")
    source = obj.get("source")
    if not url or not source:
        raise ValueError("missing url or source")
    detected_at = parse_utc(str(obj.get("detected_at", "")))
    brand = obj.get("brand") or None
    return FeedEntry(url=str(url), detected_at=detected_at, source=str(source), brand=brand)


def load_feed(path: str | Path, format: str = "lines") -> FeedLoadResult:
    """Load a feed file in ``lines`` (tab-separated) or ``json`` format.

    Malformed records are skipped and counted, not fatal; a file whose
    records all fail raises AllRecordsMalformed.
    """
    if format not in ("lines", "json"):
        raise ValueError(f"unknown feed format {format!r}")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read feed {path}: {exc}") from exc

    entries: list[FeedEntry] = []
    skipped = 0
    if format == "lines":
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            try:
                entries.append(_entry_from_line(line))
            except ValueError:
                skipped += 1
    else:
        try:
            data = json.loads(text)
            if not isinstance(data, list):
                raise ValueError("top-level JSON value is not an array")
        except ValueError as exc:
            raise AllRecordsMalformed(f"{path}: {exc}") from exc
        for obj in data:
            try:
                entries.append(_entry_from_obj(obj))
            except ValueError:
                skipped += 1

    if skipped and not entries:
        raise AllRecordsMalformed(f"all {skipped} records in {path} are malformed")
    return FeedLoadResult(entries=entries, skipped=skipped)


def build_domain_table(entries: Iterable[FeedEntry], rules: SuffixRules) -> DomainTable:
    """Merge feed entries into one record per distinct registrable domain.

    first_detections holds per-source minima, brands the union; duplicate
    URLs count toward url_count. Output order is lexicographic by
    registrable, and the merge is independent of input order.
    """
    records: dict[str, DomainRecord] = {}
    # first-seen subdomain tracked as a (detected_at, subdomain) minimum so
    # the result is stable under permutation of the input
    first_sub: dict[str, tuple[datetime, str]] = {}
    subdomains_seen: dict[str, set[str]] = {}
    skipped = 0

    for entry in entries:
        try:
            parsed = parse_url(entry.url)
            parts = split_registrable(parsed.host, rules)
        except PhishlifeError:
            skipped += 1
            continue

        rec = records.get(parts.registrable)
        if rec is None:
            rec = DomainRecord(
                registrable=parts.registrable,
                public_suffix=parts.public_suffix,
                subdomain=parts.subdomain,
                subdomain_count=0,
                first_detections={},
                brands=set(),
                url_count=0,
                suffix_unlisted=not parts.suffix_listed,
            )
            records[parts.registrable] = rec
            subdomains_seen[parts.registrable] = set()

        rec.url_count += 1
        prev = rec.first_detections.get(entry.source)
        if prev is None or entry.detected_at < prev:
            rec.first_detections[entry.source] = entry.detected_at
        if entry.brand:
            rec.brands.add(entry.brand.lower())
        if parts.subdomain:
            subdomains_seen[parts.registrable].add(parts.subdomain)
        key = (entry.detected_at, parts.subdomain)
        if parts.registrable not in first_sub or key < first_sub[parts.registrable]:
            first_sub[parts.registrable] = key

    for registrable, rec in records.items():
        rec.subdomain = first_sub[registrable][1]
        rec.subdomain_count = len(subdomains_seen[registrable])

    ordered = [records[k] for k in sorted(records)]
    return DomainTable(records=ordered, skipped_urls=skipped)
