from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from phishlife.dnsmon import (
    DnsSnapshot,
    MismatchedSubject,
    MonitorConfig,
    NoObservations,
    NxDomain,
    RrSet,
    ScriptedResolver,
    SimulatedClock,
    SnapshotStore,
    VantagePoint,
    backoff_delays,
    collect_snapshot,
    detect_changes,
    diff_snapshots,
    run_schedule,
    ttl_stats,
    vantage_divergence,
)

UTC = timezone.utc
T0 = datetime(2024, 6, 6, tzinfo=UTC)

V1 = VantagePoint("v1", "192.0.2.1:53", "us")
V2 = VantagePoint("v2", "192.0.2.2:53", "eu")
V3 = VantagePoint("v3", "192.0.2.3:53", "apac")


def clock():
    return SimulatedClock(T0)


def snapshot(domain, vantage, minute, rrsets, status="ok", errors=(), attempts=1):
    return DnsSnapshot(
        registrable=domain, vantage_id=vantage,
        taken_at=T0 + timedelta(minutes=minute),
        rrsets=tuple(rrsets), status=status, attempts=attempts, errors=tuple(errors),
    )


def a_rrset(*values, ttl=300):
    return RrSet("A", tuple(values), ttl)


def ns_rrset(*values, ttl=3600):
    return RrSet("NS", tuple(values), ttl)


class TestRrSet:
    def test_valid(self):
        assert a_rrset("192.0.2.1").ttl == 300

    def test_empty_values_rejected(self):
        with pytest.raises(ValueError):
            RrSet("A", (), 300)

    def test_ttl_bounds(self):
        with pytest.raises(ValueError):
            RrSet("A", ("x",), 2**31)

    def test_unknown_type(self):
        with pytest.raises(ValueError):
            RrSet("PTR", ("x",), 300)


class TestScriptedQuery:
    def test_scripted_answer(self):
        resolver = ScriptedResolver({"a.com": {"A": [{"values": ["192.0.2.1"], "ttl": 300}]}})
        rrset = resolver.query(V1, "a.com", "A")
        assert rrset == RrSet("A", ("192.0.2.1",), 300)

    def test_scripted_nxdomain(self):
        resolver = ScriptedResolver({"a.com": {"A": ["nxdomain"]}})
        with pytest.raises(NxDomain):
            resolver.query(V1, "a.com", "A")

    def test_empty_answer_for_missing_type(self):
        resolver = ScriptedResolver({"a.com": {"A": [{"values": ["192.0.2.1"], "ttl": 300}]}})
        assert resolver.query(V1, "a.com", "TXT") is None

    def test_unknown_domain_is_nxdomain(self):
        resolver = ScriptedResolver({})
        with pytest.raises(NxDomain):
            resolver.query(V1, "missing.com", "A")

    def test_per_vantage_override(self):
        resolver = ScriptedResolver({
            "a.com": {"A": [{"values": ["192.0.2.1"], "ttl": 60}]},
            "a.com@v2": {"A": [{"values": ["198.51.100.1"], "ttl": 60}]},
        })
        assert resolver.query(V1, "a.com", "A").values == ("192.0.2.1",)
        assert resolver.query(V2, "a.com", "A").values == ("198.51.100.1",)


class TestRetryContract:
    def script(self, fails):
        return ScriptedResolver({
            "a.com": {"A": [{"values": ["192.0.2.1"], "ttl": 300,
                             "fail_count_before_success": fails}]},
        })

    def test_four_failures_then_success(self):
        c = clock()
        (snap,) = collect_snapshot("a.com", [V1], ["A"], self.script(4), clock=c)
        assert snap.status == "ok"
        assert snap.attempts == 5
        assert snap.rrsets[0].values == ("192.0.2.1",)

    def test_five_failures_is_failed(self):
        c = clock()
        resolver = self.script(5)
        (snap,) = collect_snapshot("a.com", [V1], ["A"], resolver, clock=c)
        assert snap.status == "failed"
        assert snap.attempts == 5
        assert snap.rrsets == ()
        assert resolver.query_counts[("v1", "a.com", "A")] == 5  # retry bound

    def test_backoff_nondecreasing_and_capped(self):
        c = clock()
        collect_snapshot("a.com", [V1], ["A"], self.script(5), clock=c,
                         backoff_base=0.5, backoff_cap=8.0)
        assert c.sleeps == sorted(c.sleeps)
        assert c.sleeps == [0.5, 1.0, 2.0, 4.0]
        assert max(c.sleeps) <= 8.0

    def test_cap_applies(self):
        assert backoff_delays(3.0, 8.0) == [3.0, 6.0, 8.0, 8.0]

    def test_partial_type_failure_downgrades(self):
        resolver = ScriptedResolver({"a.com": {
            "A": [{"values": ["192.0.2.1"], "ttl": 300}],
            "NS": ["servfail"],
        }})
        (snap,) = collect_snapshot("a.com", [V1], ["A", "NS"], resolver, clock=clock())
        assert snap.status == "ok"
        assert [r.rrtype for r in snap.rrsets] == ["A"]
        assert snap.errors == ("NS:servfail",)

    def test_nxdomain_recorded(self):
        resolver = ScriptedResolver({})
        (snap,) = collect_snapshot("gone.com", [V1], ["A"], resolver, clock=clock())
        assert snap.status == "ok"
        assert snap.nxdomain
        assert snap.rrsets == ()

    def test_three_vantages_share_taken_at(self):
        resolver = ScriptedResolver({"a.com": {"A": [{"values": ["192.0.2.1"], "ttl": 60}]}})
        snaps = collect_snapshot("a.com", [V1, V2, V3], ["A"], resolver, clock=clock())
        assert len(snaps) == 3
        assert len({s.taken_at for s in snaps}) == 1
        assert all(s.status == "ok" for s in snaps)


class TestScheduler:
    RESOLVER_SCRIPT = {
        "a.com": {"A": [{"values": ["192.0.2.1"], "ttl": 60}]},
        "b.com": {"A": [{"values": ["192.0.2.2"], "ttl": 60}]},
    }

    def run(self, domains, minutes, concurrency=1, tmp_path=None):
        c = clock()
        store = SnapshotStore(tmp_path / "snaps.jsonl")
        config = MonitorConfig(
            interval=timedelta(minutes=30), vantages=[V1, V2], types=("A",),
            concurrency=concurrency,
        )
        resolver = ScriptedResolver(self.RESOLVER_SCRIPT)
        ticks = run_schedule(domains, config, store, c, resolver,
                             until=T0 + timedelta(minutes=minutes))
        return ticks, store.load()

    def test_ninety_minutes_three_rounds(self, tmp_path):
        ticks, snaps = self.run(["a.com", "b.com"], 90, tmp_path=tmp_path)
        assert ticks == 3
        per_key = {}
        for s in snaps:
            per_key.setdefault((s.registrable, s.vantage_id), []).append(s)
        assert set(per_key) == {(d, v) for d in ("a.com", "b.com") for v in ("v1", "v2")}
        assert all(len(v) == 3 for v in per_key.values())

    def test_zero_domains_idles(self, tmp_path):
        ticks, snaps = self.run([], 90, tmp_path=tmp_path)
        assert ticks == 3
        assert snaps == []
        assert not (tmp_path / "snaps.jsonl").exists()

    def test_serialized_collections_complete(self, tmp_path):
        ticks, snaps = self.run(["a.com", "b.com"], 30, concurrency=1, tmp_path=tmp_path)
        assert ticks == 1
        assert [(-s.taken_at.timestamp(), s.registrable, s.vantage_id) for s in snaps] == sorted(
            (-s.taken_at.timestamp(), s.registrable, s.vantage_id) for s in snaps)
        assert len(snaps) == 4

    def test_parallel_matches_serial(self, tmp_path):
        _, serial = self.run(["a.com", "b.com"], 60, concurrency=1, tmp_path=tmp_path / "s")
        _, parallel = self.run(["a.com", "b.com"], 60, concurrency=8, tmp_path=tmp_path / "p")
        assert serial == parallel

    def test_interval_validation(self, tmp_path):
        config = MonitorConfig(interval=timedelta(0), vantages=[V1])
        with pytest.raises(ValueError):
            run_schedule([], config, SnapshotStore(tmp_path / "x.jsonl"), clock(),
                         ScriptedResolver({}), max_ticks=1)


class TestDiff:
    def test_ns_provider_change(self):
        prev = snapshot("a.com", "v1", 0, [ns_rrset("ns1.cloudflare.example")])
        nxt = snapshot("a.com", "v1", 30, [ns_rrset("ns1.google.example")])
        (change,) = diff_snapshots(prev, nxt)
        assert change.rrtype == "NS"
        assert change.before == ("ns1.cloudflare.example",)
        assert change.after == ("ns1.google.example",)
        assert change.observed_at == nxt.taken_at

    def test_ttl_only_drift_is_no_change(self):
        prev = snapshot("a.com", "v1", 0, [a_rrset("192.0.2.1", ttl=300)])
        nxt = snapshot("a.com", "v1", 30, [a_rrset("192.0.2.1", ttl=290)])
        assert diff_snapshots(prev, nxt) == []

    def test_reorder_is_no_change(self):
        prev = snapshot("a.com", "v1", 0, [a_rrset("192.0.2.1", "192.0.2.2")])
        nxt = snapshot("a.com", "v1", 30, [a_rrset("192.0.2.2", "192.0.2.1")])
        assert diff_snapshots(prev, nxt) == []

    def test_identical_is_empty(self):
        prev = snapshot("a.com", "v1", 0, [a_rrset("192.0.2.1"), ns_rrset("ns1.x")])
        nxt = snapshot("a.com", "v1", 30, [a_rrset("192.0.2.1"), ns_rrset("ns1.x")])
        assert diff_snapshots(prev, nxt) == []

    def test_disappearance_is_a_change(self):
        prev = snapshot("a.com", "v1", 0, [a_rrset("192.0.2.1"), ns_rrset("ns1.x")])
        nxt = snapshot("a.com", "v1", 30, [ns_rrset("ns1.x")])
        (change,) = diff_snapshots(prev, nxt)
        assert change.rrtype == "A" and change.after == ()

    def test_failed_type_not_reported(self):
        prev = snapshot("a.com", "v1", 0, [a_rrset("192.0.2.1"), ns_rrset("ns1.x")])
        nxt = snapshot("a.com", "v1", 30, [ns_rrset("ns1.x")], errors=("A:timeout",))
        assert diff_snapshots(prev, nxt) == []

    def test_mismatched_subject(self):
        with pytest.raises(MismatchedSubject):
            diff_snapshots(snapshot("a.com", "v1", 0, [a_rrset("x")]),
                           snapshot("b.com", "v1", 30, [a_rrset("x")]))
        with pytest.raises(MismatchedSubject):
            diff_snapshots(snapshot("a.com", "v1", 30, [a_rrset("x")]),
                           snapshot("a.com", "v1", 0, [a_rrset("x")]))

    def test_detect_changes_across_store(self):
        snaps = [
            snapshot("flux.top", "v1", 0, [ns_rrset("ns1.cloudflare.example")]),
            snapshot("flux.top", "v1", 30, [ns_rrset("ns1.google.example")]),
            snapshot("static.com", "v1", 0, [a_rrset("192.0.2.9", ttl=300)]),
            snapshot("static.com", "v1", 30, [a_rrset("192.0.2.9", ttl=60)]),
            snapshot("broken.com", "v1", 0, [], status="failed"),
            snapshot("broken.com", "v1", 30, [a_rrset("192.0.2.5")]),
        ]
        changes = detect_changes(snaps)
        assert len(changes) == 1 and changes[0].registrable == "flux.top"


class TestTtlStats:
    def test_single_domain_small_ttl(self):
        summary = ttl_stats([snapshot("a.com", "v1", 0, [a_rrset("x", ttl=45)])])
        assert summary.under_60s == 1
        assert summary.under_3600s == 1

    def test_boundary_is_strict(self):
        summary = ttl_stats([snapshot("a.com", "v1", 0, [a_rrset("x", ttl=3600)])])
        assert summary.under_3600s == 0

    def test_median_and_mean(self):
        snaps = [snapshot("a.com", "v1", 0, [
            a_rrset("x", ttl=100), a_rrset("y", ttl=200), a_rrset("z", ttl=400),
        ])]
        summary = ttl_stats(snaps)
        (dom,) = summary.per_domain
        assert dom.median_ttl == 200
        assert dom.mean_ttl == pytest.approx(233.33, abs=0.01)

    def test_no_observations(self):
        with pytest.raises(NoObservations):
            ttl_stats([snapshot("a.com", "v1", 0, [], status="failed")])

    def test_buckets_match_brute_force_recount(self):
        ttl_values = [45, 300, 3600, 43200, 43201, 50000, 86400, 90000]
        snaps = [
            snapshot(f"d{i}.com", "v1", 0, [a_rrset("x", ttl=t)])
            for i, t in enumerate(ttl_values)
        ]
        summary = ttl_stats(snaps)
        mins = {f"d{i}.com": t for i, t in enumerate(ttl_values)}
        assert summary.under_60s == sum(1 for t in mins.values() if t < 60)
        assert summary.under_3600s == sum(1 for t in mins.values() if t < 3600)
        assert summary.over_43200s == sum(1 for t in mins.values() if t > 43200)
        assert summary.between_43200s_and_86400s == sum(
            1 for t in mins.values() if 43200 < t < 86400)
        assert summary.under_60s <= summary.under_3600s


class TestVantageDivergence:
    def test_all_agree(self):
        snaps = [
            snapshot("a.com", v, 0, [a_rrset("192.0.2.1")]) for v in ("v1", "v2", "v3")
        ]
        assert vantage_divergence(snaps) is None

    def test_differing_a_sets(self):
        snaps = [
            snapshot("a.com", "v1", 0, [a_rrset("192.0.2.1")]),
            snapshot("a.com", "v2", 0, [a_rrset("198.51.100.9")]),
        ]
        report = vantage_divergence(snaps)
        assert report.rrtypes == ("A",)
        assert report.vantage_partition["A"] == (("v1",), ("v2",))

    def test_ttl_only_difference(self):
        snaps = [
            snapshot("a.com", "v1", 0, [a_rrset("192.0.2.1", ttl=60)]),
            snapshot("a.com", "v2", 0, [a_rrset("192.0.2.1", ttl=600)]),
        ]
        assert vantage_divergence(snaps) is None

    def test_single_snapshot_is_none(self):
        assert vantage_divergence([snapshot("a.com", "v1", 0, [a_rrset("x")])]) is None

    def test_mixed_subjects_rejected(self):
        with pytest.raises(MismatchedSubject):
            vantage_divergence([
                snapshot("a.com", "v1", 0, [a_rrset("x")]),
                snapshot("b.com", "v2", 0, [a_rrset("x")]),
            ])


class TestStore:
    def test_roundtrip(self, tmp_path):
        store = SnapshotStore(tmp_path / "s.jsonl")
        first = snapshot("a.com", "v1", 0, [a_rrset("192.0.2.1"), ns_rrset("ns1.x")])
        second = snapshot("a.com", "v1", 30, [], status="failed", attempts=5)
        store.append(first)
        store.append(second)
        loaded = store.load()
        assert loaded == [first, second]

    def test_append_only_growth(self, tmp_path):
        store = SnapshotStore(tmp_path / "s.jsonl")
        counts = []
        for minute in (0, 30, 60):
            store.append(snapshot("a.com", "v1", minute, [a_rrset("x")]))
            counts.append(len(store.load()))
        assert counts == [1, 2, 3]

    def test_rerun_diff_deterministic(self, tmp_path):
        store = SnapshotStore(tmp_path / "s.jsonl")
        store.append(snapshot("a.com", "v1", 0, [ns_rrset("ns1.a")]))
        store.append(snapshot("a.com", "v1", 30, [ns_rrset("ns1.b")]))
        assert detect_changes(store.load()) == detect_changes(store.load())
