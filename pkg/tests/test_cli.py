from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from phishlife.cli import main

DATA = Path(__file__).parent / "data"
CONFIG = str(DATA / "config.json")


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestIngestCommand:
    def test_mixed_formats_merged(self, tmp_path, capsys):
        code = main([
            "ingest",
            "--feeds", f"{DATA / 'feed_a.tsv'},{DATA / 'feed_b.json'}",
            "--suffix-rules", str(DATA / "suffixes.dat"),
            "--out-dir", str(tmp_path),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "4 domains, 3 TLDs" in out
        lines = (tmp_path / "domains.jsonl").read_text().splitlines()
        assert len(lines) == 4
        records = [json.loads(l) for l in lines]
        assert [r["registrable"] for r in records] == ["a.com", "b.com", "c.net", "d.top"]
        a_com = records[0]
        assert a_com["url_count"] == 2
        assert a_com["first_detections"]["apwg"] == "2024-06-01T00:00:00Z"

    def test_empty_feed_exits_3(self, tmp_path, capsys):
        feed = tmp_path / "empty.tsv"
        feed.write_text("# nothing\n")
        code = main([
            "ingest", "--feeds", str(feed),
            "--suffix-rules", str(DATA / "suffixes.dat"),
            "--out-dir", str(tmp_path / "out"),
        ])
        assert code == 3

    def test_missing_suffix_rules_exits_2(self, tmp_path):
        code = main([
            "ingest", "--feeds", str(DATA / "feed_a.tsv"),
            "--suffix-rules", str(tmp_path / "absent.dat"),
            "--out-dir", str(tmp_path / "out"),
        ])
        assert code == 2

    def test_bad_parameter_exits_2(self, tmp_path):
        code = main([
            "ingest", "--config", CONFIG,
            "--min-cluster-size", "1",
            "--out-dir", str(tmp_path),
        ])
        assert code == 2


class TestClassifyCommand:
    def test_corpus_matches_hand_labels(self, tmp_path, capsys):
        code = main(["classify", "--config", CONFIG, "--out-dir", str(tmp_path)])
        assert code == 0

        got = read_csv(tmp_path / "classification.csv")
        expected = read_csv(DATA / "corpus40_expected.csv")
        assert [r["registrable"] for r in got] == [r["registrable"] for r in expected]
        for g, e in zip(got, expected):
            assert (g["registrable"], g["verdict"], g["flags"]) == (
                e["registrable"], e["verdict"], e["flags"])

        summary = {r["flag"]: r for r in read_csv(tmp_path / "flag_summary.csv")}
        assert summary["brand_in_domain"]["domains"] == "15"
        assert summary["squatted"]["domains"] == "11"
        assert summary["random_looking"]["domains"] == "4"
        assert summary["bulk_registered"]["domains"] == "6"
        assert summary["malicious_total"]["domains"] == "30"
        assert summary["malicious_total"]["pct_of_candidates"] == "83.3"
        assert "candidates after allowlist removal: 36" in capsys.readouterr().out

    def test_registrar_summary_shape(self, tmp_path):
        main(["classify", "--config", CONFIG, "--out-dir", str(tmp_path)])
        rows = read_csv(tmp_path / "registrar_summary.csv")
        assert [(r["rank"], r["registrar"], r["domains"], r["share"]) for r in rows] == [
            ("1", "alibaba", "3", "50.0"),
            ("2", "godaddy", "3", "50.0"),
        ]

    def test_jsonl_mirror(self, tmp_path):
        main(["classify", "--config", CONFIG, "--out-dir", str(tmp_path)])
        lines = (tmp_path / "classification.jsonl").read_text().splitlines()
        assert len(lines) == 40
        rec = json.loads(lines[0])
        assert set(rec) == {"registrable", "verdict", "flags", "evidence"}

    def test_all_allowlisted_gives_empty_summary(self, tmp_path, capsys):
        feed = tmp_path / "feed.tsv"
        feed.write_text(
            "2024-06-06T00:00:00Z\thttp://google.com/a\tapwg\n"
            "2024-06-06T00:00:00Z\thttp://facebook.com/b\tapwg\n")
        code = main([
            "classify", "--config", CONFIG,
            "--feeds", str(feed),
            "--out-dir", str(tmp_path / "out"),
        ])
        assert code == 0
        assert "candidates after allowlist removal: 0" in capsys.readouterr().out
        rows = read_csv(tmp_path / "out" / "flag_summary.csv")
        assert all(r["domains"] == "0" and r["pct_of_candidates"] == "" for r in rows)


class TestMonitorCommand:
    def test_simulate_fixture(self, tmp_path, capsys):
        code = main(["monitor", "--config", CONFIG, "--out-dir", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "2 collection rounds over 4 domains" in out
        assert "25.0% of domains exhibit record changes" in out

        changes = read_csv(tmp_path / "record_changes.csv")
        assert len(changes) == 1
        assert changes[0]["registrable"] == "flux.top"
        assert changes[0]["rrtype"] == "NS"
        assert changes[0]["before"] == "ns1.cloudflare.example"
        assert changes[0]["after"] == "ns1.google.example"

        buckets = {r["metric"]: r["value"] for r in read_csv(tmp_path / "ttl_buckets.csv")}
        assert buckets["under_60s"] == "1"
        assert buckets["under_3600s"] == "3"
        assert buckets["over_43200s"] == "0"

        ttl = {r["registrable"]: r for r in read_csv(tmp_path / "ttl_summary.csv")}
        assert ttl["flux.top"]["min_ttl"] == "45"

    def test_store_written_and_loadable(self, tmp_path):
        main(["monitor", "--config", CONFIG, "--out-dir", str(tmp_path)])
        lines = (tmp_path / "snapshots.jsonl").read_text().splitlines()
        assert len(lines) == 8  # 4 domains x 1 vantage x 2 ticks
        snap = json.loads(lines[0])
        assert {"registrable", "vantage_id", "taken_at", "rrsets", "status", "attempts"} <= set(snap)

    def test_store_failure_exits_4(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        code = main([
            "monitor", "--config", CONFIG,
            "--snapshot-store", str(blocker / "snaps.jsonl"),
            "--out-dir", str(tmp_path / "out"),
        ])
        assert code == 4


class TestLifecycleCommand:
    def test_lifecycle_outputs(self, tmp_path):
        code = main(["lifecycle", "--config", CONFIG, "--out-dir", str(tmp_path)])
        assert code == 0

        rows = {r["registrable"]: r for r in read_csv(tmp_path / "lifecycle.csv")}
        assert len(rows) == 40
        fb = rows["faceb0ok.com"]
        assert fb["registered_at"] == "2024-01-01T00:00:00Z"
        assert fb["provenance"] == "rdap"
        assert float(fb["detection_delay_days"]) == pytest.approx(16.3)
        assert float(fb["takedown_delay_days"]) == pytest.approx(11.5)
        goole = rows["goole.com"]
        assert goole["provenance"] == "zone_first_appearance"
        assert rows["dailynews.info"]["detection_delay_days"] == ""

        verdict_agg = {r["key"]: r for r in read_csv(tmp_path / "agg_detection_delay_verdict.csv")}
        assert float(verdict_agg["MaliciousRegistration"]["median_days"]) == pytest.approx(16.3)
        assert float(verdict_agg["Compromised"]["median_days"]) == pytest.approx(86.0)

        take_agg = {r["key"]: r for r in read_csv(tmp_path / "agg_takedown_delay_verdict.csv")}
        assert float(take_agg["MaliciousRegistration"]["median_days"]) == pytest.approx(11.5)

        lag = {r["key"]: r for r in read_csv(tmp_path / "agg_lag_source.csv")}
        assert float(lag["phishtank"]["median_days"]) == pytest.approx(4.4)
        assert float(lag["openphish"]["median_days"]) == pytest.approx(4.1)

    def test_aggregate_totals(self, tmp_path):
        main(["lifecycle", "--config", CONFIG, "--out-dir", str(tmp_path)])
        rows = read_csv(tmp_path / "agg_detection_delay_verdict.csv")
        # verdict is single-valued: counts + missing covers every record
        assert sum(int(r["count"]) + int(r["missing"]) for r in rows) == 40


class TestSquatgenDump:
    def test_homoglyph_table(self, capsys):
        assert main(["squatgen", "dump"]) == 0
        out = capsys.readouterr().out
        assert "character,replacements" in out
        assert "o,0" in out
        assert "m,rn" in out

    def test_brand_dump(self, capsys):
        assert main(["squatgen", "dump", "--brand-domain", "ab.com"]) == 0
        out = capsys.readouterr().out
        assert "ab0,addition" in out
        assert "a-b,hyphenation" in out

    def test_invalid_brand_domain(self, capsys):
        assert main(["squatgen", "dump", "--brand-domain", "nodots"]) == 2


class TestReportCommand:
    def test_full_pipeline(self, tmp_path, capsys):
        code = main(["report", "--config", CONFIG, "--out-dir", str(tmp_path)])
        assert code == 0
        for name in [
            "domains.jsonl", "classification.csv", "flag_summary.csv",
            "registrar_summary.csv", "lifecycle.csv", "record_changes.csv",
            "ttl_summary.csv", "ttl_buckets.csv", "snapshots.jsonl",
        ]:
            assert (tmp_path / name).exists(), name
