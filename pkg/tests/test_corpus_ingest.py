"""JSONL ingestion: ordering, defaults, malformed handling, gzip."""

import gzip
import json

import pytest

from desklm.corpus import IngestError, IngestReport, ingest, read_documents


def _write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(row if isinstance(row, str) else json.dumps(row))
            fh.write("\n")


def test_three_line_fixture_in_order(tmp_path):
    p = tmp_path / "docs.jsonl"
    _write_jsonl(p, [{"text": "one"}, {"text": "two"}, {"text": "three"}])
    docs, report = read_documents(p)
    assert [d.text for d in docs] == ["one", "two", "three"]
    assert report.documents == 3 and report.malformed == 0


def test_defaults_and_explicit_fields(tmp_path):
    p = tmp_path / "wiki.jsonl"
    _write_jsonl(p, [{"text": "a"},
                     {"text": "b", "id": "doc-7", "source": "news"}])
    docs, _ = read_documents(p)
    assert docs[0].id == "wiki-1" and docs[0].source == "wiki"
    assert docs[1].id == "doc-7" and docs[1].source == "news"


def test_missing_text_skipped_and_counted(tmp_path):
    p = tmp_path / "docs.jsonl"
    rows = [{"text": "keep %d" % i} for i in range(20)]
    rows.insert(3, {"no_text": 1})
    _write_jsonl(p, rows)
    docs, report = read_documents(p)
    assert len(docs) == 20
    assert report.malformed == 1
    assert report.skipped[0][1] == 4  # 1-based line number
    assert "text" in report.skipped[0][2]


def test_invalid_json_and_blank_lines(tmp_path):
    p = tmp_path / "docs.jsonl"
    rows = [{"text": "t%d" % i} for i in range(20)]
    _write_jsonl(p, rows[:10] + ["{not json", ""] + rows[10:])
    docs, report = read_documents(p)
    assert len(docs) == 20
    assert report.malformed == 1  # blank lines are not counted as malformed
    assert report.total_lines == 21


def test_gzip_round_trip(tmp_path):
    p = tmp_path / "docs.jsonl.gz"
    with gzip.open(p, "wt", encoding="utf-8") as fh:
        for i in range(5):
            fh.write(json.dumps({"text": f"zipped {i}"}) + "\n")
    docs, report = read_documents(str(p))
    assert [d.text for d in docs] == [f"zipped {i}" for i in range(5)]
    assert docs[0].source == "docs"


def test_unreadable_file_errors(tmp_path):
    with pytest.raises(IngestError, match="cannot read"):
        list(ingest(tmp_path / "missing.jsonl"))


def test_malformed_fraction_over_limit_errors(tmp_path):
    p = tmp_path / "docs.jsonl"
    rows = [{"text": "ok %d" % i} for i in range(8)] + ["junk", "junk"]
    _write_jsonl(p, rows)
    report = IngestReport()
    with pytest.raises(IngestError, match="malformed"):
        list(ingest(p, report))
    assert report.documents == 8  # good docs were streamed before the check


def test_multiple_files_concatenate(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    _write_jsonl(a, [{"text": "first"}])
    _write_jsonl(b, [{"text": "second"}])
    docs, _ = read_documents([a, b])
    assert [d.source for d in docs] == ["a", "b"]
