"""Streaming JSONL document ingestion.

Files may be plain or gzip-compressed (by ``.gz`` suffix).  Every line must
be a JSON object with a non-empty ``text`` field; ``id`` and ``source`` are
optional and default to ``<file-stem>-<line-number>`` and the file stem.
Malformed lines are counted and skipped; a file whose malformed fraction
exceeds 10% aborts the stream.
"""

from __future__ import annotations

import gzip
import json
import os
from dataclasses import dataclass, field

MALFORMED_LIMIT = 0.10


class IngestError(ValueError):
    """Unreadable input or too many malformed lines."""


@dataclass(frozen=True)
class Document:
    id: str
    source: str
    text: str


@dataclass
class IngestReport:
    total_lines: int = 0
    malformed: int = 0
    documents: int = 0
    skipped: list = field(default_factory=list)  # (path, line_no, reason)

    def note_skip(self, path, line_no, reason):
        self.malformed += 1
        self.skipped.append((path, line_no, reason))


def _open_text(path):
    if path.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def _parse_line(raw, path, line_no, default_source, report):
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        report.note_skip(path, line_no, f"invalid JSON: {exc.msg}")
        return None
    if not isinstance(obj, dict):
        report.note_skip(path, line_no, "line is not a JSON object")
        return None
    text = obj.get("text")
    if not isinstance(text, str) or not text.strip():
        report.note_skip(path, line_no, "missing or empty 'text'")
        return None
    stem = default_source
    doc_id = obj.get("id")
    if doc_id is None:
        doc_id = f"{stem}-{line_no}"
    source = obj.get("source")
    if source is None:
        source = stem
    return Document(id=str(doc_id), source=str(source), text=text)


def ingest(paths, report: IngestReport | None = None):
    """Yields Documents from ``paths`` in order; skips malformed lines.

    Raises IngestError for an unreadable file, and at the end of any file
    whose malformed-line fraction exceeds 10%.  Pass a report to collect
    counts; the same object keeps filling as the stream is consumed.
    """
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    if report is None:
        report = IngestReport()
    for path in paths:
        path = os.fspath(path)
        stem = os.path.basename(path)
        for suffix in (".gz", ".jsonl", ".json"):
            if stem.endswith(suffix):
                stem = stem[: -len(suffix)]
        try:
            fh = _open_text(path)
        except OSError as exc:
            raise IngestError(f"cannot read {path}: {exc}") from exc
        file_lines = 0
        file_bad = 0
        with fh:
            try:
                for line_no, raw in enumerate(fh, start=1):
                    if not raw.strip():
                        continue
                    file_lines += 1
                    report.total_lines += 1
                    doc = _parse_line(raw, path, line_no, stem, report)
                    if doc is None:
                        file_bad += 1
                        continue
                    report.documents += 1
                    yield doc
            except (OSError, UnicodeDecodeError, gzip.BadGzipFile) as exc:
                raise IngestError(f"cannot read {path}: {exc}") from exc
        if file_lines and file_bad / file_lines > MALFORMED_LIMIT:
            raise IngestError(
                f"{path}: {file_bad}/{file_lines} malformed lines "
                f"(limit {MALFORMED_LIMIT:.0%})")


def read_documents(paths):
    """Eager ingest: returns (documents list, report)."""
    report = IngestReport()
    docs = list(ingest(paths, report))
    return docs, report
