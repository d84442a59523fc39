"""Corpus pipeline: ingestion, near-dup removal, mixtures, batching."""

from .batching import MixtureSampler, SourceExhausted, TokenBatch, sft_batch
from .ingest import Document, IngestError, IngestReport, ingest, read_documents
from .mixture import MixtureSchedule, Trajectory, load_preset, weights_at
from .simhash import (BandedIndex, DropRecord, dedup, dedup_stream, hamming,
                      shingles, simhash)

__all__ = [
    "BandedIndex", "Document", "DropRecord", "IngestError", "IngestReport",
    "MixtureSampler", "MixtureSchedule", "SourceExhausted", "TokenBatch",
    "Trajectory", "dedup", "dedup_stream", "hamming", "ingest",
    "load_preset", "read_documents", "sft_batch", "shingles", "simhash",
    "weights_at",
]
