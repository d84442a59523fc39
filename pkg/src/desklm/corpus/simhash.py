"""64-bit SimHash near-duplicate detection with a banded index.

Fingerprints are sign aggregations of hashed word 3-shingles; similar texts
land within a small Hamming distance.  The banded index buckets fingerprint
slices so that any pair within the threshold shares at least one bucket
(pigeonhole over threshold+1 bands), which makes streaming dedup equal to
the brute-force all-pairs scan.  Hashing is a fixed FNV-1a / avalanche
pipeline so fingerprints are platform-stable.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from ..rng import fnv1a64, mix64

DEFAULT_THRESHOLD = 3
HASH_BITS = 64


def normalize_for_hash(text: str) -> str:
    """Lowercase and collapse whitespace — for hashing only, never storage."""
    return " ".join(text.lower().split())


def shingles(text: str, shingle_len: int = 3) -> list:
    """Word shingles of the normalized text.

    Texts shorter than ``shingle_len`` words collapse to a single shingle so
    every non-empty document has at least one.
    """
    words = normalize_for_hash(text).split()
    if not words:
        return []
    if len(words) < shingle_len:
        return [" ".join(words)]
    return [" ".join(words[i:i + shingle_len])
            for i in range(len(words) - shingle_len + 1)]


def hash_shingle(shingle: str) -> int:
    """FNV-1a over UTF-8 bytes, finished with an avalanche mix."""
    return mix64(fnv1a64(shingle.encode("utf-8")))


def simhash(text: str, hash_bits: int = HASH_BITS, shingle_len: int = 3) -> int:
    """Sign-aggregated fingerprint; weight = shingle multiplicity."""
    if not text.strip():
        raise ValueError("cannot fingerprint empty text")
    acc = [0] * hash_bits
    for shingle, weight in Counter(shingles(text, shingle_len)).items():
        h = hash_shingle(shingle)
        for bit in range(hash_bits):
            if (h >> bit) & 1:
                acc[bit] += weight
            else:
                acc[bit] -= weight
    fp = 0
    for bit in range(hash_bits):
        if acc[bit] > 0:
            fp |= 1 << bit
    return fp


def hamming(a: int, b: int) -> int:
    return (a ^ b).bit_count()


def _band_plan(threshold: int) -> list:
    """(shift, width) slices of the 64-bit space, one per band."""
    n_bands = 4 if threshold <= 3 else threshold + 1
    base, extra = divmod(HASH_BITS, n_bands)
    plan = []
    shift = 0
    for b in range(n_bands):
        width = base + (1 if b < extra else 0)
        plan.append((shift, width))
        shift += width
    return plan


class BandedIndex:
    """Streaming fingerprint index answering 'anything within threshold?'.

    For threshold ``t`` the fingerprint is cut into ``max(4, t+1)`` bands;
    two fingerprints within Hamming distance t must agree exactly on at
    least one band, so bucket lookups plus an exact distance filter find
    every qualifying pair.  Thresholds ≥ 63 leave no room to band (a band
    would need ≥ 1 bit and t+1 ≥ 64 bands) and fall back to a linear scan.
    """

    def __init__(self, threshold: int = DEFAULT_THRESHOLD):
        if not 0 <= threshold <= 64:
            raise ValueError(f"threshold must be in [0, 64], got {threshold}")
        self.threshold = threshold
        self.linear = threshold >= 63
        self._plan = None if self.linear else _band_plan(threshold)
        self._buckets = None if self.linear else [
            {} for _ in self._plan]  # band -> key -> list of entry ids
        self._entries = []  # (key, fingerprint) in insertion order

    def _band_keys(self, fp: int):
        for (shift, width) in self._plan:
            yield (fp >> shift) & ((1 << width) - 1)

    def query(self, fp: int):
        """First stored (key, distance) within threshold, or None."""
        if self.linear:
            for key, stored in self._entries:
                d = hamming(fp, stored)
                if d <= self.threshold:
                    return key, d
            return None
        best = None  # earliest insertion wins, matching the linear scan
        seen = set()
        for band, band_key in enumerate(self._band_keys(fp)):
            for pos in self._buckets[band].get(band_key, ()):
                if pos in seen:
                    continue
                seen.add(pos)
                key, stored = self._entries[pos]
                d = hamming(fp, stored)
                if d <= self.threshold and (best is None or pos < best[0]):
                    best = (pos, key, d)
        if best is None:
            return None
        return best[1], best[2]

    def add(self, key, fp: int):
        pos = len(self._entries)
        self._entries.append((key, fp))
        if not self.linear:
            for band, band_key in enumerate(self._band_keys(fp)):
                self._buckets[band].setdefault(band_key, []).append(pos)


@dataclass(frozen=True)
class DropRecord:
    dropped_id: str
    matched_id: str
    distance: int

    def to_json(self) -> dict:
        return {"dropped": self.dropped_id, "matched": self.matched_id,
                "distance": self.distance}


def dedup_stream(docs, threshold: int = DEFAULT_THRESHOLD, exempt=(),
                 report: list | None = None):
    """Yields kept documents; first occurrence always wins.

    Documents whose ``source`` is in ``exempt`` pass through untouched and
    never enter the index (they can neither drop nor be dropped).  Appends a
    DropRecord per dropped document to ``report`` when given.
    """
    exempt = frozenset(exempt)
    index = BandedIndex(threshold)
    for doc in docs:
        if doc.source in exempt:
            yield doc
            continue
        fp = simhash(doc.text)
        hit = index.query(fp)
        if hit is not None:
            if report is not None:
                report.append(DropRecord(doc.id, hit[0], hit[1]))
            continue
        index.add(doc.id, fp)
        yield doc


def dedup(docs, threshold: int = DEFAULT_THRESHOLD, exempt=()):
    """Eager dedup: returns (kept documents, drop report)."""
    report = []
    kept = list(dedup_stream(docs, threshold, exempt, report))
    return kept, report
