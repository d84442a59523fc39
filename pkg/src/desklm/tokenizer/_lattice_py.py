"""Pure-Python lattice kernels (reference backend).

The compiled twin in ``_lattice_cy.pyx`` implements exactly the same
algorithms with the same floating-point operation order, so the two backends
produce bit-identical results; an equivalence test enforces that whenever the
extension is built.

Kernel inputs:

* ``text``   — one pretoken.
* ``pieces`` — dict piece string -> (piece index, log-prob).
* ``max_len`` — maximum piece length in characters.
* ``byte_logp`` — per-byte log-prob of the fallback edges, or ``None`` when
  byte fallback is disabled (then uncovered characters make a text
  unsegmentable and the kernels report it).

Scores are summed right-to-left (suffix sums), which fixes the tie algebra:
exhaustive-enumeration oracles in the tests fold scores the same way.
"""

from __future__ import annotations

import math

_NEG = -1e300  # acts as log(0); no real path score can reach it


def _utf8_len(ch: str) -> int:
    cp = ord(ch)
    if cp < 0x80:
        return 1
    if cp < 0x800:
        return 2
    if cp < 0x10000:
        return 3
    return 4


def viterbi(text, pieces, max_len, byte_logp):
    """Best segmentation of ``text``.

    Returns a list of ``(start, end, piece_index)`` spans, where index -1
    marks a byte-fallback character, or ``None`` when the text cannot be
    segmented (only possible with fallback disabled).

    Ties break by: highest score, then fewest tokens, then the longer piece
    at the leftmost position where candidates differ.
    """
    n = len(text)
    best_score = [0.0] * (n + 1)
    best_tokens = [0] * (n + 1)
    best_len = [0] * (n + 1)    # chosen piece length at s; 0 = fallback char
    best_idx = [-1] * (n + 1)
    use_bytes = byte_logp is not None

    for s in range(n - 1, -1, -1):
        bs_score = _NEG
        bs_tokens = 0
        bs_len = -1
        bs_idx = -1
        if use_bytes:
            nxt = s + 1
            if best_len[nxt] != -1:
                nb = _utf8_len(text[s])
                sc = byte_logp * nb + best_score[nxt]
                bs_score = sc
                bs_tokens = nb + best_tokens[nxt]
                bs_len = 0
                bs_idx = -1
        top = max_len if max_len < n - s else n - s
        for k in range(1, top + 1):
            nxt = s + k
            if best_len[nxt] == -1:
                continue
            ent = pieces.get(text[s:nxt])
            if ent is None:
                continue
            sc = ent[1] + best_score[nxt]
            tk = 1 + best_tokens[nxt]
            if (sc > bs_score
                    or (sc == bs_score and (tk < bs_tokens
                                            or (tk == bs_tokens and k > bs_len)))):
                bs_score = sc
                bs_tokens = tk
                bs_len = k
                bs_idx = ent[0]
        best_score[s] = bs_score
        best_tokens[s] = bs_tokens
        best_len[s] = bs_len
        best_idx[s] = bs_idx

    if n and best_len[0] == -1:
        return None
    out = []
    s = 0
    while s < n:
        k = best_len[s]
        if k == 0:
            out.append((s, s + 1, -1))
            s += 1
        else:
            out.append((s, s + k, best_idx[s]))
            s += k
    return out


def _logadd(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if b <= _NEG:
        return a
    return a + math.log1p(math.exp(b - a))


def estep(text, pieces, max_len, byte_logp, counts, weight):
    """Forward–backward over the segmentation lattice of ``text``.

    Adds ``weight``-scaled posterior occupancy of every real piece into
    ``counts`` (indexed by piece index) and returns the log marginal
    likelihood of the text, or ``None`` if it is unsegmentable.
    Byte-fallback edges carry fixed probability and are not counted.
    """
    n = len(text)
    if n == 0:
        return 0.0
    use_bytes = byte_logp is not None

    alpha = [_NEG] * (n + 1)
    alpha[0] = 0.0
    for e in range(1, n + 1):
        acc = _NEG
        if use_bytes and alpha[e - 1] > _NEG:
            acc = alpha[e - 1] + byte_logp * _utf8_len(text[e - 1])
        top = max_len if max_len < e else e
        for k in range(1, top + 1):
            if alpha[e - k] <= _NEG:
                continue
            ent = pieces.get(text[e - k:e])
            if ent is None:
                continue
            acc = _logadd(acc, alpha[e - k] + ent[1])
        alpha[e] = acc
    z = alpha[n]
    if z <= _NEG:
        return None

    beta = [_NEG] * (n + 1)
    beta[n] = 0.0
    for s in range(n - 1, -1, -1):
        acc = _NEG
        if use_bytes and beta[s + 1] > _NEG:
            acc = beta[s + 1] + byte_logp * _utf8_len(text[s])
        top = max_len if max_len < n - s else n - s
        for k in range(1, top + 1):
            if beta[s + k] <= _NEG:
                continue
            ent = pieces.get(text[s:s + k])
            if ent is None:
                continue
            acc = _logadd(acc, ent[1] + beta[s + k])
        beta[s] = acc

    for s in range(n):
        if alpha[s] <= _NEG:
            continue
        top = max_len if max_len < n - s else n - s
        for k in range(1, top + 1):
            if beta[s + k] <= _NEG:
                continue
            ent = pieces.get(text[s:s + k])
            if ent is None:
                continue
            counts[ent[0]] += weight * math.exp(alpha[s] + ent[1] + beta[s + k] - z)
    return z


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit checksum (sequential; the compiled twin is the fast path)."""
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h
