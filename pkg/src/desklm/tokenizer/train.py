"""Unigram tokenizer training: substring seeding, EM, utility pruning.

Training alternates ``em_iters_per_round`` EM sweeps with one prune round
until the vocabulary hits the target size exactly, then runs one final EM
round to refit probabilities.  The log-likelihood of every EM sweep is
recorded; within a round it is non-decreasing (standard EM guarantee — byte
edges are fixed, only piece probabilities are re-estimated).
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from . import lattice
from .normalize import normalize_and_pretokenize
from .vocab import (BYTE_LOGP, FIRST_PIECE_ID, TokenizerConfig, TokenizerModel,
                    UnigramVocab)

# Protected pieces absent from the corpus still need a finite seed count.
_MIN_SEED_COUNT = 1.0
# Expected-count floor: keeps M-step log-probs finite; dead pieces are removed
# by pruning (count 0 => utility 0 => pruned first).
_COUNT_FLOOR_FRACTION = 1e-12


def pretoken_counts(corpus, config: TokenizerConfig) -> Counter:
    """Multiset of pretokens over an iterable of documents."""
    counts: Counter = Counter()
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        for pretoken in normalize_and_pretokenize(doc, config.split_digits):
            counts[pretoken] += 1
    if n_docs == 0 or not counts:
        raise ValueError("empty corpus: nothing to train a tokenizer on")
    return counts


def _coverage_chars(counts: Counter, coverage: float) -> set[str]:
    """Smallest set of characters covering `coverage` of the character mass."""
    char_mass: Counter = Counter()
    for pretoken, cnt in counts.items():
        for ch in pretoken:
            char_mass[ch] += cnt
    total = sum(char_mass.values())
    needed = coverage * total
    covered: set[str] = set()
    acc = 0
    for ch, cnt in sorted(char_mass.items(), key=lambda kv: (-kv[1], kv[0])):
        if acc >= needed and covered:
            break
        covered.add(ch)
        acc += cnt
    return covered


def _protected_pieces(chars: set[str], config: TokenizerConfig) -> set[str]:
    protected = set(chars)
    for k in range(2, config.multispace_tokens + 1):
        protected.add(" " * k)
    return protected


def seed_vocabulary(corpus, config: TokenizerConfig) -> UnigramVocab:
    """Initial vocabulary: frequent substrings plus protected single chars.

    Keeps the ``seed_multiplier × target`` most frequent substrings (length
    capped in characters, restricted to covered characters), always including
    the coverage character set and the injected multi-space run pieces.
    """
    counts = pretoken_counts(corpus, config)
    chars = _coverage_chars(counts, config.character_coverage)
    protected = _protected_pieces(chars, config)

    floor = FIRST_PIECE_ID + len(protected)
    if config.target_vocab_size < floor:
        raise ValueError(
            f"target_vocab_size {config.target_vocab_size} is below the required "
            f"floor {floor} (specials + byte tokens + {len(protected)} protected pieces)")

    sub_counts: Counter = Counter()
    max_len = config.max_piece_length
    for pretoken, cnt in counts.items():
        n = len(pretoken)
        for s in range(n):
            if pretoken[s] not in chars:
                continue
            top = min(max_len, n - s)
            for k in range(1, top + 1):
                if pretoken[s + k - 1] not in chars:
                    break
                sub_counts[pretoken[s:s + k]] += cnt

    budget = int(config.seed_multiplier * config.target_vocab_size)
    ranked = sorted(sub_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    selected: dict[str, float] = {}
    for piece in sorted(protected):
        selected[piece] = max(float(sub_counts.get(piece, 0)), _MIN_SEED_COUNT)
    for piece, cnt in ranked:
        if len(selected) >= max(budget, len(protected)):
            break
        if piece not in selected:
            selected[piece] = float(cnt)

    total = math.fsum(selected.values())
    pieces = [(p, math.log(c / total)) for p, c in selected.items()]
    return UnigramVocab(pieces, protected=protected)


def _run_estep(counts_map: Counter, vocab: UnigramVocab, config: TokenizerConfig):
    """One E-step over the pretoken multiset: (expected_counts, loglik)."""
    byte_logp = BYTE_LOGP if config.byte_fallback else None
    pieces = vocab.lattice_map()
    expected = np.zeros(len(vocab.pieces), dtype=np.float64)
    loglik = 0.0
    for pretoken, cnt in counts_map.items():
        z = lattice.estep(pretoken, pieces, config.max_piece_length, byte_logp,
                          expected, float(cnt))
        if z is None:
            bad = next((ch for ch in pretoken if ch not in pieces), pretoken[0])
            raise ValueError(f"unencodable pretoken {pretoken!r}: character {bad!r} "
                             "has no covering piece and byte fallback is disabled")
        loglik += cnt * z
    return expected, loglik


def _mstep(vocab: UnigramVocab, expected: np.ndarray) -> UnigramVocab:
    total = float(expected.sum())
    if total <= 0.0:
        raise ValueError("EM produced no expected counts; corpus/vocab mismatch")
    floored = np.maximum(expected, _COUNT_FLOOR_FRACTION * total)
    logps = np.log(floored) - math.log(float(floored.sum()))
    pieces = [(p, float(lp)) for (p, _), lp in zip(vocab.pieces, logps)]
    return UnigramVocab(pieces, protected=vocab.protected)


def em_step(corpus, vocab: UnigramVocab, config: TokenizerConfig):
    """One EM sweep over a document iterable: returns (new_vocab, loglik).

    The log-likelihood is that of the *input* vocabulary (computed during the
    E-step, before re-estimation).
    """
    return _em_step_counted(pretoken_counts(corpus, config), vocab, config)


def _em_step_counted(counts_map: Counter, vocab, config):
    expected, loglik = _run_estep(counts_map, vocab, config)
    return _mstep(vocab, expected), loglik


def prune_vocabulary(corpus, vocab: UnigramVocab, config: TokenizerConfig) -> UnigramVocab:
    """Drop lowest-utility pieces, keeping ceil(shrink_factor × size) entries
    (never below the target; protected pieces are never dropped)."""
    return _prune_counted(pretoken_counts(corpus, config), vocab, config)


def _prune_counted(counts_map: Counter, vocab, config) -> UnigramVocab:
    target = config.target_vocab_size
    if vocab.size <= target:
        return vocab
    expected, _ = _run_estep(counts_map, vocab, config)

    keep_total = max(target, math.ceil(config.shrink_factor * vocab.size))
    keep_total = min(keep_total, vocab.size)

    removable = []
    fixed = FIRST_PIECE_ID
    for i, (piece, logp) in enumerate(vocab.pieces):
        if piece in vocab.protected:
            fixed += 1
        else:
            # utility: likelihood loss if removed, approximated by count*|logp|
            removable.append((-expected[i] * logp, i))
    keep_removable = keep_total - fixed
    if keep_removable < 0:
        raise ValueError(f"cannot prune to {keep_total}: {fixed} entries are fixed")

    removable.sort(key=lambda item: (item[0], item[1]))
    drop = {i for _, i in removable[:len(removable) - keep_removable]} \
        if keep_removable < len(removable) else set()

    kept = [(p, lp) for i, (p, lp) in enumerate(vocab.pieces) if i not in drop]
    # renormalize the survivors' probabilities
    log_total = _logsumexp([lp for _, lp in kept])
    pieces = [(p, lp - log_total) for p, lp in kept]
    return UnigramVocab(pieces, protected=vocab.protected)


def _logsumexp(xs: list[float]) -> float:
    m = max(xs)
    return m + math.log(math.fsum(math.exp(x - m) for x in xs))


def train_unigram(corpus, config: TokenizerConfig) -> TokenizerModel:
    """Full training loop; terminates with exactly ``target_vocab_size`` entries."""
    corpus = list(corpus)
    counts_map = pretoken_counts(corpus, config)
    vocab = seed_vocabulary(corpus, config)
    if vocab.size < config.target_vocab_size:
        raise ValueError(
            f"seeding produced only {vocab.size} entries, below the target "
            f"{config.target_vocab_size}; corpus too small or multiplier too low")
    trajectory: list[float] = []
    while vocab.size > config.target_vocab_size:
        for _ in range(config.em_iters_per_round):
            vocab, ll = _em_step_counted(counts_map, vocab, config)
            trajectory.append(ll)
        vocab = _prune_counted(counts_map, vocab, config)
    for _ in range(config.em_iters_per_round):
        vocab, ll = _em_step_counted(counts_map, vocab, config)
        trajectory.append(ll)
    vocab.check_invariants()
    return TokenizerModel(config, vocab, loglik_trajectory=trajectory)
