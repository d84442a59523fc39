"""Token-batch assembly: mixture-sampled packing and SFT pairs.

A MixtureSampler owns one RNG and, per sequence slot, a token buffer.  When
a slot runs low it draws a source from the categorical mixture for the
current step, takes that source's next document, and appends its tokens
(BOS-prefixed, EOS-terminated) to the buffer — so document remainders carry
into the slot's next batch instead of being discarded.  Targets are the
inputs shifted by one; the buffer advances by seq_len, keeping the overlap
token so the shift stays seamless across batches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import Rng
from ..tokenizer.vocab import BOS_ID, EOS_ID, PAD_ID
from .mixture import MixtureSchedule, weights_at


@dataclass
class TokenBatch:
    tokens: np.ndarray     # int64 [batch, seq_len]
    targets: np.ndarray    # int64 [batch, seq_len], shifted by one
    loss_mask: np.ndarray  # float64 [batch, seq_len] of {0, 1}

    def __post_init__(self):
        if not (self.tokens.shape == self.targets.shape == self.loss_mask.shape):
            raise ValueError("tokens/targets/loss_mask shapes must match")


class SourceExhausted(RuntimeError):
    """A mixture source ran out of documents with wrapping disabled."""


class MixtureSampler:
    """Deterministic mixture-weighted document packer.

    ``sources`` maps name → list of texts (or Documents with a .text).
    ``wrap`` controls whether an exhausted source restarts from its first
    document; with wrap off, exhaustion raises SourceExhausted naming it.
    """

    def __init__(self, sources: dict, schedule: MixtureSchedule, tokenizer,
                 seq_len: int, batch_size: int, total_steps: int,
                 seed: int = 0, wrap: bool = True):
        if seq_len < 2 or batch_size < 1:
            raise ValueError("need seq_len >= 2 and batch_size >= 1")
        missing = [n for n in schedule.names if n not in sources]
        if missing:
            raise ValueError(f"schedule names missing from sources: {missing}")
        empty = [n for n in schedule.names if not sources[n]]
        if empty:
            raise ValueError(f"empty sources: {empty}")
        self.sources = {n: list(sources[n]) for n in schedule.names}
        self.schedule = schedule
        self.names = schedule.names
        self.tokenizer = tokenizer
        self.seq_len = seq_len
        self.batch_size = batch_size
        self.total_steps = total_steps
        self.wrap = wrap
        self.rng = Rng(seed).derive("mixture-sampler")
        self.cursors = {n: 0 for n in self.names}
        self.buffers = [[] for _ in range(batch_size)]
        self.draws_by_source = {n: 0 for n in self.names}

    def _doc_text(self, doc):
        return doc.text if hasattr(doc, "text") else doc

    def _draw_source(self, weights) -> str:
        u = self.rng.uniform()
        acc = 0.0
        for name in self.names:
            acc += weights[name]
            if u < acc:
                return name
        return self.names[-1]

    def _next_document(self, name: str) -> str:
        docs = self.sources[name]
        cur = self.cursors[name]
        if cur >= len(docs):
            if not self.wrap:
                raise SourceExhausted(
                    f"source {name!r} exhausted after {len(docs)} documents")
            cur = 0
        self.cursors[name] = cur + 1
        return self._doc_text(docs[cur])

    def _fill_slot(self, slot: int, weights):
        buf = self.buffers[slot]
        need = self.seq_len + 1  # one extra token for the shifted target
        while len(buf) < need:
            name = self._draw_source(weights)
            self.draws_by_source[name] += 1
            ids = self.tokenizer.encode(self._next_document(name))
            buf.extend([BOS_ID] + ids + [EOS_ID])

    def sample_batch(self, step: int) -> TokenBatch:
        weights = weights_at(self.schedule, step, self.total_steps)
        S = self.seq_len
        tokens = np.empty((self.batch_size, S), dtype=np.int64)
        targets = np.empty((self.batch_size, S), dtype=np.int64)
        for slot in range(self.batch_size):
            self._fill_slot(slot, weights)
            buf = self.buffers[slot]
            tokens[slot] = buf[:S]
            targets[slot] = buf[1:S + 1]
            # advance by S, keeping the overlap token for the next shift
            del buf[:S]
        mask = np.ones((self.batch_size, S), dtype=np.float64)
        return TokenBatch(tokens, targets, mask)

    def get_state(self) -> dict:
        return {
            "rng": list(self.rng.get_state()),
            "cursors": dict(self.cursors),
            "buffers": [list(b) for b in self.buffers],
            "draws": dict(self.draws_by_source),
        }

    def set_state(self, state: dict):
        self.rng.set_state(tuple(state["rng"]))
        self.cursors = {n: int(state["cursors"][n]) for n in self.names}
        self.buffers = [list(b) for b in state["buffers"]]
        if len(self.buffers) != self.batch_size:
            raise ValueError("sampler state batch size mismatch")
        self.draws_by_source = {n: int(state["draws"][n]) for n in self.names}


def sft_batch(items, tokenizer, seq_len: int,
              loss_on_full_sequence: bool = True) -> TokenBatch:
    """Packs (prompt, response) pairs into one padded batch.

    Each row is BOS + prompt + response + EOS, left-truncating the prompt
    (never the response) when over budget.  With full-sequence loss on, the
    mask covers every non-pad target position; off, only positions whose
    target is a response token.
    """
    items = list(items)
    if not items:
        raise ValueError("sft_batch needs at least one item")
    S = seq_len
    rows = []
    for i, (prompt, response) in enumerate(items):
        if not response or not response.strip():
            raise ValueError(f"item {i}: empty response")
        p_ids = tokenizer.encode(prompt)
        r_ids = tokenizer.encode(response)
        fixed = 2 + len(r_ids)  # BOS … response EOS
        if fixed > S + 1:
            raise ValueError(
                f"item {i}: response ({len(r_ids)} tokens) does not fit "
                f"seq_len {S}")
        keep = min(len(p_ids), S + 1 - fixed)
        p_ids = p_ids[len(p_ids) - keep:]  # truncate from the left
        row = [BOS_ID] + p_ids + r_ids + [EOS_ID]
        rows.append((row, 1 + len(p_ids), len(r_ids)))

    tokens = np.full((len(rows), S), PAD_ID, dtype=np.int64)
    targets = np.full((len(rows), S), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(rows), S), dtype=np.float64)
    for i, (row, resp_start, resp_len) in enumerate(rows):
        n = len(row)  # ≤ S + 1
        # the final EOS enters only as a target, so the number of non-pad
        # input tokens equals the number of loss positions in full mode
        tokens[i, :n - 1] = row[:n - 1]
        targets[i, :n - 1] = row[1:]
        if loss_on_full_sequence:
            mask[i, :n - 1] = 1.0
        else:
            # positions whose *target* is a response token
            mask[i, resp_start - 1:resp_start - 1 + resp_len] = 1.0
    return TokenBatch(tokens, targets, mask)
